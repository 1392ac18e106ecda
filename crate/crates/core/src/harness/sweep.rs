use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, StealerKind};
use super::experiment::{run_experiment, ExperimentReport};
use crate::corpus::FrequencyInterval;
use crate::error::{Error, Result};

/// Experiment parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Trigger-set size.
    N,
    /// Trigger count that saturates the watermark weight.
    M,
    /// Trigger frequency band.
    Interval,
    /// Stealer input buckets for a linear stealer, hidden width for an MLP.
    StealerCapacity,
    RidgeLambda,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Self::N),
            "m" => Ok(Self::M),
            "interval" => Ok(Self::Interval),
            "stealer_capacity" | "capacity" => Ok(Self::StealerCapacity),
            "ridge_lambda" | "lambda" => Ok(Self::RidgeLambda),
            _ => Err(Error::InvalidConfig(format!(
                "unknown sweep parameter {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Count(usize),
    Real(f64),
    Band(FrequencyInterval),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Count(v) => write!(f, "{v}"),
            Self::Real(v) => write!(f, "{v}"),
            Self::Band(b) => write!(f, "{}:{}", b.lo, b.hi),
        }
    }
}

impl SweepParam {
    /// Parses one value for this parameter; bands are written `lo:hi`.
    pub fn parse_value(self, s: &str) -> Result<SweepValue> {
        let bad = || Error::InvalidConfig(format!("invalid value {s:?} for {self:?}"));
        match self {
            Self::N | Self::M | Self::StealerCapacity => {
                s.trim().parse().map(SweepValue::Count).map_err(|_| bad())
            }
            Self::RidgeLambda => s.trim().parse().map(SweepValue::Real).map_err(|_| bad()),
            Self::Interval => {
                let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
                let band = FrequencyInterval {
                    lo: lo.trim().parse().map_err(|_| bad())?,
                    hi: hi.trim().parse().map_err(|_| bad())?,
                };
                band.validate()?;
                Ok(SweepValue::Band(band))
            }
        }
    }

    pub fn apply(self, base: &ExperimentConfig, value: SweepValue) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match (self, value) {
            (Self::N, SweepValue::Count(n)) => cfg.watermark.n = n,
            (Self::M, SweepValue::Count(m)) => cfg.watermark.m = m,
            (Self::Interval, SweepValue::Band(b)) => cfg.watermark.interval = b,
            (Self::StealerCapacity, SweepValue::Count(c)) => match &mut cfg.stealer.kind {
                StealerKind::Linear { .. } => cfg.stealer.feature_dim = c,
                StealerKind::Mlp { hidden_size, .. } => *hidden_size = c,
            },
            (Self::RidgeLambda, SweepValue::Real(l)) => match &mut cfg.stealer.kind {
                StealerKind::Linear { ridge_lambda } => *ridge_lambda = l,
                StealerKind::Mlp { .. } => {
                    return Err(Error::InvalidConfig(
                        "ridge lambda applies to the linear stealer only".into(),
                    ))
                }
            },
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "value {value} does not fit parameter {self:?}"
                )))
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: SweepValue,
    pub report: Option<ExperimentReport>,
    /// Set when too few words fall in the band to select the trigger set.
    pub degenerate: Option<String>,
}

pub fn sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[SweepValue],
) -> Result<Vec<SweepEntry>> {
    values
        .iter()
        .map(|&value| {
            let cfg = param.apply(base, value)?;
            match run_experiment(&cfg) {
                Ok(report) => Ok(SweepEntry {
                    value,
                    report: Some(report),
                    degenerate: None,
                }),
                Err(e) if matches!(e.root(), Error::InsufficientVocabulary { .. }) => {
                    Ok(SweepEntry {
                        value,
                        report: None,
                        degenerate: Some(e.to_string()),
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(entries: &[SweepEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "value",
        "p_value",
        "delta_cos",
        "delta_l2",
        "infringing",
        "acc_original",
        "acc_provided",
        "degenerate",
    ])?;
    for e in entries {
        let mut row = vec![e.value.to_string()];
        match &e.report {
            Some(r) => {
                let v = &r.verification;
                row.extend([
                    v.p_value.to_string(),
                    v.delta_cos.to_string(),
                    v.delta_l2.to_string(),
                    v.infringing.to_string(),
                ]);
                match r.utility {
                    Some(u) => row.extend([u.original.to_string(), u.provided.to_string()]),
                    None => row.extend([String::new(), String::new()]),
                }
                row.push(String::new());
            }
            None => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(e.degenerate.clone().unwrap_or_default());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values() {
        assert_eq!(
            SweepParam::N.parse_value("10").unwrap(),
            SweepValue::Count(10)
        );
        assert_eq!(
            SweepParam::RidgeLambda.parse_value("1e-3").unwrap(),
            SweepValue::Real(1e-3)
        );
        assert_eq!(
            SweepParam::Interval.parse_value("0.01:0.02").unwrap(),
            SweepValue::Band(FrequencyInterval { lo: 0.01, hi: 0.02 })
        );
        assert!(SweepParam::Interval.parse_value("0.02:0.01").is_err());
        assert!(SweepParam::M.parse_value("x").is_err());
        assert!("bogus".parse::<SweepParam>().is_err());
    }

    #[test]
    fn apply_rejects_mismatched_values() {
        let base = ExperimentConfig::default();
        assert!(SweepParam::N.apply(&base, SweepValue::Real(1.0)).is_err());
        let cfg = SweepParam::StealerCapacity
            .apply(&base, SweepValue::Count(512))
            .unwrap();
        assert_eq!(cfg.stealer.feature_dim, 512);
    }

    #[test]
    fn empty_band_is_marked_degenerate() {
        let base = ExperimentConfig {
            measure_utility: false,
            trigger_curve: false,
            ..Default::default()
        };
        let band = SweepValue::Band(FrequencyInterval { lo: 0.9, hi: 0.95 });
        let entries = sweep(&base, SweepParam::Interval, &[band]).unwrap();
        assert!(entries[0].report.is_none());
        assert!(entries[0].degenerate.is_some());
        let mut buf = Vec::new();
        write_sweep_csv(&entries, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("0.9:0.95,,,"));
    }
}
