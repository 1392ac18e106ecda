use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use embmark_core::harness::{
    fit_stealer, pca2, run_experiment, sweep, write_sweep_csv, ExperimentConfig, SweepParam,
    VictimSetup,
};
use embmark_core::verification::{
    build_mixed_probe_sets, format_table, verify_against, DEFAULT_PROBE_COUNT,
};
use embmark_core::watermark::trigger_count;
use embmark_core::{
    build_frequency_table, generate_synthetic_corpus, select_triggers, tokenize, wrap_service,
    EmbeddingService, FrequencyInterval, LabeledCorpus, StealerModel, TransformSpec,
    VerificationMode, VerificationReport, WatermarkConfig,
};
use embmark_service::{bind_address, serve, HttpEmbeddingService};

/// Exit status when verification concludes infringement.
const EXIT_INFRINGING: u8 = 2;

#[derive(Parser)]
#[command(
    name = "embmark",
    version,
    about = "Embedding watermark simulation, extraction and verification"
)]
struct Cli {
    /// Experiment config (JSON); missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Port for serve commands; EMBMARK_BIND overrides the whole address.
    #[arg(long, global = true)]
    port: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Base,
    Modified,
}

#[derive(Clone, Copy, ValueEnum)]
enum PcaSource {
    Victim,
    Stealer,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled corpus as corpus.tsv.
    GenCorpus {
        #[arg(long)]
        num_texts: Option<usize>,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        text_len: Option<usize>,
    },
    /// Select a trigger set from a corpus and write triggers.json.
    SelectTriggers {
        /// Labeled `.tsv` corpus or plain text with one document per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
    },
    /// Serve the configured (possibly watermarked) provider.
    ServeVictim {
        #[arg(long, default_value = "victim")]
        model_id: String,
    },
    /// Query an embedding endpoint with a copy corpus and fit a stealer.
    Extract {
        #[arg(long)]
        endpoint: String,
        /// Query texts; the config's seeded copy corpus when omitted.
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Serve a fitted stealer, optionally behind an evasion transform.
    ServeStealer {
        #[arg(long)]
        model: PathBuf,
        /// identity, shift or ortho:<seed>.
        #[arg(long, default_value = "identity")]
        attack: TransformSpec,
        #[arg(long, default_value = "stealer")]
        model_id: String,
    },
    /// Verify a suspect endpoint; exits with 2 when it infringes.
    Verify {
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        watermark: PathBuf,
        /// General corpus the triggers were selected from.
        #[arg(long)]
        corpus: PathBuf,
        /// The config's verification mode by default.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Target text for modified mode; the config's sample, else the corpus's
        /// first document.
        #[arg(long)]
        target_sample: Option<String>,
        #[arg(long)]
        probes: Option<usize>,
    },
    /// Run one full experiment; exits with 2 when verification infringes.
    Experiment,
    /// Run one experiment per value of a parameter and write sweep.csv.
    Sweep {
        /// n, m, interval, stealer_capacity or ridge_lambda.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; intervals are written lo:hi.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Project provided embeddings to 2-D and write pca.csv.
    Pca {
        #[arg(long, value_enum, default_value = "victim")]
        source: PcaSource,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut f =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn read_texts(path: &Path) -> anyhow::Result<Vec<String>> {
    let reader =
        BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    if path.extension().is_some_and(|e| e == "tsv") {
        Ok(LabeledCorpus::read_tsv(reader)?.text_strings())
    } else {
        Ok(embmark_core::corpus::read_documents(reader)?)
    }
}

fn verdict(report: &VerificationReport) -> u8 {
    if report.infringing {
        EXIT_INFRINGING
    } else {
        0
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::GenCorpus {
            num_texts,
            num_classes,
            vocab_size,
            text_len,
        } => {
            let c = &cfg.corpus;
            let corpus = generate_synthetic_corpus(
                num_texts.unwrap_or(c.num_texts),
                num_classes.unwrap_or(c.num_classes),
                vocab_size.unwrap_or(c.vocab_size),
                text_len.unwrap_or(c.text_len),
                cfg.seed,
            )?;
            let path = out.join("corpus.tsv");
            corpus.write_tsv(BufWriter::new(File::create(&path)?))?;
            println!("wrote {} texts to {}", corpus.len(), path.display());
        }
        Command::SelectTriggers { corpus, n, lo, hi } => {
            let texts = read_texts(&corpus)?;
            let table = build_frequency_table(&texts)?;
            let interval = FrequencyInterval {
                lo: lo.unwrap_or(cfg.watermark.interval.lo),
                hi: hi.unwrap_or(cfg.watermark.interval.hi),
            };
            let triggers =
                select_triggers(&table, interval, n.unwrap_or(cfg.watermark.n), cfg.seed)?;
            let path = out.join("triggers.json");
            triggers.save(&path)?;
            println!(
                "selected {} triggers: {}",
                triggers.len(),
                triggers.triggers.join(" ")
            );
        }
        Command::ServeVictim { model_id } => {
            let setup = VictimSetup::new(&cfg)?;
            setup.watermark.save(out.join("watermark.json"))?;
            setup.victim.model.save(out.join("provider.json"))?;
            setup
                .general_corpus
                .write_tsv(BufWriter::new(File::create(out.join("corpus.tsv"))?))?;
            let handle = serve(Arc::new(setup.victim), model_id, &bind_address(cli.port))?;
            println!("listening on {}", handle.url());
            std::io::stdout().flush()?;
            handle.wait()?;
        }
        Command::Extract { endpoint, queries } => {
            let texts = match queries {
                Some(p) => read_texts(&p)?,
                None => VictimSetup::copy_corpus(&cfg)?.text_strings(),
            };
            let client = HttpEmbeddingService::new(&endpoint);
            let responses = client.embed_batch(&texts).context("querying the victim")?;
            let stealer = fit_stealer(&cfg, &texts, &responses)?;
            let mse = embmark_core::extraction::mean_squared_error(&stealer, &texts, &responses);
            stealer.save(out.join("stealer.json"))?;
            println!(
                "fitted stealer on {} pairs, training mse {mse:.6}",
                texts.len()
            );
        }
        Command::ServeStealer {
            model,
            attack,
            model_id,
        } => {
            let stealer = StealerModel::load(&model)
                .with_context(|| format!("loading {}", model.display()))?;
            let dim = stealer.output_dim();
            let service = wrap_service(stealer, attack.build(dim));
            let handle = serve(Arc::new(service), model_id, &bind_address(cli.port))?;
            println!("listening on {}", handle.url());
            std::io::stdout().flush()?;
            handle.wait()?;
        }
        Command::Verify {
            endpoint,
            watermark,
            corpus,
            mode,
            target_sample,
            probes,
        } => {
            let wm = WatermarkConfig::load(&watermark)?;
            let texts = read_texts(&corpus)?;
            let table = build_frequency_table(&texts)?;
            let m = wm.m;
            let count = probes.unwrap_or(DEFAULT_PROBE_COUNT);
            let probe_sets =
                build_mixed_probe_sets(&wm.trigger_set, &table, m, m, count, cfg.seed)?;
            let client = HttpEmbeddingService::new(&endpoint);
            let mode = mode.unwrap_or(match cfg.verification {
                VerificationMode::Base => Mode::Base,
                VerificationMode::Modified => Mode::Modified,
            });
            let report = match mode {
                Mode::Base => verify_against(
                    &client,
                    &wm.target,
                    wm.threshold_tau,
                    &probe_sets,
                    VerificationMode::Base,
                )?,
                Mode::Modified => {
                    let sample = target_sample
                        .or_else(|| cfg.target_sample.clone())
                        .or_else(|| texts.first().cloned())
                        .unwrap_or_default();
                    embmark_core::verify_modified(&client, &sample, &wm, &probe_sets)?
                }
            };
            write_json(&out.join("verification.json"), &report)?;
            print!("{}", format_table([(endpoint.as_str(), &report)]));
            return Ok(verdict(&report));
        }
        Command::Experiment => {
            let report = run_experiment(&cfg)?;
            write_json(&out.join("report.json"), &report)?;
            write_json(&out.join("timings.json"), &report.timings)?;
            print!("{}", format_table([("suspect", &report.verification)]));
            if let Some(u) = report.utility {
                println!(
                    "accuracy: original {:.2}%  provided {:.2}%",
                    u.original * 100.0,
                    u.provided * 100.0
                );
            }
            for p in &report.trigger_curve {
                println!(
                    "triggers {}: delta cos {:.2}%",
                    p.triggers,
                    p.delta_cos * 100.0
                );
            }
            return Ok(verdict(&report.verification));
        }
        Command::Sweep { param, values } => {
            let values = values
                .iter()
                .map(|v| param.parse_value(v))
                .collect::<Result<Vec<_>, _>>()?;
            let entries = sweep(&cfg, param, &values)?;
            write_sweep_csv(
                &entries,
                BufWriter::new(File::create(out.join("sweep.csv"))?),
            )?;
            write_json(&out.join("sweep.json"), &entries)?;
            for e in &entries {
                match (&e.report, &e.degenerate) {
                    (Some(r), _) => println!(
                        "{}: p {:.2e}  delta cos {:.2}%  {}",
                        e.value,
                        r.verification.p_value,
                        r.verification.delta_cos * 100.0,
                        r.verification.decision()
                    ),
                    (None, Some(why)) => println!("{}: degenerate ({why})", e.value),
                    (None, None) => unreachable!("sweep entries carry a report or a reason"),
                }
            }
        }
        Command::Pca { source } => {
            let setup = VictimSetup::new(&cfg)?;
            let mut texts = VictimSetup::copy_corpus(&cfg)?.text_strings();
            for k in 1..=cfg.watermark.m.min(setup.triggers.len()) {
                let probes = build_mixed_probe_sets(
                    &setup.triggers,
                    &setup.frequencies,
                    cfg.watermark.m,
                    k,
                    cfg.probe_count,
                    cfg.seed,
                )?;
                texts.extend(probes.backdoor_texts);
            }
            let counts: Vec<usize> = texts
                .iter()
                .map(|t| trigger_count(&tokenize(t), &setup.triggers))
                .collect();
            let embeddings = match source {
                PcaSource::Victim => setup.victim.embed_batch(&texts)?,
                PcaSource::Stealer => {
                    let queries = VictimSetup::copy_corpus(&cfg)?.text_strings();
                    let responses = setup.victim.embed_batch(&queries)?;
                    fit_stealer(&cfg, &queries, &responses)?.embed_batch(&texts)?
                }
            };
            let pca = pca2(&embeddings, &counts)?;
            pca.write_csv(BufWriter::new(File::create(out.join("pca.csv"))?))?;
            println!(
                "projected {} embeddings; component variances {:.4e} {:.4e}",
                pca.points.len(),
                pca.variances[0],
                pca.variances[1]
            );
        }
    }
    Ok(0)
}
