use nalgebra::DMatrix;

use super::{
    check_training_pairs, StealerFeaturizer, StealerHead, StealerModel, MODEL_FORMAT_VERSION,
};
use crate::embedder::Embedding;
use crate::error::{Error, Result};

/// Relative pivot size below which an unregularized system counts as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

/// Closed-form ridge regression with an unpenalized intercept.
///
/// Solves `min Σ‖W·φ(x) + b − e‖² + λ‖W‖²_F` through the centered normal
/// equations. Only buckets that occur in the training queries enter the system;
/// every other column of `W` is zero, which is the minimum-norm choice.
pub fn fit_linear(
    featurizer: StealerFeaturizer,
    queries: &[String],
    responses: &[Embedding],
    ridge_lambda: f64,
) -> Result<StealerModel> {
    let d = check_training_pairs(queries, responses)?;
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "ridge lambda {ridge_lambda} must be finite and non-negative"
        )));
    }
    let feats: Vec<_> = queries.iter().map(|q| featurizer.featurize(q)).collect();

    let width = featurizer.width();
    let mut position = vec![usize::MAX; width];
    let mut active = Vec::new();
    for f in &feats {
        for &j in &f.indices {
            if position[j] == usize::MAX {
                position[j] = 0;
                active.push(j);
            }
        }
    }
    active.sort_unstable();
    for (k, &j) in active.iter().enumerate() {
        position[j] = k;
    }
    let p = active.len();
    let n = feats.len() as f64;

    let mut x_mean = vec![0.0; p];
    let mut y_mean = vec![0.0; d];
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut cross = DMatrix::<f64>::zeros(p, d);
    for (f, y) in feats.iter().zip(responses) {
        let y = y.as_slice();
        for (a, (ja, va)) in f.iter().enumerate() {
            let ka = position[ja];
            x_mean[ka] += va;
            for (jb, vb) in f.iter().skip(a) {
                let kb = position[jb];
                gram[(ka, kb)] += va * vb;
            }
            for (c, yc) in y.iter().enumerate() {
                cross[(ka, c)] += va * yc;
            }
        }
        for (m, yc) in y_mean.iter_mut().zip(y) {
            *m += yc;
        }
    }
    x_mean.iter_mut().for_each(|v| *v /= n);
    y_mean.iter_mut().for_each(|v| *v /= n);

    // Indices are sorted within each sample, so only the upper triangle was filled.
    for a in 0..p {
        for b in a..p {
            let v = gram[(a, b)] - n * x_mean[a] * x_mean[b];
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
        gram[(a, a)] += ridge_lambda;
        for c in 0..d {
            cross[(a, c)] -= n * x_mean[a] * y_mean[c];
        }
    }

    let scale = (0..p).map(|a| gram[(a, a)]).fold(0.0f64, f64::max);
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v * v)
        .fold(f64::INFINITY, f64::min);
    if min_pivot.is_nan() || min_pivot <= SINGULAR_PIVOT * scale {
        return Err(Error::SingularSystem);
    }
    let solved = chol.solve(&cross);

    let mut weights = vec![vec![0.0; width]; d];
    let mut bias = y_mean;
    for (k, &j) in active.iter().enumerate() {
        for c in 0..d {
            let w = solved[(k, c)];
            weights[c][j] = w;
            bias[c] -= w * x_mean[k];
        }
    }
    if weights
        .iter()
        .flatten()
        .chain(&bias)
        .any(|v| !v.is_finite())
    {
        return Err(Error::SingularSystem);
    }
    Ok(StealerModel {
        version: MODEL_FORMAT_VERSION,
        featurizer,
        head: StealerHead::Linear { weights, bias },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{mean_squared_error, stealer_embed};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_featurizer() -> StealerFeaturizer {
        StealerFeaturizer {
            feature_dim: 64,
            hash_seed: 5,
        }
    }

    fn random_texts(n: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(2..9);
                (0..len)
                    .map(|_| format!("w{}", rng.random_range(0..40)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let texts = random_texts(200, 1);
        let c = Embedding::new(vec![0.3, -0.2, 0.9]);
        let responses = vec![c.clone(); texts.len()];
        let feats = StealerFeaturizer {
            feature_dim: 1 << 12,
            hash_seed: 5,
        };
        let model = fit_linear(feats, &texts, &responses, 0.0).unwrap();
        for t in &texts {
            let out = stealer_embed(&model, t);
            for (a, b) in out.as_slice().iter().zip(c.as_slice()) {
                assert!((a - b).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn huge_lambda_shrinks_weights() {
        let texts = random_texts(100, 2);
        let responses: Vec<_> = (0..texts.len())
            .map(|i| Embedding::new(vec![(i % 7) as f64, 1.0]))
            .collect();
        let norm = |lambda: f64| match fit_linear(small_featurizer(), &texts, &responses, lambda)
            .unwrap()
            .head
        {
            StealerHead::Linear { weights, .. } => {
                weights.iter().flatten().map(|w| w * w).sum::<f64>().sqrt()
            }
            _ => unreachable!(),
        };
        let (a, b, c) = (norm(1e-3), norm(1e3), norm(1e9));
        assert!(a > b && b > c);
        assert!(c < 1e-6);
    }

    #[test]
    fn singular_without_ridge() {
        // Two identical words always co-occur, so their columns are collinear.
        let texts: Vec<String> = (0..30).map(|i| format!("x{} y{}", i % 3, i % 3)).collect();
        let responses: Vec<_> = (0..30).map(|i| Embedding::new(vec![i as f64])).collect();
        let feats = StealerFeaturizer {
            feature_dim: 1 << 16,
            hash_seed: 1,
        };
        assert!(matches!(
            fit_linear(feats, &texts, &responses, 0.0),
            Err(Error::SingularSystem)
        ));
        assert!(fit_linear(feats, &texts, &responses, 1e-3).is_ok());
    }

    #[test]
    fn input_errors() {
        let f = small_featurizer();
        assert!(fit_linear(f, &[], &[], 1.0).is_err());
        assert!(fit_linear(f, &["a".into()], &[], 1.0).is_err());
        assert!(fit_linear(f, &["a".into()], &[Embedding::new(vec![1.0])], -1.0).is_err());
    }

    #[test]
    fn perturbations_never_improve_the_ridge_objective() {
        let texts = random_texts(300, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let responses: Vec<_> = (0..texts.len())
            .map(|_| Embedding::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let lambda = 1e-2;
        let model = fit_linear(small_featurizer(), &texts, &responses, lambda).unwrap();
        let objective = |m: &StealerModel| {
            let StealerHead::Linear { weights, .. } = &m.head else {
                unreachable!()
            };
            let reg: f64 = weights.iter().flatten().map(|w| w * w).sum();
            mean_squared_error(m, &texts, &responses) * (texts.len() * 4) as f64 + lambda * reg
        };
        let best = objective(&model);
        for _ in 0..100 {
            let mut m = model.clone();
            let StealerHead::Linear { weights, .. } = &mut m.head else {
                unreachable!()
            };
            // rank-one perturbation u·vᵀ restricted to columns the data touches
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-1e-3..1e-3)).collect();
            let v: Vec<f64> = (0..65).map(|_| rng.random_range(-1.0..1.0)).collect();
            for (r, ur) in weights.iter_mut().zip(&u) {
                for (w, vc) in r.iter_mut().zip(&v) {
                    if *w != 0.0 {
                        *w += ur * vc;
                    }
                }
            }
            assert!(objective(&m) >= best - 1e-9);
        }
    }
}
