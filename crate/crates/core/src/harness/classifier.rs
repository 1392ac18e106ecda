//! Downstream-utility probe: a two-layer softmax classifier trained on embeddings.

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedder::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of samples used for training; the rest is held out.
    pub train_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            epochs: 30,
            learning_rate: 3e-3,
            batch_size: 64,
            train_fraction: 0.8,
        }
    }
}

struct Layer {
    w: Array2<f64>,
    b: Array1<f64>,
    mw: Array2<f64>,
    vw: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

impl Layer {
    fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("valid normal");
        Self {
            w: Array2::from_shape_fn((inputs, outputs), |_| normal.sample(rng)),
            b: Array1::zeros(outputs),
            mw: Array2::zeros((inputs, outputs)),
            vw: Array2::zeros((inputs, outputs)),
            mb: Array1::zeros(outputs),
            vb: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    fn adam(&mut self, gw: &Array2<f64>, gb: &Array1<f64>, lr_t: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.mw
            .zip_mut_with(gw, |m, g| *m = B1 * *m + (1.0 - B1) * g);
        self.vw
            .zip_mut_with(gw, |v, g| *v = B2 * *v + (1.0 - B2) * g * g);
        ndarray::Zip::from(&mut self.w)
            .and(&self.mw)
            .and(&self.vw)
            .for_each(|w, m, v| *w -= lr_t * m / (v.sqrt() + 1e-8));
        self.mb
            .zip_mut_with(gb, |m, g| *m = B1 * *m + (1.0 - B1) * g);
        self.vb
            .zip_mut_with(gb, |v, g| *v = B2 * *v + (1.0 - B2) * g * g);
        ndarray::Zip::from(&mut self.b)
            .and(&self.mb)
            .and(&self.vb)
            .for_each(|b, m, v| *b -= lr_t * m / (v.sqrt() + 1e-8));
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn to_matrix(embeddings: &[Embedding], idx: &[usize]) -> Array2<f64> {
    let d = embeddings[0].dim();
    Array2::from_shape_fn((idx.len(), d), |(r, c)| embeddings[idx[r]].as_slice()[c])
}

/// Held-out accuracy of a ReLU MLP trained with cross-entropy on a seeded
/// train/test split.
pub fn train_downstream_classifier(
    embeddings: &[Embedding],
    labels: &[usize],
    seed: u64,
    cfg: &ClassifierConfig,
) -> Result<f64> {
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::DegenerateLabels(
            "need one label per embedding and at least one sample".into(),
        ));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut per_class = vec![0usize; classes];
    labels.iter().for_each(|&l| per_class[l] += 1);
    let present = per_class.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::DegenerateLabels("fewer than two classes".into()));
    }
    if let Some(c) = per_class.iter().position(|&c| c == 1) {
        return Err(Error::DegenerateLabels(format!(
            "class {c} has a single sample"
        )));
    }
    let d = embeddings[0].dim();
    if embeddings.iter().any(|e| e.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: embeddings
                .iter()
                .find(|e| e.dim() != d)
                .map_or(0, Embedding::dim),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let n_train =
        ((labels.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, labels.len() - 1);
    let (train, test) = order.split_at(n_train);
    let mut train = train.to_vec();

    let mut l1 = Layer::new(d, cfg.hidden_size, &mut rng);
    let mut l2 = Layer::new(cfg.hidden_size, classes, &mut rng);
    let mut step = 0i32;
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(cfg.batch_size) {
            let x = to_matrix(embeddings, batch);
            let pre = l1.forward(&x);
            let h = pre.mapv(|v| v.max(0.0));
            let mut probs = l2.forward(&h);
            softmax_rows(&mut probs);
            // d(mean cross-entropy)/d(logits) = (p − onehot)/B
            let scale = 1.0 / batch.len() as f64;
            for (r, &i) in batch.iter().enumerate() {
                probs[[r, labels[i]]] -= 1.0;
            }
            probs.mapv_inplace(|v| v * scale);
            let gw2 = h.t().dot(&probs);
            let gb2 = probs.sum_axis(Axis(0));
            let mut dh = probs.dot(&l2.w.t());
            dh.zip_mut_with(&pre, |g, p| {
                if *p <= 0.0 {
                    *g = 0.0
                }
            });
            let gw1 = x.t().dot(&dh);
            let gb1 = dh.sum_axis(Axis(0));

            step += 1;
            let lr_t =
                cfg.learning_rate * (1.0 - 0.999f64.powi(step)).sqrt() / (1.0 - 0.9f64.powi(step));
            l2.adam(&gw2, &gb2, lr_t);
            l1.adam(&gw1, &gb1, lr_t);
        }
    }

    let x = to_matrix(embeddings, test);
    let logits = l2.forward(&l1.forward(&x).mapv(|v| v.max(0.0)));
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(r, &i)| {
            let row = logits.slice(s![r, ..]);
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc },
                )
                .0;
            best == labels[i]
        })
        .count();
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::Diverged { epoch: cfg.epochs });
    }
    Ok(correct as f64 / test.len() as f64)
}
