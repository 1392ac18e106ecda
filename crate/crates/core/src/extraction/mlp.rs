use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    check_training_pairs, SparseFeatures, StealerFeaturizer, StealerHead, StealerModel,
    MODEL_FORMAT_VERSION,
};
use crate::embedder::Embedding;
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Two-layer network `W2·tanh(W1·x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// Input-major: `w1[feature][hidden]`.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// `w2[output][hidden]`.
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn init(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Features are unit-norm, so unit-variance input weights keep the
        // pre-activations at unit scale.
        let n1 = Normal::new(0.0, 1.0).expect("valid normal");
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("valid normal");
        Self {
            w1: (0..inputs)
                .map(|_| (0..hidden).map(|_| n1.sample(&mut rng)).collect())
                .collect(),
            b1: vec![0.0; hidden],
            w2: (0..outputs)
                .map(|_| (0..hidden).map(|_| n2.sample(&mut rng)).collect())
                .collect(),
            b2: vec![0.0; outputs],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: self.w1.iter().map(|r| vec![0.0; r.len()]).collect(),
            b1: vec![0.0; self.b1.len()],
            w2: self.w2.iter().map(|r| vec![0.0; r.len()]).collect(),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b1.len()
    }

    /// Returns `(hidden activations, output)`.
    pub fn forward(&self, x: &SparseFeatures) -> (Vec<f64>, Vec<f64>) {
        let mut hidden = self.b1.clone();
        for (j, v) in x.iter() {
            for (h, w) in hidden.iter_mut().zip(&self.w1[j]) {
                *h += v * w;
            }
        }
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        let out = self
            .w2
            .iter()
            .zip(&self.b2)
            .map(|(row, b)| b + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>())
            .collect();
        (hidden, out)
    }

    /// Mean over samples and coordinates of the squared error.
    pub fn loss(&self, xs: &[SparseFeatures], ys: &[Embedding]) -> f64 {
        let d = self.b2.len();
        let total: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let (_, out) = self.forward(x);
                out.iter()
                    .zip(y.as_slice())
                    .map(|(o, t)| (o - t).powi(2))
                    .sum::<f64>()
            })
            .sum();
        total / (xs.len() * d) as f64
    }

    /// Analytic gradient of [`MlpParams::loss`].
    pub fn gradient(&self, xs: &[SparseFeatures], ys: &[Embedding]) -> Self {
        let mut g = self.zeros_like();
        self.accumulate_gradient(xs.iter().zip(ys), xs.len(), &mut g);
        g
    }

    /// Adds the batch gradient into `g` and returns the batch loss.
    fn accumulate_gradient<'a>(
        &self,
        batch: impl Iterator<Item = (&'a SparseFeatures, &'a Embedding)>,
        batch_len: usize,
        g: &mut Self,
    ) -> f64 {
        let d = self.b2.len();
        let scale = 1.0 / (batch_len * d) as f64;
        let mut loss = 0.0;
        let mut dz = vec![0.0; self.hidden_size()];
        for (x, y) in batch {
            let (hidden, out) = self.forward(x);
            dz.iter_mut().for_each(|v| *v = 0.0);
            for (k, (o, t)) in out.iter().zip(y.as_slice()).enumerate() {
                let r = o - t;
                loss += r * r * scale;
                let delta = 2.0 * r * scale;
                g.b2[k] += delta;
                for ((gw, w), (h, z)) in g.w2[k]
                    .iter_mut()
                    .zip(&self.w2[k])
                    .zip(hidden.iter().zip(dz.iter_mut()))
                {
                    *gw += delta * h;
                    *z += delta * w;
                }
            }
            for (z, h) in dz.iter_mut().zip(&hidden) {
                *z *= 1.0 - h * h;
            }
            for (gb, z) in g.b1.iter_mut().zip(&dz) {
                *gb += z;
            }
            for (j, v) in x.iter() {
                for (gw, z) in g.w1[j].iter_mut().zip(&dz) {
                    *gw += v * z;
                }
            }
        }
        loss
    }

    pub fn num_params(&self) -> usize {
        let h = self.hidden_size();
        self.w1.len() * h + h + self.w2.len() * h + self.b2.len()
    }

    fn locate(&mut self, mut i: usize) -> &mut f64 {
        let h = self.hidden_size();
        if i < self.w1.len() * h {
            return &mut self.w1[i / h][i % h];
        }
        i -= self.w1.len() * h;
        if i < h {
            return &mut self.b1[i];
        }
        i -= h;
        if i < self.w2.len() * h {
            return &mut self.w2[i / h][i % h];
        }
        i -= self.w2.len() * h;
        &mut self.b2[i]
    }

    /// Flat parameter access in the order `w1, b1, w2, b2`.
    pub fn param(&self, i: usize) -> f64 {
        *self.clone().locate(i)
    }

    pub fn set_param(&mut self, i: usize, value: f64) {
        *self.locate(i) = value;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpTraining {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpTraining {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            epochs: 30,
            learning_rate: 5e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpFit {
    pub model: StealerModel,
    /// Training loss before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: MlpParams,
    v: MlpParams,
}

fn adam_step(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr_t: f64) {
    for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        *p -= lr_t * *m / (v.sqrt() + ADAM_EPS);
    }
}

/// Mini-batch Adam on the squared error with a cosine learning-rate decay.
/// Input-layer rows are updated lazily, only when their feature occurs in the batch.
pub fn fit_mlp(
    featurizer: StealerFeaturizer,
    queries: &[String],
    responses: &[Embedding],
    training: MlpTraining,
) -> Result<MlpFit> {
    let d = check_training_pairs(queries, responses)?;
    if training.hidden_size == 0 || training.epochs == 0 || training.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "hidden size, epochs and batch size must be positive".into(),
        ));
    }
    if !(training.learning_rate > 0.0 && training.learning_rate.is_finite()) {
        return Err(Error::InvalidConfig(
            "learning rate must be positive".into(),
        ));
    }
    let xs: Vec<SparseFeatures> = queries.iter().map(|q| featurizer.featurize(q)).collect();
    let mut params = MlpParams::init(featurizer.width(), training.hidden_size, d, training.seed);
    let initial_loss = params.loss(&xs, responses);

    let mut adam = Adam {
        m: params.zeros_like(),
        v: params.zeros_like(),
    };
    let mut grad = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(training.seed ^ 0xa5a5_a5a5);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut touched = vec![false; featurizer.width()];
    let mut step = 0i32;
    let mut epoch_losses = Vec::with_capacity(training.epochs);

    for epoch in 0..training.epochs {
        let progress = epoch as f64 / training.epochs as f64;
        let lr = training.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(training.batch_size) {
            let rows: Vec<usize> = {
                let mut rows = Vec::new();
                for &i in batch {
                    for &j in &xs[i].indices {
                        if !touched[j] {
                            touched[j] = true;
                            rows.push(j);
                        }
                    }
                }
                rows
            };
            let loss = params.accumulate_gradient(
                batch.iter().map(|&i| (&xs[i], &responses[i])),
                batch.len(),
                &mut grad,
            );
            epoch_loss += loss * batch.len() as f64;

            step += 1;
            let lr_t = lr * (1.0 - BETA2.powi(step)).sqrt() / (1.0 - BETA1.powi(step));
            for &j in &rows {
                adam_step(
                    &mut params.w1[j],
                    &grad.w1[j],
                    &mut adam.m.w1[j],
                    &mut adam.v.w1[j],
                    lr_t,
                );
                grad.w1[j].iter_mut().for_each(|g| *g = 0.0);
                touched[j] = false;
            }
            adam_step(
                &mut params.b1,
                &grad.b1,
                &mut adam.m.b1,
                &mut adam.v.b1,
                lr_t,
            );
            for k in 0..d {
                adam_step(
                    &mut params.w2[k],
                    &grad.w2[k],
                    &mut adam.m.w2[k],
                    &mut adam.v.w2[k],
                    lr_t,
                );
                grad.w2[k].iter_mut().for_each(|g| *g = 0.0);
            }
            adam_step(
                &mut params.b2,
                &grad.b2,
                &mut adam.m.b2,
                &mut adam.v.b2,
                lr_t,
            );
            grad.b1.iter_mut().for_each(|g| *g = 0.0);
            grad.b2.iter_mut().for_each(|g| *g = 0.0);
        }
        let epoch_loss = epoch_loss / xs.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        epoch_losses.push(epoch_loss);
    }

    Ok(MlpFit {
        model: StealerModel {
            version: MODEL_FORMAT_VERSION,
            featurizer,
            head: StealerHead::Mlp(params),
        },
        initial_loss,
        epoch_losses,
    })
}
