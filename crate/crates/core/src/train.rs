//! Gradient computation, Adam with decoupled weight decay, the inverse
//! square-root schedule and the update loop.

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Example, ParallelBatch, SentencePair};
use crate::error::{Error, Result};
use crate::hmm::LossTerms;
use crate::model::{Dropout, Hmt};
use crate::numerics::{max_relative_error, numerical_gradient, Array, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_updates: usize,
    pub warmup_init_lr: f64,
    pub lr: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    /// Padded-token budget per batch.
    pub max_tokens: usize,
    pub updates: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-8,
            weight_decay: 0.0001,
            warmup_updates: 4000,
            warmup_init_lr: 1e-7,
            lr: 5e-4,
            clip_norm: 0.0,
            max_tokens: 256,
            updates: 2000,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, why: &str| Err(Error::Config(format!("{f}: {why}")));
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if self.adam_eps <= 0.0 {
            return bad("adam_eps", "must be positive");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay", "must be non-negative");
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return bad("lr", "must be positive");
        }
        if self.warmup_init_lr < 0.0 {
            return bad("warmup_init_lr", "must be non-negative");
        }
        if self.clip_norm < 0.0 {
            return bad("clip_norm", "must be non-negative");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens", "must be positive");
        }
        Ok(())
    }
}

/// Linear warmup from `warmup_init_lr` to `lr`, then `lr * sqrt(warmup / step)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseSqrt {
    pub warmup_updates: usize,
    pub warmup_init_lr: f64,
    pub lr: f64,
}

impl InverseSqrt {
    /// Learning rate of update `step` (one-based).
    pub fn at(&self, step: usize) -> f64 {
        let step = step.max(1);
        if step < self.warmup_updates {
            let frac = step as f64 / self.warmup_updates as f64;
            self.warmup_init_lr + (self.lr - self.warmup_init_lr) * frac
        } else {
            self.lr * (self.warmup_updates.max(1) as f64 / step as f64).sqrt()
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize], beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn update(&mut self, params: &mut [Array], grads: &[Array], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let step = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                *w -= lr * (step + self.weight_decay * *w);
            }
        }
    }
}

fn mix(seed: u64, step: u64, item: u64) -> u64 {
    // splitmix64 over the combined key
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ item.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean loss over `examples` and its gradient with respect to every
/// parameter. `dropout_key = Some((seed, step))` enables dropout.
pub fn loss_and_gradients(
    model: &Hmt,
    examples: &[Example<'_>],
    dropout_key: Option<(u64, u64)>,
) -> Result<(LossTerms, Vec<Array>)> {
    if examples.is_empty() {
        return Err(Error::contract("gradient of an empty batch"));
    }
    let mut grads: Vec<Array> = model
        .params()
        .values()
        .iter()
        .map(|p| Array::zeros(p.rows(), p.cols()))
        .collect();
    let mut terms = Vec::with_capacity(examples.len());
    let scale = 1.0 / examples.len() as f64;
    for (n, ex) in examples.iter().enumerate() {
        let mut dropout = match dropout_key {
            Some((seed, step)) if model.config().dropout > 0.0 => {
                Dropout::new(model.config().dropout, mix(seed, step, n as u64))
            }
            _ => Dropout::off(),
        };
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, true);
        let loss = model.sentence_loss(&mut tape, &p, ex.source, ex.target_in, ex.target_out, &mut dropout)?;
        terms.push(loss.values(&tape));
        let g = tape.backward(loss.total)?;
        for (acc, &v) in grads.iter_mut().zip(p.vars()) {
            if let Some(d) = g.get(v) {
                for (a, x) in acc.data_mut().iter_mut().zip(d) {
                    *a += scale * x;
                }
            }
        }
    }
    Ok((LossTerms::mean(&terms), grads))
}

/// Mean loss over `examples` without gradients or dropout.
pub fn mean_loss(model: &Hmt, examples: &[Example<'_>]) -> Result<LossTerms> {
    let mut terms = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, false);
        let loss = model.sentence_loss(
            &mut tape,
            &p,
            ex.source,
            ex.target_in,
            ex.target_out,
            &mut Dropout::off(),
        )?;
        terms.push(loss.values(&tape));
    }
    Ok(LossTerms::mean(&terms))
}

/// Largest relative error between the backpropagated gradient of the mean
/// loss over `examples` and central finite differences with step `eps`,
/// taken over every parameter scalar.
pub fn parameter_grad_check(model: &Hmt, examples: &[Example<'_>], eps: f64) -> Result<f64> {
    let (_, grads) = loss_and_gradients(model, examples, None)?;
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    let flat: Vec<f64> = model
        .params()
        .values()
        .iter()
        .flat_map(|p| p.data().iter().copied())
        .collect();
    let probe = std::cell::RefCell::new(model.clone());
    let numeric = numerical_gradient(
        |x| {
            let mut probe = probe.borrow_mut();
            let mut off = 0;
            for p in probe.params_mut().values_mut() {
                let n = p.len();
                p.data_mut().copy_from_slice(&x[off..off + n]);
                off += n;
            }
            Ok(mean_loss(&probe, examples)?.total)
        },
        &flat,
        eps,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}

pub fn global_norm(grads: &[Array]) -> f64 {
    grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
}

/// What one update reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub step: usize,
    pub lr: f64,
    pub loss: LossTerms,
    pub grad_norm: f64,
    pub sentences: usize,
}

pub struct Trainer {
    model: Hmt,
    config: TrainConfig,
    adam: Adam,
    schedule: InverseSqrt,
}

impl Trainer {
    pub fn new(model: Hmt, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<usize> = model.params().values().iter().map(Array::len).collect();
        let adam = Adam::new(
            &shapes,
            config.beta1,
            config.beta2,
            config.adam_eps,
            config.weight_decay,
        );
        let schedule = InverseSqrt {
            warmup_updates: config.warmup_updates,
            warmup_init_lr: config.warmup_init_lr,
            lr: config.lr,
        };
        Ok(Self {
            model,
            config,
            adam,
            schedule,
        })
    }

    pub fn model(&self) -> &Hmt {
        &self.model
    }

    pub fn into_model(self) -> Hmt {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.adam.steps()
    }

    /// One optimizer update on `batch`.
    pub fn step(&mut self, batch: &ParallelBatch) -> Result<UpdateLog> {
        let step = self.adam.steps() + 1;
        let examples: Vec<Example<'_>> = batch.examples().collect();
        let (loss, mut grads) = match loss_and_gradients(&self.model, &examples, Some((self.config.seed, step as u64)))
        {
            Err(Error::NoFeasiblePath) => {
                return Err(Error::NonFinite {
                    step,
                    detail: format!(
                        "selection lattice collapsed (non-finite emissions or confidences) over {} sentences",
                        batch.len()
                    ),
                })
            }
            other => other?,
        };
        let grad_norm = global_norm(&grads);
        if !loss.total.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!(
                    "hmm {} latency {} state {} grad-norm {} over {} sentences (source lengths {:?})",
                    loss.hmm,
                    loss.latency,
                    loss.state,
                    grad_norm,
                    batch.len(),
                    batch.source_lens
                ),
            });
        }
        if self.config.clip_norm > 0.0 && grad_norm > self.config.clip_norm {
            let s = self.config.clip_norm / grad_norm;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
        let lr = self.schedule.at(step);
        self.adam.update(self.model.params_mut().values_mut(), &grads, lr);
        Ok(UpdateLog {
            step,
            lr,
            loss,
            grad_norm,
            sentences: batch.len(),
        })
    }

    /// Runs `config.updates` updates, cycling over freshly shuffled batches
    /// each epoch.
    pub fn fit(&mut self, pairs: &[SentencePair], mut on_update: impl FnMut(&UpdateLog)) -> Result<Vec<UpdateLog>> {
        self.fit_with(pairs, |log, _| {
            on_update(log);
            Ok(())
        })
    }

    /// [`Trainer::fit`] with access to the model after every update; an
    /// error from `on_update` stops training.
    pub fn fit_with(
        &mut self,
        pairs: &[SentencePair],
        mut on_update: impl FnMut(&UpdateLog, &Hmt) -> Result<()>,
    ) -> Result<Vec<UpdateLog>> {
        let mut logs = Vec::with_capacity(self.config.updates);
        let mut epoch = 0u64;
        while logs.len() < self.config.updates {
            let batches = make_batches(pairs, self.config.max_tokens, mix(self.config.seed, epoch, u64::MAX))?;
            if batches.is_empty() {
                return Err(Error::data("no training pairs"));
            }
            for b in &batches {
                if logs.len() == self.config.updates {
                    break;
                }
                let log = self.step(b)?;
                on_update(&log, &self.model)?;
                logs.push(log);
            }
            epoch += 1;
        }
        Ok(logs)
    }
}
