use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{parity_batch, ParityBatch};
use super::model::{ModelDims, ParityModel};
use crate::rnn::{CellVariant, RnnError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParityConfig {
    pub train_len_max: usize,
    pub eval_len_min: usize,
    pub eval_len_max: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of the peak.
    pub cosine_floor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub eval_every: usize,
    pub eval_samples: usize,
    /// End a run early once extrapolation accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for ParityConfig {
    fn default() -> Self {
        ParityConfig {
            train_len_max: 40,
            eval_len_min: 40,
            eval_len_max: 256,
            batch_size: 64,
            steps: 20_000,
            peak_lr: 1e-2,
            warmup_steps: 2_000,
            cosine_floor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eval_every: 500,
            eval_samples: 512,
            stop_at_accuracy: None,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

impl ParityConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.train_len_max == 0
            || self.batch_size == 0
            || self.eval_samples == 0
            || self.eval_every == 0
        {
            return bad("lengths, batch size, eval interval and eval samples must be positive");
        }
        if self.eval_len_min == 0 || self.eval_len_min > self.eval_len_max {
            return bad("evaluation length range is empty");
        }
        if self.peak_lr.is_nan() || self.peak_lr <= 0.0 || !(0.0..=1.0).contains(&self.cosine_floor)
        {
            return bad("peak_lr must be positive and cosine_floor in [0, 1]");
        }
        Ok(())
    }

    /// Linear warmup to the peak, then cosine decay to `cosine_floor * peak` at `steps`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let p = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.peak_lr
            * (self.cosine_floor + (1.0 - self.cosine_floor) * 0.5 * (1.0 + (PI * p).cos()))
    }
}

/// Adaptive-moment optimizer over a list of parameter slices.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(sizes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for i in 0..p.len() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub train_loss: f64,
    pub extrapolation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub lr: f64,
    pub seed: u64,
    pub steps_run: usize,
    pub losses: Vec<f64>,
    pub curve: Vec<EvalPoint>,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    /// Step at which the loss became non-finite.
    pub diverged_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: CellVariant,
    pub dims: ModelDims,
    pub config: ParityConfig,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub runs: Vec<TrainRun>,
    pub best_lr: f64,
    /// Mean final extrapolation accuracy over seeds at the best learning rate.
    pub best_accuracy: f64,
}

fn eval_set(config: &ParityConfig) -> Vec<ParityBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e7a1);
    let mut left = config.eval_samples;
    let mut out = Vec::new();
    while left > 0 {
        let n = left.min(64);
        out.push(parity_batch(
            &mut rng,
            n,
            config.eval_len_min,
            config.eval_len_max,
        ));
        left -= n;
    }
    out
}

/// Accuracy over all batches, weighted by batch size.
pub fn evaluate(model: &ParityModel, batches: &[ParityBatch]) -> Result<f64, RnnError> {
    let hits: Vec<f64> = batches
        .par_iter()
        .map(|b| model.accuracy(b).map(|a| a * b.len() as f64))
        .collect::<Result<_, _>>()?;
    let total: usize = batches.iter().map(ParityBatch::len).sum();
    Ok(hits.iter().sum::<f64>() / total.max(1) as f64)
}

/// One training run; `config.seed` drives initialization and the data stream.
pub fn train(
    variant: CellVariant,
    dims: ModelDims,
    config: &ParityConfig,
) -> Result<TrainRun, TrainError> {
    train_model(variant, dims, config).map(|(run, _)| run)
}

/// As [`train`], also returning the final model.
pub fn train_model(
    variant: CellVariant,
    dims: ModelDims,
    config: &ParityConfig,
) -> Result<(TrainRun, ParityModel), TrainError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ParityModel::init(variant, dims, &mut rng);
    let evals = eval_set(config);
    let sizes: Vec<usize> = model.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&sizes, config.beta1, config.beta2, config.eps);
    let initial_accuracy = evaluate(&model, &evals)?;
    let mut run = TrainRun {
        lr: config.peak_lr,
        seed: config.seed,
        steps_run: 0,
        losses: Vec::with_capacity(config.steps),
        curve: Vec::new(),
        initial_accuracy,
        final_accuracy: initial_accuracy,
        diverged_at: None,
    };
    for step in 0..config.steps {
        let batch = parity_batch(&mut rng, config.batch_size, 1, config.train_len_max);
        let (stats, grads) = model.loss_and_grads(&batch)?;
        run.losses.push(stats.loss);
        run.steps_run = step + 1;
        if !stats.loss.is_finite()
            || grads
                .slices()
                .iter()
                .any(|s| s.iter().any(|g| !g.is_finite()))
        {
            run.diverged_at = Some(step);
            break;
        }
        adam.step(
            &mut model.param_slices_mut(),
            &grads.slices(),
            config.learning_rate(step),
        );
        if (step + 1) % config.eval_every == 0 || step + 1 == config.steps {
            let acc = evaluate(&model, &evals)?;
            run.curve.push(EvalPoint {
                step: step + 1,
                train_loss: stats.loss,
                extrapolation_accuracy: acc,
            });
            run.final_accuracy = acc;
            if config.stop_at_accuracy.is_some_and(|target| acc >= target) {
                break;
            }
        }
    }
    Ok((run, model))
}

/// Runs every learning-rate/seed pair and picks the learning rate with the best
/// mean final accuracy. Diverged runs count as accuracy 0.
pub fn train_sweep(
    variant: CellVariant,
    dims: ModelDims,
    config: &ParityConfig,
    learning_rates: &[f64],
    seeds: &[u64],
) -> Result<TrainReport, TrainError> {
    if learning_rates.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config(
            "at least one learning rate and one seed are required".into(),
        ));
    }
    let jobs: Vec<(f64, u64)> = learning_rates
        .iter()
        .flat_map(|&lr| seeds.iter().map(move |&s| (lr, s)))
        .collect();
    let runs: Vec<TrainRun> = jobs
        .par_iter()
        .map(|&(lr, seed)| {
            train(
                variant,
                dims,
                &ParityConfig {
                    peak_lr: lr,
                    seed,
                    ..*config
                },
            )
        })
        .collect::<Result<_, _>>()?;
    let score = |lr: f64| {
        let accs: Vec<f64> = runs
            .iter()
            .filter(|r| r.lr == lr)
            .map(|r| {
                if r.diverged_at.is_some() {
                    0.0
                } else {
                    r.final_accuracy
                }
            })
            .collect();
        accs.iter().sum::<f64>() / accs.len() as f64
    };
    let (best_lr, best_accuracy) = learning_rates.iter().map(|&lr| (lr, score(lr))).fold(
        (learning_rates[0], f64::NEG_INFINITY),
        |best, c| if c.1 > best.1 { c } else { best },
    );
    Ok(TrainReport {
        variant,
        dims,
        config: *config,
        learning_rates: learning_rates.to_vec(),
        seeds: seeds.to_vec(),
        runs,
        best_lr,
        best_accuracy,
    })
}
