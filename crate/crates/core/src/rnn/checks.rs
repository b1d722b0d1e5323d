use ndarray::{Array3, Array4, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{backward_full, forward, forward_with, ClipPolicy, RnnParams, SequenceBatch};
use super::variant::CellVariant;
use super::RnnError;
use crate::hardware::Dtype;

/// Scales of a random instance; every entry is `N(0, scale^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitScales {
    pub recurrent: f64,
    pub bias: f64,
    pub inputs: f64,
    pub initial: f64,
}

impl InitScales {
    /// Recurrent weights scaled by `1/sqrt(head_dim)`, the rest unit or half scale.
    pub fn standard(head_dim: usize) -> Self {
        InitScales {
            recurrent: 1.0 / (head_dim as f64).sqrt(),
            bias: 0.5,
            inputs: 1.0,
            initial: 0.5,
        }
    }

    pub fn unit() -> Self {
        InitScales {
            recurrent: 1.0,
            bias: 1.0,
            inputs: 1.0,
            initial: 1.0,
        }
    }
}

fn normal_array<D: ndarray::Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(
    shape: Sh,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> ndarray::Array<f64, D> {
    ndarray::Array::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

pub fn random_params(
    variant: CellVariant,
    num_heads: usize,
    head_dim: usize,
    scales: InitScales,
    rng: &mut ChaCha8Rng,
) -> RnnParams {
    let ng = variant.num_gates();
    RnnParams {
        num_heads,
        head_dim,
        recurrent: normal_array((num_heads, ng, head_dim, head_dim), scales.recurrent, rng),
        bias: normal_array((ng, num_heads * head_dim), scales.bias, rng),
    }
}

/// Random inputs and initial states; the sLSTM normalizer starts in `[0.5, 1.5)`.
pub fn random_batch(
    variant: CellVariant,
    steps: usize,
    batch: usize,
    dim: usize,
    scales: InitScales,
    rng: &mut ChaCha8Rng,
) -> SequenceBatch {
    let inputs = normal_array((steps, batch, variant.num_gates(), dim), scales.inputs, rng);
    let mut initial: Array3<f64> =
        normal_array((variant.num_states(), batch, dim), scales.initial, rng);
    if variant == CellVariant::Slstm {
        initial
            .index_axis_mut(Axis(0), 2)
            .mapv_inplace(|_| rng.random_range(0.5..1.5));
    }
    SequenceBatch { inputs, initial }
}

/// Seeded random parameters and batch with the standard scales.
pub fn random_instance(
    variant: CellVariant,
    num_heads: usize,
    head_dim: usize,
    steps: usize,
    batch: usize,
    seed: u64,
) -> (RnnParams, SequenceBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = InitScales::standard(head_dim);
    let params = random_params(variant, num_heads, head_dim, scales, &mut rng);
    let data = random_batch(
        variant,
        steps,
        batch,
        num_heads * head_dim,
        scales,
        &mut rng,
    );
    (params, data)
}

/// Maximum absolute state deviation between the per-head forward pass and a
/// single-head pass over the assembled block-diagonal matrix.
pub fn blockdiag_deviation(
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
) -> Result<f64, RnnError> {
    let heads = forward(variant, params, batch)?;
    let single = forward(variant, &params.assembled(), batch)?;
    Ok(max_abs_diff(heads.states.iter(), single.states.iter()))
}

fn max_abs_diff<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub t: usize,
    pub p50: f64,
    pub p90: f64,
    pub p100: f64,
}

/// Percentile with linear interpolation between closest ranks; `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-step percentiles of `|h_low - h_f64|` over batch and hidden dimension.
pub fn precision_drift(
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
    low: Dtype,
) -> Result<Vec<DriftPoint>, RnnError> {
    let exact = forward(variant, params, batch)?;
    let approx = forward_with(low, variant, params, batch)?;
    let (he, ha) = (exact.hidden(), approx.hidden());
    Ok((1..he.dim().0)
        .map(|t| {
            let mut err: Vec<f64> = he
                .index_axis(Axis(0), t)
                .iter()
                .zip(ha.index_axis(Axis(0), t).iter())
                .map(|(a, b)| (a - b).abs())
                .collect();
            err.sort_by(f64::total_cmp);
            DriftPoint {
                t,
                p50: percentile(&err, 0.5),
                p90: percentile(&err, 0.9),
                p100: percentile(&err, 1.0),
            }
        })
        .collect())
}

/// Normwise relative error per gradient tensor: `max|analytic - numeric| / max|numeric|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub variant: CellVariant,
    pub d_inputs: f64,
    pub d_bias: f64,
    pub d_recurrent: f64,
    pub d_initial: f64,
}

impl GradcheckReport {
    pub fn max(&self) -> f64 {
        self.d_inputs
            .max(self.d_bias)
            .max(self.d_recurrent)
            .max(self.d_initial)
    }

    pub fn entries(&self) -> [(&'static str, f64); 4] {
        [
            ("d_inputs", self.d_inputs),
            ("d_bias", self.d_bias),
            ("d_recurrent", self.d_recurrent),
            ("d_initial", self.d_initial),
        ]
    }
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Inputs,
    Bias,
    Recurrent,
    Initial,
}

/// Compare backward against central differences of `L = sum(weights * states)`.
pub fn gradcheck(
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
    weights: &Array4<f64>,
    step: f64,
) -> Result<GradcheckReport, RnnError> {
    let trace = forward(variant, params, batch)?;
    if weights.dim() != trace.states.dim() {
        return Err(RnnError::Shape(format!(
            "loss weights are {:?}, expected {:?}",
            weights.dim(),
            trace.states.dim()
        )));
    }
    let grads = backward_full(variant, params, batch, &trace, weights, ClipPolicy::Off)?;
    let loss = |p: &RnnParams, b: &SequenceBatch| -> f64 {
        let tr = forward(variant, p, b).expect("perturbed instance stays valid");
        tr.states
            .iter()
            .zip(weights.iter())
            .map(|(s, w)| s * w)
            .sum()
    };
    let numeric = |slot: Slot, len: usize| -> Vec<f64> {
        (0..len)
            .into_par_iter()
            .map(|idx| {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    let mut b = batch.clone();
                    let target = match slot {
                        Slot::Inputs => b.inputs.as_slice_mut(),
                        Slot::Bias => p.bias.as_slice_mut(),
                        Slot::Recurrent => p.recurrent.as_slice_mut(),
                        Slot::Initial => b.initial.as_slice_mut(),
                    };
                    target.expect("standard layout")[idx] += delta;
                    loss(&p, &b)
                };
                (eval(step) - eval(-step)) / (2.0 * step)
            })
            .collect()
    };
    let flat = |a: &ArrayD<f64>| a.iter().copied().collect::<Vec<f64>>();
    Ok(GradcheckReport {
        variant,
        d_inputs: relative_error(
            &flat(&grads.d_inputs.into_dyn()),
            &numeric(Slot::Inputs, batch.inputs.len()),
        ),
        d_bias: relative_error(
            &flat(&grads.d_bias.into_dyn()),
            &numeric(Slot::Bias, params.bias.len()),
        ),
        d_recurrent: relative_error(
            &flat(&grads.d_recurrent.into_dyn()),
            &numeric(Slot::Recurrent, params.recurrent.len()),
        ),
        d_initial: relative_error(
            &flat(&grads.d_initial.into_dyn()),
            &numeric(Slot::Initial, batch.initial.len()),
        ),
    })
}

/// Random instance plus random loss weights, checked at the given size.
pub fn gradcheck_random(
    variant: CellVariant,
    steps: usize,
    head_dim: usize,
    num_heads: usize,
    batch: usize,
    seed: u64,
) -> Result<GradcheckReport, RnnError> {
    let (params, data) = random_instance(variant, num_heads, head_dim, steps, batch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x10_55);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let weights = Array4::from_shape_simple_fn(
        (steps + 1, variant.num_states(), batch, num_heads * head_dim),
        || normal.sample(&mut rng),
    );
    gradcheck(variant, &params, &data, &weights, 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert!(percentile(&[], 0.5).is_nan());
    }

    #[test]
    fn f64_drift_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = CellVariant::Lstm;
        let p = random_params(v, 1, 8, InitScales::standard(8), &mut rng);
        let b = random_batch(v, 10, 1, 8, InitScales::standard(8), &mut rng);
        let d = precision_drift(v, &p, &b, Dtype::F64).unwrap();
        assert_eq!(d.len(), 10);
        assert!(d.iter().all(|x| x.p100 == 0.0));
    }

    #[test]
    fn single_head_blockdiag_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = CellVariant::Gru;
        let p = random_params(v, 1, 8, InitScales::standard(8), &mut rng);
        let b = random_batch(v, 6, 2, 8, InitScales::standard(8), &mut rng);
        assert_eq!(blockdiag_deviation(v, &p, &b).unwrap(), 0.0);
    }

    #[test]
    fn small_gradcheck() {
        for v in CellVariant::ALL {
            let r = gradcheck_random(v, 3, 4, 2, 2, 5).unwrap();
            assert!(r.max() < 1e-6, "{r:?}");
        }
    }
}
