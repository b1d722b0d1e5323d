use std::fmt::Debug;

use half::{bf16, f16};
use ndarray::{Array2, Array3, Array4};
use num_traits::{Float, Zero};
use serde::{Deserialize, Serialize};

use super::variant::{CellVariant, MAX_SLOTS};
use super::RnnError;
use crate::hardware::Dtype;

/// Working precision of a run. `load` converts stored f64 data on entry and
/// `store` is applied to every gate and state written.
pub trait Precision: Send + Sync + 'static {
    type F: Float + Send + Sync + Debug + 'static;
    const DTYPE: Dtype;
    fn load(x: f64) -> Self::F;
    fn store(x: Self::F) -> Self::F;
    fn to_f64(x: Self::F) -> f64;
}

pub struct F64;
pub struct F32;
/// bfloat16 emulated on f32 arithmetic, rounding to nearest even on every store.
pub struct Bf16Emulated;
/// IEEE half emulated on f32 arithmetic.
pub struct F16Emulated;

impl Precision for F64 {
    type F = f64;
    const DTYPE: Dtype = Dtype::F64;
    fn load(x: f64) -> f64 {
        x
    }
    fn store(x: f64) -> f64 {
        x
    }
    fn to_f64(x: f64) -> f64 {
        x
    }
}

impl Precision for F32 {
    type F = f32;
    const DTYPE: Dtype = Dtype::F32;
    fn load(x: f64) -> f32 {
        x as f32
    }
    fn store(x: f32) -> f32 {
        x
    }
    fn to_f64(x: f32) -> f64 {
        x as f64
    }
}

impl Precision for Bf16Emulated {
    type F = f32;
    const DTYPE: Dtype = Dtype::Bf16;
    fn load(x: f64) -> f32 {
        bf16::from_f64(x).to_f32()
    }
    fn store(x: f32) -> f32 {
        bf16::from_f32(x).to_f32()
    }
    fn to_f64(x: f32) -> f64 {
        x as f64
    }
}

impl Precision for F16Emulated {
    type F = f32;
    const DTYPE: Dtype = Dtype::F16;
    fn load(x: f64) -> f32 {
        f16::from_f64(x).to_f32()
    }
    fn store(x: f32) -> f32 {
        f16::from_f32(x).to_f32()
    }
    fn to_f64(x: f32) -> f64 {
        x as f64
    }
}

/// Block-diagonal recurrent weights and biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub num_heads: usize,
    pub head_dim: usize,
    /// `[num_heads, N_g, head_dim, head_dim]`, row index is the output.
    pub recurrent: Array4<f64>,
    /// `[N_g, d]`
    pub bias: Array2<f64>,
}

impl RnnParams {
    pub fn zeros(variant: CellVariant, num_heads: usize, head_dim: usize) -> Self {
        let ng = variant.num_gates();
        RnnParams {
            num_heads,
            head_dim,
            recurrent: Array4::zeros((num_heads, ng, head_dim, head_dim)),
            bias: Array2::zeros((ng, num_heads * head_dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// The same cell as a single head whose matrix is the explicit block-diagonal assembly.
    pub fn assembled(&self) -> RnnParams {
        let (h, ng, dh, _) = self.recurrent.dim();
        let d = h * dh;
        let mut r = Array4::zeros((1, ng, d, d));
        for hd in 0..h {
            for j in 0..ng {
                for i in 0..dh {
                    for k in 0..dh {
                        r[[0, j, hd * dh + i, hd * dh + k]] = self.recurrent[[hd, j, i, k]];
                    }
                }
            }
        }
        RnnParams {
            num_heads: 1,
            head_dim: d,
            recurrent: r,
            bias: self.bias.clone(),
        }
    }

    pub fn validate(&self, variant: CellVariant) -> Result<(), RnnError> {
        let ng = variant.num_gates();
        let want_r = (self.num_heads, ng, self.head_dim, self.head_dim);
        if self.recurrent.dim() != want_r {
            return Err(RnnError::Shape(format!(
                "recurrent is {:?}, expected {want_r:?}",
                self.recurrent.dim()
            )));
        }
        if self.bias.dim() != (ng, self.dim()) {
            return Err(RnnError::Shape(format!(
                "bias is {:?}, expected {:?}",
                self.bias.dim(),
                (ng, self.dim())
            )));
        }
        if self.num_heads == 0 || self.head_dim == 0 {
            return Err(RnnError::Shape(
                "num_heads and head_dim must be positive".into(),
            ));
        }
        finite(self.recurrent.iter(), "recurrent")?;
        finite(self.bias.iter(), "bias")
    }
}

/// Gate inputs (the external projection already applied) and initial states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    /// `[T, batch, N_g, d]`
    pub inputs: Array4<f64>,
    /// `[N_s, batch, d]`
    pub initial: Array3<f64>,
}

impl SequenceBatch {
    pub fn zeros(variant: CellVariant, steps: usize, batch: usize, dim: usize) -> Self {
        SequenceBatch {
            inputs: Array4::zeros((steps, batch, variant.num_gates(), dim)),
            initial: Array3::zeros((variant.num_states(), batch, dim)),
        }
    }

    pub fn steps(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn batch(&self) -> usize {
        self.inputs.dim().1
    }

    fn validate(&self, variant: CellVariant, params: &RnnParams) -> Result<(), RnnError> {
        let (_, b, ng, d) = self.inputs.dim();
        if ng != variant.num_gates() || d != params.dim() {
            return Err(RnnError::Shape(format!(
                "inputs are {:?}, expected [T, batch, {}, {}]",
                self.inputs.dim(),
                variant.num_gates(),
                params.dim()
            )));
        }
        if self.initial.dim() != (variant.num_states(), b, d) {
            return Err(RnnError::Shape(format!(
                "initial states are {:?}, expected {:?}",
                self.initial.dim(),
                (variant.num_states(), b, d)
            )));
        }
        finite(self.inputs.iter(), "inputs")?;
        finite(self.initial.iter(), "initial")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// `[T+1, N_s, batch, d]`, index 0 is the initial state.
    pub states: Array4<f64>,
    /// `[T, N_g, batch, d]`
    pub gates: Array4<f64>,
}

impl ForwardTrace {
    pub fn hidden(&self) -> ndarray::ArrayView3<'_, f64> {
        self.states.index_axis(ndarray::Axis(1), 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    /// `[T, batch, N_g, d]`; zero for gates that take no input.
    pub d_inputs: Array4<f64>,
    /// `[T, batch, N_g, d]`, the gate gradients themselves.
    pub d_gates: Array4<f64>,
    /// `[N_g, d]`
    pub d_bias: Array2<f64>,
    /// `[num_heads, N_g, head_dim, head_dim]`
    pub d_recurrent: Array4<f64>,
    /// `[N_s, batch, d]`
    pub d_initial: Array3<f64>,
}

/// Treatment of the recurrent term `R^T dg` flowing into the previous hidden state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "magnitude", rename_all = "snake_case")]
pub enum ClipPolicy {
    #[default]
    Off,
    ClipValue(f64),
    Zero,
}

impl ClipPolicy {
    pub fn validate(&self) -> Result<(), RnnError> {
        match *self {
            ClipPolicy::ClipValue(m) if m.is_nan() || m <= 0.0 => Err(RnnError::InvalidClip(m)),
            _ => Ok(()),
        }
    }

    fn apply<F: Float>(&self, x: F) -> F {
        match *self {
            ClipPolicy::Off => x,
            ClipPolicy::ClipValue(m) => {
                let m = F::from(m).unwrap_or(F::infinity());
                x.max(-m).min(m)
            }
            ClipPolicy::Zero => F::zero(),
        }
    }
}

fn finite<'a>(mut it: impl Iterator<Item = &'a f64>, what: &'static str) -> Result<(), RnnError> {
    if it.all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(RnnError::NonFinite(what))
    }
}

struct Dims {
    steps: usize,
    batch: usize,
    ns: usize,
    ng: usize,
    heads: usize,
    dh: usize,
    d: usize,
}

impl Dims {
    fn of(variant: CellVariant, params: &RnnParams, batch: &SequenceBatch) -> Self {
        Dims {
            steps: batch.steps(),
            batch: batch.batch(),
            ns: variant.num_states(),
            ng: variant.num_gates(),
            heads: params.num_heads,
            dh: params.head_dim,
            d: params.dim(),
        }
    }
}

fn load_all<P: Precision>(xs: impl Iterator<Item = f64>) -> Vec<P::F> {
    xs.map(P::load).collect()
}

fn to_array<P: Precision, D: ndarray::Dimension>(
    shape: D,
    data: Vec<P::F>,
) -> ndarray::Array<f64, D> {
    ndarray::Array::from_shape_vec(shape, data.into_iter().map(P::to_f64).collect())
        .expect("shape matches data")
}

/// `out[b, h*dh + i] = sum_k r[h, i, k] * s[b, h*dh + k]`, summed in ascending `k`.
fn recurrent_product<F: Float>(r: &[F], s: &[F], out: &mut [F], dims: &Dims) {
    let (dh, d) = (dims.dh, dims.d);
    for b in 0..dims.batch {
        for h in 0..dims.heads {
            let sv = &s[b * d + h * dh..b * d + (h + 1) * dh];
            for i in 0..dh {
                let row = &r[(h * dh + i) * dh..(h * dh + i + 1) * dh];
                let mut acc = F::zero();
                for k in 0..dh {
                    acc = acc + row[k] * sv[k];
                }
                out[b * d + h * dh + i] = acc;
            }
        }
    }
}

/// Gates of step `t` from the hidden state `h_prev` (`[batch, d]`).
#[allow(clippy::too_many_arguments)]
fn step_gates<P: Precision>(
    variant: CellVariant,
    dims: &Dims,
    r: &[P::F],
    bias: &[P::F],
    x: &[P::F],
    t: usize,
    h_prev: &[P::F],
    gates: &mut [P::F],
    scratch: &mut [P::F],
) {
    let (b_n, ng, d) = (dims.batch, dims.ng, dims.d);
    let per_gate = dims.dh * dims.dh;
    for j in 0..ng {
        if variant.gate_uses_recurrent(j) {
            let rj: Vec<P::F> = (0..dims.heads)
                .flat_map(|h| {
                    r[(h * ng + j) * per_gate..(h * ng + j + 1) * per_gate]
                        .iter()
                        .copied()
                })
                .collect();
            recurrent_product(&rj, h_prev, scratch, dims);
        } else {
            scratch.iter_mut().for_each(|v| *v = P::F::zero());
        }
        for b in 0..b_n {
            for e in 0..d {
                let xin = if variant.gate_uses_input(j) {
                    x[((t * b_n + b) * ng + j) * d + e]
                } else {
                    P::F::zero()
                };
                gates[(j * b_n + b) * d + e] = P::store(xin + scratch[b * d + e] + bias[j * d + e]);
            }
        }
    }
}

pub fn forward_in<P: Precision>(
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
) -> Result<ForwardTrace, RnnError> {
    params.validate(variant)?;
    batch.validate(variant, params)?;
    let dims = Dims::of(variant, params, batch);
    let (steps, b_n, ns, ng, d) = (dims.steps, dims.batch, dims.ns, dims.ng, dims.d);
    let r = load_all::<P>(params.recurrent.iter().copied());
    let bias = load_all::<P>(params.bias.iter().copied());
    let x = load_all::<P>(batch.inputs.iter().copied());
    let state_len = ns * b_n * d;
    let gate_len = ng * b_n * d;
    let mut states = Vec::with_capacity((steps + 1) * state_len);
    states.extend(batch.initial.iter().map(|&v| P::load(v)));
    let mut gates = vec![P::F::zero(); steps * gate_len];
    let mut scratch = vec![P::F::zero(); b_n * d];
    for t in 0..steps {
        let prev = (t * state_len, (t + 1) * state_len);
        let g_t = &mut gates[t * gate_len..(t + 1) * gate_len];
        step_gates::<P>(
            variant,
            &dims,
            &r,
            &bias,
            &x,
            t,
            &states[prev.0..prev.0 + b_n * d],
            g_t,
            &mut scratch,
        );
        let mut next = vec![P::F::zero(); state_len];
        for b in 0..b_n {
            for e in 0..d {
                let mut s = [P::F::zero(); MAX_SLOTS];
                let mut g = [P::F::zero(); MAX_SLOTS];
                for i in 0..ns {
                    s[i] = states[prev.0 + (i * b_n + b) * d + e];
                }
                for j in 0..ng {
                    g[j] = g_t[(j * b_n + b) * d + e];
                }
                let out = variant.pointwise(&s, &g);
                for i in 0..ns {
                    next[(i * b_n + b) * d + e] = P::store(out[i]);
                }
            }
        }
        states.extend(next);
    }
    Ok(ForwardTrace {
        states: to_array::<P, _>(ndarray::Dim([steps + 1, ns, b_n, d]), states),
        gates: to_array::<P, _>(ndarray::Dim([steps, ng, b_n, d]), gates),
    })
}

pub fn forward(
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
) -> Result<ForwardTrace, RnnError> {
    forward_in::<F64>(variant, params, batch)
}

/// Forward pass in the given working precision.
pub fn forward_with(
    dtype: Dtype,
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
) -> Result<ForwardTrace, RnnError> {
    match dtype {
        Dtype::F64 => forward_in::<F64>(variant, params, batch),
        Dtype::F32 => forward_in::<F32>(variant, params, batch),
        Dtype::Bf16 => forward_in::<Bf16Emulated>(variant, params, batch),
        Dtype::F16 => forward_in::<F16Emulated>(variant, params, batch),
    }
}

/// Backward pass for a loss whose only dependence is on the final states.
pub fn backward(
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
    trace: &ForwardTrace,
    d_states_last: &Array3<f64>,
    clip: ClipPolicy,
) -> Result<Gradients, RnnError> {
    let (t1, ns, b, d) = trace.states.dim();
    if d_states_last.dim() != (ns, b, d) {
        return Err(RnnError::Shape(format!(
            "terminal state gradient is {:?}, expected {:?}",
            d_states_last.dim(),
            (ns, b, d)
        )));
    }
    let mut all = Array4::zeros((t1, ns, b, d));
    all.index_axis_mut(ndarray::Axis(0), t1 - 1)
        .assign(d_states_last);
    backward_full(variant, params, batch, trace, &all, clip)
}

/// Backward pass with external gradients on every state, `[T+1, N_s, batch, d]`.
pub fn backward_full(
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
    trace: &ForwardTrace,
    d_states: &Array4<f64>,
    clip: ClipPolicy,
) -> Result<Gradients, RnnError> {
    backward_in::<F64>(variant, params, batch, trace, d_states, clip)
}

pub fn backward_in<P: Precision>(
    variant: CellVariant,
    params: &RnnParams,
    batch: &SequenceBatch,
    trace: &ForwardTrace,
    d_states: &Array4<f64>,
    clip: ClipPolicy,
) -> Result<Gradients, RnnError> {
    params.validate(variant)?;
    batch.validate(variant, params)?;
    clip.validate()?;
    let dims = Dims::of(variant, params, batch);
    let (steps, b_n, ns, ng, heads, dh, d) = (
        dims.steps, dims.batch, dims.ns, dims.ng, dims.heads, dims.dh, dims.d,
    );
    if trace.states.dim() != (steps + 1, ns, b_n, d) || trace.gates.dim() != (steps, ng, b_n, d) {
        return Err(RnnError::Shape("trace does not match the batch".into()));
    }
    if d_states.dim() != trace.states.dim() {
        return Err(RnnError::Shape(format!(
            "state gradients are {:?}, expected {:?}",
            d_states.dim(),
            trace.states.dim()
        )));
    }
    finite(d_states.iter(), "state gradients")?;
    let r = load_all::<P>(params.recurrent.iter().copied());
    let s_all = load_all::<P>(trace.states.iter().copied());
    let g_all = load_all::<P>(trace.gates.iter().copied());
    let ext = load_all::<P>(d_states.iter().copied());
    let zero = P::F::zero();
    let state_len = ns * b_n * d;
    let gate_len = ng * b_n * d;

    let mut d_gates = vec![zero; steps * b_n * ng * d];
    let mut d_bias = vec![zero; ng * d];
    let mut d_r = vec![zero; heads * ng * dh * dh];
    let mut ds: Vec<P::F> = ext[steps * state_len..(steps + 1) * state_len].to_vec();
    let mut dg = vec![zero; gate_len];
    let mut rec = vec![zero; b_n * d];

    for t in (1..=steps).rev() {
        let s_prev = &s_all[(t - 1) * state_len..t * state_len];
        let g_t = &g_all[(t - 1) * gate_len..t * gate_len];
        let mut ds_prev = vec![zero; state_len];
        for b in 0..b_n {
            for e in 0..d {
                let mut s = [zero; MAX_SLOTS];
                let mut g = [zero; MAX_SLOTS];
                for i in 0..ns {
                    s[i] = s_prev[(i * b_n + b) * d + e];
                }
                for j in 0..ng {
                    g[j] = g_t[(j * b_n + b) * d + e];
                }
                let (jg, js) = variant.jacobians(&s, &g);
                for j in 0..ng {
                    let mut acc = zero;
                    for l in 0..ns {
                        acc = acc + jg[l][j] * ds[(l * b_n + b) * d + e];
                    }
                    dg[(j * b_n + b) * d + e] = P::store(acc);
                }
                for i in 0..ns {
                    let mut acc = zero;
                    for l in 0..ns {
                        acc = acc + js[l][i] * ds[(l * b_n + b) * d + e];
                    }
                    ds_prev[(i * b_n + b) * d + e] = acc;
                }
            }
        }
        for b in 0..b_n {
            for h in 0..heads {
                for k in 0..dh {
                    let mut acc = zero;
                    for j in (0..ng).filter(|&j| variant.gate_uses_recurrent(j)) {
                        let base = (h * ng + j) * dh * dh;
                        for i in 0..dh {
                            acc = acc + r[base + i * dh + k] * dg[(j * b_n + b) * d + h * dh + i];
                        }
                    }
                    rec[b * d + h * dh + k] = acc;
                }
            }
        }
        for (v, &x) in ds_prev[..b_n * d].iter_mut().zip(&rec) {
            *v = *v + clip.apply(x);
        }
        for j in (0..ng).filter(|&j| variant.gate_uses_recurrent(j)) {
            for h in 0..heads {
                let base = (h * ng + j) * dh * dh;
                for i in 0..dh {
                    for k in 0..dh {
                        let mut acc = d_r[base + i * dh + k];
                        for b in 0..b_n {
                            acc = acc
                                + dg[(j * b_n + b) * d + h * dh + i] * s_prev[b * d + h * dh + k];
                        }
                        d_r[base + i * dh + k] = acc;
                    }
                }
            }
        }
        for j in 0..ng {
            for e in 0..d {
                let mut acc = d_bias[j * d + e];
                for b in 0..b_n {
                    let v = dg[(j * b_n + b) * d + e];
                    acc = acc + v;
                    d_gates[(((t - 1) * b_n + b) * ng + j) * d + e] = v;
                }
                d_bias[j * d + e] = acc;
            }
        }
        let ext_prev = &ext[(t - 1) * state_len..t * state_len];
        for (v, &x) in ds_prev.iter_mut().zip(ext_prev) {
            *v = P::store(*v + x);
        }
        ds = ds_prev;
    }
    let d_gates = to_array::<P, _>(ndarray::Dim([steps, b_n, ng, d]), d_gates);
    let mut d_inputs = d_gates.clone();
    for j in (0..ng).filter(|&j| !variant.gate_uses_input(j)) {
        d_inputs.slice_mut(ndarray::s![.., .., j, ..]).fill(0.0);
    }
    Ok(Gradients {
        d_inputs,
        d_gates,
        d_bias: to_array::<P, _>(ndarray::Dim([ng, d]), d_bias),
        d_recurrent: to_array::<P, _>(ndarray::Dim([heads, ng, dh, dh]), d_r),
        d_initial: to_array::<P, _>(ndarray::Dim([ns, b_n, d]), ds),
    })
}
