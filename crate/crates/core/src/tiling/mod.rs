//! Tiling plans for a fused recurrent kernel.
//!
//! Every matrix axis of the per-step product is split four ways: an elementary
//! tensor-core tile `E`, warps `W`, thread blocks `Bk` and a sequential loop `L`,
//! with `S = E * W * Bk * L` exactly. The forward pass multiplies the
//! `N_g*d x d` recurrent matrix with the batch of hidden states, so the gate axis
//! G (size `N_g*d`) is tiled in parallel and the state axis S (size `d`) is
//! accumulated. The backward pass computes `R^T dg` and swaps the sizes: G
//! becomes `d`, S becomes `N_g*d`. The batch axis B is padded to a multiple of 8.
//!
//! The loop over accumulation tiles is split into `L_S_reg` tiles of `R` held in
//! registers and `L_S_sram` tiles held in shared memory.
//!
//! # Footprint per thread block
//!
//! With `warps = W_B*W_S*W_G`, `e` the element size of the model dtype, `p` the
//! SRAM row padding and accumulators in 4-byte floats:
//!
//! | term | bytes |
//! |------|-------|
//! | R tiles in registers | `warps * L_G * L_S_reg * E_S * E_G * e` |
//! | bias tiles | `warps * L_G * E_G * e` |
//! | accumulators | `warps * E_B * E_G * 4` |
//! | R tiles in SRAM | `W_S * W_G * L_G * L_S_sram * E_S * (E_G + p) * e` |
//! | reduction staging | `warps * E_B * (E_G + p) * 4` |
//! | gate buffer | `W_B * E_B * (W_G * L_G * E_G + p) * 4` |
//!
//! Registers are the first three rows, SRAM the last three. Register tiles are
//! replicated across batch warps; SRAM tiles are shared by them.
//!
//! Register bytes must stay within the planner's budget, within
//! `threads * 4 * (max_registers_per_thread - overhead_registers_per_thread)`,
//! and, together with the per-thread overhead, within the register file.

mod complexity;
mod model;
mod planner;

pub use complexity::{complexity_estimate, Complexity};
pub use model::{build_csp, estimate_footprint, TilingAssignment, TilingCsp, TilingVars};
pub use planner::{
    feasible_head_dims, plan, plan_with, PlannerOptions, RegisterFeedback, RegisterModel,
    PLAN_SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csp::CspError;
use crate::hardware::{Dtype, GpuSpec};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("shape field `{0}` must be positive")]
    InvalidShape(&'static str),
    #[error("invalid GPU description: {0}")]
    InvalidGpu(String),
    #[error("head dimension {head_dim} is not a multiple of the tile size {tile}")]
    HeadDimNotTileable { head_dim: i64, tile: i64 },
    #[error(transparent)]
    Csp(#[from] CspError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Forward,
    Backward,
}

impl Pass {
    pub const BOTH: [Pass; 2] = [Pass::Forward, Pass::Backward];
}

impl std::fmt::Display for Pass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pass::Forward => "forward",
            Pass::Backward => "backward",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RnnShape {
    pub num_states: i64,
    pub num_gates: i64,
    pub head_dim: i64,
    pub num_heads: i64,
    pub batch_size: i64,
    pub dtype: Dtype,
}

impl RnnShape {
    pub fn embedding_dim(&self) -> i64 {
        self.num_heads * self.head_dim
    }

    /// Bytes of the recurrent matrix of one head.
    pub fn recurrent_bytes_per_head(&self) -> i64 {
        self.num_gates * self.head_dim * self.head_dim * self.dtype.bytes()
    }

    pub(crate) fn validate(&self) -> Result<(), PlanError> {
        for (v, name) in [
            (self.num_states, "num_states"),
            (self.num_gates, "num_gates"),
            (self.head_dim, "head_dim"),
            (self.num_heads, "num_heads"),
            (self.batch_size, "batch_size"),
        ] {
            if v < 1 {
                return Err(PlanError::InvalidShape(name));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Batch,
    Gate,
    State,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisTiling {
    pub axis: Axis,
    pub size: i64,
    pub elementary: i64,
    pub warps: i64,
    pub blocks: i64,
    pub loops: i64,
}

impl AxisTiling {
    pub fn tiles(&self) -> i64 {
        self.size / self.elementary
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryFootprint {
    pub registers: i64,
    pub sram: i64,
    pub hbm_traffic_per_step: i64,
    /// Logical recurrent matrix of one head, `N_g * d_head^2 * e`.
    pub recurrent_matrix_bytes: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub schema_version: u32,
    pub shape: RnnShape,
    pub padded_head_dim: i64,
    pub padded_batch: i64,
    pub gpu: GpuSpec,
    pub pass: Pass,
    pub axes: [AxisTiling; 3],
    pub loops_reg: i64,
    pub loops_sram: i64,
    pub register_budget_bytes: i64,
    pub block_threads: i64,
    pub grid_blocks: i64,
    pub footprint: MemoryFootprint,
    pub budget_probes: u32,
}

impl TilingPlan {
    pub fn axis(&self, axis: Axis) -> &AxisTiling {
        &self.axes[axis as usize]
    }

    pub fn assignment(&self) -> TilingAssignment {
        let [b, g, s] = self.axes;
        TilingAssignment {
            e_b: b.elementary,
            w_b: b.warps,
            b_b: b.blocks,
            l_b: b.loops,
            e_g: g.elementary,
            w_g: g.warps,
            b_g: g.blocks,
            l_g: g.loops,
            e_s: s.elementary,
            w_s: s.warps,
            b_s: s.blocks,
            l_s_reg: self.loops_reg,
            l_s_sram: self.loops_sram,
        }
    }

    /// Human-readable summary.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{} pass on {}: d_head {} (padded {}), batch {} (padded {}), {} heads, {}\n",
            self.pass,
            self.gpu.name,
            self.shape.head_dim,
            self.padded_head_dim,
            self.shape.batch_size,
            self.padded_batch,
            self.shape.num_heads,
            self.shape.dtype
        );
        out.push_str("axis    size     E   W   Bk     L\n");
        for a in &self.axes {
            let name = match a.axis {
                Axis::Batch => "B",
                Axis::Gate => "G",
                Axis::State => "S",
            };
            out.push_str(&format!(
                "{name:<5}{:>7}{:>6}{:>4}{:>5}{:>6}\n",
                a.size, a.elementary, a.warps, a.blocks, a.loops
            ));
        }
        out.push_str(&format!(
            "L_S split: {} in registers, {} in SRAM\n",
            self.loops_reg, self.loops_sram
        ));
        out.push_str(&format!(
            "grid {} blocks x {} threads, register budget {} B\n",
            self.grid_blocks, self.block_threads, self.register_budget_bytes
        ));
        let f = &self.footprint;
        out.push_str(&format!(
            "registers {} B, SRAM {} B, HBM per step {} B, R per head {} B\n",
            f.registers, f.sram, f.hbm_traffic_per_step, f.recurrent_matrix_bytes
        ));
        out
    }
}
