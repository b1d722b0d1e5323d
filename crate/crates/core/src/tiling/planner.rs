use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rayon::prelude::*;

use super::model::{axis_sizes, build_csp, estimate_footprint};
use super::{Axis, AxisTiling, Pass, PlanError, RnnShape, TilingPlan};
use crate::csp::{solve_with_limit, SolveOutcome};
use crate::hardware::GpuSpec;

pub const PLAN_SCHEMA_VERSION: u32 = 1;

/// Judges whether a candidate plan would actually fit the register file once
/// compiled. Stands in for compiler feedback.
pub trait RegisterFeedback: Sync {
    fn accepts(&self, plan: &TilingPlan) -> bool;
}

/// Registers per thread are the plan's register bytes spread over the block's
/// threads, plus a fixed per-thread overhead from the GPU calibration.
#[derive(Clone, Copy, Debug, Default)]
pub struct RegisterModel;

impl RegisterModel {
    pub fn registers_per_thread(plan: &TilingPlan) -> i64 {
        let threads = plan.block_threads.max(1);
        (plan.footprint.registers + threads * 4 - 1) / (threads * 4)
            + plan.gpu.calibration.overhead_registers_per_thread
    }
}

impl RegisterFeedback for RegisterModel {
    fn accepts(&self, plan: &TilingPlan) -> bool {
        let regs = Self::registers_per_thread(plan);
        regs <= plan.gpu.calibration.max_registers_per_thread
            && regs * plan.block_threads * 4 <= plan.gpu.register_file_per_block_bytes()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PlannerOptions {
    /// Thread cap per block; `None` uses a fourth of the hardware maximum.
    pub block_threads: Option<i64>,
    pub pad_head_dim: bool,
    /// Search-node limit per solver call.
    pub node_limit: Option<u64>,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions {
            block_threads: None,
            pad_head_dim: true,
            node_limit: Some(2_000_000),
        }
    }
}

fn solve_at(
    shape: &RnnShape,
    gpu: &GpuSpec,
    pass: Pass,
    budget: i64,
    opts: &PlannerOptions,
) -> Result<Option<TilingPlan>, PlanError> {
    let threads_cap = opts
        .block_threads
        .unwrap_or_else(|| gpu.default_block_threads());
    let csp = build_csp(shape, gpu, pass, budget, threads_cap, opts.pad_head_dim)?;
    let SolveOutcome::Solved(sol) = solve_with_limit(&csp.problem, opts.node_limit)? else {
        return Ok(None);
    };
    let a = csp.assignment(&sol);
    let [s_b, s_g, s_s] = csp.sizes;
    let axes = [
        AxisTiling {
            axis: Axis::Batch,
            size: s_b,
            elementary: a.e_b,
            warps: a.w_b,
            blocks: a.b_b,
            loops: a.l_b,
        },
        AxisTiling {
            axis: Axis::Gate,
            size: s_g,
            elementary: a.e_g,
            warps: a.w_g,
            blocks: a.b_g,
            loops: a.l_g,
        },
        AxisTiling {
            axis: Axis::State,
            size: s_s,
            elementary: a.e_s,
            warps: a.w_s,
            blocks: a.b_s,
            loops: a.l_s(),
        },
    ];
    Ok(Some(TilingPlan {
        schema_version: PLAN_SCHEMA_VERSION,
        shape: *shape,
        padded_head_dim: csp.padded_head_dim,
        padded_batch: csp.padded_batch,
        gpu: gpu.clone(),
        pass,
        axes,
        loops_reg: a.l_s_reg,
        loops_sram: a.l_s_sram,
        register_budget_bytes: budget,
        block_threads: gpu.warp_size * a.warps(),
        grid_blocks: a.b_b * a.b_g * a.b_s * shape.num_heads,
        footprint: estimate_footprint(&a, shape, gpu, csp.sizes),
        budget_probes: 0,
    }))
}

pub fn plan(shape: &RnnShape, gpu: &GpuSpec, pass: Pass) -> Result<Option<TilingPlan>, PlanError> {
    plan_with(shape, gpu, pass, &PlannerOptions::default(), &RegisterModel)
}

/// Plan at the largest register budget the feedback accepts.
///
/// Budgets are probed in steps of the calibration granularity between zero and
/// the register file share of one block. A probe passes when the problem is
/// infeasible at that budget or its plan is accepted; feasibility only grows with
/// the budget, so the largest passing budget is found by bisection and the plan
/// exists iff the problem is feasible there.
pub fn plan_with(
    shape: &RnnShape,
    gpu: &GpuSpec,
    pass: Pass,
    opts: &PlannerOptions,
    feedback: &dyn RegisterFeedback,
) -> Result<Option<TilingPlan>, PlanError> {
    let step = gpu.calibration.budget_granularity_bytes;
    let mut probes = 0u32;
    let mut probe = |units: i64| -> Result<(bool, Option<TilingPlan>), PlanError> {
        probes += 1;
        let p = solve_at(shape, gpu, pass, units * step, opts)?;
        let pass_ok = p.as_ref().is_none_or(|p| feedback.accepts(p));
        Ok((pass_ok, p))
    };
    let mut lo = 0;
    let mut hi = gpu.register_file_per_block_bytes() / step;
    let (ok_hi, plan_hi) = probe(hi)?;
    let best = if ok_hi {
        plan_hi
    } else {
        let mut best = probe(lo)?.1;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let (ok, p) = probe(mid)?;
            if ok {
                lo = mid;
                best = p;
            } else {
                hi = mid;
            }
        }
        best
    };
    Ok(best.map(|mut p| {
        p.budget_probes = probes;
        p
    }))
}

/// Head dimensions in `range` that admit a plan for every pass in `passes`.
///
/// Dimensions sharing a padded size are planned once; evaluation is parallel
/// and the result ascending.
pub fn feasible_head_dims(
    template: &RnnShape,
    gpu: &GpuSpec,
    passes: &[Pass],
    range: RangeInclusive<i64>,
    opts: &PlannerOptions,
) -> Result<Vec<i64>, PlanError> {
    let lo = (*range.start()).max(1);
    let hi = *range.end();
    if hi < lo {
        return Ok(Vec::new());
    }
    let padded_of = |d: i64| -> Option<i64> {
        let shape = RnnShape {
            head_dim: d,
            ..*template
        };
        axis_sizes(&shape, gpu, Pass::Forward, opts.pad_head_dim)
            .ok()
            .map(|(_, pd, _)| pd)
    };
    let distinct: BTreeSet<i64> = (lo..=hi).filter_map(padded_of).collect();
    let distinct: Vec<i64> = distinct.into_iter().collect();
    let feasible: Vec<(i64, bool)> = distinct
        .par_iter()
        .map(|&pd| {
            let shape = RnnShape {
                head_dim: pd,
                ..*template
            };
            for &pass in passes {
                if plan_with(&shape, gpu, pass, opts, &RegisterModel)?.is_none() {
                    return Ok((pd, false));
                }
            }
            Ok((pd, true))
        })
        .collect::<Result<_, PlanError>>()?;
    let ok: BTreeSet<i64> = feasible
        .into_iter()
        .filter(|&(_, f)| f)
        .map(|(pd, _)| pd)
        .collect();
    Ok((lo..=hi)
        .filter(|&d| padded_of(d).is_some_and(|pd| ok.contains(&pd)))
        .collect())
}
