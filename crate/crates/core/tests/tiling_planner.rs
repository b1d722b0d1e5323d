mod common;

use std::collections::BTreeMap;

use rnntile::csp::{
    brute_force_solve, solve, CspProblem, Domain, IntegerVariable, Solution, SolveOutcome,
};
use rnntile::hardware::{Dtype, GpuSpec};
use rnntile::tiling::{
    build_csp, complexity_estimate, estimate_footprint, feasible_head_dims, plan, plan_with, Axis,
    Pass, PlannerOptions, RegisterFeedback, RegisterModel, RnnShape, TilingPlan,
};

use common::{heuristic_key, satisfies, BRUTE_CAP};

fn lstm(head_dim: i64, batch: i64) -> RnnShape {
    RnnShape {
        num_states: 2,
        num_gates: 4,
        head_dim,
        num_heads: 1,
        batch_size: batch,
        dtype: Dtype::Bf16,
    }
}

fn h100() -> GpuSpec {
    GpuSpec::preset("H100").unwrap()
}

/// Two SMs, two warps per block, two fragment shapes: small enough to enumerate.
fn toy_gpu(sram: i64, registers: i64) -> GpuSpec {
    GpuSpec::from_json(&format!(
        r#"{{"name":"toy","sm_count":2,"sram_per_sm_bytes":{sram},"sram_usable_per_block_bytes":{sram},
        "register_file_per_sm_bytes":{registers},"max_threads_per_block":64,"warp_size":32,"hbm_bytes":1048576,
        "mma_shapes":[[8,8,8],[8,16,8]],"min_accumulate_tile":8,
        "calibration":{{"max_registers_per_thread":64,"overhead_registers_per_thread":8,"sram_row_padding":1,
        "budget_granularity_bytes":256,"blocks_per_sm":1}}}}"#
    ))
    .unwrap()
}

fn elman(head_dim: i64, batch: i64) -> RnnShape {
    RnnShape {
        num_states: 1,
        num_gates: 1,
        head_dim,
        num_heads: 1,
        batch_size: batch,
        dtype: Dtype::Bf16,
    }
}

fn check_invariants(p: &TilingPlan) {
    for a in &p.axes {
        assert_eq!(
            a.elementary * a.warps * a.blocks * a.loops,
            a.size,
            "{:?}",
            a.axis
        );
    }
    assert_eq!(p.loops_reg + p.loops_sram, p.axis(Axis::State).loops);
    assert_eq!(p.axis(Axis::State).elementary, p.gpu.min_accumulate_tile);
    assert!(p.footprint.registers <= p.register_budget_bytes);
    assert!(p.footprint.sram <= p.gpu.sram_usable_per_block_bytes);
    assert!(p.grid_blocks <= p.gpu.max_grid_blocks());
    assert!(RegisterModel.accepts(p));
}

/// Solution for the plan's assignment, with the `+1` loop encoding.
fn solution_of(p: &TilingPlan) -> Solution {
    let a = p.assignment();
    let pairs = [
        ("E_B", a.e_b),
        ("W_B", a.w_b),
        ("B_B", a.b_b),
        ("L_B", a.l_b),
        ("E_G", a.e_g),
        ("W_G", a.w_g),
        ("B_G", a.b_g),
        ("L_G", a.l_g),
        ("E_S", a.e_s),
        ("W_S", a.w_s),
        ("B_S", a.b_s),
        ("L_S_reg+1", a.l_s_reg + 1),
        ("L_S_sram+1", a.l_s_sram + 1),
    ];
    Solution {
        assignment: pairs
            .iter()
            .map(|&(k, v)| (k.to_string(), v))
            .collect::<BTreeMap<_, _>>(),
    }
}

/// Adds the derived fragment-shape key `E_key`.
fn with_key(gpu: &GpuSpec, s: &Solution) -> Solution {
    let base = gpu.mma_shapes.iter().map(|m| m.n).max().unwrap() + 1;
    let mut out = s.clone();
    out.assignment.insert(
        "E_key".into(),
        s.get("E_B").unwrap() * base + s.get("E_G").unwrap(),
    );
    out
}

fn restrict(problem: &CspProblem, fixed: &[(&str, Domain)]) -> CspProblem {
    let vars: Vec<IntegerVariable> = problem
        .variables()
        .iter()
        .map(|v| match fixed.iter().find(|(n, _)| *n == v.name) {
            Some((_, d)) => IntegerVariable {
                domain: d.clone(),
                ..v.clone()
            },
            None => v.clone(),
        })
        .collect();
    CspProblem::new(
        vars,
        problem.constraints().to_vec(),
        problem.heuristic().clone(),
    )
    .unwrap()
}

#[test]
fn lstm_768_needs_several_blocks() {
    let gpu = h100();
    let shape = lstm(768, 16);
    assert_eq!(shape.recurrent_bytes_per_head(), 4 * 768 * 768 * 2);
    assert_eq!(shape.recurrent_bytes_per_head(), 4_718_592);
    let p = plan(&shape, &gpu, Pass::Forward)
        .unwrap()
        .expect("feasible");
    check_invariants(&p);
    assert_eq!(p.footprint.recurrent_matrix_bytes, 4_718_592);
    assert!(p.axis(Axis::Gate).blocks >= 2);
    assert_eq!(
        (
            p.axis(Axis::Gate).blocks,
            p.footprint.registers,
            p.footprint.sram
        ),
        (96, 57_600, 10_816)
    );
    assert!(p.axis(Axis::Gate).blocks * p.axis(Axis::State).blocks > 1);
    let single_block = gpu.register_file_per_block_bytes() + gpu.sram_usable_per_block_bytes;
    assert!(shape.recurrent_bytes_per_head() > single_block);
}

#[test]
fn every_preset_shards_lstm_768() {
    for name in ["H100", "A100", "A40", "RTX3090"] {
        let gpu = GpuSpec::preset(name).unwrap();
        for pass in Pass::BOTH {
            let p = plan(&lstm(768, 16), &gpu, pass)
                .unwrap()
                .unwrap_or_else(|| panic!("{name} {pass}"));
            check_invariants(&p);
            assert!(
                p.axis(Axis::Gate).blocks * p.axis(Axis::State).blocks > 1,
                "{name} {pass}"
            );
        }
    }
}

#[test]
fn plan_matches_constrained_footprint() {
    let gpu = h100();
    for (shape, pass) in [
        (lstm(768, 16), Pass::Forward),
        (lstm(768, 16), Pass::Backward),
        (lstm(64, 8), Pass::Forward),
        (elman(256, 32), Pass::Backward),
    ] {
        let p = plan(&shape, &gpu, pass).unwrap().unwrap();
        check_invariants(&p);
        let csp = build_csp(
            &shape,
            &gpu,
            pass,
            p.register_budget_bytes,
            gpu.default_block_threads(),
            true,
        )
        .unwrap();
        let sol = solution_of(&p);
        assert!(satisfies(&csp.problem, &with_key(&gpu, &sol)));
        assert_eq!(
            csp.constrained_footprint(&sol),
            (p.footprint.registers, p.footprint.sram)
        );
        assert_eq!(
            estimate_footprint(&csp.assignment(&sol), &shape, &gpu, csp.sizes),
            p.footprint
        );
    }
}

#[test]
fn head_dim_8192_is_infeasible() {
    let gpu = h100();
    let shape = lstm(8192, 16);
    let on_chip = gpu.sm_count * (gpu.register_file_per_sm_bytes + gpu.sram_usable_per_block_bytes);
    assert!(shape.recurrent_bytes_per_head() > on_chip);
    for pass in Pass::BOTH {
        assert!(plan(&shape, &gpu, pass).unwrap().is_none());
    }
}

#[test]
fn small_head_fits_one_block() {
    let gpu = h100();
    let shape = lstm(16, 16);
    let csp = build_csp(
        &shape,
        &gpu,
        Pass::Forward,
        gpu.register_file_per_block_bytes(),
        gpu.max_threads_per_block,
        true,
    )
    .unwrap();
    let one = Domain::range(1, 1);
    let reduced = restrict(
        &csp.problem,
        &[
            ("B_B", one.clone()),
            ("B_G", one.clone()),
            ("B_S", one.clone()),
            ("L_B", one.clone()),
            ("L_G", one.clone()),
            ("E_S", Domain::range(16, 16)),
            ("L_S_reg+1", Domain::range(1, 2)),
            ("L_S_sram+1", Domain::range(1, 2)),
        ],
    );
    let all = brute_force_solve(&reduced, BRUTE_CAP).unwrap();
    assert!(!all.is_empty());
    for s in &all {
        assert!(satisfies(&csp.problem, &with_key(&gpu, s)));
    }
    assert!(all
        .iter()
        .any(|s| s.get("L_S_reg+1").unwrap() + s.get("L_S_sram+1").unwrap() == 3));
    match solve(&reduced).unwrap() {
        SolveOutcome::Solved(s) => assert!(all.contains(&s)),
        SolveOutcome::Infeasible => panic!("reduced problem has solutions"),
    }
}

#[test]
fn solver_returns_heuristic_minimum_on_toy_gpu() {
    let mut checked = 0;
    for (sram, regs) in [(4096, 16384), (1200, 16384), (1800, 4096), (700, 8192)] {
        let gpu = toy_gpu(sram, regs);
        for pass in Pass::BOTH {
            for budget in [512, 1536, 4096] {
                let csp = build_csp(
                    &elman(16, 8),
                    &gpu,
                    pass,
                    budget,
                    gpu.max_threads_per_block,
                    true,
                )
                .unwrap();
                let all = brute_force_solve(&csp.problem, BRUTE_CAP).unwrap();
                let outcome = solve(&csp.problem).unwrap();
                match outcome.solution() {
                    None => assert!(all.is_empty(), "{sram} {regs} {pass} {budget}"),
                    Some(s) => {
                        let best = all
                            .iter()
                            .min_by_key(|x| heuristic_key(&csp.problem, x))
                            .unwrap();
                        assert_eq!(s, best, "{sram} {regs} {pass} {budget}");
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked >= 8, "only {checked} feasible toy problems");
}

#[test]
fn feasibility_grows_with_budget() {
    let gpu = h100();
    for (shape, pass) in [
        (lstm(512, 16), Pass::Forward),
        (lstm(512, 16), Pass::Backward),
        (elman(1024, 8), Pass::Forward),
    ] {
        let mut seen_feasible = false;
        for kib in (0..=256).step_by(16) {
            let csp = build_csp(
                &shape,
                &gpu,
                pass,
                kib * 1024,
                gpu.default_block_threads(),
                true,
            )
            .unwrap();
            let feasible = solve(&csp.problem).unwrap().solution().is_some();
            assert!(
                feasible || !seen_feasible,
                "{pass} lost feasibility at {kib} KiB"
            );
            seen_feasible |= feasible;
        }
        assert!(seen_feasible);
    }
}

struct Cap(i64);

impl RegisterFeedback for Cap {
    fn accepts(&self, plan: &TilingPlan) -> bool {
        plan.footprint.registers <= self.0
    }
}

#[test]
fn planner_respects_feedback() {
    let gpu = h100();
    let shape = lstm(512, 16);
    let opts = PlannerOptions::default();
    let free = plan_with(&shape, &gpu, Pass::Forward, &opts, &Cap(i64::MAX))
        .unwrap()
        .unwrap();
    let tight = plan_with(
        &shape,
        &gpu,
        Pass::Forward,
        &opts,
        &Cap(free.footprint.registers / 2),
    )
    .unwrap()
    .unwrap();
    assert!(tight.footprint.registers <= free.footprint.registers / 2);
    assert!(tight.register_budget_bytes < free.register_budget_bytes);
}

#[test]
fn plans_are_deterministic() {
    let gpu = h100();
    let a = plan(&lstm(768, 16), &gpu, Pass::Backward).unwrap();
    let b = plan(&lstm(768, 16), &gpu, Pass::Backward).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn plan_json_matches_golden() {
    let p = plan(&lstm(768, 16), &h100(), Pass::Forward)
        .unwrap()
        .unwrap();
    let text = serde_json::to_string_pretty(&p).unwrap();
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/golden/plan_lstm768_h100_forward.json"
    );
    if std::env::var_os("RNNTILE_BLESS").is_some() {
        std::fs::write(path, format!("{text}\n")).unwrap();
    }
    let golden = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.trim(), golden.trim());
    let back: TilingPlan = serde_json::from_str(&golden).unwrap();
    assert_eq!(back, p);
}

#[test]
fn batch_loop_leaves_registers_unchanged() {
    let gpu = h100();
    let shape = lstm(256, 64);
    let p = plan(&shape, &gpu, Pass::Forward).unwrap().unwrap();
    let mut a = p.assignment();
    let sizes = [
        p.axis(Axis::Batch).size,
        p.axis(Axis::Gate).size,
        p.axis(Axis::State).size,
    ];
    let base = estimate_footprint(&a, &shape, &gpu, sizes);
    a.l_b *= 2;
    let doubled = estimate_footprint(&a, &shape, &gpu, [sizes[0] * 2, sizes[1], sizes[2]]);
    assert_eq!(base.registers, doubled.registers);
    a.l_b /= 2;
    a.b_s = 1;
    let [s_b, s_g, s_s] = sizes;
    let per_step = (2 * 2 + 2 * 4) * s_b * s_g.min(s_s) * 2;
    assert_eq!(
        estimate_footprint(&a, &shape, &gpu, sizes).hbm_traffic_per_step,
        per_step
    );
    a.b_s = 2;
    assert!(estimate_footprint(&a, &shape, &gpu, sizes).hbm_traffic_per_step > per_step);
}

#[test]
fn feasible_dims_edge_cases() {
    let gpu = h100();
    let opts = PlannerOptions::default();
    let (lo, hi) = (10, 5);
    assert!(
        feasible_head_dims(&lstm(1, 16), &gpu, &Pass::BOTH, lo..=hi, &opts)
            .unwrap()
            .is_empty()
    );
    let dims = feasible_head_dims(&lstm(1, 16), &gpu, &Pass::BOTH, 752..=800, &opts).unwrap();
    assert!(dims.windows(2).all(|w| w[0] < w[1]));
    assert!(dims.contains(&768));
}

#[test]
fn invalid_inputs_are_rejected() {
    let gpu = h100();
    assert!(plan(
        &RnnShape {
            batch_size: 0,
            ..lstm(64, 16)
        },
        &gpu,
        Pass::Forward
    )
    .is_err());
    let mut broken = gpu.clone();
    broken.warp_size = 0;
    assert!(plan(&lstm(64, 16), &broken, Pass::Forward).is_err());
    let unpadded = PlannerOptions {
        pad_head_dim: false,
        ..PlannerOptions::default()
    };
    assert!(plan_with(
        &lstm(100, 16),
        &gpu,
        Pass::Forward,
        &unpadded,
        &RegisterModel
    )
    .is_err());
}

#[test]
fn complexity_scaling() {
    let base = complexity_estimate(&lstm(64, 2), 10);
    assert_eq!(base.flops, 2 * 10 * 4 * 64 * 64 * 2);
    assert_eq!(complexity_estimate(&lstm(128, 2), 10).flops, 4 * base.flops);
    let heads = RnnShape {
        num_heads: 2,
        ..lstm(64, 2)
    };
    assert_eq!(complexity_estimate(&heads, 10).flops, 2 * base.flops);
    assert_eq!(complexity_estimate(&lstm(64, 2), 0).flops, 0);
    let longer = complexity_estimate(&lstm(64, 2), 20).training_state_bytes;
    assert_eq!(
        longer - base.training_state_bytes,
        10 * base.inference_state_bytes
    );
    assert_eq!(
        complexity_estimate(&lstm(64, 2), 20).inference_state_bytes,
        base.inference_state_bytes
    );
}

#[test]
fn preset_subsets_over_small_range() {
    let opts = PlannerOptions::default();
    let sets: Vec<Vec<i64>> = ["RTX3090", "A100", "H100"]
        .iter()
        .map(|n| {
            feasible_head_dims(
                &lstm(1, 16),
                &GpuSpec::preset(n).unwrap(),
                &Pass::BOTH,
                1600..=2000,
                &opts,
            )
            .unwrap()
        })
        .collect();
    for w in sets.windows(2) {
        assert!(
            w[0].iter().all(|d| w[1].contains(d)),
            "{:?} not within {:?}",
            w[0],
            w[1]
        );
    }
}
