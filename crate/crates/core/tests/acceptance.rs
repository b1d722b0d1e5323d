mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnntile::csp::{brute_force_solve, global_arc_reduce, normalize_problem, solve};
use rnntile::hardware::{Dtype, GpuSpec};
use rnntile::parity::{evaluate, parity_batch, train_model, ModelDims, ParityConfig, ParityModel};
use rnntile::rnn::{
    blockdiag_deviation, gradcheck_random, precision_drift, random_instance, slstm_exponents,
    CellVariant, MAX_SLOTS,
};
use rnntile::tiling::{build_csp, feasible_head_dims, plan, Axis, Pass, PlannerOptions, RnnShape};

use common::{heuristic_key, random_instance as random_csp, satisfies, BRUTE_CAP};

const CSP_INSTANCES: u64 = 1000;
const GRAD_TOL: f64 = 1e-6;
const GRAD_SEEDS: u64 = 5;
const BLOCKDIAG_TOL: f64 = 1e-12;
const SLSTM_SAMPLES: usize = 100_000;
const PARITY_TARGET: f64 = 0.99;
const PARITY_CHANCE_BAND: f64 = 0.05;
const PARITY_LRS: [f64; 3] = [1e-2, 1e-3, 1e-4];
const PARITY_FRESH_SAMPLES: usize = 2048;
const LSTM_R_BYTES: i64 = 4 * 768 * 768 * 2;
const CALIBRATION_TOL: f64 = 0.15;
const DRIFT_P100_RANGE: (f64, f64) = (1e-3, 5e-2);
const DRIFT_GROWTH_MAX: f64 = 2.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn report(
    id: u32,
    name: &str,
    limit: Option<Duration>,
    gating: bool,
    run: impl FnOnce() -> Verdict,
) -> bool {
    let start = Instant::now();
    let v = run();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = v.pass && in_time;
    let limit_text = limit
        .map(|l| format!(" (limit {}s)", l.as_secs()))
        .unwrap_or_default();
    let line = format!(
        "[{}] {id:>2} {name}: {} | {:.1}s{limit_text}{}\n",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64(),
        if gating { "" } else { " | best effort" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    pass || !gating
}

fn lstm(head_dim: i64) -> RnnShape {
    RnnShape {
        num_states: 2,
        num_gates: 4,
        head_dim,
        num_heads: 1,
        batch_size: 16,
        dtype: Dtype::Bf16,
    }
}

fn csp_oracle() -> Verdict {
    let (mut feasible, mut disagreements, mut bad_residual, mut not_extremal) = (0, 0, 0, 0);
    for seed in 0..CSP_INSTANCES {
        let p = random_csp(seed);
        let all = brute_force_solve(&p, BRUTE_CAP).unwrap();
        let out = solve(&p).unwrap();
        if out.is_feasible() != !all.is_empty() {
            disagreements += 1;
        }
        if let Some(s) = out.solution() {
            feasible += 1;
            if !satisfies(&p, s) {
                bad_residual += 1;
            }
            let best = all.iter().map(|x| heuristic_key(&p, x)).min();
            if best != Some(heuristic_key(&p, s)) {
                not_extremal += 1;
            }
        }
    }
    verdict(
        disagreements + bad_residual + not_extremal == 0,
        format!(
            "{CSP_INSTANCES} instances ({feasible} feasible), feasibility mismatches {disagreements}, \
             residual failures {bad_residual}, non-extremal {not_extremal}"
        ),
    )
}

fn arc_soundness() -> Verdict {
    let (mut pruned, mut not_fixpoint) = (0, 0);
    for seed in 0..CSP_INSTANCES {
        let p = normalize_problem(&random_csp(seed)).unwrap();
        let all = brute_force_solve(&p, BRUTE_CAP).unwrap();
        let (r, _) = global_arc_reduce(&p).unwrap();
        let lost = all.iter().any(|s| {
            p.resolution_vars()
                .any(|v| !r.domain(v).contains(s.get(&p.variable(v).name).unwrap()))
        });
        pruned += lost as u32;
        let (again, changed) = global_arc_reduce(&r).unwrap();
        not_fixpoint += (changed || again != r) as u32;
    }
    verdict(
        pruned + not_fixpoint == 0,
        format!("{CSP_INSTANCES} instances, supported values pruned in {pruned}, non-idempotent {not_fixpoint}"),
    )
}

fn gradients() -> Verdict {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for v in CellVariant::ALL {
        let mut w = 0.0f64;
        for seed in 0..GRAD_SEEDS {
            w = w.max(gradcheck_random(v, 8, 16, 2, 4, seed).unwrap().max());
        }
        parts.push(format!("{v} {w:.1e}"));
        worst = worst.max(w);
    }
    verdict(
        worst < GRAD_TOL,
        format!(
            "max relative error {} over {GRAD_SEEDS} seeds, tol {GRAD_TOL:.0e}",
            parts.join(", ")
        ),
    )
}

fn blockdiag() -> Verdict {
    let mut worst = 0.0f64;
    for v in CellVariant::ALL {
        let (params, data) = random_instance(v, 4, 16, 32, 4, 7);
        worst = worst.max(blockdiag_deviation(v, &params, &data).unwrap());
    }
    verdict(
        worst <= BLOCKDIAG_TOL,
        format!("max |per-head - block-diagonal| {worst:.1e}, tol {BLOCKDIAG_TOL:.0e}"),
    )
}

fn slstm_stability() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (chains, steps) = (1000, SLSTM_SAMPLES / 1000);
    let (mut max_exponent, mut non_finite, mut bad_normalizer) =
        (f64::NEG_INFINITY, 0usize, 0usize);
    for _ in 0..chains {
        let mut s = [0.0, 0.0, 1.0, 0.0];
        for _ in 0..steps {
            let g: [f64; MAX_SLOTS] = std::array::from_fn(|_| rng.random_range(-50.0..=50.0));
            let (ef, ei) = slstm_exponents(g[1], g[2], s[3]);
            max_exponent = max_exponent.max(ef).max(ei);
            s = CellVariant::Slstm.pointwise(&s, &g);
            non_finite += s.iter().filter(|x| !x.is_finite()).count();
            bad_normalizer += (s[2] <= 0.0) as usize;
        }
    }
    verdict(
        max_exponent <= 0.0 && non_finite == 0 && bad_normalizer == 0,
        format!(
            "{SLSTM_SAMPLES} steps, max exp argument {max_exponent:.3e}, non-finite {non_finite}, \
             non-positive normalizers {bad_normalizer}"
        ),
    )
}

fn parity_extrapolation() -> Verdict {
    let dims = ModelDims {
        num_heads: 1,
        head_dim: 16,
    };
    let base = ParityConfig {
        stop_at_accuracy: Some(PARITY_TARGET),
        ..ParityConfig::default()
    };
    let mut fresh_rng = ChaCha8Rng::seed_from_u64(0xf2e5);
    let fresh: Vec<_> = (0..PARITY_FRESH_SAMPLES / 64)
        .map(|_| parity_batch(&mut fresh_rng, 64, base.eval_len_min, base.eval_len_max))
        .collect();
    let untrained: Vec<f64> = (0..3)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            evaluate(
                &ParityModel::init(CellVariant::Lstm, dims, &mut rng),
                &fresh,
            )
            .unwrap()
        })
        .collect();
    let chance = untrained
        .iter()
        .all(|a| (a - 0.5).abs() <= PARITY_CHANCE_BAND);
    let mut best = (f64::NAN, 0.0f64, 0usize);
    for lr in PARITY_LRS {
        let (run, model) = train_model(
            CellVariant::Lstm,
            dims,
            &ParityConfig {
                peak_lr: lr,
                ..base
            },
        )
        .unwrap();
        let acc = if run.diverged_at.is_some() {
            0.0
        } else {
            evaluate(&model, &fresh).unwrap()
        };
        if acc > best.1 {
            best = (lr, acc, run.steps_run);
        }
        if best.1 >= PARITY_TARGET {
            break;
        }
    }
    let untrained_text: Vec<String> = untrained.iter().map(|a| format!("{a:.3}")).collect();
    verdict(
        chance && best.1 >= PARITY_TARGET,
        format!(
            "LSTM d_head 16: best lr {:.0e} reaches {:.4} on {PARITY_FRESH_SAMPLES} fresh strings of length {}..{} after {} steps \
             (target {PARITY_TARGET}); untrained {} (band 0.5 +- {PARITY_CHANCE_BAND})",
            best.0,
            best.1,
            base.eval_len_min,
            base.eval_len_max,
            best.2,
            untrained_text.join("/")
        ),
    )
}

fn planner_accounting() -> Verdict {
    let gpu = GpuSpec::preset("H100").unwrap();
    let shape = lstm(768);
    let Some(p) = plan(&shape, &gpu, Pass::Forward).unwrap() else {
        return verdict(false, "no plan for LSTM d_head 768 on H100".into());
    };
    let a = p.assignment();
    let csp = build_csp(
        &shape,
        &gpu,
        Pass::Forward,
        p.register_budget_bytes,
        gpu.default_block_threads(),
        true,
    )
    .unwrap();
    let factorized = p
        .axes
        .iter()
        .all(|x| x.elementary * x.warps * x.blocks * x.loops == x.size);
    let fits = p.footprint.registers <= p.register_budget_bytes
        && p.footprint.sram <= gpu.sram_usable_per_block_bytes
        && p.grid_blocks <= gpu.max_grid_blocks()
        && a.l_s() == p.axis(Axis::State).loops;
    let solved = solve(&csp.problem).unwrap();
    let same = solved.solution().map(|s| csp.assignment(s)) == Some(a);
    let agrees = solved.solution().map(|s| csp.constrained_footprint(s))
        == Some((p.footprint.registers, p.footprint.sram));
    let shards = p.axis(Axis::State).blocks * p.axis(Axis::Gate).blocks;
    verdict(
        p.footprint.recurrent_matrix_bytes == LSTM_R_BYTES && shards > 1 && factorized && fits && same && agrees,
        format!(
            "R bytes {} (expected {LSTM_R_BYTES}), B_S*B_G = {shards}, exact factorization {factorized}, \
             within limits {fits}, reproduced by the solver {same}, footprint agreement {agrees}",
            p.footprint.recurrent_matrix_bytes
        ),
    )
}

struct Feasible {
    name: &'static str,
    dims: Vec<i64>,
}

fn feasible_sets() -> Vec<Feasible> {
    ["RTX3090", "A40", "A100", "H100"]
        .into_iter()
        .map(|name| Feasible {
            name,
            dims: feasible_head_dims(
                &lstm(1),
                &GpuSpec::preset(name).unwrap(),
                &Pass::BOTH,
                1280..=2700,
                &PlannerOptions::default(),
            )
            .unwrap(),
        })
        .collect()
}

fn monotonicity(sets: &[Feasible]) -> Verdict {
    let subset = |a: &Feasible, b: &Feasible| a.dims.iter().all(|d| b.dims.contains(d));
    let equal = sets[0].dims == sets[1].dims;
    let chain = subset(&sets[1], &sets[2]) && subset(&sets[2], &sets[3]);
    let sizes: Vec<String> = sets
        .iter()
        .map(|s| format!("{} {}", s.name, s.dims.len()))
        .collect();
    verdict(
        equal && chain && !sets[0].dims.is_empty(),
        format!(
            "dims in 1280..2700: {}; RTX3090 = A40 {equal}, A40 <= A100 <= H100 {chain}",
            sizes.join(", ")
        ),
    )
}

fn calibration(sets: &[Feasible]) -> Verdict {
    let targets = [
        ("RTX3090", 1824),
        ("A40", 1824),
        ("A100", 2304),
        ("H100", 2688),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, target) in targets {
        let max = sets
            .iter()
            .find(|s| s.name == name)
            .and_then(|s| s.dims.last().copied());
        let rel = max.map(|m| (m - target) as f64 / target as f64);
        ok &= rel.is_some_and(|r| r.abs() <= CALIBRATION_TOL);
        parts.push(match (max, rel) {
            (Some(m), Some(r)) => format!("{name} {m} vs {target} ({:+.1}%)", 100.0 * r),
            _ => format!("{name} none vs {target}"),
        });
    }
    verdict(
        ok,
        format!(
            "max feasible head dim {}, tol {:.0}%",
            parts.join(", "),
            100.0 * CALIBRATION_TOL
        ),
    )
}

fn drift() -> Verdict {
    let (params, data) = random_instance(CellVariant::Lstm, 1, 768, 512, 1, 0);
    let curve = precision_drift(CellVariant::Lstm, &params, &data, Dtype::Bf16).unwrap();
    let p100: Vec<f64> = curve.iter().map(|p| p.p100).collect();
    let max = p100.iter().copied().fold(0.0, f64::max);
    let half = p100.len() / 2;
    let first = p100[..half].iter().copied().fold(0.0, f64::max);
    let second = p100[half..].iter().copied().fold(0.0, f64::max);
    let finite = p100.iter().all(|x| x.is_finite());
    let in_range = (DRIFT_P100_RANGE.0..=DRIFT_P100_RANGE.1).contains(&max);
    let bounded = second <= DRIFT_GROWTH_MAX * first;
    verdict(
        finite && in_range && bounded,
        format!(
            "bf16 vs f64 LSTM T=512 d=768: max p100 {max:.2e} (range {:.0e}..{:.0e}), max over steps 1..256 {first:.2e}, \
             over 257..512 {second:.2e} (growth limit x{DRIFT_GROWTH_MAX})",
            DRIFT_P100_RANGE.0, DRIFT_P100_RANGE.1
        ),
    )
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    std::io::stdout().lock().write_all(b"\n").unwrap();
    let mut ok = true;
    ok &= report(
        1,
        "CSP oracle equivalence",
        Some(secs(10)),
        true,
        csp_oracle,
    );
    ok &= report(
        2,
        "arc-consistency soundness",
        Some(secs(10)),
        true,
        arc_soundness,
    );
    ok &= report(3, "gradient checks", Some(secs(60)), true, gradients);
    ok &= report(
        4,
        "block-diagonal equivalence",
        Some(secs(5)),
        true,
        blockdiag,
    );
    ok &= report(
        5,
        "sLSTM stabilization",
        Some(secs(5)),
        true,
        slstm_stability,
    );
    ok &= report(
        6,
        "parity extrapolation",
        Some(secs(600)),
        true,
        parity_extrapolation,
    );
    ok &= report(
        7,
        "planner memory accounting",
        Some(secs(30)),
        true,
        planner_accounting,
    );
    let mut sets = Vec::new();
    ok &= report(8, "feasibility monotonicity", Some(secs(300)), true, || {
        sets = feasible_sets();
        monotonicity(&sets)
    });
    ok &= report(9, "calibration stretch target", None, false, || {
        calibration(&sets)
    });
    ok &= report(10, "precision drift shape", Some(secs(60)), true, drift);
    assert!(ok, "acceptance criteria failed; see the lines above");
}
