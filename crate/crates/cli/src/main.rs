use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rnntile::csp::{outcome_to_json, problem_from_json, solve_with_limit};
use rnntile::hardware::{Dtype, GpuSpec};
use rnntile::parity::{train_sweep, ModelDims, ParityConfig};
use rnntile::rnn::{gradcheck_random, precision_drift, random_instance, CellVariant};
use rnntile::tiling::{
    feasible_head_dims, plan_with, Pass, PlannerOptions, RegisterModel, RnnShape,
};

/// Integer CSP solver, fused-RNN tiling planner and reference RNN engine.
#[derive(Parser, Debug)]
#[command(name = "rnntile", version, propagate_version = true)]
struct Cli {
    /// Emit machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Random seed for commands that draw random data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the main result to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a CSP problem document.
    SolveCsp {
        problem: PathBuf,
        /// Abort after this many search nodes.
        #[arg(long)]
        node_limit: Option<u64>,
    },
    /// Plan the tiling of a fused recurrent kernel.
    Plan(PlanArgs),
    /// List head dimensions that admit a plan.
    FeasibleHeads(FeasibleArgs),
    /// Compare backward gradients with central finite differences.
    Gradcheck {
        #[arg(long, value_parser = parse_variant)]
        variant: CellVariant,
        #[arg(long = "t", default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 16)]
        dh: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Hidden-state error of a low-precision run against float64, per step.
    PrecisionDrift {
        #[arg(long, value_parser = parse_variant)]
        variant: CellVariant,
        #[arg(long = "t", default_value_t = 512)]
        steps: usize,
        #[arg(long, default_value_t = 768)]
        dh: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, value_parser = parse_dtype, default_value = "bf16")]
        dtype: Dtype,
    },
    /// Train on the parity task and evaluate on longer sequences.
    TrainParity(TrainArgs),
}

#[derive(Args, Debug)]
struct ShapeArgs {
    #[arg(long, value_parser = parse_variant)]
    variant: CellVariant,
    #[arg(long, default_value_t = 1)]
    heads: i64,
    #[arg(long, default_value_t = 16)]
    batch: i64,
    #[arg(long, value_parser = parse_dtype, default_value = "bf16")]
    dtype: Dtype,
    /// Preset name or path to a GPU description.
    #[arg(long, default_value = "H100")]
    gpu: String,
    /// Thread cap per block (defaults to a fourth of the hardware maximum).
    #[arg(long)]
    block_threads: Option<i64>,
    /// Require the head dimension to be a multiple of the tile size.
    #[arg(long)]
    no_pad: bool,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long)]
    head_dim: i64,
    #[arg(long, value_enum, default_value_t = PassArg::Both)]
    pass: PassArg,
}

#[derive(Args, Debug)]
struct FeasibleArgs {
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long)]
    min: i64,
    #[arg(long)]
    max: i64,
    #[arg(long, value_enum, default_value_t = PassArg::Both)]
    pass: PassArg,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_variant)]
    variant: CellVariant,
    #[arg(long, default_value_t = 16)]
    dh: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
    lrs: Vec<f64>,
    /// Seeds to average over; defaults to `--seed`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
    #[arg(long, default_value_t = 512)]
    eval_samples: usize,
    #[arg(long, default_value_t = 40)]
    train_len_max: usize,
    /// Stop a run once extrapolation accuracy reaches this value.
    #[arg(long)]
    stop_at: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PassArg {
    Forward,
    Backward,
    Both,
}

impl PassArg {
    fn passes(self) -> Vec<Pass> {
        match self {
            PassArg::Forward => vec![Pass::Forward],
            PassArg::Backward => vec![Pass::Backward],
            PassArg::Both => Pass::BOTH.to_vec(),
        }
    }
}

fn parse_variant(s: &str) -> Result<CellVariant, String> {
    s.parse().map_err(|e: rnntile::rnn::RnnError| e.to_string())
}

fn parse_dtype(s: &str) -> Result<Dtype, String> {
    s.parse()
        .map_err(|e: rnntile::hardware::HardwareError| e.to_string())
}

/// Bad input, reported with exit code 2.
enum Failure {
    Usage(String),
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

/// `negative` carries the message for exit code 1 (infeasible or out of tolerance).
struct Output {
    text: String,
    negative: Option<String>,
}

impl Output {
    fn ok(text: String) -> Self {
        Output {
            text,
            negative: None,
        }
    }
}

fn render(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json renders");
    s.push('\n');
    s
}

fn shape_of(a: &ShapeArgs, head_dim: i64) -> RnnShape {
    RnnShape {
        num_states: a.variant.num_states() as i64,
        num_gates: a.variant.num_gates() as i64,
        head_dim,
        num_heads: a.heads,
        batch_size: a.batch,
        dtype: a.dtype,
    }
}

fn options_of(a: &ShapeArgs) -> PlannerOptions {
    PlannerOptions {
        block_threads: a.block_threads,
        pad_head_dim: !a.no_pad,
        ..PlannerOptions::default()
    }
}

fn cmd_solve(json_mode: bool, path: &Path, node_limit: Option<u64>) -> Result<Output, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let problem = problem_from_json(&text).map_err(usage)?;
    let outcome = solve_with_limit(&problem, node_limit).map_err(usage)?;
    let value = outcome_to_json(&outcome);
    let text = if json_mode {
        render(&value)
    } else {
        match value.as_object() {
            Some(m) if outcome.is_feasible() => {
                m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
            }
            _ => "infeasible\n".to_string(),
        }
    };
    Ok(Output {
        text,
        negative: (!outcome.is_feasible()).then(|| "problem is infeasible".to_string()),
    })
}

fn cmd_plan(json_mode: bool, a: &PlanArgs) -> Result<Output, Failure> {
    let gpu = GpuSpec::load(&a.shape.gpu).map_err(usage)?;
    let shape = shape_of(&a.shape, a.head_dim);
    let opts = options_of(&a.shape);
    let mut plans = Vec::new();
    let mut missing = Vec::new();
    for pass in a.pass.passes() {
        match plan_with(&shape, &gpu, pass, &opts, &RegisterModel).map_err(usage)? {
            Some(p) => plans.push(p),
            None => missing.push(pass.to_string()),
        }
    }
    let negative = (!missing.is_empty())
        .then(|| format!("no feasible plan for the {} pass", missing.join(" and ")));
    let text = if json_mode {
        let plans_json: Vec<Value> = plans
            .iter()
            .map(|p| serde_json::to_value(p).expect("plan serializes"))
            .collect();
        render(&json!({ "plans": plans_json, "infeasible_passes": missing }))
    } else {
        let mut s: String = plans.iter().map(|p| p.table() + "\n").collect();
        for m in &missing {
            let _ = writeln!(s, "{m} pass: infeasible");
        }
        s
    };
    Ok(Output { text, negative })
}

fn cmd_feasible(json_mode: bool, a: &FeasibleArgs) -> Result<Output, Failure> {
    let gpu = GpuSpec::load(&a.shape.gpu).map_err(usage)?;
    let template = shape_of(&a.shape, 1);
    let dims = feasible_head_dims(
        &template,
        &gpu,
        &a.pass.passes(),
        a.min..=a.max,
        &options_of(&a.shape),
    )
    .map_err(usage)?;
    let text = if json_mode {
        render(&json!(dims))
    } else {
        dims.iter().map(|d| format!("{d}\n")).collect()
    };
    let negative = dims
        .is_empty()
        .then(|| "no feasible head dimension in range".to_string());
    Ok(Output { text, negative })
}

#[allow(clippy::too_many_arguments)]
fn cmd_gradcheck(
    json_mode: bool,
    variant: CellVariant,
    steps: usize,
    dh: usize,
    heads: usize,
    batch: usize,
    seed: u64,
    tol: f64,
) -> Result<Output, Failure> {
    if steps == 0 || dh == 0 || heads == 0 || batch == 0 {
        return Err(Failure::Usage(
            "t, dh, heads and batch must be positive".into(),
        ));
    }
    let r = gradcheck_random(variant, steps, dh, heads, batch, seed).map_err(usage)?;
    let pass = r.max() < tol;
    let text = if json_mode {
        render(&json!({ "report": r, "tolerance": tol, "pass": pass }))
    } else {
        let mut s =
            format!("{variant} T={steps} d_head={dh} heads={heads} batch={batch} seed={seed}\n");
        for (name, v) in r.entries() {
            let _ = writeln!(s, "{name:<12} {v:.3e}");
        }
        let _ = writeln!(
            s,
            "{} (tolerance {tol:.1e})",
            if pass { "PASS" } else { "FAIL" }
        );
        s
    };
    Ok(Output {
        text,
        negative: (!pass).then(|| format!("max relative error {:.3e} exceeds {tol:.1e}", r.max())),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_drift(
    variant: CellVariant,
    steps: usize,
    dh: usize,
    heads: usize,
    batch: usize,
    dtype: Dtype,
    seed: u64,
    json_mode: bool,
) -> Result<Output, Failure> {
    if steps == 0 || dh == 0 || heads == 0 || batch == 0 {
        return Err(Failure::Usage(
            "t, dh, heads and batch must be positive".into(),
        ));
    }
    let (params, data) = random_instance(variant, heads, dh, steps, batch, seed);
    let points = precision_drift(variant, &params, &data, dtype).map_err(usage)?;
    let text = if json_mode {
        render(
            &json!({ "variant": variant, "dtype": dtype.name(), "seed": seed, "points": points }),
        )
    } else {
        let mut s = String::from("t,p50,p90,p100\n");
        for p in &points {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", p.t, p.p50, p.p90, p.p100);
        }
        s
    };
    Ok(Output::ok(text))
}

fn cmd_train(json_mode: bool, a: &TrainArgs, seed: u64) -> Result<Output, Failure> {
    let seeds = if a.seeds.is_empty() {
        vec![seed]
    } else {
        a.seeds.clone()
    };
    let config = ParityConfig {
        train_len_max: a.train_len_max,
        batch_size: a.batch,
        steps: a.steps,
        warmup_steps: a.warmup.unwrap_or(a.steps / 10),
        eval_every: a.eval_every,
        eval_samples: a.eval_samples,
        stop_at_accuracy: a.stop_at,
        ..ParityConfig::default()
    };
    let dims = ModelDims {
        num_heads: a.heads,
        head_dim: a.dh,
    };
    let report = train_sweep(a.variant, dims, &config, &a.lrs, &seeds).map_err(usage)?;
    let diverged: Vec<String> = report
        .runs
        .iter()
        .filter_map(|r| {
            r.diverged_at
                .map(|s| format!("lr {} seed {} at step {s}", r.lr, r.seed))
        })
        .collect();
    let text = if json_mode {
        render(&serde_json::to_value(&report).expect("report serializes"))
    } else {
        let mut s = format!(
            "{} d_head={} heads={} steps={} batch={}\n",
            a.variant, a.dh, a.heads, a.steps, a.batch
        );
        s.push_str("lr         seed  steps  initial  final\n");
        for r in &report.runs {
            let _ = writeln!(
                s,
                "{:<10} {:>4} {:>6} {:>8.3} {:>6.3}{}",
                r.lr,
                r.seed,
                r.steps_run,
                r.initial_accuracy,
                r.final_accuracy,
                if r.diverged_at.is_some() {
                    "  diverged"
                } else {
                    ""
                }
            );
        }
        let _ = writeln!(
            s,
            "best lr {} extrapolation accuracy {:.4}",
            report.best_lr, report.best_accuracy
        );
        s
    };
    let negative =
        (!diverged.is_empty()).then(|| format!("non-finite loss: {}", diverged.join(", ")));
    Ok(Output { text, negative })
}

fn run(cli: &Cli) -> Result<Output, Failure> {
    let j = cli.json;
    match &cli.command {
        Command::SolveCsp {
            problem,
            node_limit,
        } => cmd_solve(j, problem, *node_limit),
        Command::Plan(a) => cmd_plan(j, a),
        Command::FeasibleHeads(a) => cmd_feasible(j, a),
        Command::Gradcheck {
            variant,
            steps,
            dh,
            heads,
            batch,
            tol,
        } => cmd_gradcheck(j, *variant, *steps, *dh, *heads, *batch, cli.seed, *tol),
        Command::PrecisionDrift {
            variant,
            steps,
            dh,
            heads,
            batch,
            dtype,
        } => cmd_drift(*variant, *steps, *dh, *heads, *batch, *dtype, cli.seed, j),
        Command::TrainParity(a) => cmd_train(j, a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(out) => {
            if let Some(path) = &cli.out {
                if let Err(e) = std::fs::write(path, &out.text) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            } else {
                print!("{}", out.text);
            }
            match out.negative {
                Some(msg) => {
                    eprintln!("{msg}");
                    ExitCode::from(1)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
