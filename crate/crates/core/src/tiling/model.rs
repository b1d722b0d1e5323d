use serde::{Deserialize, Serialize};

use super::{MemoryFootprint, Pass, PlanError, RnnShape};
use crate::csp::{
    Constraint, CspProblem, Domain, Expr, Preference, ProblemBuilder, Solution, Value, VarId,
};
use crate::hardware::GpuSpec;

/// Accumulators and cross-block partials are kept in 4-byte floats.
const ACC_BYTES: i64 = 4;

/// Values of the thirteen tiling variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingAssignment {
    pub e_b: i64,
    pub w_b: i64,
    pub b_b: i64,
    pub l_b: i64,
    pub e_g: i64,
    pub w_g: i64,
    pub b_g: i64,
    pub l_g: i64,
    pub e_s: i64,
    pub w_s: i64,
    pub b_s: i64,
    pub l_s_reg: i64,
    pub l_s_sram: i64,
}

impl TilingAssignment {
    pub fn warps(&self) -> i64 {
        self.w_b * self.w_s * self.w_g
    }

    pub fn l_s(&self) -> i64 {
        self.l_s_reg + self.l_s_sram
    }
}

/// Resolution variables of a tiling problem. The two loop splits are stored
/// shifted by one (`L + 1`) because domains hold strictly positive values.
#[derive(Clone, Copy, Debug)]
pub struct TilingVars {
    pub e_b: VarId,
    pub w_b: VarId,
    pub b_b: VarId,
    pub l_b: VarId,
    pub e_g: VarId,
    pub w_g: VarId,
    pub b_g: VarId,
    pub l_g: VarId,
    pub e_s: VarId,
    pub w_s: VarId,
    pub b_s: VarId,
    pub l_s_reg_plus_one: VarId,
    pub l_s_sram_plus_one: VarId,
}

pub(crate) const NAMES: [&str; 13] = [
    "E_B",
    "W_B",
    "B_B",
    "L_B",
    "E_G",
    "W_G",
    "B_G",
    "L_G",
    "E_S",
    "W_S",
    "B_S",
    "L_S_reg+1",
    "L_S_sram+1",
];

#[derive(Clone, Debug)]
pub struct TilingCsp {
    pub problem: CspProblem,
    pub vars: TilingVars,
    /// Axis sizes `[S_B, S_G, S_S]` after padding.
    pub sizes: [i64; 3],
    pub padded_head_dim: i64,
    pub padded_batch: i64,
    pub block_threads: i64,
    register_lhs: Expr,
    register_q: Expr,
    sram_lhs: Expr,
    sram_q: Expr,
}

impl TilingCsp {
    pub fn assignment(&self, s: &Solution) -> TilingAssignment {
        let v = |name: &str| s.get(name).expect("tiling variable assigned");
        TilingAssignment {
            e_b: v("E_B"),
            w_b: v("W_B"),
            b_b: v("B_B"),
            l_b: v("L_B"),
            e_g: v("E_G"),
            w_g: v("W_G"),
            b_g: v("B_G"),
            l_g: v("L_G"),
            e_s: v("E_S"),
            w_s: v("W_S"),
            b_s: v("B_S"),
            l_s_reg: v("L_S_reg+1") - 1,
            l_s_sram: v("L_S_sram+1") - 1,
        }
    }

    /// Register and SRAM bytes as encoded in the constraints, evaluated at `s`.
    pub fn constrained_footprint(&self, s: &Solution) -> (i64, i64) {
        let value_of = |id: VarId| {
            let var = self.problem.variable(id);
            var.domain
                .value()
                .filter(|_| var.kind == crate::csp::VarKind::Constant)
                .or_else(|| s.get(&var.name))
        };
        let eval = |e: &Expr| {
            e.eval(&value_of)
                .expect("expression over assigned variables")
        };
        (
            eval(&self.register_lhs) - eval(&self.register_q) - 1,
            eval(&self.sram_lhs) - eval(&self.sram_q),
        )
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn round_up(x: i64, k: i64) -> i64 {
    (x + k - 1) / k * k
}

/// Tile multiple the head dimension is padded to: the least common multiple of
/// every elementary tile size, so that any mma shape can tile either role.
pub(crate) fn head_dim_tile(gpu: &GpuSpec) -> i64 {
    gpu.mma_shapes
        .iter()
        .flat_map(|s| [s.m, s.n])
        .fold(gpu.min_accumulate_tile, |acc, x| acc / gcd(acc, x) * x)
}

pub(crate) fn batch_tile(gpu: &GpuSpec) -> i64 {
    gpu.mma_shapes.iter().map(|s| s.m).min().unwrap_or(1)
}

/// Axis sizes `[S_B, S_G, S_S]` for a pass, after padding.
pub(crate) fn axis_sizes(
    shape: &RnnShape,
    gpu: &GpuSpec,
    pass: Pass,
    pad: bool,
) -> Result<([i64; 3], i64, i64), PlanError> {
    let tile = head_dim_tile(gpu);
    let d = if pad {
        round_up(shape.head_dim, tile)
    } else if shape.head_dim % tile == 0 {
        shape.head_dim
    } else {
        return Err(PlanError::HeadDimNotTileable {
            head_dim: shape.head_dim,
            tile,
        });
    };
    let b = round_up(shape.batch_size, batch_tile(gpu));
    let (g, s) = match pass {
        Pass::Forward => (shape.num_gates * d, d),
        Pass::Backward => (d, shape.num_gates * d),
    };
    Ok(([b, g, s], d, b))
}

/// Encodes the tiling of one pass as a constraint problem.
///
/// `block_threads` caps `warp_size * W_B * W_G * W_S`.
pub fn build_csp(
    shape: &RnnShape,
    gpu: &GpuSpec,
    pass: Pass,
    register_budget: i64,
    block_threads: i64,
    pad_head_dim: bool,
) -> Result<TilingCsp, PlanError> {
    shape.validate()?;
    let violations = gpu.validate();
    if let Some(v) = violations.first() {
        return Err(PlanError::InvalidGpu(v.to_string()));
    }
    let ([s_b, s_g, s_s], padded_head_dim, padded_batch) =
        axis_sizes(shape, gpu, pass, pad_head_dim)?;
    let e = shape.dtype.bytes();
    let pad = gpu.calibration.sram_row_padding;
    let sram = gpu.sram_usable_per_block_bytes;
    let max_warps = (block_threads / gpu.warp_size).max(1);
    let max_blocks = (gpu.max_grid_blocks() / shape.num_heads).max(1);
    let max_n = gpu.mma_shapes.iter().map(|s| s.n).max().unwrap_or(1);
    let key_base = max_n + 1;

    let mut b = ProblemBuilder::new();
    let set = |vals: Vec<Value>| Domain::from_values(vals).expect("positive tile sizes");
    let var = |b: &mut ProblemBuilder, i: usize, d: Domain, p: Preference| {
        b.resolution(NAMES[i], d, p).unwrap()
    };
    use Preference::{PreferLargest as Largest, PreferSmallest as Smallest};
    let e_b = var(
        &mut b,
        0,
        set(gpu.mma_shapes.iter().map(|s| s.m).collect()),
        Smallest,
    );
    let w_b = var(&mut b, 1, Domain::range(1, max_warps), Largest);
    let b_b = var(&mut b, 2, Domain::range(1, max_blocks), Smallest);
    let l_b = var(&mut b, 3, Domain::range(1, s_b), Smallest);
    let e_g = var(
        &mut b,
        4,
        set(gpu.mma_shapes.iter().map(|s| s.n).collect()),
        Largest,
    );
    let w_g = var(&mut b, 5, Domain::range(1, max_warps), Largest);
    let b_g = var(&mut b, 6, Domain::range(1, max_blocks), Largest);
    let l_g = var(&mut b, 7, Domain::range(1, s_g), Smallest);
    let e_s = var(&mut b, 8, Domain::range(1, s_s), Smallest);
    let w_s = var(&mut b, 9, Domain::range(1, max_warps), Largest);
    let b_s = var(&mut b, 10, Domain::range(1, max_blocks), Smallest);
    let max_loops = s_s / gpu.min_accumulate_tile.max(1) + 1;
    let lr1 = var(&mut b, 11, Domain::range(1, max_loops), Smallest);
    let ls1 = var(&mut b, 12, Domain::range(1, max_loops), Smallest);
    b.set_order(vec![
        (b_g, Largest),
        (b_s, Smallest),
        (b_b, Smallest),
        (l_b, Smallest),
        (l_g, Smallest),
        (ls1, Smallest),
        (lr1, Smallest),
        (w_g, Largest),
        (w_s, Largest),
        (w_b, Largest),
        (e_g, Largest),
        (e_b, Smallest),
        (e_s, Smallest),
    ]);

    let k = |b: &mut ProblemBuilder, v: i64| Expr::Var(b.value(v).expect("positive constant"));
    let scale = |b: &mut ProblemBuilder, x: Expr, f: i64| {
        if f == 1 {
            x
        } else {
            x * Expr::Var(b.value(f).unwrap())
        }
    };
    let v = Expr::Var;

    // Factorizations.
    let c = k(&mut b, s_b);
    b.constrain(Constraint::equal((v(e_b) * w_b) * (v(b_b) * l_b), c));
    let wgl = v(w_g) * l_g;
    let c = k(&mut b, s_g);
    b.constrain(Constraint::equal(v(e_g) * (v(b_g) * wgl.clone()), c));
    let x = v(e_s) * (v(w_s) * b_s);
    let two = k(&mut b, 2);
    let c = k(&mut b, s_s);
    b.constrain(Constraint::equal(x.clone() * (v(lr1) + ls1), x * two + c));
    for (size, factors) in [(s_b, [e_b, w_b, b_b, l_b]), (s_g, [e_g, w_g, b_g, l_g])] {
        let c = k(&mut b, size);
        for f in factors {
            b.constrain(Constraint::divides(f, c.clone()));
        }
    }
    let c = k(&mut b, s_s);
    for f in [e_s, w_s, b_s] {
        b.constrain(Constraint::divides(f, c.clone()));
    }

    // Elementary tiles: (E_B, E_G) is one of the mma shapes, E_S the accumulation tile.
    let c = k(&mut b, gpu.min_accumulate_tile);
    b.constrain(Constraint::equal(e_s, c));
    let keys: Vec<Value> = gpu
        .mma_shapes
        .iter()
        .map(|s| s.m * key_base + s.n)
        .collect();
    let key = b.intermediate("E_key", set(keys)).unwrap();
    let base = k(&mut b, key_base);
    b.constrain(Constraint::equal(v(e_b) * base + e_g, key));

    // Threads and grid.
    let wgs = v(w_g) * w_s;
    let warps = wgs.clone() * w_b;
    let threads = scale(&mut b, warps.clone(), gpu.warp_size);
    let c = k(&mut b, block_threads);
    b.constrain(Constraint::less_equal(threads, c));
    let bgs = v(b_g) * b_s;
    let grid = scale(&mut b, bgs.clone() * b_b, shape.num_heads);
    let c = k(&mut b, gpu.max_grid_blocks());
    b.constrain(Constraint::less_equal(grid, c));

    // Registers: L_S_reg*Q + bias + acc <= budget, shifted to positive terms,
    // within the per-thread cap and the register file.
    let wl = warps.clone() * l_g;
    let q = scale(&mut b, wl.clone() * (v(e_s) * e_g), e);
    let bias = scale(&mut b, wl * e_g, e);
    let acc = scale(&mut b, warps.clone() * (v(e_b) * e_g), ACC_BYTES);
    let one = k(&mut b, 1);
    let register_lhs = v(lr1) * q.clone() + bias + acc + one;
    let c = k(&mut b, register_budget + 1);
    b.constrain(Constraint::less_equal(register_lhs.clone(), q.clone() + c));
    let cal = &gpu.calibration;
    let per_thread = cal.max_registers_per_thread - cal.overhead_registers_per_thread;
    let cap = scale(&mut b, warps.clone(), 4 * gpu.warp_size * per_thread);
    let one = k(&mut b, 1);
    b.constrain(Constraint::less_equal(
        register_lhs.clone(),
        q.clone() + cap + one,
    ));
    let file = k(&mut b, gpu.register_file_per_block_bytes() + 1);
    let used = if cal.overhead_registers_per_thread > 0 {
        let overhead = scale(
            &mut b,
            warps.clone(),
            4 * gpu.warp_size * cal.overhead_registers_per_thread,
        );
        register_lhs.clone() + overhead
    } else {
        register_lhs.clone()
    };
    b.constrain(Constraint::less_equal(used, q.clone() + file));

    // SRAM: L_S_sram*Qs + staging + gate buffer <= usable SRAM.
    let egp = if pad > 0 {
        v(e_g) + k(&mut b, pad)
    } else {
        v(e_g)
    };
    let qs = scale(&mut b, (wgs * l_g) * e_s * egp.clone(), e);
    let staging = scale(&mut b, warps * (v(e_b) * egp), ACC_BYTES);
    let row = if pad > 0 {
        wgl * e_g + k(&mut b, pad)
    } else {
        wgl * e_g
    };
    let gatebuf = scale(&mut b, (v(w_b) * e_b) * row, ACC_BYTES);
    let sram_lhs = v(ls1) * qs.clone() + staging + gatebuf;
    let c = k(&mut b, sram);
    b.constrain(Constraint::less_equal(sram_lhs.clone(), qs.clone() + c));

    // Implied: each block's share of R fits its registers plus SRAM.
    let r_total = k(&mut b, s_g * s_s * e);
    let cap = k(&mut b, register_budget + sram);
    b.constrain(Constraint::less_equal(r_total, bgs * cap));

    let problem = b.build()?;
    let vars = TilingVars {
        e_b,
        w_b,
        b_b,
        l_b,
        e_g,
        w_g,
        b_g,
        l_g,
        e_s,
        w_s,
        b_s,
        l_s_reg_plus_one: lr1,
        l_s_sram_plus_one: ls1,
    };
    Ok(TilingCsp {
        problem,
        vars,
        sizes: [s_b, s_g, s_s],
        padded_head_dim,
        padded_batch,
        block_threads,
        register_lhs,
        register_q: q,
        sram_lhs,
        sram_q: qs,
    })
}

/// Per-block register and SRAM bytes and per-step HBM traffic of an assignment.
///
/// `sizes` are the padded axis sizes `[S_B, S_G, S_S]` of the pass.
pub fn estimate_footprint(
    a: &TilingAssignment,
    shape: &RnnShape,
    gpu: &GpuSpec,
    sizes: [i64; 3],
) -> MemoryFootprint {
    let e = shape.dtype.bytes();
    let p = gpu.calibration.sram_row_padding;
    let warps = a.warps();
    let r_regs = warps * a.l_g * a.l_s_reg * a.e_s * a.e_g * e;
    let bias = warps * a.l_g * a.e_g * e;
    let acc = warps * a.e_b * a.e_g * ACC_BYTES;
    let r_sram = a.w_s * a.w_g * a.l_g * a.l_s_sram * a.e_s * (a.e_g + p) * e;
    let staging = warps * a.e_b * (a.e_g + p) * ACC_BYTES;
    let gatebuf = a.w_b * a.e_b * (a.w_g * a.l_g * a.e_g + p) * ACC_BYTES;

    let [s_b, s_g, s_s] = sizes;
    let d = s_g.min(s_s);
    let per_head = (2 * shape.num_states + 2 * shape.num_gates) * s_b * d * e;
    let cross_block = if a.b_s > 1 {
        2 * a.b_s * s_b * s_g * ACC_BYTES
    } else {
        0
    };
    MemoryFootprint {
        registers: r_regs + bias + acc,
        sram: r_sram + staging + gatebuf,
        hbm_traffic_per_step: shape.num_heads * (per_head + cross_block),
        recurrent_matrix_bytes: shape.recurrent_bytes_per_head(),
    }
}
