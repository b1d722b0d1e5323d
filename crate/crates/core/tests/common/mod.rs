#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rnntile::csp::{
    Constraint, CspProblem, Domain, Expr, Preference, ProblemBuilder, Relation, Solution, Value,
    VarId,
};

/// Random instance: up to 4 resolution variables over [1..50], up to 6 mixed constraints.
pub fn random_instance(seed: u64) -> CspProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ProblemBuilder::new();
    let n = rng.random_range(1..=4);
    let mut vars = Vec::new();
    for i in 0..n {
        let domain = if rng.random_bool(0.7) {
            let lo = rng.random_range(1..=50);
            let hi = rng.random_range(lo..=(lo + 30).min(50));
            Domain::range(lo, hi)
        } else {
            let k = rng.random_range(1..=12);
            Domain::from_values((0..k).map(|_| rng.random_range(1..=50))).unwrap()
        };
        let pref = if rng.random_bool(0.5) {
            Preference::PreferSmallest
        } else {
            Preference::PreferLargest
        };
        vars.push(b.resolution(format!("v{i}"), domain, pref).unwrap());
    }
    let m = rng.random_range(0..=6);
    for _ in 0..m {
        let lhs = random_expr(&mut rng, &mut b, &vars, 2);
        let rhs = random_expr(&mut rng, &mut b, &vars, 2);
        let relation = match rng.random_range(0..3) {
            0 => Relation::Equal,
            1 => Relation::LessEqual,
            _ => Relation::Divides,
        };
        b.constrain(Constraint { relation, lhs, rhs });
    }
    let mut order = vars.clone();
    order.shuffle(&mut rng);
    let order = order
        .into_iter()
        .map(|v| {
            (
                v,
                if rng.random_bool(0.5) {
                    Preference::PreferSmallest
                } else {
                    Preference::PreferLargest
                },
            )
        })
        .collect();
    b.set_order(order);
    b.build().unwrap()
}

fn random_expr(rng: &mut ChaCha8Rng, b: &mut ProblemBuilder, vars: &[VarId], depth: u32) -> Expr {
    let roll = rng.random_range(0..10);
    if depth == 0 || roll < 6 {
        if roll < 4 {
            Expr::Var(b.value(rng.random_range(1..=60)).unwrap())
        } else {
            Expr::Var(vars[rng.random_range(0..vars.len())])
        }
    } else {
        let l = random_expr(rng, b, vars, depth - 1);
        let r = random_expr(rng, b, vars, depth - 1);
        if rng.random_bool(0.5) {
            l + r
        } else {
            l * r
        }
    }
}

/// Sort key under which the heuristic-first solution is the minimum.
pub fn heuristic_key(problem: &CspProblem, s: &Solution) -> Vec<Value> {
    problem
        .heuristic()
        .order
        .iter()
        .map(|&(v, p)| {
            let x = s.get(&problem.variable(v).name).unwrap();
            match p {
                Preference::PreferSmallest => x,
                Preference::PreferLargest => -x,
            }
        })
        .collect()
}

/// Evaluates every original constraint under a solution; true when all hold exactly.
pub fn satisfies(problem: &CspProblem, s: &Solution) -> bool {
    let value_of = |id: VarId| {
        let v = problem.variable(id);
        v.domain
            .value()
            .filter(|_| v.kind == rnntile::csp::VarKind::Constant)
            .or_else(|| s.get(&v.name))
    };
    problem
        .constraints()
        .iter()
        .all(|c| c.holds(&value_of) == Some(true))
        && problem.resolution_vars().all(|v| {
            problem
                .domain(v)
                .contains(s.get(&problem.variable(v).name).unwrap())
        })
}

pub const BRUTE_CAP: u128 = 1 << 24;
