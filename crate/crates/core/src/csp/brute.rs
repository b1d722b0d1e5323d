use std::collections::BTreeSet;

use super::domain::Value;
use super::normalize::as_definition;
use super::problem::{CspProblem, Solution, VarId, VarKind};
use super::CspError;

/// Every satisfying assignment of the resolution variables, by exhaustive enumeration.
///
/// Intermediates defined by a structural equation are computed from their operands;
/// all other non-constant variables are enumerated. Refuses when the product of the
/// enumerated domain sizes exceeds `cap`.
pub fn brute_force_solve(problem: &CspProblem, cap: u128) -> Result<BTreeSet<Solution>, CspError> {
    let vars = problem.variables();
    let mut defined = vec![None; vars.len()];
    for c in problem.constraints() {
        if let Some((out, op, a, b)) = as_definition(vars, c) {
            defined[out.0].get_or_insert((op, a, b));
        }
    }
    let free: Vec<usize> = (0..vars.len())
        .filter(|&i| vars[i].kind != VarKind::Constant && defined[i].is_none())
        .collect();
    let size = free.iter().fold(1u128, |acc, &i| {
        acc.saturating_mul(vars[i].domain.len() as u128)
    });
    if size > cap {
        return Err(CspError::SearchSpaceTooLarge { size, cap });
    }
    let domains: Vec<Vec<Value>> = free.iter().map(|&i| vars[i].domain.to_vec()).collect();
    let mut values: Vec<Option<Value>> = vars
        .iter()
        .map(|v| {
            if v.kind == VarKind::Constant {
                v.domain.value()
            } else {
                None
            }
        })
        .collect();
    let mut out = BTreeSet::new();
    if domains.iter().any(Vec::is_empty) {
        return Ok(out);
    }
    let mut idx = vec![0usize; free.len()];
    loop {
        for (k, &i) in free.iter().enumerate() {
            values[i] = Some(domains[k][idx[k]]);
        }
        if let Some(sol) = check(problem, &defined, &mut values) {
            out.insert(sol);
        }
        // Odometer increment.
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(out);
            }
            idx[k] += 1;
            if idx[k] < domains[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

type Definition = Option<(super::normalize::Op, VarId, VarId)>;

fn check(
    problem: &CspProblem,
    defined: &[Definition],
    values: &mut [Option<Value>],
) -> Option<Solution> {
    let vars = problem.variables();
    for (i, d) in defined.iter().enumerate() {
        if d.is_some() {
            values[i] = None;
        }
    }
    // Definitions may chain; settle them in passes.
    loop {
        let mut progress = false;
        for (i, d) in defined.iter().enumerate() {
            if let (Some((op, a, b)), None) = (d, values[i]) {
                if let (Some(x), Some(y)) = (values[a.0], values[b.0]) {
                    values[i] = Some(match op {
                        super::normalize::Op::Add => x.saturating_add(y),
                        super::normalize::Op::Mul => x.saturating_mul(y),
                    });
                    progress = true;
                }
            }
        }
        if !progress {
            break;
        }
    }
    for (i, v) in vars.iter().enumerate() {
        if !v.domain.contains(values[i]?) {
            return None;
        }
    }
    let value_of = |id: VarId| values[id.0];
    for c in problem.constraints() {
        if !c.holds(&value_of)? {
            return None;
        }
    }
    let assignment = problem
        .resolution_vars()
        .map(|v| (vars[v.0].name.clone(), values[v.0].unwrap()))
        .collect();
    Some(Solution { assignment })
}
