//! Rewriting constraints onto intermediate variables.
//!
//! After normalization every constraint is either a relation between two variables
//! or a structural definition `t = a + b` / `t = a * b` where `t` is an intermediate
//! and `a`, `b` are variables. Identical sub-terms (up to operand order) share one
//! intermediate.

use std::collections::HashMap;

use super::domain::Domain;
use super::problem::{Constraint, CspProblem, Expr, IntegerVariable, Relation, VarId, VarKind};
use super::CspError;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub(crate) enum Op {
    Add,
    Mul,
}

/// Structural definition `out = lhs op rhs` if `c` has that shape.
pub(crate) fn as_definition(
    problem_vars: &[IntegerVariable],
    c: &Constraint,
) -> Option<(VarId, Op, VarId, VarId)> {
    if c.relation != Relation::Equal {
        return None;
    }
    let out = c.lhs.as_var()?;
    if problem_vars.get(out.0)?.kind != VarKind::Intermediate {
        return None;
    }
    match &c.rhs {
        Expr::Add(a, b) => Some((out, Op::Add, a.as_var()?, b.as_var()?)),
        Expr::Mul(a, b) => Some((out, Op::Mul, a.as_var()?, b.as_var()?)),
        Expr::Var(_) => None,
    }
}

/// Initial domain of an intermediate: every value between the combined lower and
/// upper bounds of its operands, saturating at [`super::UNBOUNDED`].
fn bound_domain(op: Op, a: &Domain, b: &Domain) -> Domain {
    match (a.min(), a.max(), b.min(), b.max()) {
        (Some(amin), Some(amax), Some(bmin), Some(bmax)) => match op {
            Op::Add => Domain::range(amin.saturating_add(bmin), amax.saturating_add(bmax)),
            Op::Mul => Domain::range(amin.saturating_mul(bmin), amax.saturating_mul(bmax)),
        },
        _ => Domain::empty(),
    }
}

struct Normalizer {
    variables: Vec<IntegerVariable>,
    constraints: Vec<Constraint>,
    terms: HashMap<(Op, VarId, VarId), VarId>,
    counter: usize,
}

impl Normalizer {
    fn leaf(&mut self, expr: &Expr) -> VarId {
        match expr {
            Expr::Var(v) => *v,
            Expr::Add(a, b) => self.term(Op::Add, a, b),
            Expr::Mul(a, b) => self.term(Op::Mul, a, b),
        }
    }

    fn term(&mut self, op: Op, a: &Expr, b: &Expr) -> VarId {
        let x = self.leaf(a);
        let y = self.leaf(b);
        let key = (op, x.min(y), x.max(y));
        if let Some(&t) = self.terms.get(&key) {
            return t;
        }
        let domain = bound_domain(op, &self.variables[x.0].domain, &self.variables[y.0].domain);
        let mut name = format!("_t{}", self.counter);
        while self.variables.iter().any(|v| v.name == name) {
            self.counter += 1;
            name = format!("_t{}", self.counter);
        }
        self.counter += 1;
        self.variables.push(IntegerVariable {
            name,
            domain,
            kind: VarKind::Intermediate,
        });
        let t = VarId(self.variables.len() - 1);
        let rhs = match op {
            Op::Add => Expr::Var(x) + y,
            Op::Mul => Expr::Var(x) * y,
        };
        self.constraints.push(Constraint::equal(t, rhs));
        self.terms.insert(key, t);
        t
    }
}

/// Introduces intermediates for compound sub-terms; the solution set over the
/// resolution variables is unchanged. Already-normalized problems come back equal.
pub fn normalize_problem(problem: &CspProblem) -> Result<CspProblem, CspError> {
    // Revalidate: callers may hand in problems assembled from untrusted documents.
    let problem = CspProblem::new(
        problem.variables().to_vec(),
        problem.constraints().to_vec(),
        problem.heuristic().clone(),
    )?;
    let (variables, constraints, heuristic) = problem.into_parts();
    let mut n = Normalizer {
        variables,
        constraints: Vec::with_capacity(constraints.len()),
        terms: HashMap::new(),
        counter: 0,
    };
    // Existing definitions stay in place.
    for c in &constraints {
        if let Some((out, op, a, b)) = as_definition(&n.variables, c) {
            n.terms.entry((op, a.min(b), a.max(b))).or_insert(out);
        }
    }
    n.counter = n.variables.len();
    for c in constraints {
        if as_definition(&n.variables, &c).is_some() {
            n.constraints.push(c);
            continue;
        }
        let l = n.leaf(&c.lhs);
        let r = n.leaf(&c.rhs);
        n.constraints.push(Constraint {
            relation: c.relation,
            lhs: Expr::Var(l),
            rhs: Expr::Var(r),
        });
    }
    Ok(CspProblem::new_unchecked(
        n.variables,
        n.constraints,
        heuristic,
    ))
}

/// Whether the problem already has the normalized shape.
pub fn is_normalized(problem: &CspProblem) -> bool {
    problem.constraints().iter().all(|c| {
        as_definition(problem.variables(), c).is_some()
            || (c.lhs.as_var().is_some() && c.rhs.as_var().is_some())
    })
}
