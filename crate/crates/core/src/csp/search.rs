use super::domain::{Domain, Value};
use super::normalize::{is_normalized, normalize_problem};
use super::problem::{CspProblem, Preference, Solution, VarId, VarKind};
use super::propagate::{propagate, Network, Store};
use super::CspError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveOutcome {
    Solved(Solution),
    Infeasible,
}

impl SolveOutcome {
    pub fn solution(&self) -> Option<&Solution> {
        match self {
            SolveOutcome::Solved(s) => Some(s),
            SolveOutcome::Infeasible => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, SolveOutcome::Solved(_))
    }
}

fn prepared(problem: &CspProblem) -> Result<CspProblem, CspError> {
    if is_normalized(problem) {
        Ok(problem.clone())
    } else {
        normalize_problem(problem)
    }
}

/// Narrows every domain to the arc-consistent fixpoint.
///
/// Returns the narrowed problem and whether any domain changed. When some domain
/// runs empty every domain of the result is empty.
pub fn global_arc_reduce(problem: &CspProblem) -> Result<(CspProblem, bool), CspError> {
    if !is_normalized(problem) {
        let i = problem
            .constraints()
            .iter()
            .position(|c| c.lhs.as_var().is_none() || c.rhs.as_var().is_none());
        return Err(CspError::NotNormalized(i.unwrap_or(0)));
    }
    let net = Network::compile(problem)?;
    let before: Vec<u64> = problem.variables().iter().map(|v| v.domain.len()).collect();
    let mut store = Store::new(
        problem
            .variables()
            .iter()
            .map(|v| v.domain.clone())
            .collect(),
    );
    if propagate(&net, &mut store, None).is_err() || store.domains.iter().any(Domain::is_empty) {
        store.domains.iter_mut().for_each(|d| *d = Domain::empty());
    }
    let changed = store
        .domains
        .iter()
        .zip(&before)
        .any(|(d, &n)| d.len() != n);
    Ok((problem.with_domains(store.domains), changed))
}

pub fn solve(problem: &CspProblem) -> Result<SolveOutcome, CspError> {
    solve_with_limit(problem, None)
}

/// Depth-first search with propagation after every assignment.
///
/// Resolution variables are assigned in heuristic order, values tried ascending
/// or descending per preference. Unconstrained intermediates left open after that
/// are searched smallest first. `node_limit` bounds the number of assignments tried.
pub fn solve_with_limit(
    problem: &CspProblem,
    node_limit: Option<u64>,
) -> Result<SolveOutcome, CspError> {
    let problem = prepared(problem)?;
    let net = Network::compile(&problem)?;
    let mut store = Store::new(
        problem
            .variables()
            .iter()
            .map(|v| v.domain.clone())
            .collect(),
    );
    if store.domains.iter().any(Domain::is_empty) || propagate(&net, &mut store, None).is_err() {
        return Ok(SolveOutcome::Infeasible);
    }
    let mut order: Vec<(VarId, Preference)> = problem.heuristic().order.clone();
    for id in problem.ids() {
        if problem.variable(id).kind == VarKind::Intermediate {
            order.push((id, Preference::PreferSmallest));
        }
    }
    let mut search = Search {
        net: &net,
        order: &order,
        nodes: 0,
        limit: node_limit,
    };
    if search.dfs(&mut store, 0)? {
        let assignment = problem
            .resolution_vars()
            .map(|v| {
                (
                    problem.variable(v).name.clone(),
                    store.domains[v.0].value().expect("assigned"),
                )
            })
            .collect();
        Ok(SolveOutcome::Solved(Solution { assignment }))
    } else {
        Ok(SolveOutcome::Infeasible)
    }
}

struct Search<'a> {
    net: &'a Network,
    order: &'a [(VarId, Preference)],
    nodes: u64,
    limit: Option<u64>,
}

impl Search<'_> {
    fn dfs(&mut self, store: &mut Store, depth: usize) -> Result<bool, CspError> {
        let Some(&(v, pref)) = self.order.get(depth) else {
            return Ok(true);
        };
        let domain = store.domains[v.0].clone();
        if domain.len() == 1 {
            return self.dfs(store, depth + 1);
        }
        let values: Box<dyn Iterator<Item = Value>> = match pref {
            Preference::PreferSmallest => Box::new(domain.iter()),
            Preference::PreferLargest => Box::new(domain.iter().rev()),
        };
        for value in values {
            self.nodes += 1;
            if self.limit.is_some_and(|l| self.nodes > l) {
                return Err(CspError::NodeLimit(self.nodes - 1));
            }
            let mark = store.mark();
            let single = Domain::singleton(value)?;
            let ok = store.narrow(v.0, single).is_ok()
                && propagate(self.net, store, Some(&self.net.watchers[v.0])).is_ok();
            if ok && self.dfs(store, depth + 1)? {
                return Ok(true);
            }
            store.undo_to(mark);
        }
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csp::{brute_force_solve, Constraint, ProblemBuilder};

    fn x_only(domain: Domain, pref: Preference) -> (ProblemBuilder, VarId) {
        let mut b = ProblemBuilder::new();
        let x = b.resolution("x", domain, pref).unwrap();
        (b, x)
    }

    #[test]
    fn divisibility_and_bound() {
        let (mut b, x) = x_only(Domain::range(1, 100), Preference::PreferSmallest);
        let (eight, twenty) = (b.value(8).unwrap(), b.value(20).unwrap());
        b.constrain(Constraint::divides(eight, x))
            .constrain(Constraint::less_equal(x, twenty));
        let (p, changed) = global_arc_reduce(&b.build().unwrap()).unwrap();
        assert!(changed);
        assert_eq!(p.domain_of("x").unwrap().to_vec(), vec![8, 16]);
    }

    #[test]
    fn equality_chain_collapses() {
        let mut b = ProblemBuilder::new();
        let x = b
            .resolution("x", Domain::range(1, 10), Preference::PreferSmallest)
            .unwrap();
        let y = b
            .resolution("y", Domain::range(1, 10), Preference::PreferSmallest)
            .unwrap();
        let (two, three) = (b.value(2).unwrap(), b.value(3).unwrap());
        b.constrain(Constraint::equal(x, y))
            .constrain(Constraint::less_equal(x, three))
            .constrain(Constraint::divides(two, y));
        let p = b.build().unwrap();
        let (r, _) = global_arc_reduce(&p).unwrap();
        let all = brute_force_solve(&p, 1000).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(r.domain_of("x").unwrap().to_vec(), vec![2]);
        assert_eq!(r.domain_of("y").unwrap().to_vec(), vec![2]);
    }

    fn infeasible() -> CspProblem {
        let (mut b, x) = x_only(Domain::range(1, 100), Preference::PreferSmallest);
        let (two, three, five) = (
            b.value(2).unwrap(),
            b.value(3).unwrap(),
            b.value(5).unwrap(),
        );
        b.constrain(Constraint::less_equal(x, two))
            .constrain(Constraint::divides(five, x))
            .constrain(Constraint::less_equal(three, x));
        b.build().unwrap()
    }

    #[test]
    fn infeasible_system_empties_domain() {
        let (p, changed) = global_arc_reduce(&infeasible()).unwrap();
        assert!(changed);
        assert!(p.domain_of("x").unwrap().is_empty());
        assert_eq!(solve(&infeasible()).unwrap(), SolveOutcome::Infeasible);
    }

    #[test]
    fn prefer_largest_multiple() {
        let (mut b, x) = x_only(Domain::range(1, 10), Preference::PreferLargest);
        let (four, seven) = (b.value(4).unwrap(), b.value(7).unwrap());
        b.constrain(Constraint::divides(four, x))
            .constrain(Constraint::less_equal(x, seven));
        let s = solve(&b.build().unwrap()).unwrap();
        assert_eq!(s.solution().unwrap().get("x"), Some(4));
    }

    #[test]
    fn factor_pair_in_heuristic_order() {
        let mut b = ProblemBuilder::new();
        let x = b
            .resolution("x", Domain::range(1, 8), Preference::PreferLargest)
            .unwrap();
        let y = b
            .resolution("y", Domain::range(1, 8), Preference::PreferSmallest)
            .unwrap();
        let c = b.value(16).unwrap();
        b.constrain(Constraint::equal(x * y, c));
        let p = b.build().unwrap();
        let s = solve(&p).unwrap();
        let s = s.solution().unwrap();
        assert_eq!((s.get("x"), s.get("y")), (Some(8), Some(2)));
        // Oracle: factor pairs of 16 within [1..8], largest x first.
        let best = (1..=8)
            .rev()
            .find_map(|x| (1..=8).find(|y| x * y == 16).map(|y| (x, y)))
            .unwrap();
        assert_eq!(best, (8, 2));
        assert!(brute_force_solve(&p, 100).unwrap().contains(s));
    }

    #[test]
    fn node_limit_is_an_error_not_infeasibility() {
        let mut b = ProblemBuilder::new();
        let x = b
            .resolution("x", Domain::range(1, 50), Preference::PreferSmallest)
            .unwrap();
        let y = b
            .resolution("y", Domain::range(1, 50), Preference::PreferSmallest)
            .unwrap();
        let z = b
            .resolution("z", Domain::range(1, 50), Preference::PreferSmallest)
            .unwrap();
        let c = b.value(2000).unwrap();
        b.constrain(Constraint::equal(x * y * z + x, c));
        let p = b.build().unwrap();
        assert!(matches!(
            solve_with_limit(&p, Some(1)),
            Err(CspError::NodeLimit(1))
        ));
        assert!(solve_with_limit(&p, None).unwrap().is_feasible());
    }

    #[test]
    fn wide_domains_resolve_without_enumeration() {
        let (mut b, x) = x_only(
            Domain::range(1, 1_000_000_000_000),
            Preference::PreferLargest,
        );
        let k = b.value(4096).unwrap();
        b.constrain(Constraint::divides(k, x));
        let s = solve(&b.build().unwrap()).unwrap();
        assert_eq!(
            s.solution().unwrap().get("x"),
            Some(1_000_000_000_000 / 4096 * 4096)
        );
    }
}
