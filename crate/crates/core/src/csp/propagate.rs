//! Arc-consistency propagation over a normalized problem.
//!
//! Each normalized constraint becomes a propagator over two or three variables.
//! Propagators first tighten bounds (interval reasoning), then, when the operand
//! domains are small enough to enumerate within [`SUPPORT_BUDGET`] checks, remove
//! every value that has no support in the constraint. Above that budget only the
//! bound reasoning applies, which is sound but weaker than full arc consistency.
//!
//! A worklist re-enqueues every propagator watching a narrowed variable, so the
//! loop stops only at a common fixpoint of all propagators.

use std::collections::VecDeque;

use super::domain::{Domain, Value, UNBOUNDED};
use super::normalize::{as_definition, Op};
use super::problem::{CspProblem, Relation};
use super::CspError;

/// Maximum number of candidate checks a single support computation may perform.
pub const SUPPORT_BUDGET: u64 = 1 << 16;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Propagator {
    Equal(usize, usize),
    LessEqual(usize, usize),
    Divides(usize, usize),
    Sum { out: usize, a: usize, b: usize },
    Product { out: usize, a: usize, b: usize },
}

impl Propagator {
    fn vars(&self) -> Vec<usize> {
        match *self {
            Propagator::Equal(a, b) | Propagator::LessEqual(a, b) | Propagator::Divides(a, b) => {
                vec![a, b]
            }
            Propagator::Sum { out, a, b } | Propagator::Product { out, a, b } => vec![out, a, b],
        }
    }
}

/// Propagators of a normalized problem plus the variable-to-propagator index.
#[derive(Clone, Debug)]
pub(crate) struct Network {
    pub props: Vec<Propagator>,
    pub watchers: Vec<Vec<usize>>,
}

impl Network {
    pub fn compile(problem: &CspProblem) -> Result<Network, CspError> {
        let mut props = Vec::with_capacity(problem.constraints().len());
        for (i, c) in problem.constraints().iter().enumerate() {
            let p = if let Some((out, op, a, b)) = as_definition(problem.variables(), c) {
                match op {
                    Op::Add => Propagator::Sum {
                        out: out.0,
                        a: a.0,
                        b: b.0,
                    },
                    Op::Mul => Propagator::Product {
                        out: out.0,
                        a: a.0,
                        b: b.0,
                    },
                }
            } else {
                let (Some(l), Some(r)) = (c.lhs.as_var(), c.rhs.as_var()) else {
                    return Err(CspError::NotNormalized(i));
                };
                match c.relation {
                    Relation::Equal => Propagator::Equal(l.0, r.0),
                    Relation::LessEqual => Propagator::LessEqual(l.0, r.0),
                    Relation::Divides => Propagator::Divides(l.0, r.0),
                }
            };
            props.push(p);
        }
        let mut watchers = vec![Vec::new(); problem.variables().len()];
        for (i, p) in props.iter().enumerate() {
            let mut vs = p.vars();
            vs.sort_unstable();
            vs.dedup();
            for v in vs {
                watchers[v].push(i);
            }
        }
        Ok(Network { props, watchers })
    }
}

/// Raised when a domain becomes empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Wipeout(pub usize);

/// Domains with an undo trail.
#[derive(Clone, Debug)]
pub(crate) struct Store {
    pub domains: Vec<Domain>,
    trail: Vec<(usize, Domain)>,
    pub narrowed: Vec<usize>,
}

impl Store {
    pub fn new(domains: Vec<Domain>) -> Self {
        Store {
            domains,
            trail: Vec::new(),
            narrowed: Vec::new(),
        }
    }

    pub fn mark(&self) -> usize {
        self.trail.len()
    }

    pub fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let (v, d) = self.trail.pop().expect("trail entry");
            self.domains[v] = d;
        }
    }

    /// Replaces the domain of `v` with `d`, which must be a subset of the current one.
    pub fn narrow(&mut self, v: usize, d: Domain) -> Result<bool, Wipeout> {
        if d.len() == self.domains[v].len() {
            return Ok(false);
        }
        debug_assert!(d.len() < self.domains[v].len());
        let empty = d.is_empty();
        let old = std::mem::replace(&mut self.domains[v], d);
        self.trail.push((v, old));
        self.narrowed.push(v);
        if empty {
            Err(Wipeout(v))
        } else {
            Ok(true)
        }
    }

    fn bound(&mut self, v: usize, lo: Value, hi: Value) -> Result<(), Wipeout> {
        let d = &self.domains[v];
        match (d.min(), d.max()) {
            (Some(min), Some(max)) if lo <= min && hi >= max => Ok(()),
            (Some(_), Some(_)) => {
                let nd = d.restrict(lo, hi);
                self.narrow(v, nd).map(|_| ())
            }
            _ => Err(Wipeout(v)),
        }
    }
}

fn bounds(d: &Domain) -> (Value, Value) {
    (d.min().unwrap_or(1), d.max().unwrap_or(0))
}

fn div_floor(a: Value, b: Value) -> Value {
    a / b
}

fn div_ceil(a: Value, b: Value) -> Value {
    (a + b - 1) / b
}

/// Runs propagators to a common fixpoint.
///
/// `seed` lists the propagators enqueued initially; `None` enqueues all of them.
pub(crate) fn propagate(
    net: &Network,
    store: &mut Store,
    seed: Option<&[usize]>,
) -> Result<(), Wipeout> {
    let n = net.props.len();
    let mut queued = vec![false; n];
    let mut queue = VecDeque::with_capacity(n);
    match seed {
        None => {
            queue.extend(0..n);
            queued.iter_mut().for_each(|q| *q = true);
        }
        Some(s) => {
            for &p in s {
                if !std::mem::replace(&mut queued[p], true) {
                    queue.push_back(p);
                }
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        queued[p] = false;
        store.narrowed.clear();
        run(&net.props[p], store)?;
        for i in 0..store.narrowed.len() {
            let v = store.narrowed[i];
            for &w in &net.watchers[v] {
                if !std::mem::replace(&mut queued[w], true) {
                    queue.push_back(w);
                }
            }
        }
    }
    store.narrowed.clear();
    Ok(())
}

fn run(p: &Propagator, store: &mut Store) -> Result<(), Wipeout> {
    match *p {
        Propagator::Equal(a, b) => {
            let d = store.domains[a].intersect(&store.domains[b]);
            store.narrow(a, d.clone())?;
            store.narrow(b, d)?;
            Ok(())
        }
        Propagator::LessEqual(a, b) => {
            let (_, bmax) = bounds(&store.domains[b]);
            store.bound(a, 1, bmax)?;
            let (amin, _) = bounds(&store.domains[a]);
            store.bound(b, amin, UNBOUNDED)
        }
        Propagator::Divides(a, b) => divides(store, a, b),
        Propagator::Sum { out, a, b } => ternary(store, Op::Add, out, a, b),
        Propagator::Product { out, a, b } => ternary(store, Op::Mul, out, a, b),
    }
}

fn divides(store: &mut Store, a: usize, b: usize) -> Result<(), Wipeout> {
    // a | b with positive values implies a <= b.
    let (_, bmax) = bounds(&store.domains[b]);
    store.bound(a, 1, bmax)?;
    let (amin, _) = bounds(&store.domains[a]);
    store.bound(b, amin, UNBOUNDED)?;

    let da = store.domains[a].clone();
    let db = store.domains[b].clone();
    if a == b {
        return Ok(());
    }
    // Divisors: keep v in a with some multiple in b.
    let check_cost = if db.is_progression() { 1 } else { db.len() };
    if da.len().saturating_mul(check_cost) <= SUPPORT_BUDGET {
        let nd = if db.is_progression() {
            da.filter(|v| !db.multiples_of(v).is_empty())
        } else {
            let ws = db.to_vec();
            da.filter(|v| ws.iter().any(|w| w % v == 0))
        };
        store.narrow(a, nd)?;
    }
    // Multiples: keep w in b divisible by some value of a.
    let da = store.domains[a].clone();
    if let Some(k) = da.value() {
        let nd = db.multiples_of(k);
        store.narrow(b, nd)?;
    } else if db.len().saturating_mul(da.len()) <= SUPPORT_BUDGET {
        let vs = da.to_vec();
        let nd = db.filter(|w| vs.iter().any(|v| w % v == 0));
        store.narrow(b, nd)?;
    }
    Ok(())
}

fn combine(op: Op, x: Value, y: Value) -> Value {
    match op {
        Op::Add => x.saturating_add(y),
        Op::Mul => x.saturating_mul(y),
    }
}

/// `y` with `combine(op, x, y) == t`, if one exists.
fn solve_for(op: Op, t: Value, x: Value) -> Option<Value> {
    match op {
        Op::Add => (t > x).then(|| t - x),
        Op::Mul => (t % x == 0).then(|| t / x),
    }
}

fn ternary_bounds(
    store: &mut Store,
    op: Op,
    out: usize,
    a: usize,
    b: usize,
) -> Result<(), Wipeout> {
    loop {
        let (amin, amax) = bounds(&store.domains[a]);
        let (bmin, bmax) = bounds(&store.domains[b]);
        let before = [
            store.domains[out].len(),
            store.domains[a].len(),
            store.domains[b].len(),
        ];
        store.bound(out, combine(op, amin, bmin), combine(op, amax, bmax))?;
        let (omin, omax) = bounds(&store.domains[out]);
        // Bounds of `a` from out and b; a saturated upper bound means "unknown".
        let (alo, ahi, blo, bhi) = match op {
            Op::Add => (
                omin.saturating_sub(bmax),
                if omax == UNBOUNDED {
                    UNBOUNDED
                } else {
                    omax - bmin
                },
                omin.saturating_sub(amax),
                if omax == UNBOUNDED {
                    UNBOUNDED
                } else {
                    omax - amin
                },
            ),
            Op::Mul => (
                if bmax == UNBOUNDED {
                    1
                } else {
                    div_ceil(omin, bmax)
                },
                if omax == UNBOUNDED {
                    UNBOUNDED
                } else {
                    div_floor(omax, bmin)
                },
                if amax == UNBOUNDED {
                    1
                } else {
                    div_ceil(omin, amax)
                },
                if omax == UNBOUNDED {
                    UNBOUNDED
                } else {
                    div_floor(omax, amin)
                },
            ),
        };
        store.bound(a, alo, ahi)?;
        store.bound(b, blo, bhi)?;
        let after = [
            store.domains[out].len(),
            store.domains[a].len(),
            store.domains[b].len(),
        ];
        if before == after {
            return Ok(());
        }
    }
}

fn ternary(store: &mut Store, op: Op, out: usize, a: usize, b: usize) -> Result<(), Wipeout> {
    ternary_bounds(store, op, out, a, b)?;
    let (dout, da, db) = (&store.domains[out], &store.domains[a], &store.domains[b]);
    let (no, na, nb) = (dout.len(), da.len(), db.len());

    let mut sup_out = Vec::new();
    let mut sup_a = Vec::new();
    let mut sup_b = Vec::new();
    if na.saturating_mul(nb) <= SUPPORT_BUDGET {
        let bs = db.to_vec();
        for x in da.iter() {
            for &y in &bs {
                let t = combine(op, x, y);
                if dout.contains(t) {
                    sup_out.push(t);
                    sup_a.push(x);
                    sup_b.push(y);
                }
            }
        }
    } else if no.saturating_mul(na.min(nb)) <= SUPPORT_BUDGET {
        let a_small = na <= nb;
        let (dx, dy) = if a_small { (da, db) } else { (db, da) };
        let xs = dx.to_vec();
        for t in dout.iter() {
            for &x in &xs {
                if let Some(y) = solve_for(op, t, x) {
                    if dy.contains(y) && combine(op, x, y) == t {
                        sup_out.push(t);
                        if a_small {
                            sup_a.push(x);
                            sup_b.push(y);
                        } else {
                            sup_a.push(y);
                            sup_b.push(x);
                        }
                    }
                }
            }
        }
    } else {
        return Ok(());
    }
    let finish = |mut v: Vec<Value>| {
        v.sort_unstable();
        v.dedup();
        Domain::from_sorted(v)
    };
    store.narrow(out, finish(sup_out))?;
    store.narrow(a, finish(sup_a))?;
    store.narrow(b, finish(sup_b))?;
    Ok(())
}
