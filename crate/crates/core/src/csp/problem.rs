use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use super::domain::{Domain, Value};
use super::CspError;

/// Index of a variable inside its [`CspProblem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Constant,
    Resolution,
    Intermediate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegerVariable {
    pub name: String,
    pub domain: Domain,
    pub kind: VarKind,
}

/// Binary expression tree over variables. N-ary sums and products nest binary nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(VarId),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(id: VarId) -> Expr {
        Expr::Var(id)
    }

    /// Left-nested sum. Panics on an empty iterator.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms
            .into_iter()
            .reduce(|a, b| a + b)
            .expect("sum of no terms")
    }

    /// Left-nested product. Panics on an empty iterator.
    pub fn product<I: IntoIterator<Item = Expr>>(factors: I) -> Expr {
        factors
            .into_iter()
            .reduce(|a, b| a * b)
            .expect("product of no factors")
    }

    pub fn as_var(&self) -> Option<VarId> {
        match self {
            Expr::Var(v) => Some(*v),
            _ => None,
        }
    }

    pub(crate) fn visit_vars(&self, f: &mut impl FnMut(VarId)) {
        match self {
            Expr::Var(v) => f(*v),
            Expr::Add(a, b) | Expr::Mul(a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    /// Evaluates with saturating arithmetic; `None` if a variable has no value.
    pub fn eval(&self, value_of: &impl Fn(VarId) -> Option<Value>) -> Option<Value> {
        match self {
            Expr::Var(v) => value_of(*v),
            Expr::Add(a, b) => Some(a.eval(value_of)?.saturating_add(b.eval(value_of)?)),
            Expr::Mul(a, b) => Some(a.eval(value_of)?.saturating_mul(b.eval(value_of)?)),
        }
    }
}

impl From<VarId> for Expr {
    fn from(v: VarId) -> Expr {
        Expr::Var(v)
    }
}

impl<R: Into<Expr>> Add<R> for Expr {
    type Output = Expr;
    fn add(self, rhs: R) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs.into()))
    }
}

impl<R: Into<Expr>> Mul<R> for Expr {
    type Output = Expr;
    fn mul(self, rhs: R) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs.into()))
    }
}

impl<R: Into<Expr>> Add<R> for VarId {
    type Output = Expr;
    fn add(self, rhs: R) -> Expr {
        Expr::Var(self) + rhs
    }
}

impl<R: Into<Expr>> Mul<R> for VarId {
    type Output = Expr;
    fn mul(self, rhs: R) -> Expr {
        Expr::Var(self) * rhs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Equal,
    LessEqual,
    /// `lhs` evenly divides `rhs`.
    Divides,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Constraint {
    pub relation: Relation,
    pub lhs: Expr,
    pub rhs: Expr,
}

impl Constraint {
    pub fn equal(lhs: impl Into<Expr>, rhs: impl Into<Expr>) -> Self {
        Constraint {
            relation: Relation::Equal,
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }

    pub fn less_equal(lhs: impl Into<Expr>, rhs: impl Into<Expr>) -> Self {
        Constraint {
            relation: Relation::LessEqual,
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }

    pub fn divides(lhs: impl Into<Expr>, rhs: impl Into<Expr>) -> Self {
        Constraint {
            relation: Relation::Divides,
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }

    /// Evaluates the relation on fully valued operands.
    pub fn holds(&self, value_of: &impl Fn(VarId) -> Option<Value>) -> Option<bool> {
        let l = self.lhs.eval(value_of)?;
        let r = self.rhs.eval(value_of)?;
        Some(match self.relation {
            Relation::Equal => l == r,
            Relation::LessEqual => l <= r,
            Relation::Divides => r % l == 0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    #[serde(alias = "smallest")]
    PreferSmallest,
    #[serde(alias = "largest")]
    PreferLargest,
}

/// Search order over the resolution variables and the value direction for each.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Heuristic {
    pub order: Vec<(VarId, Preference)>,
}

/// Variables, constraints and the search heuristic. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CspProblem {
    variables: Vec<IntegerVariable>,
    constraints: Vec<Constraint>,
    heuristic: Heuristic,
}

impl CspProblem {
    pub fn new(
        variables: Vec<IntegerVariable>,
        constraints: Vec<Constraint>,
        heuristic: Heuristic,
    ) -> Result<Self, CspError> {
        let problem = CspProblem {
            variables,
            constraints,
            heuristic,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub(crate) fn new_unchecked(
        variables: Vec<IntegerVariable>,
        constraints: Vec<Constraint>,
        heuristic: Heuristic,
    ) -> Self {
        CspProblem {
            variables,
            constraints,
            heuristic,
        }
    }

    fn validate(&self) -> Result<(), CspError> {
        let mut seen = HashMap::new();
        for (i, v) in self.variables.iter().enumerate() {
            if seen.insert(v.name.as_str(), i).is_some() {
                return Err(CspError::DuplicateVariable(v.name.clone()));
            }
            if v.kind == VarKind::Constant && v.domain.len() != 1 {
                return Err(CspError::ConstantNotSingleton(v.name.clone()));
            }
        }
        let n = self.variables.len();
        for c in &self.constraints {
            let mut bad = None;
            c.lhs.visit_vars(&mut |v| {
                if v.0 >= n {
                    bad = Some(v.0)
                }
            });
            c.rhs.visit_vars(&mut |v| {
                if v.0 >= n {
                    bad = Some(v.0)
                }
            });
            if let Some(index) = bad {
                return Err(CspError::DanglingReference(index));
            }
        }
        let mut ordered = vec![false; n];
        for &(v, _) in &self.heuristic.order {
            let var = self
                .variables
                .get(v.0)
                .ok_or(CspError::DanglingReference(v.0))?;
            if var.kind != VarKind::Resolution {
                return Err(CspError::HeuristicNotResolution(var.name.clone()));
            }
            if std::mem::replace(&mut ordered[v.0], true) {
                return Err(CspError::HeuristicDuplicate(var.name.clone()));
            }
        }
        for (i, var) in self.variables.iter().enumerate() {
            if var.kind == VarKind::Resolution && !ordered[i] {
                return Err(CspError::HeuristicMissing(var.name.clone()));
            }
        }
        Ok(())
    }

    pub fn variables(&self) -> &[IntegerVariable] {
        &self.variables
    }

    pub fn variable(&self, id: VarId) -> &IntegerVariable {
        &self.variables[id.0]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn heuristic(&self) -> &Heuristic {
        &self.heuristic
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .map(VarId)
    }

    pub fn domain(&self, id: VarId) -> &Domain {
        &self.variables[id.0].domain
    }

    pub fn domain_of(&self, name: &str) -> Option<&Domain> {
        self.var_id(name).map(|id| self.domain(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.variables.len()).map(VarId)
    }

    pub fn resolution_vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.heuristic.order.iter().map(|&(v, _)| v)
    }

    /// Copy of this problem with the given domains substituted.
    pub(crate) fn with_domains(&self, domains: Vec<Domain>) -> CspProblem {
        let variables = self
            .variables
            .iter()
            .zip(domains)
            .map(|(v, domain)| IntegerVariable {
                domain,
                ..v.clone()
            })
            .collect();
        CspProblem {
            variables,
            constraints: self.constraints.clone(),
            heuristic: self.heuristic.clone(),
        }
    }

    pub(crate) fn into_parts(self) -> (Vec<IntegerVariable>, Vec<Constraint>, Heuristic) {
        (self.variables, self.constraints, self.heuristic)
    }
}

/// Assignment of every resolution variable, keyed by name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Solution {
    pub assignment: BTreeMap<String, Value>,
}

impl Solution {
    pub fn get(&self, name: &str) -> Option<Value> {
        self.assignment.get(name).copied()
    }
}

impl fmt::Display for Solution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .assignment
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        write!(f, "{}", parts.join(", "))
    }
}

/// Incremental construction of a [`CspProblem`].
///
/// Resolution variables enter the heuristic order in declaration order unless
/// [`ProblemBuilder::set_order`] overrides it.
#[derive(Default)]
pub struct ProblemBuilder {
    variables: Vec<IntegerVariable>,
    constraints: Vec<Constraint>,
    order: Vec<(VarId, Preference)>,
    explicit_order: Option<Vec<(VarId, Preference)>>,
    constants: HashMap<Value, VarId>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, domain: Domain, kind: VarKind) -> Result<VarId, CspError> {
        if self.variables.iter().any(|v| v.name == name) {
            return Err(CspError::DuplicateVariable(name));
        }
        self.variables.push(IntegerVariable { name, domain, kind });
        Ok(VarId(self.variables.len() - 1))
    }

    pub fn resolution(
        &mut self,
        name: impl Into<String>,
        domain: Domain,
        preference: Preference,
    ) -> Result<VarId, CspError> {
        let id = self.push(name.into(), domain, VarKind::Resolution)?;
        self.order.push((id, preference));
        Ok(id)
    }

    pub fn constant(&mut self, name: impl Into<String>, value: Value) -> Result<VarId, CspError> {
        let id = self.push(name.into(), Domain::singleton(value)?, VarKind::Constant)?;
        self.constants.entry(value).or_insert(id);
        Ok(id)
    }

    /// Auxiliary variable that is not part of the heuristic order.
    pub fn intermediate(
        &mut self,
        name: impl Into<String>,
        domain: Domain,
    ) -> Result<VarId, CspError> {
        self.push(name.into(), domain, VarKind::Intermediate)
    }

    /// Anonymous constant, shared between uses of the same value.
    pub fn value(&mut self, value: Value) -> Result<VarId, CspError> {
        if let Some(&id) = self.constants.get(&value) {
            return Ok(id);
        }
        self.constant(format!("#{value}"), value)
    }

    pub fn constrain(&mut self, constraint: Constraint) -> &mut Self {
        self.constraints.push(constraint);
        self
    }

    /// `lhs < rhs`, encoded as `lhs + 1 <= rhs`.
    pub fn less_than(
        &mut self,
        lhs: impl Into<Expr>,
        rhs: impl Into<Expr>,
    ) -> Result<&mut Self, CspError> {
        let one = self.value(1)?;
        self.constraints
            .push(Constraint::less_equal(lhs.into() + one, rhs));
        Ok(self)
    }

    pub fn set_order(&mut self, order: Vec<(VarId, Preference)>) -> &mut Self {
        self.explicit_order = Some(order);
        self
    }

    pub fn build(self) -> Result<CspProblem, CspError> {
        let order = self.explicit_order.unwrap_or(self.order);
        CspProblem::new(self.variables, self.constraints, Heuristic { order })
    }
}
