//! Problem documents.
//!
//! ```json
//! {
//!   "variables": [
//!     {"id": "x", "domain": {"min": 1, "max": 10}, "preference": "prefer_largest"},
//!     {"id": "k", "domain": [4], "kind": "constant"}
//!   ],
//!   "constraints": [
//!     {"relation": "divides", "lhs": {"var": "k"}, "rhs": {"var": "x"}},
//!     {"relation": "less_equal", "lhs": {"var": "x"}, "rhs": {"const": 7}}
//!   ],
//!   "order": ["x"]
//! }
//! ```
//!
//! Expressions are `{"var": id}`, `{"const": n}`, `{"add": [e, e, ...]}` or
//! `{"mul": [e, e, ...]}`; n-ary nodes nest left. `kind` defaults to `resolution`,
//! `preference` to `prefer_smallest`, and `order` to declaration order.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::domain::{Domain, Value};
use super::problem::{
    Constraint, CspProblem, Expr, IntegerVariable, Preference, ProblemBuilder, Relation, VarKind,
};
use super::search::SolveOutcome;
use super::CspError;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableDoc {
    id: String,
    domain: Domain,
    #[serde(default = "resolution")]
    kind: VarKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    preference: Option<Preference>,
}

fn resolution() -> VarKind {
    VarKind::Resolution
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum ExprDoc {
    Var(String),
    Const(Value),
    Add(Vec<ExprDoc>),
    Mul(Vec<ExprDoc>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintDoc {
    relation: Relation,
    lhs: ExprDoc,
    rhs: ExprDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemDoc {
    variables: Vec<VariableDoc>,
    #[serde(default)]
    constraints: Vec<ConstraintDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<Vec<String>>,
}

pub fn problem_from_json(text: &str) -> Result<CspProblem, CspError> {
    let doc: ProblemDoc = serde_json::from_str(text).map_err(|e| CspError::Json(e.to_string()))?;
    let mut b = ProblemBuilder::new();
    let mut prefs = Vec::new();
    for v in &doc.variables {
        match v.kind {
            VarKind::Resolution => {
                let pref = v.preference.unwrap_or(Preference::PreferSmallest);
                b.resolution(v.id.clone(), v.domain.clone(), pref)?;
                prefs.push((v.id.clone(), pref));
            }
            VarKind::Constant => {
                let value = v
                    .domain
                    .value()
                    .ok_or_else(|| CspError::ConstantNotSingleton(v.id.clone()))?;
                b.constant(v.id.clone(), value)?;
            }
            VarKind::Intermediate => {
                b.intermediate(v.id.clone(), v.domain.clone())?;
            }
        }
    }
    let names: Vec<String> = doc.variables.iter().map(|v| v.id.clone()).collect();
    for c in &doc.constraints {
        let lhs = to_expr(&c.lhs, &names, &mut b)?;
        let rhs = to_expr(&c.rhs, &names, &mut b)?;
        b.constrain(Constraint {
            relation: c.relation,
            lhs,
            rhs,
        });
    }
    if let Some(order) = &doc.order {
        let mut o = Vec::with_capacity(order.len());
        for name in order {
            let pos = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CspError::UnknownVariable(name.clone()))?;
            let pref = prefs
                .iter()
                .find(|p| &p.0 == name)
                .map_or(Preference::PreferSmallest, |p| p.1);
            o.push((super::problem::VarId(pos), pref));
        }
        b.set_order(o);
    }
    b.build()
}

fn to_expr(e: &ExprDoc, names: &[String], b: &mut ProblemBuilder) -> Result<Expr, CspError> {
    Ok(match e {
        ExprDoc::Var(n) => {
            let pos = names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| CspError::UnknownVariable(n.clone()))?;
            Expr::Var(super::problem::VarId(pos))
        }
        ExprDoc::Const(v) => Expr::Var(b.value(*v)?),
        ExprDoc::Add(xs) | ExprDoc::Mul(xs) => {
            if xs.len() < 2 {
                return Err(CspError::Json("add/mul need at least two operands".into()));
            }
            let terms = xs
                .iter()
                .map(|x| to_expr(x, names, b))
                .collect::<Result<Vec<_>, _>>()?;
            if matches!(e, ExprDoc::Add(_)) {
                Expr::sum(terms)
            } else {
                Expr::product(terms)
            }
        }
    })
}

fn from_expr(e: &Expr, vars: &[IntegerVariable]) -> ExprDoc {
    match e {
        Expr::Var(v) => ExprDoc::Var(vars[v.0].name.clone()),
        Expr::Add(a, b) => ExprDoc::Add(vec![from_expr(a, vars), from_expr(b, vars)]),
        Expr::Mul(a, b) => ExprDoc::Mul(vec![from_expr(a, vars), from_expr(b, vars)]),
    }
}

/// Serializes a problem in the document format read by [`problem_from_json`].
pub fn problem_to_json(problem: &CspProblem) -> Json {
    let vars = problem.variables();
    let pref_of = |i: usize| {
        problem
            .heuristic()
            .order
            .iter()
            .find(|(v, _)| v.0 == i)
            .map(|&(_, p)| p)
    };
    let doc = ProblemDoc {
        variables: vars
            .iter()
            .enumerate()
            .map(|(i, v)| VariableDoc {
                id: v.name.clone(),
                domain: v.domain.clone(),
                kind: v.kind,
                preference: pref_of(i),
            })
            .collect(),
        constraints: problem
            .constraints()
            .iter()
            .map(|c| ConstraintDoc {
                relation: c.relation,
                lhs: from_expr(&c.lhs, vars),
                rhs: from_expr(&c.rhs, vars),
            })
            .collect(),
        order: Some(
            problem
                .heuristic()
                .order
                .iter()
                .map(|(v, _)| vars[v.0].name.clone())
                .collect(),
        ),
    };
    serde_json::to_value(doc).expect("problem document serializes")
}

/// `{"x": 4, ...}` for a solution, `{"status": "infeasible"}` otherwise.
pub fn outcome_to_json(outcome: &SolveOutcome) -> Json {
    match outcome {
        SolveOutcome::Solved(s) => serde_json::to_value(s).expect("solution serializes"),
        SolveOutcome::Infeasible => json!({"status": "infeasible"}),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csp::solve;

    const DOC: &str = r#"{
        "variables": [
            {"id": "x", "domain": {"min": 1, "max": 10}, "preference": "prefer_largest"},
            {"id": "k", "domain": [4], "kind": "constant"}
        ],
        "constraints": [
            {"relation": "divides", "lhs": {"var": "k"}, "rhs": {"var": "x"}},
            {"relation": "less_equal", "lhs": {"var": "x"}, "rhs": {"const": 7}}
        ],
        "order": ["x"]
    }"#;

    #[test]
    fn parse_and_solve() {
        let p = problem_from_json(DOC).unwrap();
        let out = solve(&p).unwrap();
        assert_eq!(outcome_to_json(&out), json!({"x": 4}));
    }

    #[test]
    fn round_trip() {
        let p = problem_from_json(DOC).unwrap();
        let text = problem_to_json(&p).to_string();
        assert_eq!(problem_from_json(&text).unwrap(), p);
    }

    #[test]
    fn infeasible_status() {
        assert_eq!(
            outcome_to_json(&SolveOutcome::Infeasible),
            json!({"status": "infeasible"})
        );
    }

    #[test]
    fn rejects_unknown_names_and_fields() {
        let bad = DOC.replace(r#"{"var": "k"}"#, r#"{"var": "q"}"#);
        assert!(matches!(problem_from_json(&bad), Err(CspError::UnknownVariable(n)) if n == "q"));
        let bad = DOC.replace("\"order\"", "\"ordre\"");
        assert!(matches!(problem_from_json(&bad), Err(CspError::Json(_))));
        let bad = DOC.replace("[4]", "[0]");
        assert!(problem_from_json(&bad).is_err());
    }

    #[test]
    fn nary_nodes_nest() {
        let doc = r#"{"variables": [{"id": "a", "domain": {"min": 1, "max": 3}}],
            "constraints": [{"relation": "equal", "lhs": {"add": [{"var": "a"}, {"var": "a"}, {"var": "a"}]}, "rhs": {"const": 6}}]}"#;
        let p = problem_from_json(doc).unwrap();
        assert_eq!(outcome_to_json(&solve(&p).unwrap()), json!({"a": 2}));
    }
}
