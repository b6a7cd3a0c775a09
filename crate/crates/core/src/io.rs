//! JSON system-description files.
//!
//! Polynomials are written in the polynomial text grammar. Constraints are
//! relations such as `"x1 + x2 >= 0"` or `"5 - x1^2 - x2^2 > 0"`. Named
//! scalars can be referenced as `{NAME}` inside any expression and overridden
//! at load time, which is how parameter sweeps vary a bound.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hybrid::{Edge, GuardSet, HybridSystem, Inequality, Mode, ParameterSet, SemialgebraicSet};
use crate::polynomial::{PolyError, Polynomial, PolynomialVector, VariableRegistry};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("JSON error at line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("{path}: parse error at position {position}: {message}")]
    Expression { path: String, position: usize, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// On-disk layout of a system file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default)]
    pub name: String,
    pub variables: Vec<String>,
    #[serde(default)]
    pub parameters: Vec<String>,
    /// Named constants substituted for `{NAME}` placeholders.
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub parameter_set: ParameterSetFile,
    pub modes: Vec<ModeFile>,
    pub edges: Vec<EdgeFile>,
    #[serde(default)]
    pub sampling: SamplingFile,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParameterSetFile {
    #[serde(default)]
    pub constraints: Vec<String>,
    /// `[lo, hi]` expressions per parameter.
    #[serde(default)]
    pub sample_box: Vec<[String; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SamplingFile {
    #[serde(default)]
    pub state_box: Vec<[f64; 2]>,
}

/// A domain is either one list of constraints or a list of pieces.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainFile {
    Single(Vec<String>),
    Pieces(Vec<Vec<String>>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeFile {
    pub id: usize,
    pub domain: DomainFile,
    pub field: Vec<String>,
    #[serde(default)]
    pub neighborhood: Vec<String>,
    pub anchor: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeFile {
    pub from: usize,
    pub to: usize,
    pub guard_eq: String,
    #[serde(default)]
    pub guard_ineq: Vec<String>,
    pub reset: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

fn substitute(text: &str, scalars: &BTreeMap<String, f64>, path: &str) -> Result<String, IoError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| IoError::Field { path: path.to_string(), message: "unterminated '{' placeholder".into() })?;
        let name = after[..end].trim();
        let value = scalars
            .get(name)
            .ok_or_else(|| IoError::Field { path: path.to_string(), message: format!("unknown scalar {{{name}}}") })?;
        out.push_str(&format!("({value:?})"));
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

struct Ctx<'a> {
    reg: &'a Arc<VariableRegistry>,
    scalars: &'a BTreeMap<String, f64>,
}

impl Ctx<'_> {
    fn poly(&self, text: &str, path: &str) -> Result<Polynomial, IoError> {
        let text = substitute(text, self.scalars, path)?;
        Polynomial::parse(self.reg, &text).map_err(|e| match e {
            PolyError::Parse { position, message } => IoError::Expression { path: path.to_string(), position, message },
            other => IoError::Field { path: path.to_string(), message: other.to_string() },
        })
    }

    fn constant(&self, text: &str, path: &str) -> Result<f64, IoError> {
        let p = self.poly(text, path)?;
        if p.degree() > 0 {
            return Err(IoError::Field { path: path.to_string(), message: "expected a constant expression".into() });
        }
        Ok(p.constant_term())
    }

    /// Parses `lhs OP rhs` into `(poly, strict, is_equality)` with `poly OP' 0`.
    fn relation(&self, text: &str, path: &str) -> Result<(Polynomial, bool, bool), IoError> {
        let ops = [(">=", 0), ("<=", 1), ("==", 2), (">", 3), ("<", 4), ("=", 2)];
        let found = ops
            .iter()
            .filter_map(|&(op, kind)| text.find(op).map(|at| (at, op, kind)))
            .min_by_key(|&(at, op, _)| (at, std::cmp::Reverse(op.len())));
        let Some((at, op, kind)) = found else {
            return Err(IoError::Field {
                path: path.to_string(),
                message: format!("no relation operator in {text:?}"),
            });
        };
        let lhs = self.poly(&text[..at], path)?;
        let rhs = self.poly(&text[at + op.len()..], path)?;
        Ok(match kind {
            0 => (&lhs - &rhs, false, false),
            1 => (&rhs - &lhs, false, false),
            2 => (&lhs - &rhs, false, true),
            3 => (&lhs - &rhs, true, false),
            _ => (&rhs - &lhs, true, false),
        })
    }

    fn inequality(&self, text: &str, path: &str) -> Result<Inequality, IoError> {
        let (p, strict, eq) = self.relation(text, path)?;
        if eq {
            return Err(IoError::Field { path: path.to_string(), message: "equality not allowed here".into() });
        }
        Ok(Inequality::new(p, strict))
    }

    fn set(&self, items: &[String], path: &str) -> Result<SemialgebraicSet, IoError> {
        let mut set = SemialgebraicSet::default();
        for (k, t) in items.iter().enumerate() {
            let (p, strict, eq) = self.relation(t, &format!("{path}[{k}]"))?;
            if eq {
                set.equalities.push(p);
            } else {
                set.inequalities.push(Inequality::new(p, strict));
            }
        }
        Ok(set)
    }

    fn vector(&self, items: &[String], path: &str) -> Result<PolynomialVector, IoError> {
        let comps = items
            .iter()
            .enumerate()
            .map(|(k, t)| self.poly(t, &format!("{path}[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        PolynomialVector::new(comps).map_err(|e| IoError::Field { path: path.to_string(), message: e.to_string() })
    }
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Builds the system, applying `overrides` on top of the file's scalars.
    pub fn build(&self, overrides: &BTreeMap<String, f64>) -> Result<HybridSystem, IoError> {
        let mut scalars = self.scalars.clone();
        for (k, v) in overrides {
            scalars.insert(k.clone(), *v);
        }
        let reg = VariableRegistry::new(self.variables.clone(), self.parameters.clone())
            .map_err(|e| IoError::Field { path: "variables".into(), message: e.to_string() })?;
        let ctx = Ctx { reg: &reg, scalars: &scalars };
        let mut modes = Vec::new();
        for (i, m) in self.modes.iter().enumerate() {
            let path = format!("modes[{i}]");
            let pieces: Vec<Vec<String>> = match &m.domain {
                DomainFile::Single(list) => vec![list.clone()],
                DomainFile::Pieces(p) => p.clone(),
            };
            let domain = pieces
                .iter()
                .enumerate()
                .map(|(k, piece)| ctx.set(piece, &format!("{path}.domain[{k}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let neighborhood = ctx.set(&m.neighborhood, &format!("{path}.neighborhood"))?;
            if !neighborhood.equalities.is_empty() {
                return Err(IoError::Field {
                    path: format!("{path}.neighborhood"),
                    message: "equalities not allowed".into(),
                });
            }
            modes.push(Mode {
                id: m.id,
                domain,
                field: ctx.vector(&m.field, &format!("{path}.field"))?,
                neighborhood,
                anchor: m.anchor.clone(),
            });
        }
        let mut edges = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            let path = format!("edges[{i}]");
            let equality = ctx.poly(&e.guard_eq, &format!("{path}.guard_eq"))?;
            let inequalities = e
                .guard_ineq
                .iter()
                .enumerate()
                .map(|(k, t)| ctx.inequality(t, &format!("{path}.guard_ineq[{k}]")))
                .collect::<Result<Vec<_>, _>>()?;
            edges.push(Edge {
                from: e.from,
                to: e.to,
                guard: GuardSet { equality, inequalities },
                reset: ctx.vector(&e.reset, &format!("{path}.reset"))?,
                r_hint: e.r,
            });
        }
        let constraints = self
            .parameter_set
            .constraints
            .iter()
            .enumerate()
            .map(|(k, t)| ctx.inequality(t, &format!("parameter_set.constraints[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let sample_box = self
            .parameter_set
            .sample_box
            .iter()
            .enumerate()
            .map(|(k, [lo, hi])| {
                let path = format!("parameter_set.sample_box[{k}]");
                Ok((ctx.constant(lo, &path)?, ctx.constant(hi, &path)?))
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        let state_box = if self.sampling.state_box.is_empty() {
            vec![(-1.0, 1.0); reg.n_state()]
        } else {
            self.sampling.state_box.iter().map(|[a, b]| (*a, *b)).collect()
        };
        Ok(HybridSystem {
            name: self.name.clone(),
            registry: reg.clone(),
            modes,
            edges,
            parameters: ParameterSet { constraints, sample_box },
            state_box,
        })
    }
}

/// Reads, builds and validates a system file.
pub fn load_system(text: &str, overrides: &BTreeMap<String, f64>) -> Result<HybridSystem, IoError> {
    let file = SystemFile::from_json(text)?;
    let sys = file.build(overrides)?;
    let report = sys.validate();
    if !report.is_valid() {
        return Err(IoError::Field { path: "system".into(), message: report.violations.join("; ") });
    }
    Ok(sys)
}

fn ineq_text(i: &Inequality) -> String {
    format!("{} {} 0", i.poly, if i.strict { ">" } else { ">=" })
}

fn set_text(s: &SemialgebraicSet) -> Vec<String> {
    s.inequalities.iter().map(ineq_text).chain(s.equalities.iter().map(|h| format!("{h} = 0"))).collect()
}

/// Canonical file form of a resolved system (placeholders substituted,
/// polynomials printed canonically).
pub fn to_system_file(sys: &HybridSystem) -> SystemFile {
    let reg = &sys.registry;
    let n = reg.n_state();
    SystemFile {
        name: sys.name.clone(),
        variables: reg.names()[..n].to_vec(),
        parameters: reg.names()[n..].to_vec(),
        scalars: BTreeMap::new(),
        parameter_set: ParameterSetFile {
            constraints: sys.parameters.constraints.iter().map(ineq_text).collect(),
            sample_box: sys.parameters.sample_box.iter().map(|(a, b)| [format!("{a:?}"), format!("{b:?}")]).collect(),
        },
        modes: sys
            .modes
            .iter()
            .map(|m| ModeFile {
                id: m.id,
                domain: DomainFile::Pieces(m.domain.iter().map(set_text).collect()),
                field: m.field.components().iter().map(|p| p.to_string()).collect(),
                neighborhood: set_text(&m.neighborhood),
                anchor: m.anchor.clone(),
            })
            .collect(),
        edges: sys
            .edges
            .iter()
            .map(|e| EdgeFile {
                from: e.from,
                to: e.to,
                guard_eq: e.guard.equality.to_string(),
                guard_ineq: e.guard.inequalities.iter().map(ineq_text).collect(),
                reset: e.reset.components().iter().map(|p| p.to_string()).collect(),
                r: e.r_hint,
            })
            .collect(),
        sampling: SamplingFile { state_box: sys.state_box.iter().map(|&(a, b)| [a, b]).collect() },
    }
}

/// SHA-256 of the canonical JSON form; stable across whitespace and scalar spelling.
pub fn system_fingerprint(sys: &HybridSystem) -> String {
    let canon = serde_json::to_string(&to_system_file(sys)).expect("system file serializes");
    hex::encode(Sha256::digest(canon.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "name": "t",
        "variables": ["x1", "x2"],
        "parameters": ["p1"],
        "scalars": {"C": 2.0},
        "parameter_set": {"constraints": ["p1 - {C} > 0"], "sample_box": [["{C}", "{C} + 10"]]},
        "modes": [{"id": 1, "domain": ["x1 >= 0"], "field": ["-1", "x2"], "neighborhood": ["1 - x1^2 - x2^2 > 0"], "anchor": [0, 0]}],
        "edges": [{"from": 1, "to": 1, "guard_eq": "x1 - p1*x2", "reset": ["x1", "0.5*x2"]}],
        "sampling": {"state_box": [[-1, 1], [-1, 1]]}
    }"#;

    #[test]
    fn loads_and_substitutes_scalars() {
        let sys = load_system(SMALL, &BTreeMap::new()).unwrap();
        assert_eq!(sys.parameters.sample_box, vec![(2.0, 12.0)]);
        assert_eq!(sys.parameters.constraints[0].poly.to_string(), "p1 - 2");
        assert!(sys.parameters.constraints[0].strict);
        let mut o = BTreeMap::new();
        o.insert("C".to_string(), 3.5);
        let sys2 = load_system(SMALL, &o).unwrap();
        assert_eq!(sys2.parameters.sample_box, vec![(3.5, 13.5)]);
        assert_ne!(system_fingerprint(&sys), system_fingerprint(&sys2));
    }

    #[test]
    fn relations_normalize_to_nonnegative_form() {
        let reg = VariableRegistry::standard(2, 0);
        let scalars = BTreeMap::new();
        let ctx = Ctx { reg: &reg, scalars: &scalars };
        let (p, strict, eq) = ctx.relation("x1^2 + x2^2 < 5", "t").unwrap();
        assert_eq!(p.to_string(), "-x1^2 - x2^2 + 5");
        assert!(strict && !eq);
        let (p, _, eq) = ctx.relation("x1 = x2", "t").unwrap();
        assert_eq!(p.to_string(), "x1 - x2");
        assert!(eq);
        let (p, strict, _) = ctx.relation("x1 <= -1", "t").unwrap();
        assert_eq!(p.to_string(), "-x1 - 1");
        assert!(!strict);
    }

    #[test]
    fn canonical_form_round_trips() {
        let sys = load_system(SMALL, &BTreeMap::new()).unwrap();
        let text = serde_json::to_string_pretty(&to_system_file(&sys)).unwrap();
        let again = load_system(&text, &BTreeMap::new()).unwrap();
        assert_eq!(system_fingerprint(&sys), system_fingerprint(&again));
        assert_eq!(sys, again);
    }

    #[test]
    fn errors_point_at_the_field() {
        let bad = SMALL.replace("\"-1\", \"x2\"", "\"-1\", \"x2 +\"");
        match load_system(&bad, &BTreeMap::new()) {
            Err(IoError::Expression { path, position, .. }) => {
                assert_eq!(path, "modes[0].field[1]");
                assert_eq!(position, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_system("{", &BTreeMap::new()), Err(IoError::Json { line: 1, .. })));
        let unknown = SMALL.replace("{C} + 10", "{D}");
        assert!(matches!(load_system(&unknown, &BTreeMap::new()), Err(IoError::Field { .. })));
    }
}
