//! Cyclic polynomial hybrid systems: modes with semialgebraic domains and
//! polynomial flows, edges with guards and resets, and an uncertain-parameter
//! set.
//!
//! Points passed to membership tests are split into the state `x` and the
//! parameter values `p`; polynomials are evaluated at the concatenation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::polynomial::{PolyError, Polynomial, PolynomialVector, VariableRegistry};

/// Absolute tolerance for equality membership.
pub const EQ_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HybridError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("invalid hybrid system: {0}")]
    Invalid(String),
    #[error("unknown mode id {0}")]
    UnknownMode(usize),
}

/// `poly >= 0`, or `poly > 0` when `strict`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequality {
    pub poly: Polynomial,
    pub strict: bool,
}

impl Inequality {
    pub fn new(poly: Polynomial, strict: bool) -> Self {
        Self { poly, strict }
    }

    /// Membership with the strictness flag honored exactly.
    pub fn holds(&self, point: &[f64]) -> bool {
        let v = self.poly.eval_unchecked(point);
        if self.strict {
            v > 0.0
        } else {
            v >= 0.0
        }
    }
}

/// Conjunction of polynomial inequalities and equalities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemialgebraicSet {
    pub inequalities: Vec<Inequality>,
    pub equalities: Vec<Polynomial>,
}

impl SemialgebraicSet {
    pub fn new(inequalities: Vec<Inequality>, equalities: Vec<Polynomial>) -> Self {
        Self { inequalities, equalities }
    }

    /// Exact membership (strict flags honored, equalities within `eq_tol`).
    pub fn contains_with_tol(&self, point: &[f64], eq_tol: f64) -> bool {
        self.inequalities.iter().all(|g| g.holds(point))
            && self.equalities.iter().all(|h| h.eval_unchecked(point).abs() <= eq_tol)
    }

    /// Membership in the closure, allowing inequality slack `tol`.
    pub fn closure_contains(&self, point: &[f64], tol: f64) -> bool {
        self.inequalities.iter().all(|g| g.poly.eval_unchecked(point) >= -tol)
            && self.equalities.iter().all(|h| h.eval_unchecked(point).abs() <= tol.max(EQ_TOL))
    }
}

/// Checked membership: `point = x ++ p` must match the registry size.
pub fn contains(set: &SemialgebraicSet, reg: &VariableRegistry, x: &[f64], p: &[f64]) -> Result<bool, HybridError> {
    let pt = full_point(reg, x, p)?;
    Ok(set.contains_with_tol(&pt, EQ_TOL))
}

pub fn full_point(reg: &VariableRegistry, x: &[f64], p: &[f64]) -> Result<Vec<f64>, PolyError> {
    if x.len() != reg.n_state() {
        return Err(PolyError::DimensionMismatch { expected: reg.n_state(), got: x.len() });
    }
    if p.len() != reg.n_params() {
        return Err(PolyError::DimensionMismatch { expected: reg.n_params(), got: p.len() });
    }
    Ok(x.iter().chain(p).copied().collect())
}

/// `h0 = 0` together with `h_k >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardSet {
    pub equality: Polynomial,
    pub inequalities: Vec<Inequality>,
}

impl GuardSet {
    pub fn as_set(&self) -> SemialgebraicSet {
        SemialgebraicSet::new(self.inequalities.clone(), vec![self.equality.clone()])
    }
}

/// Uncertain parameters `{p : p~_k(p) >= 0}` with a bounded sampling box.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    pub constraints: Vec<Inequality>,
    /// Per-parameter `[lo, hi]` used for sampling; the algebraic certificate covers all of the set.
    pub sample_box: Vec<(f64, f64)>,
}

impl ParameterSet {
    /// Membership of the parameter coordinates of a full registry point.
    pub fn contains(&self, point: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.holds(point))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub id: usize,
    /// Union of semialgebraic pieces; a single piece in the common case.
    pub domain: Vec<SemialgebraicSet>,
    pub field: PolynomialVector,
    pub neighborhood: SemialgebraicSet,
    pub anchor: Vec<f64>,
}

impl Mode {
    pub fn domain_contains(&self, point: &[f64]) -> bool {
        self.domain.iter().any(|d| d.contains_with_tol(point, EQ_TOL))
    }

    pub fn domain_closure_contains(&self, point: &[f64], tol: f64) -> bool {
        self.domain.iter().any(|d| d.closure_contains(point, tol))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub guard: GuardSet,
    pub reset: PolynomialVector,
    /// Suggested contraction constant for this edge's source mode.
    pub r_hint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridSystem {
    pub name: String,
    pub registry: Arc<VariableRegistry>,
    pub modes: Vec<Mode>,
    pub edges: Vec<Edge>,
    pub parameters: ParameterSet,
    /// Per-state `[lo, hi]` box enclosing the neighborhoods, used for sampling.
    pub state_box: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeEquilibriumCheck {
    pub from: usize,
    pub to: usize,
    /// `z_from` lies in the closure of the guard.
    pub on_guard: bool,
    /// `phi_e(z_from) = z_to` within tolerance.
    pub reset_consistent: bool,
    pub reset_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeEquilibriumCheck {
    pub id: usize,
    /// Informational only: the certificate conditions do not require it.
    pub field_nonzero: bool,
    pub field_at_anchor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZenoEquilibriumReport {
    pub edges: Vec<EdgeEquilibriumCheck>,
    pub modes: Vec<ModeEquilibriumCheck>,
}

impl ZenoEquilibriumReport {
    /// Guard membership and reset consistency hold on every edge.
    pub fn is_consistent(&self) -> bool {
        self.edges.iter().all(|e| e.on_guard && e.reset_consistent)
    }
}

impl HybridSystem {
    pub fn n_state(&self) -> usize {
        self.registry.n_state()
    }

    pub fn mode_index(&self, id: usize) -> Result<usize, HybridError> {
        self.modes.iter().position(|m| m.id == id).ok_or(HybridError::UnknownMode(id))
    }

    pub fn mode(&self, id: usize) -> Result<&Mode, HybridError> {
        Ok(&self.modes[self.mode_index(id)?])
    }

    /// The unique outgoing edge of a mode in a valid cyclic system.
    pub fn outgoing(&self, id: usize) -> Option<&Edge> {
        self.edges.iter().find(|e| e.from == id)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let n = self.n_state();
        let reg = &self.registry;
        let mut ids = BTreeMap::new();
        for m in &self.modes {
            if ids.insert(m.id, ()).is_some() {
                v.push(format!("duplicate mode id {}", m.id));
            }
            if m.field.len() != n {
                v.push(format!("mode {}: vector field has {} components, expected {n}", m.id, m.field.len()));
            }
            if m.anchor.len() != n {
                v.push(format!("mode {}: anchor has {} entries, expected {n}", m.id, m.anchor.len()));
            }
            if m.domain.is_empty() {
                v.push(format!("mode {}: domain has no pieces", m.id));
            }
            if !m.neighborhood.inequalities.iter().all(|w| w.poly.only_uses(&reg.state_indices())) {
                v.push(format!("mode {}: neighborhood polynomials must not depend on parameters", m.id));
            }
        }
        if self.modes.is_empty() {
            v.push("system has no modes".into());
        }
        for e in &self.edges {
            for end in [e.from, e.to] {
                if !ids.contains_key(&end) {
                    v.push(format!("edge ({}, {}): unknown mode {end}", e.from, e.to));
                }
            }
            if e.guard.equality.is_zero() {
                v.push(format!("edge ({}, {}): guard equality is missing or identically zero", e.from, e.to));
            }
            if e.reset.len() != n {
                v.push(format!("edge ({}, {}): reset has {} components, expected {n}", e.from, e.to, e.reset.len()));
            }
            if let Some(r) = e.r_hint {
                if !(r > 0.0 && r <= 1.0) {
                    v.push(format!("edge ({}, {}): r hint {r} outside (0, 1]", e.from, e.to));
                }
            }
        }
        for m in &self.modes {
            let out = self.edges.iter().filter(|e| e.from == m.id).count();
            if out != 1 {
                v.push(format!("mode {} has {out} outgoing edges, expected exactly 1", m.id));
            }
        }
        if v.is_empty() {
            // Single directed cycle through every mode.
            let start = *ids.keys().next().expect("nonempty");
            let mut seen = vec![start];
            let mut cur = start;
            loop {
                let next = self.outgoing(cur).expect("out-degree checked").to;
                if next == start {
                    break;
                }
                if seen.contains(&next) {
                    v.push(format!("edges form a cycle that does not return to mode {start}"));
                    break;
                }
                seen.push(next);
                cur = next;
            }
            if seen.len() != self.modes.len() && v.is_empty() {
                v.push(format!("cycle through mode {start} covers {} of {} modes", seen.len(), self.modes.len()));
            }
        }
        let params = reg.param_indices();
        for c in &self.parameters.constraints {
            if !c.poly.only_uses(&params) {
                v.push(format!("parameter constraint {} involves state variables", c.poly));
            }
        }
        if self.state_box.len() != n || self.state_box.iter().any(|(lo, hi)| !(lo < hi)) {
            v.push(format!("state sampling box must have {n} nonempty intervals"));
        }
        if self.parameters.sample_box.len() != reg.n_params()
            || self.parameters.sample_box.iter().any(|(lo, hi)| !(lo <= hi))
        {
            v.push("parameter sampling box must give one interval per parameter".into());
        }
        ValidationReport { violations: v }
    }

    /// Mode ids in traversal order starting from the lowest id.
    pub fn cycle_order(&self) -> Result<Vec<usize>, HybridError> {
        let report = self.validate();
        if !report.is_valid() {
            return Err(HybridError::Invalid(report.violations.join("; ")));
        }
        let start = self.modes.iter().map(|m| m.id).min().expect("valid system has modes");
        let mut order = vec![start];
        let mut cur = self.outgoing(start).expect("valid").to;
        while cur != start {
            order.push(cur);
            cur = self.outgoing(cur).expect("valid").to;
        }
        Ok(order)
    }

    /// Checks the Zeno-equilibrium conditions for per-mode points `z` at parameter `p`.
    pub fn check_zeno_equilibrium(
        &self,
        z: &BTreeMap<usize, Vec<f64>>,
        p: &[f64],
    ) -> Result<ZenoEquilibriumReport, HybridError> {
        let mut edges = Vec::new();
        for e in &self.edges {
            let zf = z.get(&e.from).ok_or(HybridError::UnknownMode(e.from))?;
            let zt = z.get(&e.to).ok_or(HybridError::UnknownMode(e.to))?;
            let pt = full_point(&self.registry, zf, p)?;
            let on_guard = e.guard.as_set().closure_contains(&pt, EQ_TOL);
            let img = e.reset.evaluate(&pt)?;
            let err = img.iter().zip(zt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            edges.push(EdgeEquilibriumCheck {
                from: e.from,
                to: e.to,
                on_guard,
                reset_consistent: err <= EQ_TOL,
                reset_error: err,
            });
        }
        let mut modes = Vec::new();
        for m in &self.modes {
            let zq = z.get(&m.id).ok_or(HybridError::UnknownMode(m.id))?;
            let pt = full_point(&self.registry, zq, p)?;
            let f = m.field.evaluate(&pt)?;
            modes.push(ModeEquilibriumCheck {
                id: m.id,
                field_nonzero: f.iter().any(|v| *v != 0.0),
                field_at_anchor: f,
            });
        }
        Ok(ZenoEquilibriumReport { edges, modes })
    }

    /// Anchors keyed by mode id.
    pub fn anchors(&self) -> BTreeMap<usize, Vec<f64>> {
        self.modes.iter().map(|m| (m.id, m.anchor.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> Arc<VariableRegistry> {
        VariableRegistry::standard(2, 0)
    }

    fn poly(r: &Arc<VariableRegistry>, s: &str) -> Polynomial {
        Polynomial::parse(r, s).unwrap()
    }

    fn ineq(r: &Arc<VariableRegistry>, s: &str, strict: bool) -> Inequality {
        Inequality::new(poly(r, s), strict)
    }

    fn simple_mode(r: &Arc<VariableRegistry>, id: usize) -> Mode {
        Mode {
            id,
            domain: vec![SemialgebraicSet::default()],
            field: PolynomialVector::new(vec![poly(r, "1"), poly(r, "0")]).unwrap(),
            neighborhood: SemialgebraicSet::default(),
            anchor: vec![0.0, 0.0],
        }
    }

    fn edge(r: &Arc<VariableRegistry>, from: usize, to: usize) -> Edge {
        Edge {
            from,
            to,
            guard: GuardSet { equality: poly(r, "x1"), inequalities: vec![] },
            reset: PolynomialVector::identity(r),
            r_hint: None,
        }
    }

    fn system(modes: &[usize], edges: &[(usize, usize)]) -> HybridSystem {
        let r = reg();
        HybridSystem {
            name: "t".into(),
            modes: modes.iter().map(|&i| simple_mode(&r, i)).collect(),
            edges: edges.iter().map(|&(a, b)| edge(&r, a, b)).collect(),
            parameters: ParameterSet::default(),
            state_box: vec![(-1.0, 1.0); 2],
            registry: r,
        }
    }

    #[test]
    fn missing_outgoing_edge_is_reported() {
        let s = system(&[1, 2], &[(1, 2)]);
        let rep = s.validate();
        assert!(!rep.is_valid());
        assert!(rep.violations.iter().any(|v| v.contains("mode 2 has 0 outgoing")));
    }

    #[test]
    fn two_disjoint_cycles_are_rejected() {
        let s = system(&[1, 2, 3, 4], &[(1, 2), (2, 1), (3, 4), (4, 3)]);
        assert!(!s.validate().is_valid());
        assert!(s.cycle_order().is_err());
    }

    #[test]
    fn cycle_order_starts_at_lowest_id() {
        assert_eq!(system(&[1], &[(1, 1)]).cycle_order().unwrap(), vec![1]);
        assert_eq!(system(&[3, 1, 2], &[(3, 2), (2, 1), (1, 3)]).cycle_order().unwrap(), vec![1, 3, 2]);
    }

    #[test]
    fn strict_membership_implies_closure_membership() {
        let r = reg();
        let set = SemialgebraicSet::new(vec![ineq(&r, "x1", true), ineq(&r, "x2 + 0.5*x1", false)], vec![]);
        assert!(contains(&set, &r, &[1.0, 0.0], &[]).unwrap());
        assert!(!contains(&set, &r, &[0.0, 1.0], &[]).unwrap());
        assert!(set.closure_contains(&[0.0, 1.0], 0.0));
        assert!(contains(&set, &r, &[1.0], &[]).is_err());
    }

    #[test]
    fn equilibrium_off_guard_is_flagged() {
        let s = system(&[1], &[(1, 1)]);
        let mut z = BTreeMap::new();
        z.insert(1, vec![0.5, 0.0]);
        let rep = s.check_zeno_equilibrium(&z, &[]).unwrap();
        assert!(!rep.edges[0].on_guard);
        assert!(rep.edges[0].reset_consistent);
        z.insert(1, vec![0.0, 0.3]);
        let rep = s.check_zeno_equilibrium(&z, &[]).unwrap();
        assert!(rep.is_consistent());
        assert!(rep.modes[0].field_nonzero);
    }
}
