//! Sum-of-squares programs and their lowering to block-diagonal SDPs.
//!
//! An [`SosProgram`] collects unknown polynomials (free-coefficient templates
//! and Gram-parameterized SOS polynomials), scalar unknowns, and constraints
//! of the form "this expression, affine in the unknowns, is SOS". Lowering
//! matches coefficients of every asserted expression against `Zᵀ Q Z` with a
//! fresh PSD block `Q`, where the basis `Z` is trimmed by a Newton bounding-box
//! test on the expression's support.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;
use zenocert_sdp::{Entry, Functional, SdpError, SdpInstance, SdpSolution, SolveStatus};

use crate::polynomial::{monomial_basis, Monomial, PolyError, Polynomial, PolynomialVector, VariableRegistry};

/// Default weight of the trace term in the feasibility objective.
pub const TRACE_REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SosError {
    #[error("expression is not affine in the unknowns: {left} multiplied by {right}")]
    NonAffine { left: String, right: String },
    #[error("SOS template degree must be even, got {0}")]
    OddDegree(u32),
    #[error("template degree must be at least 1")]
    ZeroDegree,
    #[error("solution has {got} blocks, expected {expected}")]
    MissingBlocks { expected: usize, got: usize },
    #[error("cannot reconstruct from a solution with status {0:?}")]
    NotFeasible(SolveStatus),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

pub type Result<T> = std::result::Result<T, SosError>;

/// Scalar unknown of an SOS program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// Unconstrained scalar (template coefficient or named scalar).
    Free(usize),
    /// Entry `Q[i][j]`, `i <= j`, of a symmetric PSD block.
    Gram { block: usize, i: usize, j: usize },
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Free(k) => write!(f, "free[{k}]"),
            Var::Gram { block, i, j } => write!(f, "Q{block}[{i},{j}]"),
        }
    }
}

/// Affine scalar expression `constant + Σ coeff·var`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: BTreeMap<Var, f64>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { constant: c, terms: BTreeMap::new() }
    }

    pub fn var(v: Var) -> Self {
        let mut e = LinExpr::default();
        e.add_term(v, 1.0);
        e
    }

    pub fn add_term(&mut self, v: Var, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.terms.entry(v).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.terms.remove(&v);
        }
    }

    /// `self + scale·other`.
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) {
        self.constant += scale * other.constant;
        for (&v, &c) in &other.terms {
            self.add_term(v, scale * c);
        }
    }

    pub fn eval(&self, value: impl Fn(Var) -> f64) -> f64 {
        self.constant + self.terms.iter().map(|(&v, &c)| c * value(v)).sum::<f64>()
    }
}

/// Polynomial whose coefficients are affine in the unknowns, stored as
/// `constant + Σ_var var·coeffs[var]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePoly {
    constant: Polynomial,
    coeffs: BTreeMap<Var, Polynomial>,
}

impl AffinePoly {
    pub fn zero(reg: &Arc<VariableRegistry>) -> Self {
        AffinePoly { constant: Polynomial::zero(reg), coeffs: BTreeMap::new() }
    }

    pub fn from_poly(p: Polynomial) -> Self {
        AffinePoly { constant: p, coeffs: BTreeMap::new() }
    }

    /// `var · p`.
    pub fn from_var(v: Var, p: Polynomial) -> Self {
        let mut out = AffinePoly::zero(p.registry());
        if !p.is_zero() {
            out.coeffs.insert(v, p);
        }
        out
    }

    /// Scalar unknown as a constant polynomial.
    pub fn scalar(reg: &Arc<VariableRegistry>, v: Var) -> Self {
        AffinePoly::from_var(v, Polynomial::constant(reg, 1.0))
    }

    pub fn registry(&self) -> &Arc<VariableRegistry> {
        self.constant.registry()
    }

    pub fn known_part(&self) -> &Polynomial {
        &self.constant
    }

    pub fn coefficients(&self) -> &BTreeMap<Var, Polynomial> {
        &self.coeffs
    }

    pub fn has_unknowns(&self) -> bool {
        !self.coeffs.is_empty()
    }

    fn combine(&self, other: &AffinePoly, sign: f64) -> Result<AffinePoly> {
        let mut out = self.clone();
        out.constant = out.constant.add(&other.constant.scale(sign))?;
        for (&v, p) in &other.coeffs {
            let merged = match out.coeffs.get(&v) {
                Some(q) => q.add(&p.scale(sign))?,
                None => p.scale(sign),
            };
            if merged.is_zero() {
                out.coeffs.remove(&v);
            } else {
                out.coeffs.insert(v, merged);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &AffinePoly) -> Result<AffinePoly> {
        self.combine(other, 1.0)
    }

    pub fn sub(&self, other: &AffinePoly) -> Result<AffinePoly> {
        self.combine(other, -1.0)
    }

    pub fn scale(&self, c: f64) -> AffinePoly {
        self.map(|p| Ok(p.scale(c))).expect("scaling cannot fail")
    }

    fn map(&self, f: impl Fn(&Polynomial) -> std::result::Result<Polynomial, PolyError>) -> Result<AffinePoly> {
        let mut coeffs = BTreeMap::new();
        for (&v, p) in &self.coeffs {
            let q = f(p)?;
            if !q.is_zero() {
                coeffs.insert(v, q);
            }
        }
        Ok(AffinePoly { constant: f(&self.constant)?, coeffs })
    }

    pub fn mul_poly(&self, p: &Polynomial) -> Result<AffinePoly> {
        self.map(|q| q.mul(p))
    }

    /// Product of two affine polynomials; fails if both carry unknowns.
    pub fn mul(&self, other: &AffinePoly) -> Result<AffinePoly> {
        match (self.coeffs.keys().next(), other.coeffs.keys().next()) {
            (Some(a), Some(b)) => Err(SosError::NonAffine { left: a.to_string(), right: b.to_string() }),
            (None, _) => other.mul_poly(&self.constant),
            (_, None) => self.mul_poly(&other.constant),
        }
    }

    /// Substitutes `subst` for the state variables.
    pub fn compose(&self, subst: &PolynomialVector) -> Result<AffinePoly> {
        self.map(|p| p.compose(subst))
    }

    /// `∇self · field` over the state variables.
    pub fn gradient_dot(&self, field: &PolynomialVector) -> Result<AffinePoly> {
        self.map(|p| p.gradient().dot(field))
    }

    /// Union of the supports of every coefficient polynomial.
    pub fn support(&self) -> BTreeSet<Monomial> {
        let mut s: BTreeSet<Monomial> = self.constant.terms().map(|(m, _)| m.clone()).collect();
        for p in self.coeffs.values() {
            s.extend(p.terms().map(|(m, _)| m.clone()));
        }
        s
    }

    /// Coefficient of each monomial as an affine expression in the unknowns.
    pub fn by_monomial(&self) -> BTreeMap<Monomial, LinExpr> {
        let mut out: BTreeMap<Monomial, LinExpr> = BTreeMap::new();
        for (m, c) in self.constant.terms() {
            out.entry(m.clone()).or_default().constant += c;
        }
        for (&v, p) in &self.coeffs {
            for (m, c) in p.terms() {
                out.entry(m.clone()).or_default().add_term(v, c);
            }
        }
        out
    }

    /// Concrete polynomial for given unknown values.
    pub fn instantiate(&self, value: impl Fn(Var) -> f64) -> Polynomial {
        let mut out = self.constant.clone();
        for (&v, p) in &self.coeffs {
            for (m, c) in p.terms() {
                out.add_term(m.clone(), c * value(v));
            }
        }
        out
    }
}

/// Structural filters for [`make_template`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TemplateFlags {
    /// Drop the constant monomial.
    pub no_constant: bool,
    /// Keep only monomials of even total degree.
    pub even_only: bool,
    /// Drop every monomial containing a parameter.
    pub state_only: bool,
}

/// Monomial support of a free-coefficient polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub vars: Vec<usize>,
    pub support: Vec<Monomial>,
}

/// Gram basis of an SOS polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct SosTemplate {
    pub vars: Vec<usize>,
    pub basis: Vec<Monomial>,
}

/// Full support of total degree ≤ `degree` over `vars`, filtered by `flags`.
pub fn make_template(reg: &VariableRegistry, vars: &[usize], degree: u32, flags: TemplateFlags) -> Result<Template> {
    if degree == 0 {
        return Err(SosError::ZeroDegree);
    }
    let vars: Vec<usize> =
        if flags.state_only { vars.iter().copied().filter(|&v| !reg.is_param(v)).collect() } else { vars.to_vec() };
    let support = monomial_basis(reg.len(), &vars, degree)
        .into_iter()
        .filter(|m| !(flags.no_constant && m.is_one()))
        .filter(|m| !flags.even_only || m.degree() % 2 == 0)
        .collect();
    Ok(Template { vars, support })
}

/// Basis of all monomials of degree ≤ `degree / 2` over `vars`.
pub fn make_sos_template(reg: &VariableRegistry, vars: &[usize], degree: u32) -> Result<SosTemplate> {
    make_sos_template_capped(reg, vars, degree, None)
}

/// As [`make_sos_template`], optionally limiting the represented polynomial's
/// degree in the parameters to `max_param_degree`.
pub fn make_sos_template_capped(
    reg: &VariableRegistry,
    vars: &[usize],
    degree: u32,
    max_param_degree: Option<u32>,
) -> Result<SosTemplate> {
    if degree % 2 == 1 {
        return Err(SosError::OddDegree(degree));
    }
    let params = reg.param_indices();
    let basis = monomial_basis(reg.len(), vars, degree / 2)
        .into_iter()
        .filter(|m| max_param_degree.is_none_or(|cap| 2 * m.degree_in(&params) <= cap))
        .collect();
    Ok(SosTemplate { vars: vars.to_vec(), basis })
}

/// Gram basis for an expression with the given support: monomials `m` with
/// `2m` inside the support's per-variable and total-degree bounding box.
pub fn newton_basis(nvars: usize, support: &BTreeSet<Monomial>) -> Vec<Monomial> {
    if support.is_empty() {
        return Vec::new();
    }
    let mut lo = vec![u16::MAX; nvars];
    let mut hi = vec![0u16; nvars];
    let (mut dlo, mut dhi) = (u32::MAX, 0u32);
    for m in support {
        for (v, &e) in m.exponents().iter().enumerate() {
            lo[v] = lo[v].min(e);
            hi[v] = hi[v].max(e);
        }
        dlo = dlo.min(m.degree());
        dhi = dhi.max(m.degree());
    }
    let vars: Vec<usize> = (0..nvars).filter(|&v| hi[v] >= 2).collect();
    monomial_basis(nvars, &vars, dhi / 2)
        .into_iter()
        .filter(|m| {
            let d2 = 2 * m.degree();
            d2 >= dlo
                && m.exponents().iter().enumerate().all(|(v, &e)| {
                    let e2 = 2 * e;
                    e2 >= lo[v] && e2 <= hi[v]
                })
        })
        .collect()
}

/// Polynomial with one free unknown per support monomial.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionPolynomial {
    pub id: usize,
    pub label: String,
    pub vars: Vec<usize>,
    pub support: Vec<Monomial>,
    /// Free-variable index of each support coefficient.
    pub unknowns: Vec<usize>,
}

impl DecisionPolynomial {
    pub fn as_affine(&self, reg: &Arc<VariableRegistry>) -> AffinePoly {
        let mut out = AffinePoly::zero(reg);
        for (m, &k) in self.support.iter().zip(&self.unknowns) {
            out.coeffs.insert(Var::Free(k), Polynomial::monomial(reg, m.clone(), 1.0));
        }
        out
    }
}

/// Polynomial `Zᵀ Q Z` with `Q` a PSD block unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct SosDecisionPolynomial {
    pub id: usize,
    pub label: String,
    pub basis: Vec<Monomial>,
    pub block: usize,
}

impl SosDecisionPolynomial {
    pub fn as_affine(&self, reg: &Arc<VariableRegistry>) -> AffinePoly {
        gram_affine(reg, self.block, &self.basis)
    }
}

fn gram_affine(reg: &Arc<VariableRegistry>, block: usize, basis: &[Monomial]) -> AffinePoly {
    let mut out = AffinePoly::zero(reg);
    for i in 0..basis.len() {
        for j in i..basis.len() {
            let c = if i == j { 1.0 } else { 2.0 };
            out.coeffs.insert(Var::Gram { block, i, j }, Polynomial::monomial(reg, basis[i].mul(&basis[j]), c));
        }
    }
    out
}

/// Expression asserted to be a sum of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct SosConstraint {
    pub label: String,
    pub expr: AffinePoly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    /// `expr = 0`.
    Eq,
    /// `expr >= 0`.
    Geq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub label: String,
    pub expr: LinExpr,
    pub kind: LinearKind,
}

/// Collection of unknowns and constraints to be lowered together.
#[derive(Debug, Clone)]
pub struct SosProgram {
    reg: Arc<VariableRegistry>,
    free_labels: Vec<String>,
    decisions: Vec<DecisionPolynomial>,
    sos_unknowns: Vec<SosDecisionPolynomial>,
    sos_constraints: Vec<SosConstraint>,
    linear: Vec<LinearConstraint>,
    /// Weight of the trace term in the objective.
    pub trace_weight: f64,
}

impl SosProgram {
    pub fn new(reg: &Arc<VariableRegistry>) -> Self {
        SosProgram {
            reg: reg.clone(),
            free_labels: Vec::new(),
            decisions: Vec::new(),
            sos_unknowns: Vec::new(),
            sos_constraints: Vec::new(),
            linear: Vec::new(),
            trace_weight: TRACE_REGULARIZATION,
        }
    }

    pub fn registry(&self) -> &Arc<VariableRegistry> {
        &self.reg
    }

    /// New free scalar unknown.
    pub fn scalar(&mut self, label: &str) -> Var {
        self.free_labels.push(label.to_string());
        Var::Free(self.free_labels.len() - 1)
    }

    pub fn decision(&mut self, label: &str, template: &Template) -> DecisionPolynomial {
        let unknowns = template
            .support
            .iter()
            .map(|m| match self.scalar(&format!("{label}[{}]", m.to_text(&self.reg))) {
                Var::Free(k) => k,
                Var::Gram { .. } => unreachable!(),
            })
            .collect();
        let d = DecisionPolynomial {
            id: self.decisions.len(),
            label: label.to_string(),
            vars: template.vars.clone(),
            support: template.support.clone(),
            unknowns,
        };
        self.decisions.push(d.clone());
        d
    }

    pub fn sos_unknown(&mut self, label: &str, template: &SosTemplate) -> SosDecisionPolynomial {
        let s = SosDecisionPolynomial {
            id: self.sos_unknowns.len(),
            label: label.to_string(),
            basis: template.basis.clone(),
            block: self.sos_unknowns.len(),
        };
        self.sos_unknowns.push(s.clone());
        s
    }

    pub fn add_sos(&mut self, label: &str, expr: AffinePoly) {
        self.sos_constraints.push(SosConstraint { label: label.to_string(), expr });
    }

    pub fn add_linear(&mut self, label: &str, expr: LinExpr, kind: LinearKind) {
        self.linear.push(LinearConstraint { label: label.to_string(), expr, kind });
    }

    pub fn decisions(&self) -> &[DecisionPolynomial] {
        &self.decisions
    }

    pub fn sos_unknowns(&self) -> &[SosDecisionPolynomial] {
        &self.sos_unknowns
    }

    pub fn sos_constraints(&self) -> &[SosConstraint] {
        &self.sos_constraints
    }

    pub fn linear_constraints(&self) -> &[LinearConstraint] {
        &self.linear
    }

    pub fn free_label(&self, k: usize) -> &str {
        &self.free_labels[k]
    }

    pub fn n_free(&self) -> usize {
        self.free_labels.len()
    }

    /// Lowers every constraint to coefficient-matching rows of one SDP.
    pub fn lower(&self) -> Result<Lowered> {
        let mut blocks: Vec<usize> = self.sos_unknowns.iter().map(|s| s.basis.len()).collect();
        let mut rows: Vec<(Functional, f64)> = Vec::new();
        let mut constraints = Vec::with_capacity(self.sos_constraints.len());
        let nvars = self.reg.len();
        for c in &self.sos_constraints {
            let support = c.expr.support();
            let basis = newton_basis(nvars, &support);
            let block = if basis.is_empty() {
                None
            } else {
                blocks.push(basis.len());
                Some(blocks.len() - 1)
            };
            let mut by_mono = c.expr.by_monomial();
            if let Some(b) = block {
                for (&v, p) in &gram_affine(&self.reg, b, &basis).coeffs {
                    for (m, coef) in p.terms() {
                        by_mono.entry(m.clone()).or_default().add_term(v, -coef);
                    }
                }
            }
            let start = rows.len();
            for e in by_mono.values() {
                rows.push((functional(e), -e.constant));
            }
            constraints.push(LoweredConstraint {
                block,
                basis,
                rows: start..rows.len(),
                monomials: by_mono.into_keys().collect(),
            });
        }
        let mut linear_rows = Vec::with_capacity(self.linear.len());
        let mut slack_blocks = Vec::new();
        for l in &self.linear {
            let mut e = l.expr.clone();
            if l.kind == LinearKind::Geq {
                blocks.push(1);
                let b = blocks.len() - 1;
                slack_blocks.push(b);
                e.add_term(Var::Gram { block: b, i: 0, j: 0 }, -1.0);
            }
            linear_rows.push(rows.len());
            rows.push((functional(&e), -e.constant));
        }
        let mut inst = SdpInstance::new(blocks.clone(), self.free_labels.len());
        for (f, rhs) in rows {
            inst.add_row(f, rhs);
        }
        if self.trace_weight != 0.0 {
            for (b, &n) in blocks.iter().enumerate() {
                for i in 0..n {
                    inst.objective.entries.push(Entry { block: b, i, j: i, value: self.trace_weight });
                }
            }
        }
        inst.validate()?;
        Ok(Lowered { instance: inst, constraints, linear_rows, slack_blocks })
    }

    /// Instantiates every unknown from an optimal solution of [`SosProgram::lower`]'s SDP.
    pub fn reconstruct(&self, lowered: &Lowered, sol: &SdpSolution) -> Result<Reconstruction> {
        if sol.status != SolveStatus::Optimal {
            return Err(SosError::NotFeasible(sol.status));
        }
        let expected = lowered.instance.blocks.len();
        if sol.x.len() != expected {
            return Err(SosError::MissingBlocks { expected, got: sol.x.len() });
        }
        if sol.free.len() != self.free_labels.len() {
            return Err(SosError::MissingBlocks { expected: self.free_labels.len(), got: sol.free.len() });
        }
        let values = Values { free: sol.free.clone(), blocks: sol.x.clone() };
        let decisions = self.decisions.iter().map(|d| values.instantiate(&d.as_affine(&self.reg))).collect();
        let sos_unknowns = self
            .sos_unknowns
            .iter()
            .map(|s| SosValue {
                poly: values.instantiate(&s.as_affine(&self.reg)),
                gram: sol.x[s.block].clone(),
                min_eigenvalue: min_eigenvalue(&sol.x[s.block]),
            })
            .collect();
        let constraints = self
            .sos_constraints
            .iter()
            .zip(&lowered.constraints)
            .map(|(c, lc)| {
                let value = values.instantiate(&c.expr);
                let (gram, min_eig) = match lc.block {
                    Some(b) => polished(&self.reg, &lc.basis, &sol.x[b], &value),
                    None => (DMatrix::zeros(0, 0), 0.0),
                };
                let square = gram_polynomial(&self.reg, &lc.basis, &gram);
                let coefficient_error = (&value - &square).max_abs_coefficient();
                ConstraintReport {
                    label: c.label.clone(),
                    value,
                    basis: lc.basis.clone(),
                    gram,
                    coefficient_error,
                    min_eigenvalue: min_eig,
                }
            })
            .collect();
        let linear_residuals = self.linear.iter().map(|l| (l.label.clone(), values.linear(&l.expr))).collect();
        Ok(Reconstruction { values, decisions, sos_unknowns, constraints, linear_residuals })
    }
}

fn functional(e: &LinExpr) -> Functional {
    let mut f = Functional::default();
    for (&v, &c) in &e.terms {
        match v {
            Var::Free(k) => f.free.push((k, c)),
            Var::Gram { block, i, j } => f.entries.push(Entry { block, i, j, value: c }),
        }
    }
    f
}

/// Lowering record of one SOS constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredConstraint {
    /// PSD block of the expression's Gram matrix (absent when the basis is empty).
    pub block: Option<usize>,
    pub basis: Vec<Monomial>,
    /// Rows of the SDP holding this constraint's coefficient matches.
    pub rows: std::ops::Range<usize>,
    /// Monomial matched by each row.
    pub monomials: Vec<Monomial>,
}

/// SDP produced by [`SosProgram::lower`] together with the back-map.
#[derive(Debug, Clone)]
pub struct Lowered {
    pub instance: SdpInstance,
    pub constraints: Vec<LoweredConstraint>,
    /// Row index of each linear constraint.
    pub linear_rows: Vec<usize>,
    /// Slack block of each inequality linear constraint.
    pub slack_blocks: Vec<usize>,
}

/// Values of all scalar unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub free: Vec<f64>,
    pub blocks: Vec<DMatrix<f64>>,
}

impl Values {
    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::Free(k) => self.free[k],
            Var::Gram { block, i, j } => self.blocks[block][(i, j)],
        }
    }

    pub fn instantiate(&self, p: &AffinePoly) -> Polynomial {
        p.instantiate(|v| self.get(v))
    }

    pub fn linear(&self, e: &LinExpr) -> f64 {
        e.eval(|v| self.get(v))
    }
}

/// Concrete SOS unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct SosValue {
    pub poly: Polynomial,
    pub gram: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

/// Residual report for one asserted-SOS expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub label: String,
    /// The expression with all unknowns substituted.
    pub value: Polynomial,
    pub basis: Vec<Monomial>,
    pub gram: DMatrix<f64>,
    /// Largest coefficient of `value − Zᵀ Q Z`.
    pub coefficient_error: f64,
    pub min_eigenvalue: f64,
}

/// All unknowns instantiated from a solution, with residuals.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub values: Values,
    pub decisions: Vec<Polynomial>,
    pub sos_unknowns: Vec<SosValue>,
    pub constraints: Vec<ConstraintReport>,
    /// Value of each linear constraint expression.
    pub linear_residuals: Vec<(String, f64)>,
}

impl Reconstruction {
    pub fn max_coefficient_error(&self) -> f64 {
        self.constraints.iter().map(|c| c.coefficient_error).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.min_eigenvalue)
            .chain(self.sos_unknowns.iter().map(|s| s.min_eigenvalue))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// `Zᵀ Q Z` as a polynomial.
/// Smallest Frobenius-norm change of `q` after which its Gram form matches
/// `target` on every monomial reachable as a product of two basis elements.
/// Each entry feeds exactly one monomial, so the correction spreads each
/// monomial's residual evenly over the entries that produce it.
pub fn polish_gram(reg: &Arc<VariableRegistry>, basis: &[Monomial], q: &mut DMatrix<f64>, target: &Polynomial) {
    let residual = target - &gram_polynomial(reg, basis, q);
    let mut pairs: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            pairs.entry(a.mul(b)).or_default().push((i, j));
        }
    }
    for (m, r) in residual.terms() {
        if let Some(entries) = pairs.get(m) {
            let d = r / entries.len() as f64;
            for &(i, j) in entries {
                q[(i, j)] += d;
            }
        }
    }
}

/// Like [`polish_gram`], but only moves `q` within the span of its
/// eigenvectors with eigenvalue above `rel_floor` times the largest, so the
/// near-null directions of a boundary solution are left alone. Solved in the
/// least-squares sense; returns `false` if the decomposition fails.
pub fn polish_gram_on_face(
    reg: &Arc<VariableRegistry>,
    basis: &[Monomial],
    q: &mut DMatrix<f64>,
    target: &Polynomial,
    rel_floor: f64,
) -> bool {
    let n = basis.len();
    if n == 0 {
        return true;
    }
    let eig = q.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let face: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > rel_floor * top).collect();
    if face.is_empty() {
        return false;
    }
    let mut pairs: BTreeMap<Monomial, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            pairs.entry(a.mul(b)).or_default().push((i, j));
        }
    }
    let residual = target - &gram_polynomial(reg, basis, q);
    let cols: Vec<(usize, usize)> = (0..face.len()).flat_map(|p| (p..face.len()).map(move |r| (p, r))).collect();
    let u = |k: usize, i: usize| eig.eigenvectors[(i, face[k])];
    let mut a = DMatrix::zeros(pairs.len(), cols.len());
    let mut rhs = nalgebra::DVector::zeros(pairs.len());
    for (row, (m, entries)) in pairs.iter().enumerate() {
        rhs[row] = residual.coefficient(m);
        for (col, &(p, r)) in cols.iter().enumerate() {
            a[(row, col)] = entries.iter().map(|&(i, j)| 0.5 * (u(p, i) * u(r, j) + u(r, i) * u(p, j))).sum();
        }
    }
    let Ok(x) = a.svd(true, true).solve(&rhs, 1e-12) else {
        return false;
    };
    for (col, &(p, r)) in cols.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] += x[col] * 0.5 * (u(p, i) * u(r, j) + u(r, i) * u(p, j));
            }
        }
    }
    true
}

/// Gram matrix with the coefficient residual against `target` removed where
/// that costs no PSD margin: over all entries if possible, else within the
/// solution's face for a decreasing eigenvalue floor, else unchanged.
fn polished(
    reg: &Arc<VariableRegistry>,
    basis: &[Monomial],
    q: &DMatrix<f64>,
    target: &Polynomial,
) -> (DMatrix<f64>, f64) {
    let raw = min_eigenvalue(q);
    let scale = q.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = raw.min(0.0) - 64.0 * f64::EPSILON * scale;
    let error = |m: &DMatrix<f64>| (target - &gram_polynomial(reg, basis, m)).max_abs_coefficient();
    let mut full = q.clone();
    polish_gram(reg, basis, &mut full, target);
    let eig = min_eigenvalue(&full);
    if eig >= floor {
        return (full, eig);
    }
    let mut best = (q.clone(), raw, error(q));
    for rel_floor in FACE_FLOORS {
        let mut face = q.clone();
        if !polish_gram_on_face(reg, basis, &mut face, target, rel_floor) {
            continue;
        }
        let (eig, err) = (min_eigenvalue(&face), error(&face));
        if eig >= floor && err < best.2 {
            best = (face, eig, err);
        }
    }
    (best.0, best.1)
}

/// Relative eigenvalue floors tried when restricting the polish to a face.
const FACE_FLOORS: [f64; 4] = [1e-6, 1e-9, 1e-12, 1e-15];

pub fn gram_polynomial(reg: &Arc<VariableRegistry>, basis: &[Monomial], q: &DMatrix<f64>) -> Polynomial {
    let mut out = Polynomial::zero(reg);
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            out.add_term(basis[i].mul(&basis[j]), q[(i, j)]);
        }
    }
    out
}

/// `Z(point)ᵀ Q Z(point)` evaluated directly.
pub fn gram_value(basis: &[Monomial], q: &DMatrix<f64>, point: &[f64]) -> f64 {
    let z: Vec<f64> = basis.iter().map(|m| m.eval(point)).collect();
    let mut s = 0.0;
    for i in 0..z.len() {
        for j in 0..z.len() {
            s += z[i] * q[(i, j)] * z[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use zenocert_sdp::{solve, SolverConfig};

    fn reg2() -> Arc<VariableRegistry> {
        VariableRegistry::standard(2, 0)
    }

    fn p(reg: &Arc<VariableRegistry>, s: &str) -> Polynomial {
        Polynomial::parse(reg, s).unwrap()
    }

    #[test]
    fn polishing_matches_reachable_coefficients_and_keeps_symmetry() {
        let reg = reg2();
        let basis = monomial_basis(2, &[0, 1], 1);
        let mut q = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 2.0, 0.3, 0.0, 0.3, 1.5]);
        // x1^3 is out of reach of the degree-1 basis and stays unmatched.
        let target = p(&reg, "1.001 + 0.2*x1 + 2*x1^2 + 0.61*x1*x2 + 1.5*x2^2 + x1^3");
        polish_gram(&reg, &basis, &mut q, &target);
        assert_eq!(q, q.transpose());
        let residual = &target - &gram_polynomial(&reg, &basis, &q);
        let left: Vec<(Monomial, f64)> =
            residual.terms().filter(|(_, c)| c.abs() > 1e-15).map(|(m, c)| (m.clone(), c)).collect();
        assert_eq!(left.len(), 1);
        assert_eq!(left[0].0, Monomial::from_exponents(vec![3, 0]));
    }

    #[test]
    fn template_examples() {
        let reg = reg2();
        let t = make_template(&reg, &[0, 1], 2, TemplateFlags { no_constant: true, ..Default::default() }).unwrap();
        let names: Vec<String> = t.support.iter().map(|m| m.to_text(&reg)).collect();
        assert_eq!(names, ["x1", "x2", "x1^2", "x1*x2", "x2^2"]);
        let t8 = make_template(&reg, &[0, 1], 8, TemplateFlags { no_constant: true, ..Default::default() }).unwrap();
        assert_eq!(t8.support.len(), 44);
        let regp = VariableRegistry::standard(1, 1);
        let ts = make_template(&regp, &[0, 1], 3, TemplateFlags { state_only: true, ..Default::default() }).unwrap();
        assert!(ts.support.iter().all(|m| m.exponents()[1] == 0));
        assert!(make_template(&reg, &[0], 0, TemplateFlags::default()).is_err());
    }

    #[test]
    fn sos_template_examples() {
        let reg = reg2();
        assert_eq!(make_sos_template(&reg, &[0, 1], 4).unwrap().basis.len(), 6);
        let one = make_sos_template(&reg, &[0], 2).unwrap();
        assert_eq!(one.basis.iter().map(|m| m.to_text(&reg)).collect::<Vec<_>>(), ["1", "x1"]);
        assert_eq!(make_sos_template(&reg, &[0, 1], 0).unwrap().basis.len(), 1);
        assert!(matches!(make_sos_template(&reg, &[0], 3), Err(SosError::OddDegree(3))));
        let regp = VariableRegistry::standard(2, 1);
        let capped = make_sos_template_capped(&regp, &[0, 1, 2], 4, Some(2)).unwrap();
        assert!(capped.basis.iter().all(|m| m.exponents()[2] <= 1));
        assert_eq!(capped.basis.len(), 6 + 3);
    }

    #[test]
    fn newton_box_trims_the_basis() {
        let reg = reg2();
        let q = p(&reg, "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1");
        let support: BTreeSet<Monomial> = q.terms().map(|(m, _)| m.clone()).collect();
        let basis = newton_basis(2, &support);
        let names: Vec<String> = basis.iter().map(|m| m.to_text(&reg)).collect();
        assert_eq!(names, ["1", "x1", "x2", "x1^2", "x1*x2", "x2^2", "x1^2*x2", "x1*x2^2"]);
        let even = p(&reg, "x1^2 + x2^2");
        let s: BTreeSet<Monomial> = even.terms().map(|(m, _)| m.clone()).collect();
        assert_eq!(newton_basis(2, &s).len(), 2);
    }

    #[test]
    fn products_of_unknowns_are_rejected() {
        let reg = reg2();
        let mut prog = SosProgram::new(&reg);
        let a = prog.scalar("a");
        let b = prog.scalar("b");
        let e = AffinePoly::scalar(&reg, a).mul(&AffinePoly::scalar(&reg, b));
        match e {
            Err(SosError::NonAffine { left, right }) => {
                assert_eq!(left, "free[0]");
                assert_eq!(right, "free[1]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_count_matches_support_union() {
        let reg = reg2();
        let mut prog = SosProgram::new(&reg);
        let t = make_template(&reg, &[0, 1], 2, TemplateFlags { no_constant: true, ..Default::default() }).unwrap();
        let v = prog.decision("v", &t);
        prog.add_sos("c", v.as_affine(&reg));
        let lowered = prog.lower().unwrap();
        // Support {x1,x2,x1²,x1x2,x2²}; basis {x1,x2}; union = support.
        assert_eq!(lowered.instance.n_rows(), 5);
        assert_eq!(lowered.constraints[0].basis.len(), 2);
    }

    #[test]
    fn forced_negative_constant_is_infeasible() {
        let reg = VariableRegistry::standard(1, 0);
        let mut prog = SosProgram::new(&reg);
        let c = prog.scalar("c");
        let expr = AffinePoly::from_poly(p(&reg, "x1^2")).add(&AffinePoly::scalar(&reg, c)).unwrap();
        prog.add_sos("s", expr);
        let mut fix = LinExpr::var(c);
        fix.constant = 1.0;
        prog.add_linear("c = -1", fix, LinearKind::Eq);
        let lowered = prog.lower().unwrap();
        let sol = solve(&lowered.instance, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
        assert!(matches!(prog.reconstruct(&lowered, &sol), Err(SosError::NotFeasible(_))));
    }

    #[test]
    fn known_square_is_recovered() {
        let reg = VariableRegistry::standard(1, 0);
        let mut prog = SosProgram::new(&reg);
        prog.add_sos("q", AffinePoly::from_poly(p(&reg, "x1^4 + 2*x1^2 + 1")));
        let lowered = prog.lower().unwrap();
        let sol = solve(&lowered.instance, &SolverConfig::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let rec = prog.reconstruct(&lowered, &sol).unwrap();
        assert!(rec.max_coefficient_error() < 1e-7);
        assert!(rec.min_eigenvalue() > -1e-9);
        for x in [-2.0, -0.3, 0.0, 1.1] {
            let r = &rec.constraints[0];
            let direct = (x * x + 1.0f64).powi(2);
            assert!((gram_value(&r.basis, &r.gram, &[x]) - direct).abs() < 1e-6 * (1.0 + direct));
        }
    }

    #[test]
    fn geq_constraint_uses_a_slack_block() {
        let reg = reg2();
        let mut prog = SosProgram::new(&reg);
        let a = prog.scalar("a");
        let mut e = LinExpr::var(a);
        e.constant = -1e-6;
        prog.add_linear("a >= 1e-6", e, LinearKind::Geq);
        let lowered = prog.lower().unwrap();
        assert_eq!(lowered.slack_blocks, vec![0]);
        assert_eq!(lowered.instance.blocks, vec![1]);
    }

    #[test]
    fn lowering_is_deterministic() {
        let build = || {
            let reg = VariableRegistry::standard(2, 1);
            let mut prog = SosProgram::new(&reg);
            let t =
                make_template(&reg, &[0, 1, 2], 4, TemplateFlags { no_constant: true, ..Default::default() }).unwrap();
            let v = prog.decision("v", &t);
            let s = prog.sos_unknown("s", &make_sos_template(&reg, &[0, 1, 2], 2).unwrap());
            let e = v.as_affine(&reg).sub(&s.as_affine(&reg).mul_poly(&p(&reg, "p1 - 1")).unwrap()).unwrap();
            prog.add_sos("c", e);
            prog.lower().unwrap().instance.to_sparse_text()
        };
        assert_eq!(build(), build());
    }
}
