//! Sparse multivariate polynomials with `f64` coefficients.
//!
//! Every polynomial carries a reference to a [`VariableRegistry`] that fixes
//! the variable order: state variables `x1..xn` first, then parameters
//! `p1..pm`. Terms are kept in a `BTreeMap` keyed by [`Monomial`] under a
//! fixed graded order, so iteration (and everything assembled from it) is
//! deterministic.

mod parse;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

pub use parse::parse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("polynomials belong to different variable registries")]
    RegistryMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("invalid variable registry: {0}")]
    InvalidRegistry(String),
}

pub type Result<T> = std::result::Result<T, PolyError>;

/// Ordered variable names, state variables first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VariableRegistry {
    names: Vec<String>,
    n_state: usize,
}

impl VariableRegistry {
    pub fn new(state: Vec<String>, params: Vec<String>) -> Result<Arc<Self>> {
        let n_state = state.len();
        let names: Vec<String> = state.into_iter().chain(params).collect();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(PolyError::InvalidRegistry(format!("bad variable name {name:?}")));
            }
            if name.chars().next().is_some_and(|c| c.is_ascii_digit()) {
                return Err(PolyError::InvalidRegistry(format!("variable {name:?} starts with a digit")));
            }
            if names[..i].contains(name) {
                return Err(PolyError::InvalidRegistry(format!("duplicate variable {name:?}")));
            }
        }
        Ok(Arc::new(Self { names, n_state }))
    }

    /// Registry `x1..xn` followed by `p1..pm`.
    pub fn standard(n_state: usize, n_params: usize) -> Arc<Self> {
        let state = (1..=n_state).map(|i| format!("x{i}")).collect();
        let params = (1..=n_params).map(|i| format!("p{i}")).collect();
        Self::new(state, params).expect("standard names are valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn n_params(&self) -> usize {
        self.names.len() - self.n_state
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_param(&self, index: usize) -> bool {
        index >= self.n_state
    }

    pub fn state_indices(&self) -> Vec<usize> {
        (0..self.n_state).collect()
    }

    pub fn param_indices(&self) -> Vec<usize> {
        (self.n_state..self.names.len()).collect()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.names.len()).collect()
    }
}

/// Exponent vector, one entry per registered variable.
///
/// Ordered by total degree first; within a degree, monomials with a larger
/// exponent on an earlier variable come first (`x1^2 < x1*x2 < x2^2`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u16>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn from_exponents(exps: Vec<u16>) -> Self {
        Monomial(exps)
    }

    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u16] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&e| e as u32).sum()
    }

    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        vars.iter().map(|&v| self.0[v] as u32).sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Componentwise halving when every exponent is even.
    pub fn half(&self) -> Option<Monomial> {
        if self.0.iter().all(|e| e % 2 == 0) {
            Some(Monomial(self.0.iter().map(|e| e / 2).collect()))
        } else {
            None
        }
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0.iter().zip(point).filter(|(&e, _)| e > 0).map(|(&e, &x)| x.powi(e as i32)).product()
    }

    fn fmt_with(&self, reg: &VariableRegistry, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            write!(f, "{}", reg.name(i))?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        if first {
            write!(f, "1")?;
        }
        Ok(())
    }

    pub fn to_text(&self, reg: &VariableRegistry) -> String {
        struct D<'a>(&'a Monomial, &'a VariableRegistry);
        impl fmt::Display for D<'_> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt_with(self.1, f)
            }
        }
        D(self, reg).to_string()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials in `vars` of total degree at most `max_degree`, in graded order.
pub fn monomial_basis(nvars: usize, vars: &[usize], max_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=max_degree {
        let mut exps = vec![0u16; nvars];
        fill_degree(vars, d, 0, &mut exps, &mut out);
    }
    out
}

// Enumerates exponent vectors of exact degree `remaining` over vars[pos..],
// earlier variables taking the largest exponents first.
fn fill_degree(vars: &[usize], remaining: u32, pos: usize, exps: &mut Vec<u16>, out: &mut Vec<Monomial>) {
    if pos == vars.len() {
        if remaining == 0 {
            out.push(Monomial(exps.clone()));
        }
        return;
    }
    if pos == vars.len() - 1 {
        exps[vars[pos]] = remaining as u16;
        out.push(Monomial(exps.clone()));
        exps[vars[pos]] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        exps[vars[pos]] = e as u16;
        fill_degree(vars, remaining - e, pos + 1, exps, out);
    }
    exps[vars[pos]] = 0;
}

/// Sparse polynomial; zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    reg: Arc<VariableRegistry>,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(reg: &Arc<VariableRegistry>) -> Self {
        Self { reg: reg.clone(), terms: BTreeMap::new() }
    }

    pub fn constant(reg: &Arc<VariableRegistry>, c: f64) -> Self {
        let mut p = Self::zero(reg);
        p.add_term(Monomial::one(reg.len()), c);
        p
    }

    pub fn var(reg: &Arc<VariableRegistry>, index: usize) -> Self {
        let mut p = Self::zero(reg);
        p.add_term(Monomial::var(reg.len(), index), 1.0);
        p
    }

    pub fn monomial(reg: &Arc<VariableRegistry>, m: Monomial, c: f64) -> Self {
        let mut p = Self::zero(reg);
        p.add_term(m, c);
        p
    }

    pub fn from_terms(reg: &Arc<VariableRegistry>, terms: impl IntoIterator<Item = (Monomial, f64)>) -> Self {
        let mut p = Self::zero(reg);
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn registry(&self) -> &Arc<VariableRegistry> {
        &self.reg
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient(&Monomial::one(self.reg.len()))
    }

    /// Adds `c * m` in place, pruning the entry if it cancels to zero.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn check_same(&self, other: &Polynomial) -> Result<()> {
        if Arc::ptr_eq(&self.reg, &other.reg) || self.reg == other.reg {
            Ok(())
        } else {
            Err(PolyError::RegistryMismatch)
        }
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), -c);
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = Polynomial::zero(&self.reg);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        if c == 0.0 {
            return Polynomial::zero(&self.reg);
        }
        Polynomial {
            reg: self.reg.clone(),
            terms: self.terms.iter().map(|(m, &v)| (m.clone(), v * c)).filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(&self.reg, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        self.terms.keys().map(|m| m.degree_in(vars)).max().unwrap_or(0)
    }

    /// True when no term involves a variable outside `vars`.
    pub fn only_uses(&self, vars: &[usize]) -> bool {
        self.terms.keys().all(|m| m.exponents().iter().enumerate().all(|(i, &e)| e == 0 || vars.contains(&i)))
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.reg.len() {
            return Err(PolyError::DimensionMismatch { expected: self.reg.len(), got: point.len() });
        }
        Ok(self.eval_unchecked(point))
    }

    /// Evaluation without the dimension check, for hot loops.
    pub fn eval_unchecked(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum()
    }

    /// Partial derivative with respect to variable `index`.
    pub fn partial(&self, index: usize) -> Polynomial {
        let mut out = Polynomial::zero(&self.reg);
        for (m, &c) in &self.terms {
            let e = m.0[index];
            if e == 0 {
                continue;
            }
            let mut d = m.clone();
            d.0[index] -= 1;
            out.add_term(d, c * e as f64);
        }
        out
    }

    /// Gradient with respect to the state variables only.
    pub fn gradient(&self) -> PolynomialVector {
        PolynomialVector::new((0..self.reg.n_state()).map(|i| self.partial(i)).collect())
            .expect("gradient components share a registry")
    }

    /// Substitutes `subst[i]` for state variable `i`; parameters pass through.
    pub fn compose(&self, subst: &PolynomialVector) -> Result<Polynomial> {
        let n = self.reg.n_state();
        if subst.len() != n {
            return Err(PolyError::DimensionMismatch { expected: n, got: subst.len() });
        }
        if let Some(first) = subst.components().first() {
            self.check_same(first)?;
        }
        let mut powers: Vec<Vec<Polynomial>> =
            subst.components().iter().map(|s| vec![Polynomial::constant(&self.reg, 1.0), s.clone()]).collect();
        let mut out = Polynomial::zero(&self.reg);
        for (m, &c) in &self.terms {
            let mut rest = m.0.clone();
            for r in rest.iter_mut().take(n) {
                *r = 0;
            }
            let mut term = Polynomial::monomial(&self.reg, Monomial(rest), c);
            for i in 0..n {
                let e = m.0[i] as usize;
                if e == 0 {
                    continue;
                }
                while powers[i].len() <= e {
                    let next = &powers[i][powers[i].len() - 1] * &subst.components()[i];
                    powers[i].push(next);
                }
                term = &term * &powers[i][e];
            }
            for (tm, tc) in term.terms {
                out.add_term(tm, tc);
            }
        }
        Ok(out)
    }

    /// Replaces parameter variables by fixed values.
    pub fn fix_params(&self, params: &[f64]) -> Result<Polynomial> {
        let n = self.reg.n_state();
        if params.len() != self.reg.n_params() {
            return Err(PolyError::DimensionMismatch { expected: self.reg.n_params(), got: params.len() });
        }
        let mut out = Polynomial::zero(&self.reg);
        for (m, &c) in &self.terms {
            let mut e = m.0.clone();
            let mut factor = c;
            for (k, &p) in params.iter().enumerate() {
                factor *= p.powi(e[n + k] as i32);
                e[n + k] = 0;
            }
            out.add_term(Monomial(e), factor);
        }
        Ok(out)
    }

    /// Polynomial `q(x) = self(x + shift)` in the state variables.
    pub fn shifted(&self, shift: &[f64]) -> Result<Polynomial> {
        let n = self.reg.n_state();
        if shift.len() != n {
            return Err(PolyError::DimensionMismatch { expected: n, got: shift.len() });
        }
        let subst = PolynomialVector::new(
            (0..n)
                .map(|i| {
                    let mut p = Polynomial::var(&self.reg, i);
                    p.add_term(Monomial::one(self.reg.len()), shift[i]);
                    p
                })
                .collect(),
        )?;
        self.compose(&subst)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, &c| a.max(c.abs()))
    }

    /// Canonical text: terms by descending degree, explicit `*`.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(reg: &Arc<VariableRegistry>, text: &str) -> Result<Polynomial> {
        parse::parse(reg, text)
    }
}

fn format_coefficient(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c:?}")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut ordered: Vec<(&Monomial, f64)> = self.terms.iter().map(|(m, &c)| (m, c)).collect();
        ordered.sort_by(|a, b| b.0.degree().cmp(&a.0.degree()).then_with(|| a.0.cmp(b.0)));
        for (k, (m, c)) in ordered.into_iter().enumerate() {
            let neg = c < 0.0 || (c == 0.0 && c.is_sign_negative());
            let a = c.abs();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { '-' } else { '+' })?;
            }
            if m.is_one() {
                write!(f, "{}", format_coefficient(a))?;
            } else {
                if a != 1.0 {
                    write!(f, "{}*", format_coefficient(a))?;
                }
                m.fmt_with(&self.reg, f)?;
            }
        }
        Ok(())
    }
}

// Operator forms panic on registry mismatch; use the `Result` methods when the
// registries are not known to agree.
impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::add(self, rhs).expect("registry mismatch in +")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::sub(self, rhs).expect("registry mismatch in -")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        Polynomial::mul(self, rhs).expect("registry mismatch in *")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Ordered list of polynomials over one registry (vector fields, resets, gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialVector(Vec<Polynomial>);

impl PolynomialVector {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        if let Some(first) = components.first() {
            for c in &components[1..] {
                first.check_same(c)?;
            }
        }
        Ok(Self(components))
    }

    pub fn identity(reg: &Arc<VariableRegistry>) -> Self {
        Self((0..reg.n_state()).map(|i| Polynomial::var(reg, i)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.0
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.0.iter().map(|p| p.evaluate(point)).collect()
    }

    pub fn dot(&self, other: &PolynomialVector) -> Result<Polynomial> {
        if self.len() != other.len() {
            return Err(PolyError::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        let mut acc: Option<Polynomial> = None;
        for (a, b) in self.0.iter().zip(&other.0) {
            let t = a.mul(b)?;
            acc = Some(match acc {
                None => t,
                Some(s) => s.add(&t)?,
            });
        }
        Ok(acc.unwrap_or_else(|| Polynomial::zero(self.0.first().map(|p| p.registry()).expect("nonempty"))))
    }

    pub fn compose(&self, subst: &PolynomialVector) -> Result<PolynomialVector> {
        Ok(Self(self.0.iter().map(|p| p.compose(subst)).collect::<Result<_>>()?))
    }

    pub fn fix_params(&self, params: &[f64]) -> Result<PolynomialVector> {
        Ok(Self(self.0.iter().map(|p| p.fix_params(params)).collect::<Result<_>>()?))
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(Polynomial::degree).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg2() -> Arc<VariableRegistry> {
        VariableRegistry::standard(2, 0)
    }

    fn p(reg: &Arc<VariableRegistry>, s: &str) -> Polynomial {
        Polynomial::parse(reg, s).unwrap()
    }

    #[test]
    fn add_cancels_and_merges() {
        let r = reg2();
        assert_eq!(&p(&r, "x1 + 1") + &p(&r, "x1 - 1"), p(&r, "2*x1"));
        let f = p(&r, "x1^2 + x2");
        assert_eq!(&f + &Polynomial::zero(&r), f);
        assert_eq!(&f + &p(&r, "x2"), p(&r, "x1^2 + 2*x2"));
    }

    #[test]
    fn mul_examples() {
        let r = reg2();
        assert_eq!(&p(&r, "x1 + x2") * &p(&r, "x1 - x2"), p(&r, "x1^2 - x2^2"));
        let f = p(&r, "3*x1*x2 - x2^3 + 0.25");
        assert_eq!(&f * &Polynomial::constant(&r, 1.0), f);
        assert_eq!(p(&r, "x1 + 1").pow(2), p(&r, "x1^2 + 2*x1 + 1"));
    }

    #[test]
    fn registry_mismatch_is_an_error() {
        let a = Polynomial::var(&reg2(), 0);
        let b = Polynomial::var(&VariableRegistry::standard(3, 0), 0);
        assert_eq!(a.add(&b), Err(PolyError::RegistryMismatch));
        assert_eq!(a.mul(&b), Err(PolyError::RegistryMismatch));
    }

    #[test]
    fn evaluate_examples() {
        let r = reg2();
        assert_eq!(p(&r, "x1^2 + x2").evaluate(&[2.0, 3.0]).unwrap(), 7.0);
        assert_eq!(p(&r, "4*x1^3 - x2 + 2.5").evaluate(&[0.0, 0.0]).unwrap(), 2.5);
        assert!(matches!(p(&r, "x1").evaluate(&[1.0]), Err(PolyError::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn gradient_examples() {
        let r = reg2();
        let g = p(&r, "x1^2 + 3*x1*x2").gradient();
        assert_eq!(g.components()[0], p(&r, "2*x1 + 3*x2"));
        assert_eq!(g.components()[1], p(&r, "3*x1"));
        let z = Polynomial::constant(&r, 4.0).gradient();
        assert!(z.components().iter().all(Polynomial::is_zero));
    }

    #[test]
    fn gradient_skips_parameters() {
        let r = VariableRegistry::standard(2, 1);
        let g = p(&r, "p1*x1^2 + p1^3").gradient();
        assert_eq!(g.len(), 2);
        assert_eq!(g.components()[0], p(&r, "2*p1*x1"));
        assert!(g.components()[1].is_zero());
    }

    #[test]
    fn compose_examples() {
        let r = reg2();
        let f = p(&r, "x1^2");
        let s = PolynomialVector::new(vec![p(&r, "x1 + x2"), p(&r, "x2")]).unwrap();
        assert_eq!(f.compose(&s).unwrap(), p(&r, "x1^2 + 2*x1*x2 + x2^2"));
        let g = p(&r, "x1^3*x2 - 2*x2 + 7");
        assert_eq!(g.compose(&PolynomialVector::identity(&r)).unwrap(), g);
        let short = PolynomialVector::new(vec![p(&r, "x1")]).unwrap();
        assert!(matches!(g.compose(&short), Err(PolyError::DimensionMismatch { .. })));
    }

    #[test]
    fn compose_passes_parameters_through() {
        let r = VariableRegistry::standard(1, 1);
        let f = p(&r, "p1*x1^2");
        let s = PolynomialVector::new(vec![p(&r, "2*x1 + p1")]).unwrap();
        assert_eq!(f.compose(&s).unwrap(), p(&r, "4*p1*x1^2 + 4*p1^2*x1 + p1^3"));
    }

    #[test]
    fn basis_examples() {
        let r = reg2();
        let b = monomial_basis(2, &[0], 2);
        let txt: Vec<String> = b.iter().map(|m| m.to_text(&r)).collect();
        assert_eq!(txt, ["1", "x1", "x1^2"]);
        let b = monomial_basis(2, &[0, 1], 1);
        let txt: Vec<String> = b.iter().map(|m| m.to_text(&r)).collect();
        assert_eq!(txt, ["1", "x1", "x2"]);
    }

    #[test]
    fn basis_count_is_binomial() {
        fn binom(n: u64, k: u64) -> u64 {
            (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
        }
        for n in 1..=4usize {
            for d in 0..=8u32 {
                let vars: Vec<usize> = (0..n).collect();
                let b = monomial_basis(n, &vars, d);
                assert_eq!(b.len() as u64, binom(n as u64 + d as u64, d as u64), "n={n} d={d}");
                let mut sorted = b.clone();
                sorted.sort();
                sorted.dedup();
                assert_eq!(sorted, b, "basis is strictly increasing in graded order");
            }
        }
    }

    #[test]
    fn degree_scale_and_printing() {
        let r = reg2();
        assert_eq!(p(&r, "x1^3*x2").degree(), 4);
        assert!(p(&r, "x1 + 3").scale(0.0).is_zero());
        let f = p(&r, "x1^2 + 2*x1*x2");
        assert_eq!(f.to_text(), "x1^2 + 2*x1*x2");
        assert_eq!(Polynomial::parse(&r, &f.to_text()).unwrap(), f);
        assert_eq!(p(&r, "-x2 + 1 - 0.5*x1^2").to_text(), "-0.5*x1^2 - x2 + 1");
        assert_eq!(Polynomial::zero(&r).to_text(), "0");
    }

    #[test]
    fn shifted_moves_the_origin() {
        let r = reg2();
        let f = p(&r, "x1^2 + x2");
        let g = f.shifted(&[1.0, -2.0]).unwrap();
        assert_eq!(g, p(&r, "x1^2 + 2*x1 + 1 + x2 - 2"));
    }

    #[test]
    fn fix_params_substitutes_values() {
        let r = VariableRegistry::standard(2, 1);
        let f = p(&r, "x2 - p1*x1 + p1^2");
        assert_eq!(f.fix_params(&[3.0]).unwrap(), p(&r, "x2 - 3*x1 + 9"));
    }
}
