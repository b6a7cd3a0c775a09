//! Positivstellensatz conditions of a cyclic hybrid system in mode-local
//! coordinates, and their assembly into an [`SosProgram`].
//!
//! Each mode is translated so that its anchor sits at the origin. A condition
//! asserts `main − Σ multiplier·partner` is SOS, where `main` is the
//! Lyapunov-type expression and the partners are the neighborhood, domain,
//! guard and parameter polynomials that localize it.

use serde::{Deserialize, Serialize};

use crate::hybrid::HybridSystem;
use crate::polynomial::{Monomial, PolyError, Polynomial, PolynomialVector};
use crate::sos::{
    make_sos_template_capped, make_template, AffinePoly, DecisionPolynomial, LinExpr, LinearKind,
    SosDecisionPolynomial, SosProgram, Template, TemplateFlags, Var,
};

use super::{CertError, CertMode, CertificationRequest};

/// One semialgebraic piece of a mode domain, in local coordinates.
#[derive(Debug, Clone)]
pub struct PieceFrame {
    pub ineq: Vec<Polynomial>,
    pub eq: Vec<Polynomial>,
}

/// Mode data translated so that the anchor is the origin.
#[derive(Debug, Clone)]
pub struct ModeFrame {
    pub id: usize,
    pub anchor: Vec<f64>,
    pub w: Vec<Polynomial>,
    pub pieces: Vec<PieceFrame>,
    pub field: PolynomialVector,
}

/// Edge data in the source mode's local coordinates.
#[derive(Debug, Clone)]
pub struct EdgeFrame {
    /// Index of the source mode in `Frames::modes`.
    pub from: usize,
    pub to: usize,
    pub h0: Polynomial,
    pub h: Vec<Polynomial>,
    /// `φ(y + z_from) − z_to`.
    pub reset: PolynomialVector,
}

#[derive(Debug, Clone)]
pub struct Frames {
    pub modes: Vec<ModeFrame>,
    pub edges: Vec<EdgeFrame>,
    /// Parameter-set polynomials `p~_k ≥ 0`.
    pub params: Vec<Polynomial>,
}

impl Frames {
    pub fn new(sys: &HybridSystem) -> Result<Self, PolyError> {
        let reg = &sys.registry;
        let mut modes = Vec::with_capacity(sys.modes.len());
        for m in &sys.modes {
            let z = &m.anchor;
            let shift = |p: &Polynomial| p.shifted(z);
            let w = m.neighborhood.inequalities.iter().map(|i| shift(&i.poly)).collect::<Result<Vec<_>, _>>()?;
            let pieces = m
                .domain
                .iter()
                .map(|d| {
                    Ok(PieceFrame {
                        ineq: d.inequalities.iter().map(|i| shift(&i.poly)).collect::<Result<_, PolyError>>()?,
                        eq: d.equalities.iter().map(shift).collect::<Result<_, PolyError>>()?,
                    })
                })
                .collect::<Result<Vec<_>, PolyError>>()?;
            let field = PolynomialVector::new(m.field.components().iter().map(shift).collect::<Result<_, _>>()?)?;
            modes.push(ModeFrame { id: m.id, anchor: z.clone(), w, pieces, field });
        }
        let index = |id: usize| sys.modes.iter().position(|m| m.id == id).expect("validated system");
        let mut edges = Vec::with_capacity(sys.edges.len());
        for e in &sys.edges {
            let (from, to) = (index(e.from), index(e.to));
            let zf = &sys.modes[from].anchor;
            let zt = &sys.modes[to].anchor;
            let reset = e
                .reset
                .components()
                .iter()
                .zip(zt)
                .map(|(c, &t)| {
                    let mut s = c.shifted(zf)?;
                    s.add_term(Monomial::one(reg.len()), -t);
                    Ok(s)
                })
                .collect::<Result<Vec<_>, PolyError>>()?;
            edges.push(EdgeFrame {
                from,
                to,
                h0: e.guard.equality.shifted(zf)?,
                h: e.guard.inequalities.iter().map(|i| i.poly.shifted(zf)).collect::<Result<_, _>>()?,
                reset: PolynomialVector::new(reset)?,
            });
        }
        let params = sys.parameters.constraints.iter().map(|c| c.poly.clone()).collect();
        Ok(Frames { modes, edges, params })
    }
}

/// Which localizing polynomial a multiplier is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Partner {
    /// Neighborhood inequality `w_k`.
    Neighborhood(usize),
    /// Domain inequality `g_k` of the condition's piece.
    Domain(usize),
    /// Domain equality of the condition's piece.
    DomainEq(usize),
    /// Parameter-set inequality `p~_k`.
    Parameter(usize),
    /// Guard equality `h_0`.
    GuardEq,
    /// Guard inequality `h_l`.
    Guard(usize),
}

impl Partner {
    /// Equality partners take free-sign multipliers.
    pub fn is_equality(self) -> bool {
        matches!(self, Partner::DomainEq(_) | Partner::GuardEq)
    }
}

/// The expression a condition localizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionKind {
    /// `V_q − α|y|²`.
    Positivity { mode: usize, piece: usize },
    /// `−∇V_q·f_q − γ`.
    Decrease { mode: usize, piece: usize },
    /// `r_q V_q − V_q'(φ)`.
    Jump { edge: usize, piece: usize },
    /// `−∇V_q·f_q`.
    Nonincrease { mode: usize, piece: usize },
    /// `B_q`.
    BarrierPositivity { mode: usize, piece: usize },
    /// `−∇B_q·f_q − γ`.
    BarrierDecrease { mode: usize, piece: usize },
    /// `V_q'(φ) − B_q'(φ)`.
    BarrierJump { edge: usize, piece: usize },
}

impl ConditionKind {
    pub fn tag(self) -> &'static str {
        match self {
            ConditionKind::Positivity { .. } => "R1",
            ConditionKind::Decrease { .. } => "R3",
            ConditionKind::Jump { .. } => "R4",
            ConditionKind::Nonincrease { .. } => "EC2",
            ConditionKind::BarrierPositivity { .. } => "EC3",
            ConditionKind::BarrierDecrease { .. } => "EC4",
            ConditionKind::BarrierJump { .. } => "C2",
        }
    }

    /// Index of the mode whose local frame the condition lives in.
    pub fn mode(self, frames: &Frames) -> usize {
        match self {
            ConditionKind::Positivity { mode, .. }
            | ConditionKind::Decrease { mode, .. }
            | ConditionKind::Nonincrease { mode, .. }
            | ConditionKind::BarrierPositivity { mode, .. }
            | ConditionKind::BarrierDecrease { mode, .. } => mode,
            ConditionKind::Jump { edge, .. } | ConditionKind::BarrierJump { edge, .. } => frames.edges[edge].from,
        }
    }

    pub fn piece(self) -> usize {
        match self {
            ConditionKind::Positivity { piece, .. }
            | ConditionKind::Decrease { piece, .. }
            | ConditionKind::Nonincrease { piece, .. }
            | ConditionKind::BarrierPositivity { piece, .. }
            | ConditionKind::BarrierDecrease { piece, .. }
            | ConditionKind::Jump { piece, .. }
            | ConditionKind::BarrierJump { piece, .. } => piece,
        }
    }

    pub fn edge(self) -> Option<usize> {
        match self {
            ConditionKind::Jump { edge, .. } | ConditionKind::BarrierJump { edge, .. } => Some(edge),
            _ => None,
        }
    }

    /// Whether the condition involves the contraction constants.
    pub fn uses_r(self) -> bool {
        matches!(self, ConditionKind::Jump { .. })
    }

    /// Whether the main expression is built from `B` rather than `V`.
    pub fn uses_barrier(self) -> bool {
        matches!(
            self,
            ConditionKind::BarrierPositivity { .. }
                | ConditionKind::BarrierDecrease { .. }
                | ConditionKind::BarrierJump { .. }
        )
    }

    pub fn label(self, frames: &Frames) -> String {
        let piece = self.piece();
        match self.edge() {
            Some(e) => {
                let ef = &frames.edges[e];
                format!("{}[edge {}->{}, piece {piece}]", self.tag(), frames.modes[ef.from].id, frames.modes[ef.to].id)
            }
            None => format!("{}[mode {}, piece {piece}]", self.tag(), frames.modes[self.mode(frames)].id),
        }
    }

    /// Localizing partners in a fixed order.
    pub fn partners(self, frames: &Frames) -> Vec<Partner> {
        let m = &frames.modes[self.mode(frames)];
        let piece = &m.pieces[self.piece()];
        let mut out: Vec<Partner> = (0..m.w.len()).map(Partner::Neighborhood).collect();
        out.extend((0..piece.ineq.len()).map(Partner::Domain));
        out.extend((0..piece.eq.len()).map(Partner::DomainEq));
        if let Some(e) = self.edge() {
            out.push(Partner::GuardEq);
            out.extend((0..frames.edges[e].h.len()).map(Partner::Guard));
        }
        out.extend((0..frames.params.len()).map(Partner::Parameter));
        out
    }

    pub fn partner_poly<'a>(self, frames: &'a Frames, partner: Partner) -> &'a Polynomial {
        let m = &frames.modes[self.mode(frames)];
        let piece = &m.pieces[self.piece()];
        match partner {
            Partner::Neighborhood(k) => &m.w[k],
            Partner::Domain(k) => &piece.ineq[k],
            Partner::DomainEq(k) => &piece.eq[k],
            Partner::Parameter(k) => &frames.params[k],
            Partner::GuardEq => &frames.edges[self.edge().expect("edge condition")].h0,
            Partner::Guard(k) => &frames.edges[self.edge().expect("edge condition")].h[k],
        }
    }
}

/// Every condition of a request, in emission order: per mode the positivity
/// and decrease families, then per edge the jump families.
pub fn condition_kinds(frames: &Frames, mode: &CertMode) -> Vec<ConditionKind> {
    let extended = matches!(mode, CertMode::Extended { tie_b_to_v: false, .. });
    let mut out = Vec::new();
    for (q, m) in frames.modes.iter().enumerate() {
        for piece in 0..m.pieces.len() {
            out.push(ConditionKind::Positivity { mode: q, piece });
        }
        if extended {
            for piece in 0..m.pieces.len() {
                out.push(ConditionKind::Nonincrease { mode: q, piece });
            }
            for piece in 0..m.pieces.len() {
                out.push(ConditionKind::BarrierPositivity { mode: q, piece });
            }
            for piece in 0..m.pieces.len() {
                out.push(ConditionKind::BarrierDecrease { mode: q, piece });
            }
        } else {
            for piece in 0..m.pieces.len() {
                out.push(ConditionKind::Decrease { mode: q, piece });
            }
        }
    }
    for (e, ef) in frames.edges.iter().enumerate() {
        for piece in 0..frames.modes[ef.from].pieces.len() {
            out.push(ConditionKind::Jump { edge: e, piece });
        }
        if extended {
            for piece in 0..frames.modes[ef.from].pieces.len() {
                out.push(ConditionKind::BarrierJump { edge: e, piece });
            }
        }
    }
    out
}

/// Sum of squares of the state variables.
pub fn state_norm_sq(reg: &std::sync::Arc<crate::polynomial::VariableRegistry>) -> Polynomial {
    let mut out = Polynomial::zero(reg);
    for i in 0..reg.n_state() {
        let mut e = vec![0u16; reg.len()];
        e[i] = 2;
        out.add_term(Monomial::from_exponents(e), 1.0);
    }
    out
}

/// A multiplier unknown.
#[derive(Debug, Clone)]
pub enum Multiplier {
    Sos(SosDecisionPolynomial),
    Free(DecisionPolynomial),
}

#[derive(Debug, Clone)]
pub struct BuiltCondition {
    pub kind: ConditionKind,
    pub label: String,
    pub multipliers: Vec<(Partner, Multiplier)>,
}

/// SOS program for a request at fixed contraction constants.
#[derive(Debug, Clone)]
pub struct BuiltConditions {
    pub program: SosProgram,
    pub v: Vec<DecisionPolynomial>,
    pub b: Option<Vec<DecisionPolynomial>>,
    pub alpha: Var,
    /// One entry per SOS constraint of `program`, in the same order.
    pub conditions: Vec<BuiltCondition>,
    /// Number of anchor-value linear constraint blocks (one per mode).
    pub anchor_blocks: usize,
}

impl BuiltConditions {
    pub fn count(&self, tag: &str) -> usize {
        self.conditions.iter().filter(|c| c.kind.tag() == tag).count()
    }
}

fn free_template(req: &CertificationRequest, degree: u32) -> Template {
    let reg = &req.system.registry;
    let vars = reg.all_indices();
    let params = reg.param_indices();
    let support = if degree == 0 {
        vec![Monomial::one(reg.len())]
    } else {
        make_template(reg, &vars, degree, TemplateFlags::default())
            .expect("degree >= 1")
            .support
            .into_iter()
            .filter(|m| m.degree_in(&params) <= req.param_degree_cap)
            .collect()
    };
    Template { vars, support }
}

fn lyapunov_template(req: &CertificationRequest, degree: u32, barrier: bool) -> Template {
    let reg = &req.system.registry;
    let params = reg.param_indices();
    let param_dependent = req.parameter_dependent_v && !params.is_empty();
    let flags =
        TemplateFlags { no_constant: !barrier && !param_dependent, even_only: false, state_only: !param_dependent };
    let mut t = make_template(reg, &reg.all_indices(), degree, flags).expect("degree >= 1");
    t.support.retain(|m| m.degree_in(&params) <= req.param_degree_cap);
    t
}

/// Builds the SOS program. With `r = None` the jump conditions are omitted,
/// leaving the contraction-independent part used for pre-screening.
pub fn build(req: &CertificationRequest, frames: &Frames, r: Option<&[f64]>) -> Result<BuiltConditions, CertError> {
    let reg = req.system.registry.clone();
    let mut prog = SosProgram::new(&reg);
    prog.trace_weight = req.trace_regularization;
    let alpha = prog.scalar("alpha");
    let v: Vec<DecisionPolynomial> = frames
        .modes
        .iter()
        .zip(&req.v_degrees)
        .map(|(m, &d)| prog.decision(&format!("V{}", m.id), &lyapunov_template(req, d, false)))
        .collect();
    let b = match req.mode {
        CertMode::Extended { b_degree, tie_b_to_v: false, .. } => Some(
            frames
                .modes
                .iter()
                .map(|m| prog.decision(&format!("B{}", m.id), &lyapunov_template(req, b_degree, true)))
                .collect::<Vec<_>>(),
        ),
        _ => None,
    };
    let va: Vec<AffinePoly> = v.iter().map(|d| d.as_affine(&reg)).collect();
    let ba: Option<Vec<AffinePoly>> = b.as_ref().map(|b| b.iter().map(|d| d.as_affine(&reg)).collect());
    let norm = state_norm_sq(&reg);
    let gamma = Polynomial::constant(&reg, req.gamma);
    let params = reg.param_indices();
    let all = reg.all_indices();

    let mut conditions = Vec::new();
    for kind in condition_kinds(frames, &req.mode) {
        if kind.uses_r() && r.is_none() {
            continue;
        }
        let q = kind.mode(frames);
        let f = &frames.modes[q].field;
        let main = match kind {
            ConditionKind::Positivity { .. } => va[q].sub(&AffinePoly::from_var(alpha, norm.clone()))?,
            ConditionKind::Decrease { .. } => {
                va[q].gradient_dot(f)?.scale(-1.0).sub(&AffinePoly::from_poly(gamma.clone()))?
            }
            ConditionKind::Nonincrease { .. } => va[q].gradient_dot(f)?.scale(-1.0),
            ConditionKind::BarrierPositivity { .. } => ba.as_ref().expect("extended")[q].clone(),
            ConditionKind::BarrierDecrease { .. } => ba.as_ref().expect("extended")[q]
                .gradient_dot(f)?
                .scale(-1.0)
                .sub(&AffinePoly::from_poly(gamma.clone()))?,
            ConditionKind::Jump { edge, .. } => {
                let ef = &frames.edges[edge];
                let rq = r.expect("checked")[q];
                va[q].scale(rq).sub(&va[ef.to].compose(&ef.reset)?)?
            }
            ConditionKind::BarrierJump { edge, .. } => {
                let ef = &frames.edges[edge];
                let bt = &ba.as_ref().expect("extended")[ef.to];
                va[ef.to].compose(&ef.reset)?.sub(&bt.compose(&ef.reset)?)?
            }
        };
        let base_degree = req.multiplier_degrees.target(kind).unwrap_or_else(|| {
            if kind.uses_barrier() {
                match req.mode {
                    CertMode::Extended { b_degree, .. } => b_degree,
                    CertMode::Standard => req.v_degrees[q],
                }
            } else {
                req.v_degrees[q]
            }
        });
        let label = kind.label(frames);
        let mut expr = main;
        let mut multipliers = Vec::new();
        for partner in kind.partners(frames) {
            let pp = kind.partner_poly(frames, partner);
            let pdeg = pp.degree();
            let mlabel = format!("{label}.{}", partner_name(partner));
            let mult = if partner.is_equality() {
                let d = base_degree.saturating_sub(pdeg);
                let t = free_template(req, d);
                Multiplier::Free(prog.decision(&mlabel, &t))
            } else {
                let mut d = base_degree.saturating_sub(pdeg);
                d -= d % 2;
                let cap = if params.is_empty() { None } else { Some(req.param_degree_cap) };
                let t = make_sos_template_capped(&reg, &all, d, cap)?;
                Multiplier::Sos(prog.sos_unknown(&mlabel, &t))
            };
            let ma = match &mult {
                Multiplier::Sos(s) => s.as_affine(&reg),
                Multiplier::Free(d) => d.as_affine(&reg),
            };
            expr = expr.sub(&ma.mul_poly(pp)?)?;
            multipliers.push((partner, mult));
        }
        prog.add_sos(&label, expr);
        conditions.push(BuiltCondition { kind, label, multipliers });
    }

    // Anchor value: V_q(0, p) = 0, one block of coefficient equations per mode.
    let state = reg.state_indices();
    for (m, vq) in frames.modes.iter().zip(&va) {
        let mut any = false;
        for (mono, e) in vq.by_monomial() {
            if mono.degree_in(&state) == 0 {
                prog.add_linear(&format!("R2[mode {}, {}]", m.id, mono.to_text(&reg)), e, LinearKind::Eq);
                any = true;
            }
        }
        // Structurally zero for state-only templates; kept so every mode has an anchor block.
        if !any {
            prog.add_linear(&format!("R2[mode {}]", m.id), LinExpr::default(), LinearKind::Eq);
        }
    }
    let mut floor = LinExpr::var(alpha);
    floor.constant = -req.alpha_min;
    prog.add_linear("alpha >= alpha_min", floor, LinearKind::Geq);

    Ok(BuiltConditions { program: prog, v, b, alpha, conditions, anchor_blocks: frames.modes.len() })
}

pub fn partner_name(p: Partner) -> String {
    match p {
        Partner::Neighborhood(k) => format!("w{k}"),
        Partner::Domain(k) => format!("g{k}"),
        Partner::DomainEq(k) => format!("e{k}"),
        Partner::Parameter(k) => format!("p{k}"),
        Partner::GuardEq => "h0".into(),
        Partner::Guard(k) => format!("h{}", k + 1),
    }
}
