use std::collections::BTreeMap;

use zenocert_core::certifier::{
    certify, check_certificate, sweep_lower_bound, CertError, CertMode, CertificateStatus, CertificationRequest,
    CertifyOutcome, CheckOptions, ZenoCertificate,
};
use zenocert_core::hybrid::HybridSystem;
use zenocert_core::io::load_system;
use zenocert_core::polynomial::Polynomial;
use zenocert_core::simulator::{batch_validate, BatchConfig};

fn text(file: &str) -> String {
    std::fs::read_to_string(format!("{}/../../systems/{file}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn system(file: &str, overrides: &[(&str, f64)]) -> HybridSystem {
    let o: BTreeMap<String, f64> = overrides.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    load_system(&text(file), &o).unwrap()
}

fn spiral_certificate(degree: u32) -> (HybridSystem, ZenoCertificate) {
    let sys = system("spiral4.json", &[]);
    let out = certify(&CertificationRequest::new(sys.clone(), degree)).unwrap();
    let cert = out.certificate().expect("spiral certifies").clone();
    (sys, cert)
}

#[test]
fn spiral_certificate_passes_every_gate() {
    let (sys, cert) = spiral_certificate(2);
    assert_eq!(cert.status, CertificateStatus::Valid);
    assert!(cert.is_valid());
    let report = check_certificate(&sys, &cert, &CheckOptions::default()).unwrap();
    assert!(report.valid, "{:?}", report.failures);
    assert!(report.algebraic.iter().all(|a| a.passed && a.residual <= 1e-6));
    assert!(report.sampling.iter().all(|s| s.passed && s.points == 1000));
    assert!(report.anchors.iter().all(|a| a.passed));
    assert!(cert.constants.r.iter().all(|&r| r > 0.0 && r < 1.0));
    assert_eq!(cert.modes.len(), 4);
}

#[test]
fn certificates_round_trip_through_json() {
    let (sys, cert) = spiral_certificate(2);
    let back = ZenoCertificate::from_json(&cert.to_json()).unwrap();
    assert_eq!(back, cert);
    assert!(check_certificate(&sys, &back, &CheckOptions::default()).unwrap().valid);
}

#[test]
fn certification_is_deterministic() {
    let (_, a) = spiral_certificate(2);
    let (_, b) = spiral_certificate(2);
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn negated_lyapunov_function_fails_positivity() {
    let (sys, mut cert) = spiral_certificate(2);
    for m in &mut cert.modes {
        m.v = Polynomial::parse(&sys.registry, &m.v).unwrap().scale(-1.0).to_text();
    }
    let report = check_certificate(&sys, &cert, &CheckOptions::default()).unwrap();
    assert!(!report.valid);
    assert!(report.sampling.iter().any(|s| s.label.starts_with("R1") && !s.passed));
}

#[test]
fn perturbed_coefficient_is_caught() {
    let (sys, mut cert) = spiral_certificate(2);
    let v = Polynomial::parse(&sys.registry, &cert.modes[0].v).unwrap();
    let (m, c) = v.terms().next().map(|(m, c)| (m.clone(), c)).unwrap();
    let mut tampered = v.clone();
    tampered.add_term(m, 1e-2 * c.abs().max(1.0));
    cert.modes[0].v = tampered.to_text();
    let report = check_certificate(&sys, &cert, &CheckOptions::default()).unwrap();
    assert!(!report.valid);
    assert!(!report.failures.is_empty());
}

#[test]
fn contraction_constants_all_one_are_flagged() {
    let (sys, mut cert) = spiral_certificate(2);
    cert.constants.r = vec![1.0; cert.constants.r.len()];
    let report = check_certificate(&sys, &cert, &CheckOptions::default()).unwrap();
    assert!(!report.valid);
    assert!(!report.invariant_violations.is_empty());
}

#[test]
fn rescaled_certificate_still_verifies() {
    let (sys, cert) = spiral_certificate(2);
    let scaled = cert.rescaled(10.0, &sys.registry).unwrap();
    assert_eq!(scaled.status, CertificateStatus::Unverified);
    let report = check_certificate(&sys, &scaled, &CheckOptions::default()).unwrap();
    assert!(report.valid, "{:?}", report.failures);
    // The worst sampled point depends on the certificate's shape, not its scale.
    let base = check_certificate(&sys, &cert, &CheckOptions::default()).unwrap();
    for (a, b) in base.sampling.iter().zip(&report.sampling) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.worst_point, b.worst_point, "{}", a.label);
    }
}

#[test]
fn certificate_for_another_system_is_a_mismatch() {
    let (_, cert) = spiral_certificate(2);
    let other = system("bouncing-ball.json", &[]);
    assert!(matches!(check_certificate(&other, &cert, &CheckOptions::default()), Err(CertError::Mismatch(_))));
}

#[test]
fn vanishing_field_at_anchor_is_reported_without_solving() {
    let sys = system("example1.json", &[]);
    let out = certify(&CertificationRequest::new(sys, 8)).unwrap();
    let CertifyOutcome::Failed(report) = out else { panic!("expected failure") };
    assert!(report.prescreen.is_none());
    assert!(report.notes.iter().any(|n| n.starts_with("mode 1:")));
    assert!(report.notes.iter().any(|n| n.starts_with("mode 3:")));
}

#[test]
fn solver_agrees_with_the_structural_obstruction() {
    let sys = system("example1.json", &[]);
    let mut req = CertificationRequest::new(sys, 4);
    req.structural_shortcut = false;
    let CertifyOutcome::Failed(report) = certify(&req).unwrap() else { panic!("expected failure") };
    assert_eq!(report.prescreen.as_ref().unwrap().status, "PrimalInfeasible");
}

#[test]
fn requests_are_validated() {
    let sys = system("spiral4.json", &[]);
    let mut req = CertificationRequest::new(sys.clone(), 3);
    assert!(matches!(certify(&req), Err(CertError::InvalidRequest(_))));
    req = CertificationRequest::new(sys.clone(), 2);
    req.r_grid = vec![vec![1.0; 4]];
    assert!(matches!(certify(&req), Err(CertError::InvalidRequest(_))));
    req = CertificationRequest::new(sys, 2);
    req.mode = CertMode::Extended { b_degree: 2, gamma_a: 2.0, tie_b_to_v: false };
    assert!(matches!(certify(&req), Err(CertError::UnsupportedMode(_))));
}

#[test]
fn extended_conditions_certify_the_spiral() {
    let sys = system("spiral4.json", &[]);
    let mut req = CertificationRequest::new(sys.clone(), 2);
    req.mode = CertMode::Extended { b_degree: 2, gamma_a: 1.0, tie_b_to_v: false };
    let out = certify(&req).unwrap();
    let cert = out.certificate().expect("extended spiral certifies");
    assert_eq!(cert.mode, "extended");
    assert!(cert.modes.iter().all(|m| m.b.is_some()));
    assert!(check_certificate(&sys, cert, &CheckOptions::default()).unwrap().valid);
}

#[test]
fn spiral_certificate_agrees_with_simulation() {
    let (sys, cert) = spiral_certificate(2);
    let report = batch_validate(&sys, &cert, &BatchConfig::new(20, 7)).unwrap();
    assert_eq!(report.samples.len(), 20);
    assert_eq!(report.zeno_count, 20);
    assert!(report.max_terminal_distance < 1e-3);
    let again = batch_validate(&sys, &cert, &BatchConfig { jobs: 3, ..BatchConfig::new(20, 7) }).unwrap();
    assert_eq!(report, again);
}

#[test]
fn batch_validation_requires_a_valid_certificate() {
    let (sys, mut cert) = spiral_certificate(2);
    cert.status = CertificateStatus::Invalid;
    assert!(batch_validate(&sys, &cert, &BatchConfig::new(5, 0)).is_err());
}

fn slope_request(c: f64, degree: u32) -> Result<CertificationRequest, CertError> {
    let mut o = BTreeMap::new();
    o.insert("C".to_string(), c);
    let sys = load_system(&text("spiral4-slope.json"), &o).map_err(|e| CertError::InvalidRequest(e.to_string()))?;
    let mut req = CertificationRequest::new(sys, degree);
    req.parameter_dependent_v = true;
    Ok(req)
}

/// With mode 1 moving along (-p, 1) the quadrant legs scale the distance to
/// the origin by 1/p, 1/2, 1/2, 1/2, so executions are Zeno exactly when p > 1/8.
const SLOPE_THRESHOLD: f64 = 0.125;

#[test]
fn sweep_never_certifies_below_the_true_threshold() {
    let res = sweep_lower_bound("C", 0.01, 3.0, 0.05, 2, &|c| slope_request(c, 2)).unwrap();
    assert!(res.is_ordered());
    assert!(res.lower_bound >= SLOPE_THRESHOLD, "{}", res.lower_bound);
    assert!(res.lower_bound <= 0.5, "{}", res.lower_bound);
    let (a, b) = *res.brackets.last().unwrap();
    assert!(b - a <= 0.05);
    // Bisection from width 2.99 to 0.05 takes six halvings.
    assert_eq!(res.probes.len(), 2 + 6);
}

#[test]
fn sweep_rejects_bad_brackets() {
    let make = |c: f64| slope_request(c, 2);
    assert!(matches!(sweep_lower_bound("C", 3.0, 0.01, 0.05, 2, &make), Err(CertError::InvalidBracket { .. })));
    assert!(matches!(sweep_lower_bound("C", 0.01, 0.05, 0.01, 2, &make), Err(CertError::InvalidBracket { .. })));
    assert!(matches!(sweep_lower_bound("C", 0.01, 3.0, 0.0, 2, &make), Err(CertError::InvalidRequest(_))));
}
