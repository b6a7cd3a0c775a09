//! Bisection for the smallest certifiable value of a scalar in the system.

use serde::{Deserialize, Serialize};

use super::{certify, CertError, CertificationRequest, CertifyOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepProbe {
    pub value: f64,
    pub certified: bool,
    /// Short outcome description.
    pub status: String,
    /// Probe ended in numerical failure on every solve; counted as not
    /// certified and excluded from the ordering invariant.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scalar: String,
    pub v_degree: u32,
    /// `[lo, hi]` after each step, starting with the initial bracket.
    pub brackets: Vec<(f64, f64)>,
    pub probes: Vec<SweepProbe>,
    /// Smallest certified value found.
    pub lower_bound: f64,
}

impl SweepResult {
    /// Every certified probe lies above every non-excluded uncertified one.
    pub fn is_ordered(&self) -> bool {
        let min_ok = self.probes.iter().filter(|p| p.certified).map(|p| p.value).fold(f64::INFINITY, f64::min);
        let max_bad = self
            .probes
            .iter()
            .filter(|p| !p.certified && !p.excluded)
            .map(|p| p.value)
            .fold(f64::NEG_INFINITY, f64::max);
        min_ok > max_bad
    }
}

fn probe(value: f64, make: &dyn Fn(f64) -> Result<CertificationRequest, CertError>) -> Result<SweepProbe, CertError> {
    let req = make(value)?;
    Ok(match certify(&req)? {
        CertifyOutcome::Certified(c) => SweepProbe {
            value,
            certified: true,
            status: format!("certified with r = {:?}", c.constants.r),
            excluded: false,
        },
        CertifyOutcome::Failed(f) => {
            let mut statuses: Vec<String> = f.prescreen.iter().chain(&f.probes).map(|p| p.status.clone()).collect();
            if statuses.is_empty() {
                statuses.push("structural obstruction".into());
            }
            SweepProbe {
                value,
                certified: false,
                status: format!("not certified ({})", statuses.join(", ")),
                excluded: f.numerical_only(),
            }
        }
    })
}

/// Bisects `[lo, hi]` until its width is at most `tol`. `make` builds the
/// request for a given scalar value; certification must succeed at `hi` and
/// fail at `lo`.
pub fn sweep_lower_bound(
    scalar: &str,
    lo: f64,
    hi: f64,
    tol: f64,
    v_degree: u32,
    make: &dyn Fn(f64) -> Result<CertificationRequest, CertError>,
) -> Result<SweepResult, CertError> {
    if !(tol > 0.0) {
        return Err(CertError::InvalidRequest(format!("sweep tolerance must be positive, got {tol}")));
    }
    if !(lo < hi) {
        return Err(CertError::InvalidBracket {
            lo_status: "not probed".into(),
            hi_status: "not probed".into(),
            message: format!("bracket [{lo}, {hi}] is empty or reversed"),
        });
    }
    let top = probe(hi, make)?;
    let bottom = probe(lo, make)?;
    if !top.certified || bottom.certified {
        return Err(CertError::InvalidBracket {
            lo_status: bottom.status,
            hi_status: top.status,
            message: format!("need certification at {hi} and failure at {lo}"),
        });
    }
    let mut probes = vec![top, bottom];
    let (mut a, mut b) = (lo, hi);
    let mut brackets = vec![(a, b)];
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let p = probe(mid, make)?;
        if p.certified {
            b = mid;
        } else {
            a = mid;
        }
        probes.push(p);
        brackets.push((a, b));
    }
    Ok(SweepResult { scalar: scalar.to_string(), v_degree, brackets, probes, lower_bound: b })
}
