//! Cramér-Rao bounds from the pseudoinverse of an information matrix.
//!
//! The weak bound `(wᵀ√F√F⁺w)²/(wᵀFw)` is evaluated with `√F√F⁺ = Π`, the
//! support projector, which avoids forming matrix square roots near zero
//! eigenvalues.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::InfoMatrix;
use crate::numerics::{eig_psd, pseudoinverse, support_projector, RealSymMatrix, TolerancePolicy};
use crate::reduction::ESTIMABILITY_TOL;

/// Largest angle (radians) between `Fw` and `Πw` that still counts as
/// parallel.
pub const SATURATION_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Simultaneous,
    Distributed,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub scenario: ScenarioKind,
    /// `Tr F⁺` (simultaneous) or `wᵀF⁺w` (distributed).
    pub exact_bound: f64,
    pub weak_bound: Option<f64>,
    pub crb_matrix: Option<RealSymMatrix>,
    pub weight: Option<Vec<f64>>,
    pub estimable: bool,
    /// `(I − Π)w` when it is not negligible.
    pub kernel_component: Option<Vec<f64>>,
    pub saturation: Option<bool>,
    pub gap: Option<f64>,
    pub warnings: Vec<String>,
}

fn check_weight(f: &InfoMatrix, w: &[f64]) -> Result<DVector<f64>> {
    if w.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            what: "weight vector".into(),
            expected: f.dim(),
            got: w.len(),
        });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "weight vector".into(),
        });
    }
    let w = DVector::from_column_slice(w);
    if w.norm() == 0.0 {
        return Err(Error::ZeroWeight);
    }
    Ok(w)
}

/// `F⁺`; equal to `F⁻¹` when `F` has full rank.
pub fn crb_matrix(f: &InfoMatrix, tol: &TolerancePolicy) -> Result<RealSymMatrix> {
    pseudoinverse(&f.matrix, tol)
}

/// `Tr F⁺`.
pub fn trace_bound(f: &InfoMatrix, tol: &TolerancePolicy) -> Result<f64> {
    Ok(crb_matrix(f, tol)?.trace())
}

pub fn simultaneous_bound(f: &InfoMatrix, tol: &TolerancePolicy) -> Result<BoundReport> {
    let crb = crb_matrix(f, tol)?;
    Ok(BoundReport {
        scenario: ScenarioKind::Simultaneous,
        exact_bound: crb.trace(),
        weak_bound: None,
        crb_matrix: Some(crb),
        weight: None,
        estimable: true,
        kernel_component: None,
        saturation: None,
        gap: None,
        warnings: Vec::new(),
    })
}

/// `wᵀF⁺w` with an estimability verdict for `wᵀx`.
pub fn weighted_bound(f: &InfoMatrix, w: &[f64], tol: &TolerancePolicy) -> Result<BoundReport> {
    let wv = check_weight(f, w)?;
    let crb = crb_matrix(f, tol)?;
    let pi = support_projector(&f.matrix, tol)?;
    let kernel = &wv - pi.as_matrix() * &wv;
    let estimable = kernel.norm() <= ESTIMABILITY_TOL * wv.norm();
    let mut warnings = Vec::new();
    if !estimable {
        warnings.push(format!(
            "weight has a kernel component of norm {}; no unbiased estimator of w^T x exists that reaches the bound",
            kernel.norm()
        ));
    }
    Ok(BoundReport {
        scenario: ScenarioKind::Distributed,
        exact_bound: crb.quad_form(&wv),
        weak_bound: None,
        crb_matrix: Some(crb),
        weight: Some(w.to_vec()),
        estimable,
        kernel_component: (!estimable).then(|| kernel.iter().copied().collect()),
        saturation: None,
        gap: None,
        warnings,
    })
}

/// `wᵀFw`, `Fw` and `Πw`, rejecting weights with no support component.
fn weak_parts(
    f: &InfoMatrix,
    w: &DVector<f64>,
    tol: &TolerancePolicy,
) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let (eig, tau) = eig_psd(&f.matrix, tol)?;
    let fw = f.matrix.as_matrix() * w;
    let wfw = w.dot(&fw);
    if wfw <= tau * w.norm_squared() || wfw <= 0.0 {
        return Err(Error::WeightInKernel(wfw));
    }
    let mut pw = DVector::zeros(w.len());
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > tau {
            let v = eig.vector(k);
            pw += &v * v.dot(w);
        }
    }
    Ok((wfw, fw, pw))
}

/// `(wᵀΠw)² / (wᵀFw)`.
pub fn weak_bound(f: &InfoMatrix, w: &[f64], tol: &TolerancePolicy) -> Result<f64> {
    let wv = check_weight(f, w)?;
    let (wfw, _, pw) = weak_parts(f, &wv, tol)?;
    Ok(wv.dot(&pw).powi(2) / wfw)
}

fn angle_between(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let (ua, ub) = (a / na, b / nb);
    let cos = ua.dot(&ub);
    let sin = (&ua - &ub * cos).norm();
    sin.atan2(cos)
}

/// True iff `Fw ∥ Πw` within [`SATURATION_ANGLE`].
pub fn saturation_check(f: &InfoMatrix, w: &[f64], tol: &TolerancePolicy) -> Result<bool> {
    let wv = check_weight(f, w)?;
    let (_, fw, pw) = weak_parts(f, &wv, tol)?;
    Ok(angle_between(&fw, &pw) < SATURATION_ANGLE)
}

/// Exact and weak bounds side by side. A weight with no support component
/// yields a report with a warning instead of an error.
pub fn compare_bounds(f: &InfoMatrix, w: &[f64], tol: &TolerancePolicy) -> Result<BoundReport> {
    let mut report = weighted_bound(f, w, tol)?;
    let wv = DVector::from_column_slice(w);
    match weak_parts(f, &wv, tol) {
        Ok((wfw, fw, pw)) => {
            let weak = wv.dot(&pw).powi(2) / wfw;
            report.weak_bound = Some(weak);
            report.gap = Some(report.exact_bound - weak);
            report.saturation = Some(angle_between(&fw, &pw) < SATURATION_ANGLE);
        }
        Err(Error::WeightInKernel(wfw)) => {
            report.warnings.push(format!(
                "weight entirely in kernel (w^T F w = {wfw:e}); weak bound undefined"
            ));
        }
        Err(e) => return Err(e),
    }
    Ok(report)
}
