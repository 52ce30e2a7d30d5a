//! Information matrices: the generic pure-state QFIM, closed forms for the
//! built-in probe families and the two spin models, the classical FIM of a
//! POVM, and a finite-difference QFIM used as an independent oracle.
//!
//! Closed forms and the generic engine are kept apart on purpose: every
//! [`InfoMatrix`] carries its [`Provenance`], and
//! [`compare_provenance`] reports where two constructions agree and where
//! they do not. For the cyclic phase-paired family they do differ (diagonal
//! `2/m` in the closed form against `4/m − 4/m²` from the state); both share
//! the alternating kernel vector for even `m` and the eigenvalue `4/m` along
//! the uniform direction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{eig_sym, sherman_morrison_inverse, RealSymMatrix, TolerancePolicy};
use crate::probes::{build_family, state_derivatives, state_vector, FamilySpec, LinearPhaseState, Povm, C64};

/// PSD slack accepted for information matrices, relative to `λ_max`.
pub const PSD_SLACK: f64 = 1e-10;

/// Probabilities below this are treated as zero by [`classical_fim`].
pub const ZERO_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GenericQfim,
    ClosedForm,
    ClassicalFim,
    FiniteDifference,
}

/// A Fisher or quantum Fisher information matrix with labels and origin.
#[derive(Debug, Clone, Serialize)]
pub struct InfoMatrix {
    pub matrix: RealSymMatrix,
    pub param_labels: Vec<String>,
    pub provenance: Provenance,
    pub context: String,
}

impl InfoMatrix {
    pub fn new(
        matrix: RealSymMatrix,
        param_labels: Vec<String>,
        provenance: Provenance,
        context: impl Into<String>,
    ) -> Result<Self> {
        if param_labels.len() != matrix.dim() {
            return Err(Error::DimensionMismatch {
                what: "parameter labels".into(),
                expected: matrix.dim(),
                got: param_labels.len(),
            });
        }
        let eig = eig_sym(&matrix)?;
        let lmax = eig.max_abs_eigenvalue();
        let min = *eig.eigenvalues.last().unwrap();
        if min < -PSD_SLACK * lmax {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
                threshold: PSD_SLACK * lmax,
            });
        }
        Ok(InfoMatrix {
            matrix,
            param_labels,
            provenance,
            context: context.into(),
        })
    }

    /// Wraps a user-supplied matrix with default labels `x1..xd`.
    pub fn from_matrix(matrix: RealSymMatrix, provenance: Provenance) -> Result<Self> {
        let labels = default_labels(matrix.dim());
        Self::new(matrix, labels, provenance, "")
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "parameter labels".into(),
                expected: self.dim(),
                got: labels.len(),
            });
        }
        self.param_labels = labels;
        Ok(self)
    }
}

pub fn default_labels(n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("x{k}")).collect()
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
    format!("({})", parts.join(", "))
}

/// `4 Re(⟨∂ⱼψ|∂ₖψ⟩ − ⟨∂ⱼψ|ψ⟩⟨ψ|∂ₖψ⟩)`.
fn pure_state_qfim(psi: &DVector<C64>, dpsi: &[DVector<C64>]) -> DMatrix<f64> {
    let n = dpsi.len();
    let overlaps: Vec<C64> = dpsi.iter().map(|d| d.dotc(psi)).collect();
    let mut f = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in j..n {
            let v = 4.0 * (dpsi[j].dotc(&dpsi[k]) - overlaps[j] * overlaps[k].conj()).re;
            f[(j, k)] = v;
            f[(k, j)] = v;
        }
    }
    f
}

fn generic_at(s: &LinearPhaseState, x: &[f64]) -> Result<DMatrix<f64>> {
    let psi = state_vector(s, x)?;
    let dpsi = state_derivatives(s, x)?;
    Ok(pure_state_qfim(&psi, &dpsi))
}

/// Generic pure-state QFIM at `x`.
///
/// For linear-phase states the result does not depend on `x`; this is
/// checked against a second, shifted point on every call.
pub fn qfim(s: &LinearPhaseState, x: &[f64]) -> Result<InfoMatrix> {
    let f = generic_at(s, x)?;
    let shifted: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(k, v)| v + 0.7315 + 0.2113 * k as f64)
        .collect();
    let g = generic_at(s, &shifted)?;
    let scale = f.amax().max(1.0);
    assert!(
        (&f - &g).amax() <= 1e-9 * scale,
        "linear-phase QFIM changed with x; derivative chain is inconsistent"
    );
    InfoMatrix::new(
        RealSymMatrix::new(f)?,
        default_labels(s.n_params()),
        Provenance::GenericQfim,
        format!("generic pure-state QFIM, {} kets, x = {}", s.dim(), fmt_point(x)),
    )
}

/// Closed-form QFIM of a built-in probe family.
///
/// The cyclic phase-paired matrix is the circulant with `2/m` on the
/// diagonal and `1/m` for each cyclic neighbour. For `m = 2` both
/// neighbours are the same entry and the contributions add to `2/m`, which
/// keeps the spectrum equal to [`cyclic_spectrum`].
pub fn closed_form_qfim(spec: &FamilySpec) -> Result<InfoMatrix> {
    spec.validate()?;
    let (m, context) = match spec {
        FamilySpec::GhzLike { nu } => (
            RealSymMatrix::outer(nu)?.into_inner(),
            format!("ghz_like closed form nu nu^T, nu = {}", fmt_point(nu)),
        ),
        FamilySpec::NoonLike { nu } => {
            let d = nu.len();
            let mp1 = (d + 1) as f64;
            let v = DVector::from_column_slice(nu);
            let diag = DMatrix::from_diagonal(&v.map(|x| x * x));
            let m = (diag * mp1 - &v * v.transpose()) * (4.0 / (mp1 * mp1));
            (m, format!("noon_like closed form, nu = {}", fmt_point(nu)))
        }
        FamilySpec::CyclicPaired { m } => {
            let m = *m;
            let inv = 1.0 / m as f64;
            let mut f = DMatrix::zeros(m, m);
            for j in 0..m {
                f[(j, j)] += 2.0 * inv;
                f[(j, (j + 1) % m)] += inv;
                f[(j, (j + m - 1) % m)] += inv;
            }
            (f, format!("cyclic_paired closed form, m = {m}"))
        }
        FamilySpec::Custom { .. } => return Err(Error::NoClosedForm("custom".into())),
    };
    InfoMatrix::new(
        RealSymMatrix::new(m)?,
        default_labels(spec.n_params()),
        Provenance::ClosedForm,
        context,
    )
}

/// Eigenvalues `λₖ = (2/m)(1 + cos(2πk/m))` for `k = 1..m`, in that order.
pub fn cyclic_spectrum(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidFamily {
            field: "m".into(),
            reason: format!("cyclic spectrum requires m >= 2, got {m}"),
        });
    }
    let mf = m as f64;
    Ok((1..=m)
        .map(|k| (2.0 / mf) * (1.0 + (2.0 * PI * k as f64 / mf).cos()))
        .collect())
}

/// Inverse of the NOON-like QFIM by Sherman-Morrison on
/// `A = 4 diag(ν²)/(m+1)` and the rank-one update `−4ννᵀ/(m+1)²`.
pub fn noon_qfim_inverse(nu: &[f64]) -> Result<DMatrix<f64>> {
    FamilySpec::NoonLike { nu: nu.to_vec() }.validate()?;
    let mp1 = (nu.len() + 1) as f64;
    let a_inv: Vec<f64> = nu.iter().map(|v| mp1 / (4.0 * v * v)).collect();
    let v = DVector::from_column_slice(nu);
    let u = &v * (-4.0 / (mp1 * mp1));
    sherman_morrison_inverse(&RealSymMatrix::from_diagonal(&a_inv)?, &u, &v)
}

/// Interacting spin models with closed-form two-parameter QFIMs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ManyBodySpec {
    /// Transverse-field Ising chain, parameters `(ω, g)`.
    TransverseIsing { omega: f64, g: f64, n_sites: usize },
    /// Three-site XY model, parameters `(λ, γ)` at field `h`.
    XyThreeSite { lambda: f64, gamma: f64, h: f64 },
}

impl ManyBodySpec {
    pub fn name(&self) -> &'static str {
        match self {
            ManyBodySpec::TransverseIsing { .. } => "transverse_ising",
            ManyBodySpec::XyThreeSite { .. } => "xy_three_site",
        }
    }

    /// The true parameter point the QFIM is evaluated at.
    pub fn point(&self) -> Vec<f64> {
        match *self {
            ManyBodySpec::TransverseIsing { omega, g, .. } => vec![omega, g],
            ManyBodySpec::XyThreeSite { lambda, gamma, .. } => vec![lambda, gamma],
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            ManyBodySpec::TransverseIsing { .. } => vec!["omega".into(), "g".into()],
            ManyBodySpec::XyThreeSite { .. } => vec!["lambda".into(), "gamma".into()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidFamily {
                field: field.into(),
                reason,
            })
        };
        match *self {
            ManyBodySpec::TransverseIsing { omega, g, n_sites } => {
                if !omega.is_finite() || !g.is_finite() {
                    return bad("omega", "omega and g must be finite".into());
                }
                if n_sites < 2 || n_sites % 2 != 0 {
                    return bad("n_sites", format!("must be even and >= 2, got {n_sites}"));
                }
            }
            ManyBodySpec::XyThreeSite { lambda, gamma, h } => {
                if !lambda.is_finite() || !gamma.is_finite() || !h.is_finite() {
                    return bad("lambda", "lambda, gamma and h must be finite".into());
                }
            }
        }
        Ok(())
    }
}

/// Momenta `k = π(2n+1)/N`, `n = 0..N/2−1`.
pub fn ising_momenta(n_sites: usize) -> Vec<f64> {
    (0..n_sites / 2)
        .map(|n| PI * (2 * n + 1) as f64 / n_sites as f64)
        .collect()
}

pub fn many_body_qfim(spec: &ManyBodySpec) -> Result<InfoMatrix> {
    spec.validate()?;
    let (m, context) = match *spec {
        ManyBodySpec::TransverseIsing { omega, g, n_sites } => {
            let mut weight = 0.0;
            for k in ising_momenta(n_sites) {
                let den = g * g + omega * omega - 2.0 * g * omega * k.cos();
                if den.abs() <= 1e-14 * (g * g + omega * omega) || den == 0.0 {
                    return Err(Error::CriticalPoint(format!(
                        "transverse_ising denominator vanishes at k = {k} (omega = {omega}, g = {g})"
                    )));
                }
                weight += k.sin().powi(2) / (den * den);
            }
            let m = DMatrix::from_row_slice(2, 2, &[g * g, -g * omega, -g * omega, omega * omega]) * weight;
            (m, format!("transverse_ising closed form, omega = {omega}, g = {g}, N = {n_sites}"))
        }
        ManyBodySpec::XyThreeSite { lambda, gamma, h } => {
            let den = (3.0 * gamma * gamma + 1.0) * lambda * lambda + 4.0 * h * h + 4.0 * h * lambda;
            let scale = (3.0 * gamma * gamma + 1.0) * lambda * lambda + 4.0 * h * h + 4.0 * (h * lambda).abs();
            if den == 0.0 || den.abs() <= 1e-14 * scale {
                return Err(Error::CriticalPoint(format!(
                    "xy_three_site denominator (3 gamma^2 + 1) lambda^2 + 4 h^2 + 4 h lambda vanishes \
                     (lambda = {lambda}, gamma = {gamma}, h = {h})"
                )));
            }
            let off = 6.0 * gamma * h * lambda * (2.0 * h + lambda);
            let m = DMatrix::from_row_slice(
                2,
                2,
                &[
                    12.0 * gamma * gamma * h * h,
                    off,
                    off,
                    3.0 * lambda * lambda * (lambda + 2.0 * h).powi(2),
                ],
            ) / (den * den);
            (m, format!("xy_three_site closed form, lambda = {lambda}, gamma = {gamma}, h = {h}"))
        }
    };
    InfoMatrix::new(RealSymMatrix::new(m)?, spec.labels(), Provenance::ClosedForm, context)
}

/// `∇Ω` over `(λ, γ)` for `Ω = λγ/(2h + λ)`.
pub fn xy_order_gradient(lambda: f64, gamma: f64, h: f64) -> Result<[f64; 2]> {
    let s = 2.0 * h + lambda;
    if s == 0.0 {
        return Err(Error::CriticalPoint("2h + lambda = 0; Omega undefined".into()));
    }
    Ok([2.0 * h * gamma / (s * s), lambda / s])
}

/// Classical FIM `Σᵧ (∂ⱼp)(∂ₖp)/p` with `p(y|x) = ⟨ψ_x|Mᵧ|ψ_x⟩`, using
/// analytic state derivatives.
pub fn classical_fim(s: &LinearPhaseState, povm: &Povm, x: &[f64]) -> Result<InfoMatrix> {
    if povm.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            what: "POVM dimension".into(),
            expected: s.dim(),
            got: povm.dim(),
        });
    }
    let psi = state_vector(s, x)?;
    let dpsi = state_derivatives(s, x)?;
    let n = s.n_params();
    let mut f = DMatrix::zeros(n, n);
    for (y, m) in povm.elements().iter().enumerate() {
        let m_psi = m * &psi;
        let p = psi.dotc(&m_psi).re;
        let grad: Vec<f64> = dpsi.iter().map(|d| 2.0 * d.dotc(&m_psi).re).collect();
        if p < ZERO_PROBABILITY {
            if grad.iter().all(|g| g.abs() < ZERO_PROBABILITY) {
                continue;
            }
            return Err(Error::FimDivergent {
                outcome: y,
                probability: p,
            });
        }
        for j in 0..n {
            for k in 0..n {
                f[(j, k)] += grad[j] * grad[k] / p;
            }
        }
    }
    InfoMatrix::new(
        RealSymMatrix::new(f)?,
        default_labels(n),
        Provenance::ClassicalFim,
        format!("classical FIM, {} outcomes, x = {}", povm.n_outcomes(), fmt_point(x)),
    )
}

/// QFIM with derivatives replaced by central differences of the state
/// vector. The `2·n_params` shifted states may be evaluated in parallel;
/// they are combined in index order.
pub fn qfim_fd_oracle(s: &LinearPhaseState, x: &[f64], h: f64) -> Result<InfoMatrix> {
    qfim_fd_oracle_with(s, x, h, Exec::default())
}

pub fn qfim_fd_oracle_with(s: &LinearPhaseState, x: &[f64], h: f64, exec: Exec) -> Result<InfoMatrix> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {h}"
        )));
    }
    let psi = state_vector(s, x)?;
    let n = s.n_params();
    let shifted = exec.try_map_indexed(2 * n, |i| {
        let mut xs = x.to_vec();
        xs[i / 2] += if i % 2 == 0 { h } else { -h };
        state_vector(s, &xs)
    })?;
    let dpsi: Vec<DVector<C64>> = (0..n)
        .map(|k| (&shifted[2 * k] - &shifted[2 * k + 1]) / C64::new(2.0 * h, 0.0))
        .collect();
    InfoMatrix::new(
        RealSymMatrix::new(pure_state_qfim(&psi, &dpsi))?,
        default_labels(n),
        Provenance::FiniteDifference,
        format!("finite-difference QFIM, h = {h}, x = {}", fmt_point(x)),
    )
}

/// Information matrix for a family in the requested construction.
pub fn family_qfim(spec: &FamilySpec, x: &[f64], provenance: Provenance) -> Result<InfoMatrix> {
    match provenance {
        Provenance::ClosedForm => closed_form_qfim(spec),
        Provenance::GenericQfim => qfim(&build_family(spec)?, x),
        Provenance::FiniteDifference => qfim_fd_oracle(&build_family(spec)?, x, 1e-5),
        Provenance::ClassicalFim => Err(Error::InvalidArgument(
            "a classical FIM needs a POVM; use classical_fim".into(),
        )),
    }
}

/// Behaviour of two matrices along the normalized all-ones direction.
#[derive(Debug, Clone, Serialize)]
pub struct UniformDirection {
    pub rayleigh_reference: f64,
    pub rayleigh_candidate: f64,
    /// `‖F u − (uᵀFu) u‖` for reference and candidate.
    pub residual_reference: f64,
    pub residual_candidate: f64,
    pub common_eigenvector: bool,
    pub same_eigenvalue: bool,
}

/// Side-by-side report of two constructions of the same information matrix.
#[derive(Debug, Clone, Serialize)]
pub struct ProvenanceComparison {
    pub reference: Provenance,
    pub candidate: Provenance,
    pub max_abs_difference: f64,
    pub matrices_agree: bool,
    pub difference: RealSymMatrix,
    pub eigenvalues_reference: Vec<f64>,
    pub eigenvalues_candidate: Vec<f64>,
    pub rank_reference: usize,
    pub rank_candidate: usize,
    /// Largest `‖F_other · v̄‖` over each matrix's kernel basis vectors.
    pub kernel_residual: f64,
    pub shared_kernel: bool,
    pub uniform_direction: UniformDirection,
    pub summary: Vec<String>,
}

/// Agreement threshold used by [`compare_provenance`].
pub const PROVENANCE_TOL: f64 = 1e-10;

pub fn compare_provenance(
    reference: &InfoMatrix,
    candidate: &InfoMatrix,
    tol: &TolerancePolicy,
) -> Result<ProvenanceComparison> {
    let d = reference.dim();
    if candidate.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "compared information matrix".into(),
            expected: d,
            got: candidate.dim(),
        });
    }
    let (a, b) = (reference.matrix.as_matrix(), candidate.matrix.as_matrix());
    let diff = a - b;
    let max_abs_difference = diff.amax();
    let scale = a.amax().max(b.amax()).max(1.0);
    let matrices_agree = max_abs_difference <= PROVENANCE_TOL * scale;

    let ea = eig_sym(&reference.matrix)?;
    let eb = eig_sym(&candidate.matrix)?;
    let tau_a = tol.threshold(ea.max_abs_eigenvalue());
    let tau_b = tol.threshold(eb.max_abs_eigenvalue());
    let rank_a = ea.eigenvalues.iter().filter(|l| l.abs() > tau_a).count();
    let rank_b = eb.eigenvalues.iter().filter(|l| l.abs() > tau_b).count();

    let mut kernel_residual = 0.0_f64;
    for k in rank_a..d {
        kernel_residual = kernel_residual.max((b * ea.vector(k)).amax());
    }
    for k in rank_b..d {
        kernel_residual = kernel_residual.max((a * eb.vector(k)).amax());
    }
    let shared_kernel = rank_a == rank_b && kernel_residual <= PROVENANCE_TOL * scale;

    let u = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let along = |m: &DMatrix<f64>| {
        let mu = m * &u;
        let r = u.dot(&mu);
        (r, (mu - &u * r).norm())
    };
    let (ra, resa) = along(a);
    let (rb, resb) = along(b);
    let common_eigenvector = resa <= PROVENANCE_TOL * scale && resb <= PROVENANCE_TOL * scale;
    let uniform_direction = UniformDirection {
        rayleigh_reference: ra,
        rayleigh_candidate: rb,
        residual_reference: resa,
        residual_candidate: resb,
        common_eigenvector,
        same_eigenvalue: common_eigenvector && (ra - rb).abs() <= PROVENANCE_TOL * scale,
    };

    let name = |p: Provenance| match p {
        Provenance::GenericQfim => "generic",
        Provenance::ClosedForm => "closed-form",
        Provenance::ClassicalFim => "classical",
        Provenance::FiniteDifference => "finite-difference",
    };
    let (rn, cn) = (name(reference.provenance), name(candidate.provenance));
    let mut summary = Vec::new();
    if matrices_agree {
        summary.push(format!("{rn} and {cn} matrices agree (max |difference| = {max_abs_difference:e})"));
    } else {
        summary.push(format!(
            "{rn} and {cn} matrices DIFFER: max |difference| = {max_abs_difference:e}"
        ));
    }
    if rank_a < d || rank_b < d {
        summary.push(if shared_kernel {
            format!("both share the same {}-dimensional kernel (residual {kernel_residual:e})", d - rank_a)
        } else {
            format!(
                "kernels differ: rank {rank_a} vs {rank_b}, cross residual {kernel_residual:e}"
            )
        });
    }
    if uniform_direction.same_eigenvalue {
        summary.push(format!("uniform direction is a common eigenvector with eigenvalue {ra}"));
    } else if common_eigenvector {
        summary.push(format!("uniform direction is a common eigenvector with eigenvalues {ra} vs {rb}"));
    }
    Ok(ProvenanceComparison {
        reference: reference.provenance,
        candidate: candidate.provenance,
        max_abs_difference,
        matrices_agree,
        difference: RealSymMatrix::new(diff)?,
        eigenvalues_reference: ea.eigenvalues,
        eigenvalues_candidate: eb.eigenvalues,
        rank_reference: rank_a,
        rank_candidate: rank_b,
        kernel_residual,
        shared_kernel,
        uniform_direction,
        summary,
    })
}
