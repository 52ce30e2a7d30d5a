//! Linear-phase probe states `|ψ_x⟩ = Σⱼ cⱼ exp(i νⱼᵀx) |j⟩` and measurements
//! over their ket basis.
//!
//! GHZ-like, NOON-like and cyclic phase-paired probes are all of this form,
//! so they share one representation and one set of derivative routines.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::random::normal;

pub type C64 = Complex<f64>;

pub const NORMALIZATION_TOL: f64 = 1e-12;
pub const POVM_COMPLETENESS_TOL: f64 = 1e-10;

/// One basis ket with its amplitude and phase-encoding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ket {
    pub label: String,
    pub amplitude: C64,
    pub encoding: Vec<f64>,
}

impl Ket {
    pub fn new(label: impl Into<String>, amplitude: C64, encoding: Vec<f64>) -> Self {
        Ket {
            label: label.into(),
            amplitude,
            encoding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearPhaseState {
    n_params: usize,
    kets: Vec<Ket>,
}

impl LinearPhaseState {
    pub fn new(n_params: usize, kets: Vec<Ket>) -> Result<Self> {
        if n_params == 0 {
            return Err(Error::InvalidFamily {
                field: "n_params".into(),
                reason: "at least one parameter is required".into(),
            });
        }
        if kets.is_empty() {
            return Err(Error::InvalidFamily {
                field: "kets".into(),
                reason: "state has no kets".into(),
            });
        }
        for (j, k) in kets.iter().enumerate() {
            if k.encoding.len() != n_params {
                return Err(Error::InvalidFamily {
                    field: format!("kets[{j}].encoding"),
                    reason: format!("expected {n_params} entries, got {}", k.encoding.len()),
                });
            }
            if !k.amplitude.re.is_finite()
                || !k.amplitude.im.is_finite()
                || k.encoding.iter().any(|v| !v.is_finite())
            {
                return Err(Error::InvalidFamily {
                    field: format!("kets[{j}]"),
                    reason: "non-finite amplitude or encoding".into(),
                });
            }
        }
        let norm_sq: f64 = kets.iter().map(|k| k.amplitude.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { norm_sq });
        }
        Ok(LinearPhaseState { n_params, kets })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Hilbert-space dimension (number of kets).
    pub fn dim(&self) -> usize {
        self.kets.len()
    }

    pub fn kets(&self) -> &[Ket] {
        &self.kets
    }

    /// Population weights `|cⱼ|²`.
    pub fn weights(&self) -> Vec<f64> {
        self.kets.iter().map(|k| k.amplitude.norm_sqr()).collect()
    }

    /// True when every encoding entry is an integer, i.e. every phase is
    /// 2π-periodic in every parameter.
    pub fn has_integer_encodings(&self) -> bool {
        self.kets
            .iter()
            .flat_map(|k| k.encoding.iter())
            .all(|v| (v - v.round()).abs() < 1e-12)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_params {
            return Err(Error::DimensionMismatch {
                what: "parameter vector x".into(),
                expected: self.n_params,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector x".into(),
            });
        }
        Ok(())
    }

    fn phased(&self, x: &[f64]) -> DVector<C64> {
        DVector::from_iterator(
            self.dim(),
            self.kets.iter().map(|k| {
                let phase: f64 = k.encoding.iter().zip(x).map(|(n, x)| n * x).sum();
                k.amplitude * C64::from_polar(1.0, phase)
            }),
        )
    }
}

/// `cⱼ exp(i νⱼᵀx)` for every ket.
pub fn state_vector(s: &LinearPhaseState, x: &[f64]) -> Result<DVector<C64>> {
    s.check_point(x)?;
    Ok(s.phased(x))
}

/// `∂ψ/∂x_k` for each parameter `k`; component `j` is `i [νⱼ]ₖ cⱼ exp(i νⱼᵀx)`.
pub fn state_derivatives(s: &LinearPhaseState, x: &[f64]) -> Result<Vec<DVector<C64>>> {
    s.check_point(x)?;
    let psi = s.phased(x);
    Ok((0..s.n_params)
        .map(|k| {
            DVector::from_iterator(
                s.dim(),
                s.kets
                    .iter()
                    .zip(psi.iter())
                    .map(|(ket, a)| C64::new(0.0, ket.encoding[k]) * a),
            )
        })
        .collect())
}

/// `∂²ψ/∂x_a∂x_b`, indexed `[a][b]`.
pub fn state_second_derivatives(
    s: &LinearPhaseState,
    x: &[f64],
) -> Result<Vec<Vec<DVector<C64>>>> {
    s.check_point(x)?;
    let psi = s.phased(x);
    let n = s.n_params;
    Ok((0..n)
        .map(|a| {
            (0..n)
                .map(|b| {
                    DVector::from_iterator(
                        s.dim(),
                        s.kets
                            .iter()
                            .zip(psi.iter())
                            .map(|(ket, amp)| amp * (-ket.encoding[a] * ket.encoding[b])),
                    )
                })
                .collect()
        })
        .collect())
}

/// Parametrization of a built-in probe family, or an explicit custom state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    /// `(|v₀⟩ + e^{iνᵀx}|v₁⟩)/√2`.
    GhzLike { nu: Vec<f64> },
    /// `(|v₀⟩ + Σⱼ e^{iνⱼxⱼ}|vⱼ⟩)/√(m+1)`.
    NoonLike { nu: Vec<f64> },
    /// `Σⱼ (|0ⱼ⟩ + e^{i(xⱼ + x_{j⊕1})}|1ⱼ⟩)/√(2m)`, `j⊕1` wrapping from `m` to 1.
    CyclicPaired { m: usize },
    Custom { n_params: usize, kets: Vec<Ket> },
}

impl FamilySpec {
    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::GhzLike { .. } => "ghz_like",
            FamilySpec::NoonLike { .. } => "noon_like",
            FamilySpec::CyclicPaired { .. } => "cyclic_paired",
            FamilySpec::Custom { .. } => "custom",
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            FamilySpec::GhzLike { nu } | FamilySpec::NoonLike { nu } => nu.len(),
            FamilySpec::CyclicPaired { m } => *m,
            FamilySpec::Custom { n_params, .. } => *n_params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidFamily {
                field: field.into(),
                reason,
            })
        };
        match self {
            FamilySpec::GhzLike { nu } | FamilySpec::NoonLike { nu } => {
                if nu.is_empty() {
                    return bad("nu", "must have at least one entry".into());
                }
                if let Some(j) = nu.iter().position(|v| !v.is_finite()) {
                    return bad(&format!("nu[{j}]"), "must be finite".into());
                }
                if let FamilySpec::NoonLike { nu } = self {
                    if let Some(j) = nu.iter().position(|v| *v == 0.0) {
                        return bad(&format!("nu[{j}]"), "noon_like requires nonzero entries".into());
                    }
                }
                Ok(())
            }
            FamilySpec::CyclicPaired { m } => {
                if *m < 2 {
                    return bad("m", format!("cyclic_paired requires m >= 2, got {m}"));
                }
                Ok(())
            }
            FamilySpec::Custom { .. } => Ok(()),
        }
    }
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    e
}

pub fn build_family(spec: &FamilySpec) -> Result<LinearPhaseState> {
    spec.validate()?;
    match spec {
        FamilySpec::GhzLike { nu } => {
            let c = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            LinearPhaseState::new(
                nu.len(),
                vec![
                    Ket::new("v0", c, vec![0.0; nu.len()]),
                    Ket::new("v1", c, nu.clone()),
                ],
            )
        }
        FamilySpec::NoonLike { nu } => {
            let m = nu.len();
            let c = C64::new(1.0 / ((m + 1) as f64).sqrt(), 0.0);
            let mut kets = vec![Ket::new("v0", c, vec![0.0; m])];
            kets.extend(nu.iter().enumerate().map(|(j, &n)| {
                let mut e = unit(m, j);
                e[j] = n;
                Ket::new(format!("v{}", j + 1), c, e)
            }));
            LinearPhaseState::new(m, kets)
        }
        FamilySpec::CyclicPaired { m } => {
            let m = *m;
            let c = C64::new(1.0 / ((2 * m) as f64).sqrt(), 0.0);
            let mut kets: Vec<Ket> = (0..m)
                .map(|j| Ket::new(format!("0_{}", j + 1), c, vec![0.0; m]))
                .collect();
            kets.extend((0..m).map(|j| {
                let mut e = unit(m, j);
                e[(j + 1) % m] += 1.0;
                Ket::new(format!("1_{}", j + 1), c, e)
            }));
            LinearPhaseState::new(m, kets)
        }
        FamilySpec::Custom { n_params, kets } => LinearPhaseState::new(*n_params, kets.clone()),
    }
}

/// A POVM given as Hermitian matrices over a state's ket basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    elements: Vec<DMatrix<C64>>,
}

impl Povm {
    pub fn new(elements: Vec<DMatrix<C64>>) -> Result<Self> {
        let Some(first) = elements.first() else {
            return Err(Error::InvalidPovm("no elements".into()));
        };
        let d = first.nrows();
        let mut sum = DMatrix::<C64>::zeros(d, d);
        for (y, m) in elements.iter().enumerate() {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::InvalidPovm(format!(
                    "element {y} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidPovm(format!("element {y} has non-finite entries")));
            }
            let herm = (m - m.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
            if herm > POVM_COMPLETENESS_TOL {
                return Err(Error::InvalidPovm(format!(
                    "element {y} is not Hermitian (deviation {herm:e})"
                )));
            }
            let scale = m.iter().fold(0.0_f64, |a, z| a.max(z.norm())).max(1.0);
            let min_eig = nalgebra::SymmetricEigen::new((m + m.adjoint()) * C64::new(0.5, 0.0))
                .eigenvalues
                .min();
            if min_eig < -POVM_COMPLETENESS_TOL * scale {
                return Err(Error::InvalidPovm(format!(
                    "element {y} is not PSD (eigenvalue {min_eig:e})"
                )));
            }
            sum += m;
        }
        let dev = (sum - DMatrix::<C64>::identity(d, d))
            .iter()
            .fold(0.0_f64, |a, z| a.max(z.norm()));
        if dev > POVM_COMPLETENESS_TOL {
            return Err(Error::InvalidPovm(format!(
                "elements sum to identity only within {dev:e}"
            )));
        }
        Ok(Povm { elements })
    }

    /// Rank-one POVM `{|uᵧ⟩⟨uᵧ|}` from unnormalized vectors that already
    /// resolve the identity.
    pub fn from_vectors(vectors: &[DVector<C64>]) -> Result<Self> {
        Self::new(vectors.iter().map(|u| u * u.adjoint()).collect())
    }

    pub fn elements(&self) -> &[DMatrix<C64>] {
        &self.elements
    }

    pub fn n_outcomes(&self) -> usize {
        self.elements.len()
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    /// The trivial single-outcome measurement.
    pub fn identity(d: usize) -> Self {
        Povm {
            elements: vec![DMatrix::identity(d, d)],
        }
    }

    /// Projective measurement in the ket basis.
    pub fn computational(d: usize) -> Self {
        Povm {
            elements: (0..d)
                .map(|j| {
                    let mut m = DMatrix::zeros(d, d);
                    m[(j, j)] = C64::new(1.0, 0.0);
                    m
                })
                .collect(),
        }
    }

    /// `{|+⟩⟨+|, |−⟩⟨−|}` on a two-ket state.
    pub fn plus_minus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DVector::from_vec(vec![C64::new(h, 0.0), C64::new(h, 0.0)]);
        let minus = DVector::from_vec(vec![C64::new(h, 0.0), C64::new(-h, 0.0)]);
        Povm {
            elements: vec![&plus * plus.adjoint(), &minus * minus.adjoint()],
        }
    }

    /// Interference between every pair of kets `(a, b)` at relative phases
    /// 0, π/2, π, 3π/2. Determines all relative phases of a pure state, so
    /// it identifies every phase combination the state encodes.
    pub fn pairwise_interference(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidPovm("pairwise interference needs d >= 2".into()));
        }
        // each ket appears in d-1 pairs, each pair contributes 2(|a⟩⟨a|+|b⟩⟨b|)
        let norm = (1.0 / (4.0 * (d - 1) as f64)).sqrt();
        let mut vectors = Vec::new();
        for a in 0..d {
            for b in (a + 1)..d {
                for q in 0..4 {
                    let phase = C64::from_polar(1.0, q as f64 * std::f64::consts::FRAC_PI_2);
                    let mut u = DVector::zeros(d);
                    u[a] = C64::new(norm, 0.0);
                    u[b] = phase * norm;
                    vectors.push(u);
                }
            }
        }
        Self::from_vectors(&vectors)
    }

    /// Random rank-one POVM with `n_outcomes ≥ d` elements:
    /// `Mᵧ = S^{-1/2} gᵧgᵧ† S^{-1/2}` with Gaussian `gᵧ` and `S = Σ gᵧgᵧ†`.
    pub fn random_rank_one<R: Rng + ?Sized>(rng: &mut R, d: usize, n_outcomes: usize) -> Result<Self> {
        if n_outcomes < d {
            return Err(Error::InvalidPovm(format!(
                "need at least {d} outcomes for a {d}-dimensional POVM"
            )));
        }
        let gs: Vec<DVector<C64>> = (0..n_outcomes)
            .map(|_| DVector::from_fn(d, |_, _| C64::new(normal(rng), normal(rng))))
            .collect();
        let s = gs
            .iter()
            .fold(DMatrix::<C64>::zeros(d, d), |acc, g| acc + g * g.adjoint());
        let eig = nalgebra::SymmetricEigen::new(s);
        let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(1.0 / l.sqrt(), 0.0)));
        let s_inv_sqrt = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.adjoint();
        let vectors: Vec<DVector<C64>> = gs.iter().map(|g| &s_inv_sqrt * g).collect();
        Self::from_vectors(&vectors)
    }

    /// Born-rule probabilities `⟨ψ|Mᵧ|ψ⟩`.
    pub fn probabilities(&self, psi: &DVector<C64>) -> Vec<f64> {
        self.elements
            .iter()
            .map(|m| psi.dotc(&(m * psi)).re)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() < 1e-14
    }

    #[test]
    fn ghz_structure() {
        let s = build_family(&FamilySpec::GhzLike { nu: vec![1.0, -2.0] }).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.kets()[0].encoding, vec![0.0, 0.0]);
        assert_eq!(s.kets()[1].encoding, vec![1.0, -2.0]);
        assert!((s.kets()[1].amplitude.re - FRAC_1_SQRT_2).abs() < 1e-15);

        let six = build_family(&FamilySpec::GhzLike { nu: vec![2.0; 3] }).unwrap();
        let psi = state_vector(&six, &[0.1, 0.2, 0.3]).unwrap();
        assert!(close(psi[1], C64::from_polar(FRAC_1_SQRT_2, 2.0 * 0.6)));
    }

    #[test]
    fn noon_structure() {
        let s = build_family(&FamilySpec::NoonLike { nu: vec![1.0, 3.0] }).unwrap();
        assert_eq!(s.dim(), 3);
        assert_eq!(s.kets()[2].encoding, vec![0.0, 3.0]);
        assert!(build_family(&FamilySpec::NoonLike { nu: vec![1.0, 0.0] }).is_err());
    }

    #[test]
    fn cyclic_structure() {
        let s = build_family(&FamilySpec::CyclicPaired { m: 3 }).unwrap();
        assert_eq!(s.dim(), 6);
        let encs: Vec<_> = s.kets()[3..].iter().map(|k| k.encoding.clone()).collect();
        assert_eq!(
            encs,
            vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]]
        );
        assert!(s.weights().iter().all(|w| (w - 1.0 / 6.0).abs() < 1e-15));
        let two = build_family(&FamilySpec::CyclicPaired { m: 2 }).unwrap();
        assert_eq!(two.kets()[2].encoding, vec![1.0, 1.0]);
        assert_eq!(two.kets()[3].encoding, vec![1.0, 1.0]);
        match build_family(&FamilySpec::CyclicPaired { m: 1 }) {
            Err(Error::InvalidFamily { field, .. }) => assert_eq!(field, "m"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn custom_rejects_bad_states() {
        let bad_norm = FamilySpec::Custom {
            n_params: 1,
            kets: vec![Ket::new("a", C64::new(1.0, 0.0), vec![0.0]), Ket::new("b", C64::new(0.5, 0.0), vec![1.0])],
        };
        assert!(matches!(build_family(&bad_norm), Err(Error::NotNormalized { .. })));
        let bad_len = FamilySpec::Custom {
            n_params: 2,
            kets: vec![Ket::new("a", C64::new(1.0, 0.0), vec![0.0])],
        };
        match build_family(&bad_len) {
            Err(Error::InvalidFamily { field, .. }) => assert_eq!(field, "kets[0].encoding"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn state_vector_examples() {
        let s = build_family(&FamilySpec::GhzLike { nu: vec![1.0, -2.0] }).unwrap();
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        let psi = state_vector(&s, &[0.0, 0.0]).unwrap();
        assert!(close(psi[0], h) && close(psi[1], h));
        let psi = state_vector(&s, &[PI, 0.0]).unwrap();
        assert!(close(psi[1], -h));

        let n = build_family(&FamilySpec::NoonLike { nu: vec![1.0, 1.0] }).unwrap();
        let psi = state_vector(&n, &[PI / 2.0, 0.0]).unwrap();
        let t = 1.0 / 3f64.sqrt();
        assert!(close(psi[0], C64::new(t, 0.0)));
        assert!(close(psi[1], C64::new(0.0, t)));
        assert!(close(psi[2], C64::new(t, 0.0)));

        assert!(matches!(state_vector(&s, &[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn derivative_examples() {
        let s = build_family(&FamilySpec::GhzLike { nu: vec![1.0, -2.0] }).unwrap();
        let d = state_derivatives(&s, &[0.0, 0.0]).unwrap();
        assert!(close(d[0][0], C64::new(0.0, 0.0)));
        assert!(close(d[0][1], C64::new(0.0, FRAC_1_SQRT_2)));
        assert!(close(d[1][1], C64::new(0.0, -2.0 * FRAC_1_SQRT_2)));

        let n = build_family(&FamilySpec::NoonLike { nu: vec![1.0, 1.0, 2.0] }).unwrap();
        let z = build_family(&FamilySpec::Custom {
            n_params: 2,
            kets: vec![
                Ket::new("a", C64::new(FRAC_1_SQRT_2, 0.0), vec![1.0, 0.0]),
                Ket::new("b", C64::new(0.0, FRAC_1_SQRT_2), vec![3.0, 0.0]),
            ],
        })
        .unwrap();
        let d = state_derivatives(&z, &[0.4, 1.1]).unwrap();
        assert!(d[1].iter().all(|c| c.norm() == 0.0));
        assert_eq!(state_derivatives(&n, &[0.1, 0.2, 0.3]).unwrap().len(), 3);
    }

    #[test]
    fn povm_validation() {
        assert!(Povm::new(Povm::plus_minus().elements().to_vec()).is_ok());
        assert!(Povm::new(Povm::computational(3).elements().to_vec()).is_ok());
        let p = Povm::pairwise_interference(3).unwrap();
        assert_eq!(p.n_outcomes(), 12);
        let incomplete = vec![Povm::computational(2).elements()[0].clone()];
        assert!(matches!(Povm::new(incomplete), Err(Error::InvalidPovm(_))));
        let mut neg = DMatrix::<C64>::identity(2, 2) * C64::new(2.0, 0.0);
        neg[(1, 1)] = C64::new(-1.0, 0.0);
        let other = DMatrix::<C64>::identity(2, 2) - &neg;
        assert!(matches!(Povm::new(vec![neg, other]), Err(Error::InvalidPovm(_))));
        assert!(Povm::new(vec![]).is_err());
    }

    #[test]
    fn random_povm_is_complete() {
        let mut rng = crate::random::stream_rng(3, 0);
        for d in 2..=6 {
            let p = Povm::random_rank_one(&mut rng, d, d + 3).unwrap();
            assert_eq!(p.n_outcomes(), d + 3);
        }
    }

    #[test]
    fn born_rule_sums_to_one() {
        let s = build_family(&FamilySpec::CyclicPaired { m: 3 }).unwrap();
        let psi = state_vector(&s, &[0.3, -1.2, 2.2]).unwrap();
        let p = Povm::pairwise_interference(6).unwrap().probabilities(&psi);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| *v >= -1e-15));
    }
}
