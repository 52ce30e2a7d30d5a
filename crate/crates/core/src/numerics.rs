//! Dense symmetric-matrix primitives with an explicit tolerance policy.
//!
//! Everything that decides "is this eigenvalue zero?" goes through a
//! [`TolerancePolicy`], so rank, pseudoinverse and support projector always
//! agree on what the support of a matrix is.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize, Serializer};
use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Unit roundoff used by the default tolerance.
pub const MACHINE_EPSILON: f64 = 2.2e-16;

/// Symmetry slack accepted on construction, relative to `max(1, maxabs)`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Entries of a unit eigenvector smaller than this are skipped when picking
/// the sign-defining leading entry.
const LEADING_ENTRY_EPS: f64 = 1e-10;

/// A real symmetric matrix. Construction checks finiteness and symmetry and
/// then stores the exactly symmetrized matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSymMatrix(DMatrix<f64>);

impl RealSymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare(format!("{}x{}", m.nrows(), m.ncols())));
        }
        if m.nrows() == 0 {
            return Err(Error::NotSquare("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "symmetric matrix".into(),
            });
        }
        let scale = m.amax().max(1.0);
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = (m[(i, j)] - m[(j, i)]).abs();
                if diff > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        diff,
                    });
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(RealSymMatrix(sym))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotSquare(format!("{n} rows of unequal length")));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(dim: usize) -> Self {
        RealSymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        RealSymMatrix(DMatrix::zeros(dim, dim))
    }

    /// The rank-one matrix `v vᵀ`.
    pub fn outer(v: &[f64]) -> Result<Self> {
        let v = DVector::from_column_slice(v);
        Self::new(&v * v.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, c: f64) -> Self {
        RealSymMatrix(&self.0 * c)
    }

    /// `wᵀ M w`.
    pub fn quad_form(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.0 * w))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }
}

impl Serialize for RealSymMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl fmt::Display for RealSymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim() {
            let row: Vec<String> = self.0.row(i).iter().map(|v| format!("{v:>12.6}")).collect();
            writeln!(f, "[{}]", row.join(" "))?;
        }
        Ok(())
    }
}

/// Eigenvalues sorted descending with orthonormal eigenvectors stored as the
/// columns of `eigenvectors`, in the same order.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()))
    }

    pub fn vector(&self, k: usize) -> DVector<f64> {
        self.eigenvectors.column(k).into_owned()
    }

    /// `Σ g(λₖ) vₖvₖᵀ` over the eigenpairs selected by `keep`.
    fn spectral_sum(&self, keep: impl Fn(f64) -> bool, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.eigenvectors.nrows();
        let mut out = DMatrix::zeros(n, n);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            if keep(lam) {
                let v = self.eigenvectors.column(k);
                out += (v * v.transpose()) * g(lam);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceMode {
    Relative,
    Absolute,
}

/// How small an eigenvalue has to be before it counts as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub mode: ToleranceMode,
    pub value: f64,
}

impl TolerancePolicy {
    pub fn relative(value: f64) -> Self {
        TolerancePolicy {
            mode: ToleranceMode::Relative,
            value,
        }
    }

    pub fn absolute(value: f64) -> Self {
        TolerancePolicy {
            mode: ToleranceMode::Absolute,
            value,
        }
    }

    /// Default policy for a `dim`-dimensional matrix: relative,
    /// `dim · ε · 64`.
    pub fn machine(dim: usize) -> Self {
        Self::relative(dim as f64 * MACHINE_EPSILON * 64.0)
    }

    /// Effective threshold τ given the largest eigenvalue magnitude.
    pub fn threshold(&self, lambda_max: f64) -> f64 {
        match self.mode {
            ToleranceMode::Relative => self.value * lambda_max,
            ToleranceMode::Absolute => self.value,
        }
    }

    /// Parses `1e-12`, `rel:1e-12` or `abs:1e-9`. A bare number is relative.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let (mode, num) = match text.split_once(':') {
            Some(("rel" | "relative", n)) => (ToleranceMode::Relative, n),
            Some(("abs" | "absolute", n)) => (ToleranceMode::Absolute, n),
            Some((m, _)) => {
                return Err(Error::InvalidArgument(format!(
                    "unknown tolerance mode `{m}` (expected rel or abs)"
                )))
            }
            None => (ToleranceMode::Relative, text),
        };
        let value: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("tolerance `{text}` is not a number")))?;
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be finite and nonnegative, got {value}"
            )));
        }
        Ok(TolerancePolicy { mode, value })
    }
}

impl fmt::Display for TolerancePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            ToleranceMode::Relative => write!(f, "rel:{:e}", self.value),
            ToleranceMode::Absolute => write!(f, "abs:{:e}", self.value),
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Symmetric eigendecomposition with a reproducible ordering: eigenvalues
/// descending, each eigenvector signed so its leading nonzero entry is
/// positive, and vectors of (numerically) tied eigenvalues ordered
/// lexicographically largest first.
pub fn eig_sym(m: &RealSymMatrix) -> Result<EigenDecomposition> {
    if m.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "eigendecomposition input".into(),
        });
    }
    let n = m.dim();
    let eig = SymmetricEigen::new(m.0.clone());
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "eigenvalues".into(),
        });
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            if let Some(lead) = v.iter().find(|x| x.abs() > LEADING_ENTRY_EPS) {
                if *lead < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    let scale = pairs.iter().fold(0.0_f64, |a, p| a.max(p.0.abs()));
    let tie_tol = 1e-10 * scale;
    let eigenvalues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (pairs[end - 1].0 - pairs[end].0).abs() <= tie_tol {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lex_cmp(&b.1, &a.1));
        start = end;
    }

    let eigenvectors = DMatrix::from_fn(n, n, |i, k| pairs[k].1[i]);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigendecomposition plus the effective threshold τ, rejecting eigenvalues
/// below `-τ`.
pub(crate) fn eig_psd(
    m: &RealSymMatrix,
    tol: &TolerancePolicy,
) -> Result<(EigenDecomposition, f64)> {
    let eig = eig_sym(m)?;
    let tau = tol.threshold(eig.max_abs_eigenvalue());
    let min = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if min < -tau {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            threshold: tau,
        });
    }
    Ok((eig, tau))
}

/// Number of eigenvalues with magnitude above τ.
pub fn numerical_rank(m: &RealSymMatrix, tol: &TolerancePolicy) -> Result<usize> {
    let eig = eig_sym(m)?;
    let tau = tol.threshold(eig.max_abs_eigenvalue());
    Ok(eig.eigenvalues.iter().filter(|l| l.abs() > tau).count())
}

/// Moore-Penrose pseudoinverse of a PSD matrix: `Σ_{λ>τ} λ⁻¹ vvᵀ`.
pub fn pseudoinverse(m: &RealSymMatrix, tol: &TolerancePolicy) -> Result<RealSymMatrix> {
    let (eig, tau) = eig_psd(m, tol)?;
    RealSymMatrix::new(eig.spectral_sum(|l| l > tau, |l| 1.0 / l))
}

/// Orthogonal projector onto the support: `Σ_{λ>τ} vvᵀ`.
pub fn support_projector(m: &RealSymMatrix, tol: &TolerancePolicy) -> Result<RealSymMatrix> {
    let (eig, tau) = eig_psd(m, tol)?;
    RealSymMatrix::new(eig.spectral_sum(|l| l > tau, |_| 1.0))
}

/// `(A + u vᵀ)⁻¹` from `A⁻¹` by the Sherman-Morrison formula.
pub fn sherman_morrison_inverse(
    a_inv: &RealSymMatrix,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = a_inv.dim();
    for (what, vec) in [("u", u), ("v", v)] {
        if vec.len() != n {
            return Err(Error::DimensionMismatch {
                what: format!("Sherman-Morrison vector {what}"),
                expected: n,
                got: vec.len(),
            });
        }
    }
    let a = a_inv.as_matrix();
    let a_u = a * u;
    let vt_a = v.transpose() * a;
    let correction = v.dot(&a_u);
    let denominator = 1.0 + correction;
    let scale = 1.0_f64.max(correction.abs());
    if denominator.abs() <= 1e-12 * scale {
        return Err(Error::SingularUpdate { denominator });
    }
    Ok(a - (a_u * vt_a) / denominator)
}

/// Inverse of a symmetric positive definite matrix by Cholesky. Used where a
/// route independent of the eigendecomposition is wanted.
pub fn spd_inverse(m: &RealSymMatrix) -> Result<RealSymMatrix> {
    let chol = nalgebra::Cholesky::new(m.0.clone()).ok_or(Error::NotPsd {
        min_eigenvalue: f64::NAN,
        threshold: 0.0,
    })?;
    RealSymMatrix::new(chol.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym(rows: &[&[f64]]) -> RealSymMatrix {
        RealSymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    fn tol() -> TolerancePolicy {
        TolerancePolicy::machine(4)
    }

    #[test]
    fn rejects_asymmetric_and_non_finite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.1, 1.0]);
        assert!(matches!(
            RealSymMatrix::new(m),
            Err(Error::NotSymmetric { row: 0, col: 1, .. })
        ));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(RealSymMatrix::new(m), Err(Error::NonFinite { .. })));
        assert!(RealSymMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn eig_of_diagonal() {
        let e = eig_sym(&RealSymMatrix::from_diagonal(&[1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_abs_diff_eq!(e.vector(0)[1], 1.0);
    }

    #[test]
    fn eig_of_outer_product() {
        let f = RealSymMatrix::outer(&[1.0, -2.0]).unwrap();
        let e = eig_sym(&f).unwrap();
        assert_abs_diff_eq!(e.eigenvalues[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.eigenvalues[1], 0.0, epsilon = 1e-12);
        // reconstruction
        let rec = e.spectral_sum(|_| true, |l| l);
        assert!(max_diff(&rec, f.as_matrix()) < 1e-12);
        // leading entry positive
        assert!(e.vector(0)[0] > 0.0 && e.vector(1)[0] > 0.0);
    }

    #[test]
    fn eig_of_cyclic_four() {
        let f = sym(&[
            &[0.5, 0.25, 0.0, 0.25],
            &[0.25, 0.5, 0.25, 0.0],
            &[0.0, 0.25, 0.5, 0.25],
            &[0.25, 0.0, 0.25, 0.5],
        ]);
        let e = eig_sym(&f).unwrap();
        for (got, want) in e.eigenvalues.iter().zip([1.0, 0.5, 0.5, 0.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        let vtv = e.eigenvectors.transpose() * &e.eigenvectors;
        assert!(max_diff(&vtv, &DMatrix::identity(4, 4)) < 1e-12);
        // tied pair is ordered lexicographically largest first
        let (a, b) = (e.vector(1), e.vector(2));
        assert_ne!(lex_cmp(a.as_slice(), b.as_slice()), Ordering::Less);
    }

    #[test]
    fn eig_is_reproducible() {
        let f = sym(&[&[2.0, 1.0, 0.0], &[1.0, 2.0, 1.0], &[0.0, 1.0, 2.0]]);
        let a = eig_sym(&f).unwrap();
        let b = eig_sym(&f.clone()).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.eigenvectors, b.eigenvectors);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&RealSymMatrix::identity(3), &tol()).unwrap(), 3);
        assert_eq!(
            numerical_rank(&RealSymMatrix::outer(&[0.3, 1.7, -2.0]).unwrap(), &tol()).unwrap(),
            1
        );
        assert_eq!(numerical_rank(&RealSymMatrix::zeros(3), &tol()).unwrap(), 0);
    }

    #[test]
    fn pseudoinverse_examples() {
        let p = pseudoinverse(&RealSymMatrix::from_diagonal(&[2.0, 0.0]).unwrap(), &tol()).unwrap();
        assert!(max_diff(p.as_matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0])) < 1e-15);

        let p = pseudoinverse(&sym(&[&[2.0, 1.0], &[1.0, 2.0]]), &tol()).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]) / 3.0;
        assert!(max_diff(p.as_matrix(), &want) < 1e-14);

        let z = pseudoinverse(&RealSymMatrix::zeros(3), &tol()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn pseudoinverse_of_rank_one_satisfies_penrose_conditions() {
        let f = RealSymMatrix::outer(&[1.0, -2.0]).unwrap();
        let p = pseudoinverse(&f, &tol()).unwrap();
        let (f, p) = (f.as_matrix(), p.as_matrix());
        assert!(max_diff(&(f * p * f), f) < 1e-12);
        assert!(max_diff(&(p * f * p), p) < 1e-12);
        assert!(max_diff(&(f * p), &(f * p).transpose()) < 1e-12);
        assert!(max_diff(&(p * f), &(p * f).transpose()) < 1e-12);
        // closed form A/‖ν‖⁴
        assert!(max_diff(p, &(f / 25.0)) < 1e-14);
    }

    #[test]
    fn projector_examples() {
        let full = sym(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let pi = support_projector(&full, &tol()).unwrap();
        assert!(max_diff(pi.as_matrix(), &DMatrix::identity(2, 2)) < 1e-14);

        let f = RealSymMatrix::outer(&[1.0, -2.0]).unwrap();
        let pi = support_projector(&f, &tol()).unwrap();
        assert!(max_diff(pi.as_matrix(), &(f.as_matrix() / 5.0)) < 1e-14);

        let z = support_projector(&RealSymMatrix::zeros(2), &tol()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn negative_eigenvalue_is_rejected() {
        let m = RealSymMatrix::from_diagonal(&[1.0, -0.5]).unwrap();
        assert!(matches!(pseudoinverse(&m, &tol()), Err(Error::NotPsd { .. })));
        assert!(matches!(support_projector(&m, &tol()), Err(Error::NotPsd { .. })));
        // tiny negative noise is clamped
        let m = RealSymMatrix::from_diagonal(&[1.0, -1e-18]).unwrap();
        let p = pseudoinverse(&m, &tol()).unwrap();
        assert_eq!(p.get(1, 1), 0.0);
    }

    #[test]
    fn sherman_morrison_examples() {
        let id = RealSymMatrix::identity(2);
        let zero = DVector::zeros(2);
        let r = sherman_morrison_inverse(&id, &zero, &zero).unwrap();
        assert_eq!(r, DMatrix::identity(2, 2));

        let a_inv = RealSymMatrix::from_diagonal(&[1.0, 0.5]).unwrap();
        let r = sherman_morrison_inverse(
            &a_inv,
            &DVector::from_vec(vec![1.0, 0.0]),
            &DVector::from_vec(vec![0.0, 1.0]),
        )
        .unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.0, 0.5]);
        assert!(max_diff(&r, &want) < 1e-15);
        // oracle: product with [[1,1],[0,2]] is the identity
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        assert!(max_diff(&(a * &r), &DMatrix::identity(2, 2)) < 1e-15);

        // NOON m=2, ν=(1,1)
        let a_inv = RealSymMatrix::from_diagonal(&[0.75, 0.75]).unwrap();
        let nu = DVector::from_vec(vec![1.0, 1.0]);
        let u = &nu * (-4.0 / 9.0);
        let r = sherman_morrison_inverse(&a_inv, &u, &nu).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.5, 0.75, 0.75, 1.5]);
        assert!(max_diff(&r, &want) < 1e-14);
        let f = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]) * (4.0 / 9.0);
        assert!(max_diff(&(f * r), &DMatrix::identity(2, 2)) < 1e-14);
    }

    #[test]
    fn sherman_morrison_singular_update() {
        let id = RealSymMatrix::identity(2);
        let u = DVector::from_vec(vec![-1.0, 0.0]);
        let v = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            sherman_morrison_inverse(&id, &u, &v),
            Err(Error::SingularUpdate { .. })
        ));
        assert!(matches!(
            sherman_morrison_inverse(&id, &DVector::zeros(3), &v),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tolerance_parsing() {
        assert_eq!(TolerancePolicy::parse("1e-12").unwrap(), TolerancePolicy::relative(1e-12));
        assert_eq!(TolerancePolicy::parse("abs:1e-9").unwrap(), TolerancePolicy::absolute(1e-9));
        assert!(TolerancePolicy::parse("foo:1").is_err());
        assert!(TolerancePolicy::parse("-1").is_err());
        assert_eq!(TolerancePolicy::relative(2.0).threshold(3.0), 6.0);
        assert_eq!(TolerancePolicy::absolute(2.0).threshold(3.0), 2.0);
    }
}
