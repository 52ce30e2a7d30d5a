//! Support/kernel split of an information matrix and the affine constraint
//! `f(x) = V̄ᵀx + C` that removes the unestimable directions.
//!
//! After reduction the estimable parameters are `vⱼᵀx` for the support basis
//! columns `vⱼ`, and `F′ = VᵀFV` is invertible. `V (VᵀFV)⁻¹ Vᵀ` is then the
//! Moore-Penrose pseudoinverse of `F`.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::information::InfoMatrix;
use crate::numerics::{eig_psd, pseudoinverse, spd_inverse, RealSymMatrix, TolerancePolicy};

/// Relative size of the kernel component of a weight below which the weight
/// counts as lying in the support.
pub const ESTIMABILITY_TOL: f64 = 1e-8;

pub(crate) fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.ncols()).map(|k| m.column(k).iter().copied().collect()).collect()
}

fn ser_columns<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    columns(m).serialize(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportDecomposition {
    pub dim: usize,
    pub rank: usize,
    /// `d × r`, orthonormal columns spanning the support.
    #[serde(serialize_with = "ser_columns")]
    pub support_basis: DMatrix<f64>,
    /// `d × (d − r)`, orthonormal columns spanning the kernel.
    #[serde(serialize_with = "ser_columns")]
    pub kernel_basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Effective eigenvalue threshold τ.
    pub tolerance_used: f64,
}

impl SupportDecomposition {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim
    }

    /// `Π = VVᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.support_basis * self.support_basis.transpose()
    }

    /// Splits `w` into its kernel component `(I − Π)w`.
    pub fn kernel_component(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.kernel_basis * (self.kernel_basis.transpose() * w)
    }

    /// A weight is estimable iff `‖(I − Π)w‖ ≤ ESTIMABILITY_TOL · ‖w‖`.
    pub fn is_estimable(&self, w: &DVector<f64>) -> bool {
        self.kernel_component(w).norm() <= ESTIMABILITY_TOL * w.norm()
    }
}

pub fn support_decomposition(f: &InfoMatrix, tol: &TolerancePolicy) -> Result<SupportDecomposition> {
    let (eig, tau) = eig_psd(&f.matrix, tol)?;
    let d = f.dim();
    let rank = eig.eigenvalues.iter().filter(|l| **l > tau).count();
    Ok(SupportDecomposition {
        dim: d,
        rank,
        support_basis: eig.eigenvectors.columns(0, rank).into_owned(),
        kernel_basis: eig.eigenvectors.columns(rank, d - rank).into_owned(),
        eigenvalues: eig.eigenvalues,
        tolerance_used: tau,
    })
}

/// `f(x) = V̄ᵀx + C`, anchored so that `f(anchor) = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintFunction {
    #[serde(serialize_with = "ser_columns")]
    pub kernel_basis: DMatrix<f64>,
    pub constant: Vec<f64>,
    pub anchor: Vec<f64>,
}

impl ConstraintFunction {
    pub fn is_empty(&self) -> bool {
        self.constant.is_empty()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.kernel_basis.nrows() {
            return Err(Error::DimensionMismatch {
                what: "constraint argument".into(),
                expected: self.kernel_basis.nrows(),
                got: x.len(),
            });
        }
        let v = self.kernel_basis.transpose() * DVector::from_column_slice(x);
        Ok(v.iter().zip(&self.constant).map(|(a, c)| a + c).collect())
    }

    /// Human-readable equations, one per kernel direction.
    pub fn equations(&self, labels: &[String]) -> Vec<String> {
        (0..self.kernel_basis.ncols())
            .map(|k| {
                let lhs = linear_combination(self.kernel_basis.column(k).iter().copied(), labels);
                let c = self.constant[k];
                if c == 0.0 {
                    format!("{lhs} = 0")
                } else if c < 0.0 {
                    format!("{lhs} - {} = 0", -c)
                } else {
                    format!("{lhs} + {c} = 0")
                }
            })
            .collect()
    }
}

pub(crate) fn linear_combination(coeffs: impl Iterator<Item = f64>, labels: &[String]) -> String {
    let mut out = String::new();
    for (c, l) in coeffs.zip(labels).filter(|(c, _)| c.abs() > 1e-15) {
        if out.is_empty() {
            out = format!("{c}*{l}");
        } else if c < 0.0 {
            out.push_str(&format!(" - {}*{l}", -c));
        } else {
            out.push_str(&format!(" + {c}*{l}"));
        }
    }
    if out.is_empty() {
        "0".into()
    } else {
        out
    }
}

pub fn constraint_function(dec: &SupportDecomposition, x0: &[f64]) -> Result<ConstraintFunction> {
    if x0.len() != dec.dim {
        return Err(Error::DimensionMismatch {
            what: "constraint anchor x0".into(),
            expected: dec.dim,
            got: x0.len(),
        });
    }
    let c = -(dec.kernel_basis.transpose() * DVector::from_column_slice(x0));
    Ok(ConstraintFunction {
        kernel_basis: dec.kernel_basis.clone(),
        // + 0.0 turns -0.0 into 0.0
        constant: c.iter().map(|v| v + 0.0).collect(),
        anchor: x0.to_vec(),
    })
}

/// The estimation problem restricted to the support of `F`.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedProblem {
    /// `F′ = VᵀFV`; `None` when nothing is estimable.
    pub reduced_fim: Option<RealSymMatrix>,
    pub reduced_labels: Vec<String>,
    /// The estimable combinations `vⱼᵀx` written out over the parameter labels.
    pub reduced_expressions: Vec<String>,
    #[serde(serialize_with = "ser_columns")]
    pub support_basis: DMatrix<f64>,
    #[serde(serialize_with = "ser_rows")]
    pub projector: DMatrix<f64>,
    /// `w′ = Πw` in the original coordinates.
    pub reduced_weight: Option<Vec<f64>>,
    /// `Vᵀw`, the weight in reduced coordinates.
    pub reduced_weight_coords: Option<Vec<f64>>,
    /// Fixed kernel part of `x` on the constraint surface: `x = Vθ + offset`.
    pub kernel_offset: Vec<f64>,
}

fn ser_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

impl ReducedProblem {
    pub fn rank(&self) -> usize {
        self.support_basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.support_basis.nrows()
    }

    /// Pins the kernel coordinates to the constraint surface `f(x) = 0`.
    pub fn anchored(mut self, constraint: &ConstraintFunction) -> Self {
        let c = DVector::from_column_slice(&constraint.constant);
        let offset = -(&constraint.kernel_basis * c);
        self.kernel_offset = offset.iter().map(|v| v + 0.0).collect();
        self
    }

    /// Full parameter vector for reduced coordinates `θ`.
    pub fn lift(&self, theta: &[f64]) -> Vec<f64> {
        let x = &self.support_basis * DVector::from_column_slice(theta)
            + DVector::from_column_slice(&self.kernel_offset);
        x.iter().copied().collect()
    }

    /// Reduced coordinates `Vᵀx`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (self.support_basis.transpose() * DVector::from_column_slice(x))
            .iter()
            .copied()
            .collect()
    }

    /// Treats every parameter as estimable (`V = I`). Used to demonstrate
    /// what goes wrong without reduction.
    pub fn unreduced(f: &InfoMatrix) -> Self {
        let d = f.dim();
        ReducedProblem {
            reduced_fim: Some(f.matrix.clone()),
            reduced_labels: f.param_labels.clone(),
            reduced_expressions: f.param_labels.clone(),
            support_basis: DMatrix::identity(d, d),
            projector: DMatrix::identity(d, d),
            reduced_weight: None,
            reduced_weight_coords: None,
            kernel_offset: vec![0.0; d],
        }
    }
}

pub fn reduce_problem(
    f: &InfoMatrix,
    dec: &SupportDecomposition,
    w: Option<&[f64]>,
) -> Result<ReducedProblem> {
    let d = f.dim();
    if dec.dim != d {
        return Err(Error::DimensionMismatch {
            what: "support decomposition".into(),
            expected: d,
            got: dec.dim,
        });
    }
    let v = &dec.support_basis;
    let reduced_fim = if dec.rank == 0 {
        None
    } else {
        Some(RealSymMatrix::new(v.transpose() * f.matrix.as_matrix() * v)?)
    };
    let projector = dec.projector();
    let (reduced_weight, reduced_weight_coords) = match w {
        Some(w) => {
            if w.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "weight vector".into(),
                    expected: d,
                    got: w.len(),
                });
            }
            let w = DVector::from_column_slice(w);
            (
                Some((&projector * &w).iter().copied().collect()),
                Some((v.transpose() * &w).iter().copied().collect()),
            )
        }
        None => (None, None),
    };
    Ok(ReducedProblem {
        reduced_fim,
        reduced_labels: (1..=dec.rank).map(|j| format!("v{j}^T x")).collect(),
        reduced_expressions: (0..dec.rank)
            .map(|j| linear_combination(v.column(j).iter().copied(), &f.param_labels))
            .collect(),
        support_basis: v.clone(),
        projector,
        reduced_weight,
        reduced_weight_coords,
        kernel_offset: vec![0.0; d],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceConsistency {
    pub trace_pinv: f64,
    pub trace_reduced_inv: f64,
    pub consistent: bool,
}

/// `Tr F⁺` by the pseudoinverse and `Tr F′⁻¹` by reduce-then-invert
/// (Cholesky), compared at `1e-9 · max(1, Tr F⁺)`.
pub fn trace_consistency(f: &InfoMatrix, tol: &TolerancePolicy) -> Result<TraceConsistency> {
    let trace_pinv = pseudoinverse(&f.matrix, tol)?.trace();
    let dec = support_decomposition(f, tol)?;
    let red = reduce_problem(f, &dec, None)?;
    let trace_reduced_inv = match &red.reduced_fim {
        Some(fr) => spd_inverse(fr)?.trace(),
        None => 0.0,
    };
    Ok(TraceConsistency {
        trace_pinv,
        trace_reduced_inv,
        consistent: (trace_pinv - trace_reduced_inv).abs() <= 1e-9 * trace_pinv.max(1.0),
    })
}
