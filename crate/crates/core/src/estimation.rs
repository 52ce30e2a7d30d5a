//! Monte Carlo check that the pseudoinverse bound is reached on the reduced
//! parameters: Born-rule sampling, maximum likelihood over the reduced
//! coordinates, and empirical covariance against `F′⁻¹ / n`.
//!
//! Sampling uses one ChaCha8 stream per repetition (`seed`, repetition
//! index) and inverse-CDF categorical draws, so results do not depend on how
//! repetitions are scheduled.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::information::{qfim, ZERO_PROBABILITY};
use crate::numerics::{eig_sym, spd_inverse, RealSymMatrix, TolerancePolicy};
use crate::probes::{state_vector, LinearPhaseState, Povm, C64};
use crate::random::stream_rng;
use crate::reduction::{constraint_function, reduce_problem, support_decomposition, ReducedProblem};

/// Probabilities must sum to one within this before sampling.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;
/// Refinement stops when `‖∇ log L‖ / n_shots` falls below this.
pub const GRADIENT_TOL: f64 = 1e-9;
const GRID_BUDGET: f64 = 4096.0;
const MAX_CANDIDATES: usize = 8;
const MAX_NEWTON_STEPS: usize = 200;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeSample {
    /// Count per outcome index.
    pub counts: Vec<u64>,
    pub n_shots: u64,
    pub seed: u64,
    pub stream: u64,
    pub x_true: Vec<f64>,
}

pub fn sample_outcomes(
    s: &LinearPhaseState,
    povm: &Povm,
    x: &[f64],
    n_shots: u64,
    seed: u64,
) -> Result<OutcomeSample> {
    sample_outcomes_stream(s, povm, x, n_shots, seed, 0)
}

pub fn sample_outcomes_stream(
    s: &LinearPhaseState,
    povm: &Povm,
    x: &[f64],
    n_shots: u64,
    seed: u64,
    stream: u64,
) -> Result<OutcomeSample> {
    if n_shots == 0 {
        return Err(Error::InvalidArgument("n_shots must be at least 1".into()));
    }
    check_povm_dim(s, povm)?;
    let p = povm.probabilities(&state_vector(s, x)?);
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
        return Err(Error::ProbabilityNotNormalized(total));
    }
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for v in &p {
        acc += v.max(0.0);
        cdf.push(acc);
    }
    let last = p.iter().rposition(|v| *v > 0.0).unwrap_or(p.len() - 1);
    let mut rng = stream_rng(seed, stream);
    let mut counts = vec![0u64; p.len()];
    for _ in 0..n_shots {
        let u: f64 = rng.random::<f64>() * acc;
        let y = cdf.partition_point(|c| *c <= u).min(last);
        counts[y] += 1;
    }
    Ok(OutcomeSample {
        counts,
        n_shots,
        seed,
        stream,
        x_true: x.to_vec(),
    })
}

fn check_povm_dim(s: &LinearPhaseState, povm: &Povm) -> Result<()> {
    if povm.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            what: "POVM dimension".into(),
            expected: s.dim(),
            got: povm.dim(),
        });
    }
    Ok(())
}

/// Outcome probabilities and their derivatives in reduced coordinates.
struct ReducedModel<'a> {
    s: &'a LinearPhaseState,
    povm: &'a Povm,
    red: &'a ReducedProblem,
    /// `Vᵀνⱼ` per ket.
    encodings: Vec<Vec<f64>>,
}

struct Derivs {
    p: Vec<f64>,
    grad: Vec<DVector<f64>>,
    hess: Vec<DMatrix<f64>>,
}

impl<'a> ReducedModel<'a> {
    fn new(s: &'a LinearPhaseState, povm: &'a Povm, red: &'a ReducedProblem) -> Result<Self> {
        check_povm_dim(s, povm)?;
        if red.dim() != s.n_params() {
            return Err(Error::DimensionMismatch {
                what: "reduced problem".into(),
                expected: s.n_params(),
                got: red.dim(),
            });
        }
        let encodings = s.kets().iter().map(|k| red.project(&k.encoding)).collect();
        Ok(ReducedModel { s, povm, red, encodings })
    }

    fn r(&self) -> usize {
        self.red.rank()
    }

    fn psi(&self, theta: &[f64]) -> Result<DVector<C64>> {
        state_vector(self.s, &self.red.lift(theta))
    }

    fn probabilities(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.povm.probabilities(&self.psi(theta)?))
    }

    fn log_likelihood(&self, counts: &[u64], theta: &[f64]) -> Result<f64> {
        let p = self.probabilities(theta)?;
        Ok(log_likelihood(counts, &p))
    }

    fn derivs(&self, theta: &[f64]) -> Result<Derivs> {
        let r = self.r();
        let psi = self.psi(theta)?;
        let dpsi: Vec<DVector<C64>> = (0..r)
            .map(|a| {
                DVector::from_iterator(
                    psi.len(),
                    psi.iter().zip(&self.encodings).map(|(c, e)| C64::new(0.0, e[a]) * c),
                )
            })
            .collect();
        let mut p = Vec::new();
        let mut grad = Vec::new();
        let mut hess = Vec::new();
        for m in self.povm.elements() {
            let m_psi = m * &psi;
            let m_dpsi: Vec<DVector<C64>> = dpsi.iter().map(|d| m * d).collect();
            p.push(psi.dotc(&m_psi).re);
            grad.push(DVector::from_fn(r, |a, _| 2.0 * dpsi[a].dotc(&m_psi).re));
            // ∂a∂bψ has components −eₐe_b ψⱼ
            hess.push(DMatrix::from_fn(r, r, |a, b| {
                let second: C64 = psi
                    .iter()
                    .zip(&self.encodings)
                    .zip(m_psi.iter())
                    .map(|((c, e), mp)| (c * (-e[a] * e[b])).conj() * mp)
                    .sum();
                2.0 * (dpsi[a].dotc(&m_dpsi[b]).re + second.re)
            }));
        }
        Ok(Derivs { p, grad, hess })
    }

    /// Per-shot Fisher information in reduced coordinates.
    fn fisher(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.derivs(theta)?;
        let r = self.r();
        let mut f = DMatrix::zeros(r, r);
        for (p, g) in d.p.iter().zip(&d.grad) {
            if *p > ZERO_PROBABILITY {
                f += g * g.transpose() / *p;
            }
        }
        Ok(f)
    }

    /// Whether `2π` shifts of reduced coordinate `a` leave every phase
    /// invariant.
    fn periodic(&self, a: usize) -> bool {
        self.encodings.iter().all(|e| (e[a] - e[a].round()).abs() < 1e-9)
    }
}

fn log_likelihood(counts: &[u64], p: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (c, p) in counts.iter().zip(p) {
        if *c > 0 {
            if *p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += *c as f64 * p.ln();
        }
    }
    ll
}

fn fisher_rank(f: &DMatrix<f64>) -> Result<usize> {
    let eig = eig_sym(&RealSymMatrix::new(f.clone())?)?;
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let floor = (1e-9 * lmax).max(1e-12);
    Ok(eig.eigenvalues.iter().filter(|v| **v > floor).count())
}

/// Wraps `v` into `(−π, π]`.
pub fn wrap_phase(v: f64) -> f64 {
    let w = v - TAU * ((v + PI) / TAU).floor();
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Grid points per reduced coordinate: `clamp(⌊4096^{1/r}⌋, 6, 128)`.
pub fn grid_points(r: usize) -> usize {
    let g = (GRID_BUDGET.powf(1.0 / r as f64) + 1e-9).floor() as usize;
    g.clamp(6, 128)
}

/// Maximum-likelihood estimate of the reduced coordinates `θ` from `sample`,
/// with `x(θ) = Vθ + kernel_offset`.
///
/// A coarse grid over `init ± π` seeds Newton refinement (observed
/// information, falling back to Fisher scoring) from the best local maxima.
/// Equal-likelihood maxima are resolved towards `init`. Coordinates whose
/// phases are all `2π`-periodic are wrapped into `(−π, π]`.
pub fn ml_estimate_reduced(
    sample: &OutcomeSample,
    s: &LinearPhaseState,
    povm: &Povm,
    red: &ReducedProblem,
    init: &[f64],
) -> Result<Vec<f64>> {
    let model = ReducedModel::new(s, povm, red)?;
    let r = model.r();
    if r == 0 {
        return Err(Error::NotIdentified("reduced problem has no estimable coordinate".into()));
    }
    if init.len() != r {
        return Err(Error::DimensionMismatch {
            what: "ML initial point".into(),
            expected: r,
            got: init.len(),
        });
    }
    if sample.counts.len() != povm.n_outcomes() {
        return Err(Error::DimensionMismatch {
            what: "outcome counts".into(),
            expected: povm.n_outcomes(),
            got: sample.counts.len(),
        });
    }
    check_identified(&model, init)?;

    let g = grid_points(r);
    let total = g.pow(r as u32);
    let offsets: Vec<f64> = (0..g).map(|i| -PI + TAU * i as f64 / g as f64).collect();
    let point = |idx: usize| -> Vec<f64> {
        let mut rem = idx;
        (0..r)
            .map(|a| {
                let i = rem % g;
                rem /= g;
                init[a] + offsets[i]
            })
            .collect()
    };
    let lls: Vec<f64> = (0..total)
        .map(|i| model.log_likelihood(&sample.counts, &point(i)))
        .collect::<Result<_>>()?;

    let finite_max = lls.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let finite_min = lls.iter().cloned().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    if !finite_max.is_finite() {
        return Err(Error::NotIdentified("observed outcomes have zero probability everywhere on the grid".into()));
    }
    if finite_max - finite_min <= 1e-12 * finite_max.abs().max(1.0) {
        return Err(Error::NotIdentified("likelihood is flat: parameter not identified by this POVM".into()));
    }

    let mut candidates: Vec<usize> = (0..total)
        .filter(|&i| lls[i].is_finite() && is_local_max(&lls, i, g, r))
        .collect();
    candidates.sort_by(|a, b| lls[*b].total_cmp(&lls[*a]).then(a.cmp(b)));
    candidates.truncate(MAX_CANDIDATES);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for c in candidates {
        let (theta, ll) = refine(&model, &sample.counts, point(c), lls[c])?;
        best = match best {
            None => Some((theta, ll)),
            Some((bt, bll)) => {
                let tie = (ll - bll).abs() <= TIE_TOL * bll.abs().max(1.0);
                let better = if tie {
                    distance(&model, &theta, init) < distance(&model, &bt, init)
                } else {
                    ll > bll
                };
                if better {
                    Some((theta, ll))
                } else {
                    Some((bt, bll))
                }
            }
        };
    }
    let (mut theta, _) = best.expect("grid maximum is finite");
    for (a, t) in theta.iter_mut().enumerate() {
        if model.periodic(a) {
            *t = wrap_phase(*t);
        }
    }
    Ok(theta)
}

fn distance(model: &ReducedModel, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (x, y))| {
            let d = if model.periodic(k) { wrap_phase(x - y) } else { x - y };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_identified(model: &ReducedModel, init: &[f64]) -> Result<()> {
    let r = model.r();
    // a POVM can lose information at isolated points, so probe a few
    let shifts = [0.0, 0.37, -1.13, 2.21];
    let mut best = 0;
    for (i, sh) in shifts.iter().enumerate() {
        let theta: Vec<f64> = init.iter().enumerate().map(|(a, t)| t + sh * (1.0 + 0.5 * ((a + i) % 3) as f64)).collect();
        best = best.max(fisher_rank(&model.fisher(&theta)?)?);
        if best == r {
            return Ok(());
        }
    }
    if best == 0 {
        Err(Error::NotIdentified("likelihood is flat: parameter not identified by this POVM".into()))
    } else {
        Err(Error::NotIdentified(format!(
            "reduced Fisher information has rank {best} < {r}: parameters not identified"
        )))
    }
}

fn is_local_max(lls: &[f64], idx: usize, g: usize, r: usize) -> bool {
    let mut stride = 1;
    for _ in 0..r {
        let i = (idx / stride) % g;
        if i > 0 && lls[idx - stride] > lls[idx] {
            return false;
        }
        if i + 1 < g && lls[idx + stride] > lls[idx] {
            return false;
        }
        stride *= g;
    }
    true
}

fn refine(model: &ReducedModel, counts: &[u64], mut theta: Vec<f64>, mut ll: f64) -> Result<(Vec<f64>, f64)> {
    let n: f64 = counts.iter().sum::<u64>() as f64;
    let r = model.r();
    for _ in 0..MAX_NEWTON_STEPS {
        let d = model.derivs(&theta)?;
        let mut grad = DVector::zeros(r);
        let mut hess = DMatrix::zeros(r, r);
        let mut fisher = DMatrix::zeros(r, r);
        for (y, c) in counts.iter().enumerate() {
            let p = d.p[y];
            if p > ZERO_PROBABILITY {
                let gy = &d.grad[y];
                fisher += gy * gy.transpose() * (n / p);
                if *c > 0 {
                    let c = *c as f64;
                    grad += gy * (c / p);
                    hess += (&d.hess[y] / p - gy * gy.transpose() / (p * p)) * c;
                }
            }
        }
        if grad.norm() / n < GRADIENT_TOL {
            break;
        }
        let neg_h = -hess;
        let step = if let Some(ch) = neg_h.cholesky() {
            ch.solve(&grad)
        } else if let Some(ch) = fisher.clone().cholesky() {
            ch.solve(&grad)
        } else {
            &grad / (n * fisher.trace().max(1.0))
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let cll = model.log_likelihood(counts, &cand)?;
            if cll >= ll {
                theta = cand;
                ll = cll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || t * step.norm() < 1e-15 * (1.0 + DVector::from_column_slice(&theta).norm()) {
            break;
        }
    }
    Ok((theta, ll))
}

/// One-sided test that the empirical covariance does not beat the bound.
#[derive(Debug, Clone, Serialize)]
pub struct CramerRaoCheck {
    /// Smallest eigenvalue of `empirical_cov − bound`.
    pub min_eigenvalue: f64,
    /// Standard error of the covariance estimate, `√(2/(n−1))·λmax(cov)`.
    pub standard_error: f64,
    /// Per-diagonal `(cov_kk − bound_kk) / (cov_kk √(2/(n−1)))`.
    pub diagonal_z: Vec<f64>,
    pub sigmas: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimationRun {
    pub reduced_labels: Vec<String>,
    pub theta_true: Vec<f64>,
    pub estimates: Vec<Vec<f64>>,
    pub empirical_mean: Vec<f64>,
    pub empirical_cov: RealSymMatrix,
    /// Reduced classical CRB divided by `n_shots`.
    pub bound: RealSymMatrix,
    pub reduced_classical_fim: RealSymMatrix,
    /// `cov_kk / bound_kk`.
    pub efficiency_ratio: Vec<f64>,
    pub cramer_rao_check: CramerRaoCheck,
    pub wrapped: Vec<bool>,
    pub n_repetitions: usize,
    pub n_shots: u64,
    pub seed: u64,
}

pub fn attainability_study(
    s: &LinearPhaseState,
    povm: &Povm,
    x: &[f64],
    n_shots: u64,
    n_reps: usize,
    seed: u64,
    tol: &TolerancePolicy,
) -> Result<EstimationRun> {
    attainability_study_with(s, povm, x, n_shots, n_reps, seed, tol, Exec::default())
}

/// Reduces with respect to the QFIM support anchored at `x`, bounds with the
/// classical Fisher information of `povm` on the reduced coordinates, then
/// runs `n_reps` sampled ML fits (one RNG stream per repetition).
#[allow(clippy::too_many_arguments)]
pub fn attainability_study_with(
    s: &LinearPhaseState,
    povm: &Povm,
    x: &[f64],
    n_shots: u64,
    n_reps: usize,
    seed: u64,
    tol: &TolerancePolicy,
    exec: Exec,
) -> Result<EstimationRun> {
    if n_reps < 2 {
        return Err(Error::InvalidArgument("n_reps must be at least 2".into()));
    }
    if n_shots == 0 {
        return Err(Error::InvalidArgument("n_shots must be at least 1".into()));
    }
    let fq = qfim(s, x)?;
    let dec = support_decomposition(&fq, tol)?;
    if dec.rank == 0 {
        return Err(Error::NotIdentified("QFIM vanishes: no estimable parameter".into()));
    }
    let constraint = constraint_function(&dec, x)?;
    let red = reduce_problem(&fq, &dec, None)?.anchored(&constraint);
    let model = ReducedModel::new(s, povm, &red)?;
    let r = red.rank();
    let theta_true = red.project(x);

    let fc = model.fisher(&theta_true)?;
    if fisher_rank(&fc)? < r {
        return Err(Error::NotIdentified(
            "classical Fisher information of this POVM is singular on the reduced parameters".into(),
        ));
    }
    let fc = RealSymMatrix::new(fc)?;
    let bound = spd_inverse(&fc)?.scaled(1.0 / n_shots as f64);
    let wrapped: Vec<bool> = (0..r).map(|a| model.periodic(a)).collect();

    let estimates = exec.try_map_indexed(n_reps, |i| {
        let sample = sample_outcomes_stream(s, povm, x, n_shots, seed, i as u64)?;
        ml_estimate_reduced(&sample, s, povm, &red, &theta_true)
    })?;

    let deviations: Vec<DVector<f64>> = estimates
        .iter()
        .map(|e| {
            DVector::from_fn(r, |a, _| {
                let d = e[a] - theta_true[a];
                if wrapped[a] {
                    wrap_phase(d)
                } else {
                    d
                }
            })
        })
        .collect();
    let n = n_reps as f64;
    let mean_dev = deviations.iter().fold(DVector::zeros(r), |acc, d| acc + d) / n;
    let mut cov = DMatrix::zeros(r, r);
    for d in &deviations {
        let c = d - &mean_dev;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    let cov = RealSymMatrix::new((&cov + cov.transpose()) * 0.5)?;
    let empirical_mean: Vec<f64> = (0..r)
        .map(|a| {
            let m = theta_true[a] + mean_dev[a];
            if wrapped[a] {
                wrap_phase(m)
            } else {
                m
            }
        })
        .collect();

    let efficiency_ratio: Vec<f64> = (0..r).map(|a| cov.get(a, a) / bound.get(a, a)).collect();
    let diff = RealSymMatrix::new(cov.as_matrix() - bound.as_matrix())?;
    let min_eigenvalue = eig_sym(&diff)?.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let rel_se = (2.0 / (n - 1.0)).sqrt();
    let standard_error = rel_se * eig_sym(&cov)?.max_abs_eigenvalue();
    let diagonal_z: Vec<f64> = (0..r)
        .map(|a| (cov.get(a, a) - bound.get(a, a)) / (rel_se * cov.get(a, a)).max(1e-300))
        .collect();
    let sigmas = 3.0;
    let passed = min_eigenvalue >= -sigmas * standard_error && diagonal_z.iter().all(|z| *z >= -sigmas);

    Ok(EstimationRun {
        reduced_labels: red.reduced_labels.clone(),
        theta_true,
        estimates,
        empirical_mean,
        empirical_cov: cov,
        bound,
        reduced_classical_fim: fc,
        efficiency_ratio,
        cramer_rao_check: CramerRaoCheck {
            min_eigenvalue,
            standard_error,
            diagonal_z,
            sigmas,
            passed,
        },
        wrapped,
        n_repetitions: n_reps,
        n_shots,
        seed,
    })
}
