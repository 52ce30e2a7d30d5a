//! Decision flow for using the Cramér-Rao inequality with a possibly
//! non-invertible information matrix.
//!
//! Branch identifiers are stable strings (see [`Branch::as_str`]):
//!
//! | branch                                        | attainability               |
//! |-----------------------------------------------|-----------------------------|
//! | `SE/invertible`                               | `attainable_as_is`          |
//! | `SE/non-invertible`                           | `attainable_after_reduction`|
//! | `DQS/invertible`                              | `attainable_as_is`          |
//! | `DQS/non-invertible/w-in-support`             | `attainable_after_reduction`|
//! | `DQS/non-invertible/w-with-kernel-component`  | `not_estimable`             |
//!
//! SE is simultaneous estimation of every parameter (figure of merit
//! `Tr cov`); DQS is distributed sensing of a single combination `wᵀx`.

use nalgebra::DVector;
use serde::{Serialize, Serializer};

use crate::bounds::{compare_bounds, simultaneous_bound, trace_bound, weighted_bound, BoundReport, ScenarioKind};
use crate::error::{Error, Result};
use crate::information::{
    closed_form_qfim, compare_provenance, default_labels, many_body_qfim, qfim, qfim_fd_oracle,
    xy_order_gradient, InfoMatrix, ManyBodySpec, ProvenanceComparison,
};
use crate::numerics::{spd_inverse, TolerancePolicy};
use crate::probes::{build_family, FamilySpec};
use crate::reduction::{
    constraint_function, reduce_problem, support_decomposition, ConstraintFunction, ReducedProblem,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub weight: Option<Vec<f64>>,
}

impl Scenario {
    pub fn simultaneous() -> Self {
        Scenario {
            kind: ScenarioKind::Simultaneous,
            weight: None,
        }
    }

    pub fn distributed(weight: Vec<f64>) -> Self {
        Scenario {
            kind: ScenarioKind::Distributed,
            weight: Some(weight),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    SeInvertible,
    SeNonInvertible,
    DqsInvertible,
    DqsWeightInSupport,
    DqsWeightWithKernelComponent,
}

impl Branch {
    pub const ALL: [Branch; 5] = [
        Branch::SeInvertible,
        Branch::SeNonInvertible,
        Branch::DqsInvertible,
        Branch::DqsWeightInSupport,
        Branch::DqsWeightWithKernelComponent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::SeInvertible => "SE/invertible",
            Branch::SeNonInvertible => "SE/non-invertible",
            Branch::DqsInvertible => "DQS/invertible",
            Branch::DqsWeightInSupport => "DQS/non-invertible/w-in-support",
            Branch::DqsWeightWithKernelComponent => "DQS/non-invertible/w-with-kernel-component",
        }
    }
}

impl Serialize for Branch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Attainability {
    AttainableAsIs,
    AttainableAfterReduction,
    NotEstimable,
}

/// Agreement between two independent constructions of the same matrix.
#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub name: String,
    pub max_abs_difference: f64,
    pub relative_difference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CrossCheck {
    pub fn between(name: &str, a: &InfoMatrix, b: &InfoMatrix, tolerance: f64) -> Self {
        let max_abs_difference = (a.matrix.as_matrix() - b.matrix.as_matrix()).amax();
        let relative_difference = max_abs_difference / a.matrix.max_abs().max(1e-300);
        CrossCheck {
            name: name.into(),
            max_abs_difference,
            relative_difference,
            tolerance,
            passed: relative_difference <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub scenario: ScenarioKind,
    pub weight: Option<Vec<f64>>,
    pub branch: Branch,
    pub invertible: bool,
    pub rank: usize,
    pub dim: usize,
    pub tolerance: TolerancePolicy,
    pub tolerance_used: f64,
    pub eigenvalues: Vec<f64>,
    pub information: InfoMatrix,
    pub constraint: Option<ConstraintFunction>,
    pub constraint_equations: Vec<String>,
    pub reduced: Option<ReducedProblem>,
    pub bounds: BoundReport,
    /// `Tr F′⁻¹` (SE) or `(Vᵀw)ᵀF′⁻¹(Vᵀw)` (DQS) on the reduced problem.
    pub reduced_bound: Option<f64>,
    pub attainability: Attainability,
    pub cross_checks: Vec<CrossCheck>,
    pub discrepancy: Option<ProvenanceComparison>,
    pub model_quantities: Vec<NamedValue>,
    pub notes: Vec<String>,
}

/// Runs the decision flow with the constraint anchored at the origin.
pub fn classify(f: &InfoMatrix, sc: &Scenario, tol: &TolerancePolicy) -> Result<StrategyReport> {
    classify_anchored(f, sc, tol, &vec![0.0; f.dim()])
}

pub fn classify_anchored(
    f: &InfoMatrix,
    sc: &Scenario,
    tol: &TolerancePolicy,
    anchor: &[f64],
) -> Result<StrategyReport> {
    let d = f.dim();
    let dec = support_decomposition(f, tol)?;
    let invertible = dec.is_full_rank();
    let mut notes = Vec::new();

    let weight = match sc.kind {
        ScenarioKind::Simultaneous => None,
        ScenarioKind::Distributed => {
            let w = sc.weight.as_ref().ok_or(Error::MissingWeight)?;
            if w.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "weight vector".into(),
                    expected: d,
                    got: w.len(),
                });
            }
            Some(w.clone())
        }
    };

    let bounds = match &weight {
        None => simultaneous_bound(f, tol)?,
        Some(w) => compare_bounds(f, w, tol)?,
    };

    let branch = match (sc.kind, invertible) {
        (ScenarioKind::Simultaneous, true) => Branch::SeInvertible,
        (ScenarioKind::Simultaneous, false) => Branch::SeNonInvertible,
        (ScenarioKind::Distributed, true) => Branch::DqsInvertible,
        (ScenarioKind::Distributed, false) if bounds.estimable => Branch::DqsWeightInSupport,
        (ScenarioKind::Distributed, false) => Branch::DqsWeightWithKernelComponent,
    };
    let attainability = match branch {
        Branch::SeInvertible | Branch::DqsInvertible => Attainability::AttainableAsIs,
        Branch::SeNonInvertible | Branch::DqsWeightInSupport => Attainability::AttainableAfterReduction,
        Branch::DqsWeightWithKernelComponent => Attainability::NotEstimable,
    };

    let (constraint, reduced, reduced_bound) = if invertible {
        (None, None, None)
    } else {
        let c = constraint_function(&dec, anchor)?;
        let red = reduce_problem(f, &dec, weight.as_deref())?.anchored(&c);
        let reduced_inv = red.reduced_fim.as_ref().map(spd_inverse).transpose()?;
        let rb = match (&reduced_inv, &red.reduced_weight_coords) {
            (None, _) => 0.0,
            (Some(inv), None) => inv.trace(),
            (Some(inv), Some(wc)) => inv.quad_form(&DVector::from_column_slice(wc)),
        };
        (Some(c), Some(red), Some(rb))
    };

    match branch {
        Branch::SeInvertible => notes.push("information matrix is invertible; the CRB is Tr F^-1".into()),
        Branch::DqsInvertible => {
            notes.push("information matrix is invertible; the CRB is w^T F^-1 w".into())
        }
        Branch::SeNonInvertible => {
            notes.push(format!(
                "simultaneous estimation of all {d} parameters is impossible; {} redundant direction(s) removed by the constraint",
                d - dec.rank
            ));
            if dec.rank == 0 {
                notes.push("no estimable parameter: the information matrix vanishes".into());
            }
        }
        Branch::DqsWeightInSupport => notes.push(
            "weight lies in the support; the bound is attained by an unbiased estimator of the reduced parameters".into(),
        ),
        Branch::DqsWeightWithKernelComponent => notes.push(
            "weight has a kernel component: an unbiased estimator does not exist to reach the CRB for w^T x".into(),
        ),
    }
    if let Some(red) = &reduced {
        if !red.reduced_expressions.is_empty() {
            notes.push(format!("estimable parameters: {}", red.reduced_expressions.join("; ")));
        }
    }
    if let (Some(weak), Some(false)) = (bounds.weak_bound, bounds.saturation) {
        notes.push(format!(
            "weak bound {weak} underestimates the exact bound {} (not saturated)",
            bounds.exact_bound
        ));
    }

    let constraint_equations = constraint
        .as_ref()
        .map(|c| c.equations(&f.param_labels))
        .unwrap_or_default();

    Ok(StrategyReport {
        scenario: sc.kind,
        weight,
        branch,
        invertible,
        rank: dec.rank,
        dim: d,
        tolerance: *tol,
        tolerance_used: dec.tolerance_used,
        eigenvalues: dec.eigenvalues.clone(),
        information: f.clone(),
        constraint,
        constraint_equations,
        reduced,
        bounds,
        reduced_bound,
        attainability,
        cross_checks: Vec::new(),
        discrepancy: None,
        model_quantities: Vec::new(),
        notes,
    })
}

/// A probe family or a spin model.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSpec {
    Family(FamilySpec),
    ManyBody(ManyBodySpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProvenanceMode {
    #[default]
    Generic,
    Closed,
    Both,
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub provenance: ProvenanceMode,
    pub tol: Option<TolerancePolicy>,
    /// Constraint anchor; defaults to the origin for probe families and to
    /// the model's parameter point for spin models.
    pub anchor: Option<Vec<f64>>,
    pub labels: Option<Vec<String>>,
}

/// Relative tolerance for the generic-vs-finite-difference cross-check.
pub const FD_CHECK_TOL: f64 = 1e-7;
const FD_STEP: f64 = 1e-5;

/// Builds the information matrix for `spec` and runs [`classify`] on it,
/// attaching provenance cross-checks.
pub fn analyze_probe(
    spec: &ProbeSpec,
    x: Option<&[f64]>,
    sc: &Scenario,
    opts: &AnalyzeOptions,
) -> Result<StrategyReport> {
    match spec {
        ProbeSpec::Family(fam) => analyze_family(fam, x, sc, opts),
        ProbeSpec::ManyBody(mb) => analyze_many_body(mb, x, sc, opts),
    }
}

fn resolve_tol(opts: &AnalyzeOptions, dim: usize) -> TolerancePolicy {
    opts.tol.unwrap_or_else(|| TolerancePolicy::machine(dim))
}

fn analyze_family(
    fam: &FamilySpec,
    x: Option<&[f64]>,
    sc: &Scenario,
    opts: &AnalyzeOptions,
) -> Result<StrategyReport> {
    let state = build_family(fam)?;
    let d = state.n_params();
    let x = x.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d]);
    let labels = opts.labels.clone().unwrap_or_else(|| default_labels(d));
    let tol = resolve_tol(opts, d);

    let generic = qfim(&state, &x)?.with_labels(labels.clone())?;
    let closed = match closed_form_qfim(fam) {
        Ok(c) => Some(c.with_labels(labels.clone())?),
        Err(Error::NoClosedForm(_)) => None,
        Err(e) => return Err(e),
    };
    let fd = qfim_fd_oracle(&state, &x, FD_STEP)?;

    let mut notes = Vec::new();
    let primary = match opts.provenance {
        ProvenanceMode::Generic | ProvenanceMode::Both => generic.clone(),
        ProvenanceMode::Closed => match &closed {
            Some(c) => c.clone(),
            None => return Err(Error::NoClosedForm(fam.name().into())),
        },
    };

    let mut cross_checks = vec![CrossCheck::between("generic_vs_finite_difference", &generic, &fd, FD_CHECK_TOL)];
    let mut discrepancy = None;
    if let Some(c) = &closed {
        let check = CrossCheck::between("generic_vs_closed_form", &generic, c, 1e-10);
        if check.passed {
            notes.push(format!(
                "closed-form QFIM agrees with the generic engine (max |difference| = {})",
                check.max_abs_difference
            ));
        } else {
            notes.push(format!(
                "closed-form and generic QFIMs differ (max |difference| = {}); reporting the {} matrix",
                check.max_abs_difference,
                if opts.provenance == ProvenanceMode::Closed { "closed-form" } else { "generic" }
            ));
        }
        cross_checks.push(check);
        if opts.provenance == ProvenanceMode::Both {
            discrepancy = Some(compare_provenance(c, &generic, &tol)?);
        }
    }

    let anchor = opts.anchor.clone().unwrap_or_else(|| vec![0.0; d]);
    let mut report = classify_anchored(&primary, sc, &tol, &anchor)?;
    if let Some(c) = closed.as_ref().filter(|_| cross_checks.iter().any(|k| !k.passed)) {
        let (other, name) = if opts.provenance == ProvenanceMode::Closed {
            (&generic, "generic")
        } else {
            (c, "closed-form")
        };
        let alt = match &report.weight {
            None => trace_bound(other, &tol)?,
            Some(w) => weighted_bound(other, w, &tol)?.exact_bound,
        };
        notes.push(format!("the {name} matrix gives exact bound {alt} (reported: {})", report.bounds.exact_bound));
    }
    report.cross_checks = cross_checks;
    report.discrepancy = discrepancy;
    report.notes.extend(notes);
    Ok(report)
}

fn analyze_many_body(
    mb: &ManyBodySpec,
    x: Option<&[f64]>,
    sc: &Scenario,
    opts: &AnalyzeOptions,
) -> Result<StrategyReport> {
    let point = mb.point();
    let mut notes = Vec::new();
    if let Some(x) = x {
        if x != point.as_slice() {
            notes.push(format!(
                "spin-model QFIM is evaluated at the model point {point:?}; supplied x ignored"
            ));
        }
    }
    if opts.provenance != ProvenanceMode::Closed {
        notes.push("no generic engine for spin models; closed-form QFIM used".into());
    }
    let f = many_body_qfim(mb)?;
    let tol = resolve_tol(opts, f.dim());
    let anchor = opts.anchor.clone().unwrap_or_else(|| point.clone());
    let mut report = classify_anchored(&f, sc, &tol, &anchor)?;

    let mut quantities = Vec::new();
    if let Some(red) = &report.reduced {
        let theta = red.project(&point);
        for (j, t) in theta.iter().enumerate() {
            quantities.push(NamedValue {
                name: format!("v{}^T x at model point", j + 1),
                value: *t,
            });
        }
        let scale = point.iter().map(|v| v * v).sum::<f64>().sqrt();
        if matches!(mb, ManyBodySpec::TransverseIsing { .. })
            && theta.iter().all(|t| t.abs() <= 1e-12 * scale.max(1.0))
        {
            notes.push(
                "the estimable combination V^T x evaluates to 0 at the true point: omega and g cannot be estimated together; omega is estimable only when g is known".into(),
            );
        }
    }
    if let ManyBodySpec::XyThreeSite { lambda, gamma, h } = *mb {
        let grad = xy_order_gradient(lambda, gamma, h)?;
        let norm_sq = grad[0] * grad[0] + grad[1] * grad[1];
        quantities.push(NamedValue {
            name: "|grad Omega|^2".into(),
            value: norm_sq,
        });
        if let Some(fr) = report.reduced.as_ref().and_then(|r| r.reduced_fim.as_ref()) {
            if fr.dim() == 1 {
                quantities.push(NamedValue {
                    name: "F' / |grad Omega|^2".into(),
                    value: fr.get(0, 0) / norm_sq,
                });
            }
        }
    }
    report.model_quantities = quantities;
    report.notes.extend(notes);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::information::Provenance;
    use crate::numerics::RealSymMatrix;

    fn tol() -> TolerancePolicy {
        TolerancePolicy::machine(4)
    }

    fn family(spec: FamilySpec) -> ProbeSpec {
        ProbeSpec::Family(spec)
    }

    #[test]
    fn noon_se_is_invertible() {
        let r = analyze_probe(
            &family(FamilySpec::NoonLike { nu: vec![1.0, 1.0] }),
            None,
            &Scenario::simultaneous(),
            &AnalyzeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.branch, Branch::SeInvertible);
        assert!((r.bounds.exact_bound - 3.0).abs() < 1e-12);
        assert_eq!(r.attainability, Attainability::AttainableAsIs);
        assert!(r.constraint.is_none());
        assert!(r.cross_checks.iter().all(|c| c.passed));
    }

    #[test]
    fn ghz_dqs_in_support() {
        let r = analyze_probe(
            &family(FamilySpec::GhzLike { nu: vec![1.0, -2.0] }),
            None,
            &Scenario::distributed(vec![1.0 / 3.0, -2.0 / 3.0]),
            &AnalyzeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.branch.as_str(), "DQS/non-invertible/w-in-support");
        assert!((r.bounds.exact_bound - 1.0 / 9.0).abs() < 1e-14);
        assert!((r.reduced_bound.unwrap() - 1.0 / 9.0).abs() < 1e-14);
        assert_eq!(r.attainability, Attainability::AttainableAfterReduction);
    }

    #[test]
    fn ghz_se_reduction() {
        let r = analyze_probe(
            &family(FamilySpec::GhzLike { nu: vec![1.0, -2.0] }),
            None,
            &Scenario::simultaneous(),
            &AnalyzeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.branch, Branch::SeNonInvertible);
        let c = r.constraint.as_ref().unwrap();
        let s5 = 5f64.sqrt();
        assert!((c.kernel_basis[(0, 0)] - 2.0 / s5).abs() < 1e-12);
        assert!((c.kernel_basis[(1, 0)] - 1.0 / s5).abs() < 1e-12);
        assert_eq!(c.constant, vec![0.0]);
        let red = r.reduced.as_ref().unwrap();
        assert!((red.support_basis[(0, 0)] - 1.0 / s5).abs() < 1e-12);
        assert!((r.reduced_bound.unwrap() - 0.2).abs() < 1e-13);
    }

    #[test]
    fn ghz_dqs_kernel_component() {
        let r = analyze_probe(
            &family(FamilySpec::GhzLike { nu: vec![1.0, -2.0] }),
            None,
            &Scenario::distributed(vec![1.0, 0.0]),
            &AnalyzeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.branch, Branch::DqsWeightWithKernelComponent);
        assert_eq!(r.attainability, Attainability::NotEstimable);
        assert!(r.bounds.kernel_component.is_some());
    }

    #[test]
    fn cyclic_closed_form_analysis() {
        let opts = AnalyzeOptions {
            provenance: ProvenanceMode::Closed,
            ..Default::default()
        };
        let r = analyze_probe(&family(FamilySpec::CyclicPaired { m: 4 }), None, &Scenario::simultaneous(), &opts)
            .unwrap();
        assert_eq!(r.rank, 3);
        assert!((r.bounds.exact_bound - 5.0).abs() < 1e-12);
        let k = &r.constraint.as_ref().unwrap().kernel_basis;
        for (i, want) in [0.5, -0.5, 0.5, -0.5].iter().enumerate() {
            assert!((k[(i, 0)] - want).abs() < 1e-12);
        }
        let odd = analyze_probe(&family(FamilySpec::CyclicPaired { m: 5 }), None, &Scenario::simultaneous(), &opts)
            .unwrap();
        assert!(odd.invertible && odd.constraint.is_none());
    }

    #[test]
    fn both_mode_reports_discrepancy() {
        let opts = AnalyzeOptions {
            provenance: ProvenanceMode::Both,
            ..Default::default()
        };
        let r = analyze_probe(&family(FamilySpec::CyclicPaired { m: 4 }), None, &Scenario::simultaneous(), &opts)
            .unwrap();
        let d = r.discrepancy.as_ref().unwrap();
        assert!(!d.matrices_agree && d.shared_kernel && d.uniform_direction.same_eigenvalue);
        assert!((r.bounds.exact_bound - 3.0).abs() < 1e-12);
        assert!(r.notes.iter().any(|n| n.starts_with("the closed-form matrix gives exact bound 5")));
        assert_eq!(r.information.provenance, Provenance::GenericQfim);
    }

    #[test]
    fn ising_analysis() {
        let r = analyze_probe(
            &ProbeSpec::ManyBody(ManyBodySpec::TransverseIsing { omega: 1.0, g: 0.5, n_sites: 4 }),
            None,
            &Scenario::simultaneous(),
            &AnalyzeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.rank, 1);
        let c = r.constraint.as_ref().unwrap();
        assert!((c.constant[0] + 1.25f64.sqrt()).abs() < 1e-12);
        assert!(r.model_quantities[0].value.abs() < 1e-12);
        assert!(r.notes.iter().any(|n| n.contains("evaluates to 0")));
    }

    #[test]
    fn xy_analysis() {
        let r = analyze_probe(
            &ProbeSpec::ManyBody(ManyBodySpec::XyThreeSite { lambda: 0.8, gamma: 1.1, h: 0.5 }),
            None,
            &Scenario::simultaneous(),
            &AnalyzeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.rank, 1);
        assert_eq!(r.model_quantities.len(), 3);
    }

    #[test]
    fn missing_weight_is_an_error() {
        let f = InfoMatrix::from_matrix(RealSymMatrix::identity(2), Provenance::ClosedForm).unwrap();
        let sc = Scenario {
            kind: ScenarioKind::Distributed,
            weight: None,
        };
        assert!(matches!(classify(&f, &sc, &tol()), Err(Error::MissingWeight)));
        assert!(matches!(
            classify(&f, &Scenario::distributed(vec![1.0]), &tol()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_matrix_branches() {
        let f = InfoMatrix::from_matrix(RealSymMatrix::zeros(2), Provenance::ClosedForm).unwrap();
        let se = classify(&f, &Scenario::simultaneous(), &tol()).unwrap();
        assert_eq!(se.branch, Branch::SeNonInvertible);
        assert_eq!(se.reduced_bound, Some(0.0));
        assert!(se.notes.iter().any(|n| n.contains("no estimable parameter")));
        let dqs = classify(&f, &Scenario::distributed(vec![1.0, 0.0]), &tol()).unwrap();
        assert_eq!(dqs.attainability, Attainability::NotEstimable);
    }

    #[test]
    fn reduced_problem_classifies_as_invertible() {
        let f = closed_form_qfim(&FamilySpec::CyclicPaired { m: 6 }).unwrap();
        let r = classify(&f, &Scenario::simultaneous(), &tol()).unwrap();
        let fr = r.reduced.unwrap().reduced_fim.unwrap();
        let again = classify(&InfoMatrix::from_matrix(fr, Provenance::ClosedForm).unwrap(), &Scenario::simultaneous(), &tol())
            .unwrap();
        assert_eq!(again.branch, Branch::SeInvertible);
    }
}
