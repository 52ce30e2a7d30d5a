use crbkit::bounds::{compare_bounds, saturation_check, trace_bound, weak_bound, weighted_bound};
use crbkit::estimation::{sample_outcomes, sample_outcomes_stream};
use crbkit::information::{
    classical_fim, closed_form_qfim, qfim, InfoMatrix, Provenance,
};
use crbkit::numerics::{eig_sym, pseudoinverse, spd_inverse, RealSymMatrix, TolerancePolicy};
use crbkit::probes::{build_family, FamilySpec, Povm};
use crbkit::random::{psd_with_rank, stream_rng, uniform_vector};
use crbkit::reduction::{constraint_function, reduce_problem, support_decomposition, trace_consistency};
use crbkit::strategy::{classify, Attainability, Branch, Scenario};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn info(m: RealSymMatrix) -> InfoMatrix {
    InfoMatrix::from_matrix(m, Provenance::ClosedForm).unwrap()
}

fn tol(d: usize) -> TolerancePolicy {
    TolerancePolicy::machine(d)
}

/// (seed, dim, rank) with 1 ≤ dim ≤ 8 and 0 ≤ rank ≤ dim.
fn psd_case() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..=8).prop_flat_map(|(seed, d)| (Just(seed), Just(d), 0..=d))
}

fn random_psd(seed: u64, d: usize, rank: usize) -> RealSymMatrix {
    psd_with_rank(&mut stream_rng(seed, 0), d, rank, 0.1, 10.0)
}

fn nonzero_weight(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, 1);
    loop {
        let w = uniform_vector(&mut rng, d, -2.0, 2.0);
        if w.iter().map(|v| v * v).sum::<f64>() > 1e-3 {
            return w;
        }
    }
}

fn family() -> impl Strategy<Value = FamilySpec> {
    prop_oneof![
        prop::collection::vec(-5.0f64..5.0, 1..6).prop_map(|nu| FamilySpec::GhzLike { nu }),
        prop::collection::vec(
            prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            1..6
        )
        .prop_map(|nu| FamilySpec::NoonLike { nu }),
        (2usize..8).prop_map(|m| FamilySpec::CyclicPaired { m }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn penrose_conditions((seed, d, rank) in psd_case()) {
        let f = random_psd(seed, d, rank);
        let p = pseudoinverse(&f, &tol(d)).unwrap();
        let (a, x) = (f.as_matrix(), p.as_matrix());
        prop_assert!((a * x * a - a).amax() < 1e-9);
        prop_assert!((x * a * x - x).amax() < 1e-9);
        prop_assert!((a * x - (a * x).transpose()).amax() < 1e-9);
    }

    #[test]
    fn eigendecomposition_reconstructs((seed, d, rank) in psd_case()) {
        let f = random_psd(seed, d, rank);
        let e = eig_sym(&f).unwrap();
        let v = &e.eigenvectors;
        let rebuilt = v * DMatrix::from_diagonal(&DVector::from_vec(e.eigenvalues.clone())) * v.transpose();
        prop_assert!((rebuilt - f.as_matrix()).amax() < 1e-10);
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1] - 1e-12));
    }

    #[test]
    fn reduction_reproduces_pseudoinverse((seed, d, rank) in psd_case()) {
        prop_assume!(rank >= 1);
        let f = info(random_psd(seed, d, rank));
        let dec = support_decomposition(&f, &tol(d)).unwrap();
        prop_assert_eq!(dec.rank, rank);
        let red = reduce_problem(&f, &dec, None).unwrap();
        let fr_inv = spd_inverse(red.reduced_fim.as_ref().unwrap()).unwrap();
        let v = &red.support_basis;
        let lifted = v * fr_inv.as_matrix() * v.transpose();
        let pinv = pseudoinverse(&f.matrix, &tol(d)).unwrap();
        prop_assert!((lifted - pinv.as_matrix()).amax() < 1e-9);
        let tc = trace_consistency(&f, &tol(d)).unwrap();
        prop_assert!(tc.consistent);
        let proj = &red.projector;
        prop_assert!((proj * proj - proj).amax() < 1e-12);
    }

    #[test]
    fn kernel_is_annihilated_and_constraint_vanishes_at_anchor((seed, d, rank) in psd_case()) {
        let f = info(random_psd(seed, d, rank));
        let dec = support_decomposition(&f, &tol(d)).unwrap();
        prop_assert!((f.matrix.as_matrix() * &dec.kernel_basis).amax() < 1e-9);
        let x0 = uniform_vector(&mut stream_rng(seed, 2), d, -3.0, 3.0);
        let c = constraint_function(&dec, &x0).unwrap();
        prop_assert!(c.evaluate(&x0).unwrap().iter().all(|v| v.abs() < 1e-12));
        let red = reduce_problem(&f, &dec, None).unwrap().anchored(&c);
        let back = red.lift(&red.project(&x0));
        for (a, b) in back.iter().zip(&x0) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn weak_bound_never_exceeds_exact((seed, d, rank) in psd_case()) {
        prop_assume!(rank >= 1);
        let f = info(random_psd(seed, d, rank));
        let w = nonzero_weight(seed, d);
        let r = compare_bounds(&f, &w, &tol(d)).unwrap();
        if let (Some(weak), Some(gap)) = (r.weak_bound, r.gap) {
            prop_assert!(weak <= r.exact_bound + 1e-10 * r.exact_bound.max(1.0));
            prop_assert!(gap >= -1e-10 * r.exact_bound.max(1.0));
        }
    }

    #[test]
    fn saturation_iff_equal_bounds((seed, d, rank) in psd_case(), eigen_weight in any::<bool>()) {
        prop_assume!(rank >= 1);
        let m = random_psd(seed, d, rank);
        let f = info(m.clone());
        let w: Vec<f64> = if eigen_weight {
            // eigenvector in the support plus an arbitrary kernel part
            let dec = support_decomposition(&f, &tol(d)).unwrap();
            let mut w = dec.support_basis.column(0).clone_owned();
            if dec.kernel_basis.ncols() > 0 {
                w += dec.kernel_basis.column(0) * 0.7;
            }
            w.iter().copied().collect()
        } else {
            nonzero_weight(seed, d)
        };
        let sat = saturation_check(&f, &w, &tol(d));
        let Ok(sat) = sat else { return Ok(()); };
        let exact = weighted_bound(&f, &w, &tol(d)).unwrap().exact_bound;
        let weak = weak_bound(&f, &w, &tol(d)).unwrap();
        let equal = (exact - weak).abs() <= 1e-8 * exact.max(1.0);
        prop_assert_eq!(sat, equal, "exact {} weak {}", exact, weak);
        if eigen_weight {
            prop_assert!(sat);
        }
    }

    #[test]
    fn weighted_bound_ignores_kernel_and_scales((seed, d, rank) in psd_case(), c in 0.1f64..10.0) {
        prop_assume!(rank >= 1);
        let m = random_psd(seed, d, rank);
        let f = info(m.clone());
        let w = nonzero_weight(seed, d);
        let dec = support_decomposition(&f, &tol(d)).unwrap();
        let pw: Vec<f64> = (dec.projector() * DVector::from_column_slice(&w)).iter().copied().collect();
        let b = weighted_bound(&f, &w, &tol(d)).unwrap().exact_bound;
        prop_assume!(pw.iter().any(|v| v.abs() > 1e-6));
        let bp = weighted_bound(&f, &pw, &tol(d)).unwrap().exact_bound;
        prop_assert!((b - bp).abs() <= 1e-9 * b.max(1.0));
        let bc = weighted_bound(&info(m.scaled(c)), &w, &tol(d)).unwrap().exact_bound;
        prop_assert!((bc - b / c).abs() <= 1e-9 * b.max(1.0));
    }

    #[test]
    fn trace_bound_is_sum_over_basis((seed, d, rank) in psd_case()) {
        let f = info(random_psd(seed, d, rank));
        let total = trace_bound(&f, &tol(d)).unwrap();
        let sum: f64 = (0..d)
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                weighted_bound(&f, &e, &tol(d)).unwrap().exact_bound
            })
            .sum();
        prop_assert!((total - sum).abs() <= 1e-10 * total.max(1.0));
    }

    #[test]
    fn branch_exhaustiveness((seed, d, rank) in psd_case(), weight_mode in 0usize..3) {
        let f = info(random_psd(seed, d, rank));
        let sc = match weight_mode {
            0 => Scenario::simultaneous(),
            1 => {
                let dec = support_decomposition(&f, &tol(d)).unwrap();
                let w = if dec.rank > 0 {
                    dec.support_basis.column(0).iter().copied().collect()
                } else {
                    nonzero_weight(seed, d)
                };
                Scenario::distributed(w)
            }
            _ => Scenario::distributed(nonzero_weight(seed, d)),
        };
        let r = classify(&f, &sc, &tol(d)).unwrap();
        prop_assert!(Branch::ALL.contains(&r.branch));
        prop_assert_eq!(r.invertible, rank == d);
        if r.invertible {
            prop_assert!(r.constraint.is_none());
            prop_assert_eq!(r.attainability, Attainability::AttainableAsIs);
        }
        if r.attainability == Attainability::NotEstimable {
            prop_assert!(sc.weight.is_some());
            prop_assert!(r.bounds.kernel_component.is_some());
        }
        if r.attainability == Attainability::AttainableAfterReduction {
            let tc = trace_consistency(&f, &tol(d)).unwrap();
            prop_assert!(tc.consistent);
            if let Some(fr) = r.reduced.as_ref().and_then(|x| x.reduced_fim.clone()) {
                let again = classify(&info(fr), &Scenario::simultaneous(), &tol(d)).unwrap();
                prop_assert_eq!(again.branch, Branch::SeInvertible);
            }
        }
    }

    #[test]
    fn qfim_is_psd_and_point_independent(spec in family(), seed in any::<u64>()) {
        let s = build_family(&spec).unwrap();
        let n = s.n_params();
        let mut rng = stream_rng(seed, 0);
        let x1 = uniform_vector(&mut rng, n, -3.0, 3.0);
        let x2 = uniform_vector(&mut rng, n, -3.0, 3.0);
        let f1 = qfim(&s, &x1).unwrap();
        let f2 = qfim(&s, &x2).unwrap();
        prop_assert!((f1.matrix.as_matrix() - f2.matrix.as_matrix()).amax() < 1e-12 * f1.matrix.max_abs().max(1.0));
        let e = eig_sym(&f1.matrix).unwrap();
        prop_assert!(e.eigenvalues.iter().all(|l| *l >= -1e-10 * f1.matrix.max_abs().max(1.0)));
        if !matches!(spec, FamilySpec::CyclicPaired { .. }) {
            let c = closed_form_qfim(&spec).unwrap();
            prop_assert!((c.matrix.as_matrix() - f1.matrix.as_matrix()).amax() < 1e-10 * c.matrix.max_abs().max(1.0));
        }
    }

    #[test]
    fn classical_below_quantum(spec in family(), seed in any::<u64>()) {
        let s = build_family(&spec).unwrap();
        prop_assume!(s.dim() <= 6);
        let mut rng = stream_rng(seed, 0);
        let x = uniform_vector(&mut rng, s.n_params(), -3.0, 3.0);
        let povm = Povm::random_rank_one(&mut rng, s.dim(), s.dim() + 2).unwrap();
        let fc = classical_fim(&s, &povm, &x).unwrap();
        let fq = qfim(&s, &x).unwrap();
        let diff = RealSymMatrix::new(fq.matrix.as_matrix() - fc.matrix.as_matrix()).unwrap();
        let min = eig_sym(&diff).unwrap().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-8, "min eigenvalue {}", min);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampling_counts_total_and_repeat(seed in any::<u64>(), stream in 0u64..1000, x in -3.0f64..3.0, n in 1u64..5000) {
        let s = build_family(&FamilySpec::NoonLike { nu: vec![1.0, 2.0] }).unwrap();
        let povm = Povm::pairwise_interference(3).unwrap();
        let a = sample_outcomes_stream(&s, &povm, &[x, 0.5], n, seed, stream).unwrap();
        let b = sample_outcomes_stream(&s, &povm, &[x, 0.5], n, seed, stream).unwrap();
        prop_assert_eq!(a.counts.iter().sum::<u64>(), n);
        prop_assert_eq!(&a, &b);
        if stream == 0 {
            prop_assert_eq!(a, sample_outcomes(&s, &povm, &[x, 0.5], n, seed).unwrap());
        }
    }
}
