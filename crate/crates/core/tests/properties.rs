use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use we_core::coarse::{build_coarse_exact, compute_v};
use we_core::diagnostics::{conditional_mutation_variance, optimal_allocation, GSequence};
use we_core::hill::{cycle_average, direct_mfpt, hitting_probability, source_sink_kernel, SourceSinkSpec};
use we_core::we::{allocate_targets, apportion, select, stationary_init_ensemble, stochastic_round, SelectionOutcome};
use we_core::{BinPartition, Distribution, Ensemble, Observable, Particle, SelectionPolicy, TransitionMatrix};

/// Random stochastic matrix with strictly positive entries.
fn kernel(size: usize) -> impl Strategy<Value = TransitionMatrix> {
    prop::collection::vec(0.05f64..1.0, size * size).prop_map(move |raw| {
        let rows: Vec<Vec<f64>> = raw
            .chunks(size)
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|v| v / s).collect()
            })
            .collect();
        TransitionMatrix::from_rows(&rows).unwrap()
    })
}

fn kernel_and_vectors(max: usize) -> impl Strategy<Value = (TransitionMatrix, Vec<f64>, Vec<f64>)> {
    (2..=max).prop_flat_map(|n| {
        (
            kernel(n),
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

fn ensemble(max: usize, states: usize) -> impl Strategy<Value = Ensemble> {
    prop::collection::vec((0..states, 0.01f64..1.0), 1..max).prop_map(|ps| {
        Ensemble::new(
            0,
            ps.into_iter()
                .map(|(state, weight)| Particle { state, weight })
                .collect(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn left_and_right_actions_are_adjoint((k, z, f) in kernel_and_vectors(8)) {
        let zeta = Distribution::normalized(z).unwrap();
        let f = Observable::new(f).unwrap();
        let lhs = zeta.expect(&k.apply_right(&f).unwrap()).unwrap();
        let rhs = k.apply_left(&zeta).unwrap().expect(&f).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn powers_compose((k, _, _) in kernel_and_vectors(6), a in 0u32..5, b in 0u32..5) {
        let lhs = k.power(a + b);
        let rhs = k.power(a).matmul(&k.power(b)).unwrap();
        for i in 0..k.size() {
            for j in 0..k.size() {
                prop_assert!((lhs.get(i, j) - rhs.get(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn stationary_vector_is_invariant((k, _, _) in kernel_and_vectors(10)) {
        let pi = k.stationary().unwrap();
        prop_assert!(k.stationary_residual(pi.values()) <= 1e-12);
        prop_assert!((pi.values().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn second_eigenvalue_is_a_modulus_below_one((k, _, _) in kernel_and_vectors(8)) {
        let l2 = k.second_eigenvalue_modulus().unwrap();
        prop_assert!((0.0..1.0).contains(&l2));
    }

    #[test]
    fn allocation_conserves_total(
        w in prop::collection::vec(0.0f64..1.0, 1..12),
        v in prop::collection::vec(0.0f64..1.0, 12),
        extra in 1usize..200,
        frac in 0.01f64..0.99,
    ) {
        let r = w.len();
        let total = (r + extra) as f64;
        let floor = frac * total / r as f64;
        let t = allocate_targets(&w, &v[..r], total, floor).unwrap();
        let denom: f64 = w.iter().zip(&v).map(|(a, b)| a * b.sqrt()).sum();
        let sum: f64 = t.iter().sum();
        prop_assert!(t.iter().all(|x| *x >= floor - 1e-12));
        if denom > 0.0 {
            prop_assert!((sum - total).abs() <= 1e-9 * total);
        } else {
            prop_assert!((sum - floor * r as f64).abs() <= 1e-9 * total);
        }
    }

    #[test]
    fn stochastic_round_stays_on_neighbours(beta in 0.0f64..50.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = stochastic_round(beta, &mut rng) as f64;
        prop_assert!(c == beta.floor() || c == beta.floor() + 1.0);
    }

    #[test]
    fn selection_reweights_children(e in ensemble(40, 9), target in 0.2f64..6.0, seed in any::<u64>()) {
        let bins = BinPartition::uniform_width(9, 3).unwrap();
        let policy = SelectionPolicy::Traditional { per_bin_target: target };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = select(&e, &policy, &bins, None, &mut rng).unwrap();
        prop_assert_eq!(out.children_count.iter().sum::<u64>() as usize, out.selected.len());
        for (child, &parent) in out.selected.iter().zip(&out.parent_of) {
            let p = e.particles[parent];
            prop_assert_eq!(child.state, p.state);
            prop_assert!((child.weight - p.weight / out.mean_children[parent]).abs() <= 1e-15 * p.weight.max(1.0));
        }
        // Mean children per occupied bin add up to the bin target, and all
        // children of a bin share one weight.
        let mut beta_sum = [0.0; 3];
        let mut occupied = [false; 3];
        for (p, beta) in e.particles.iter().zip(&out.mean_children) {
            beta_sum[bins.bin_of(p.state)] += beta;
            occupied[bins.bin_of(p.state)] = true;
        }
        for r in 0..3 {
            if occupied[r] {
                prop_assert!((beta_sum[r] - target).abs() <= 1e-9 * target.max(1.0));
            }
        }
        for a in &out.selected {
            for b in &out.selected {
                if bins.bin_of(a.state) == bins.bin_of(b.state) {
                    prop_assert!((a.weight - b.weight).abs() <= 1e-12 * a.weight);
                }
            }
        }
    }

    #[test]
    fn naive_selection_is_identity(e in ensemble(40, 9), seed in any::<u64>()) {
        let bins = BinPartition::uniform_width(9, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = select(&e, &SelectionPolicy::Naive, &bins, None, &mut rng).unwrap();
        prop_assert_eq!(out, SelectionOutcome::identity(&e));
    }

    #[test]
    fn optimal_allocation_beats_perturbations(e in ensemble(8, 2), eps in prop::collection::vec(-0.2f64..0.2, 8)) {
        let k = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let g = GSequence::new(&k, &Observable::new(vec![0.0, 1.0]).unwrap(), 1).unwrap();
        let total = e.len() as f64;
        let opt = optimal_allocation(&e, &g, 0, total).unwrap();
        let best = conditional_mutation_variance(&e, &opt, &g, 0);
        let mut other: Vec<f64> = opt.iter().zip(&eps).map(|(b, d)| (b * (1.0 + d)).max(1e-3)).collect();
        let s: f64 = other.iter().sum();
        other.iter_mut().for_each(|b| *b *= total / s);
        prop_assert!(conditional_mutation_variance(&e, &other, &g, 0) >= best - 1e-12);
    }

    #[test]
    fn coarse_variances_are_nonnegative((k, _, f) in kernel_and_vectors(8), n in 1usize..20) {
        let bins = BinPartition::uniform_width(k.size(), 2).unwrap();
        let f = Observable::new(f).unwrap();
        let (p, u) = build_coarse_exact(&k, &bins, &Distribution::uniform(k.size()), &f).unwrap();
        let v = compute_v(&p, &u, n).unwrap();
        prop_assert!(v.min_raw() >= -1e-10);
        prop_assert!(v.rows().iter().flatten().all(|x| *x >= 0.0));
    }

    #[test]
    fn apportion_is_exact(shares in prop::collection::vec(0.01f64..1.0, 1..20), total in 0usize..500) {
        let c = apportion(&shares, total);
        prop_assert_eq!(c.iter().sum::<usize>(), total);
        let s: f64 = shares.iter().sum();
        for (ci, si) in c.iter().zip(&shares) {
            prop_assert!((*ci as f64 - si / s * total as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn stationary_start_matches_coarse_mu(mu in prop::collection::vec(0.01f64..1.0, 1..10), extra in 0usize..40) {
        let r = mu.len();
        let mu = Distribution::normalized(mu).unwrap();
        let bins = BinPartition::uniform_width(3 * r, 3).unwrap();
        let e = stationary_init_ensemble(&mu, &bins, r + extra).unwrap();
        prop_assert_eq!(e.len(), r + extra);
        let totals = e.bin_totals(&bins);
        for (t, m) in totals.iter().zip(mu.values()) {
            prop_assert!((t.weight - m).abs() <= 1e-14);
        }
    }

    /// Renewal identity: π(A) = E^ρ[Σ_{p=1}^{τ_F} 𝟙_A(X_p)] / E^ρ[τ_F] for the
    /// stationary law π of the source–sink chain.
    #[test]
    fn renewal_identity_on_small_chains(
        (k, _, _) in kernel_and_vectors(4),
        sink_mask in 1u8..15,
        a_mask in 1u8..16,
    ) {
        let n = k.size();
        let sink: Vec<usize> = (0..n).filter(|x| sink_mask >> x & 1 == 1).collect();
        prop_assume!(!sink.is_empty() && sink.len() < n);
        let source = (0..n).find(|x| !sink.contains(x)).unwrap();
        let spec = SourceSinkSpec::new(k, sink.clone(), Distribution::point_mass(n, source).unwrap()).unwrap();
        let pi = source_sink_kernel(&spec).unwrap().stationary().unwrap();
        let t = direct_mfpt(&spec).unwrap();
        prop_assert!((t * pi.mass_of(&sink) - 1.0).abs() <= 1e-10);
        let a: Vec<usize> = (0..n).filter(|x| a_mask >> x & 1 == 1).collect();
        let visits = cycle_average(&spec, &Observable::indicator(n, &a).unwrap()).unwrap();
        prop_assert!((visits / t - pi.mass_of(&a)).abs() <= 1e-10);
        if sink.len() >= 2 {
            let (fa, fb) = sink.split_at(1);
            let h = hitting_probability(&pi, fa, fb).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            let exact = cycle_average(&spec, &Observable::indicator(n, fb).unwrap()).unwrap();
            prop_assert!((h - exact).abs() <= 1e-10);
        }
    }
}

#[test]
fn three_well_exact_references() {
    let (q, k) = we_core::three_well::build_chain();
    assert_eq!(k, q.power(4));
    let pi = k.stationary().unwrap();
    let f = we_core::three_well::observable();
    let pi_f = pi.expect(&f).unwrap();
    assert_abs_diff_eq!(pi_f, 2.103011e-5, epsilon = 1e-10);
    // Exact references for the coarse-preconditioned start, computed
    // independently with dense linear algebra.
    let bins = we_core::three_well::bins();
    let (p, _) = build_coarse_exact(&k, &bins, &Distribution::uniform(90), &f).unwrap();
    let mu = we_core::coarse::coarse_stationary(&p).unwrap();
    let init = stationary_init_ensemble(&mu, &bins, 150).unwrap();
    for (n, expected) in [(1usize, 2.9062e-4), (5, 1.2600e-4), (30, 2.1092e-5)] {
        let exact = GSequence::new(&k, &f, n).unwrap().martingale_value(&init, 0);
        assert!((exact / expected - 1.0).abs() < 5e-4, "n = {n}: {exact:e}");
    }
}
