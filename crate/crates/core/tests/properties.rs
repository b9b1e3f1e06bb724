mod common;

use nalgebra::{DMatrix, DVector};
use oneproxy::adaptation::{objective, prox_step, soft_threshold, solve_adaptation, AdaptationConfig};
use oneproxy::evo_search::crossover;
use oneproxy::pareto::{dominates, hypervolume, pareto_front, remove_non_pareto, LatencySource, ScoredArch};
use oneproxy::{srcc, AdaptationParams, Genotype, LatencyPredictor, MeasurementSet, SearchSpaceSpec};
use proptest::prelude::*;

use common::*;

fn points_strategy() -> impl Strategy<Value = Vec<ScoredArch>> {
    prop::collection::vec((0u32..10, 1u32..12), 1..40).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (a, l))| {
                ScoredArch::new(
                    Genotype::Cell { edge_op: vec![i as u32] },
                    a as f64 / 10.0,
                    l as f64,
                    LatencySource::Predicted,
                )
                .unwrap()
            })
            .collect()
    })
}

fn sorted(set: Vec<Genotype>) -> Vec<Genotype> {
    let mut v = set;
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn front_is_idempotent(points in points_strategy()) {
        let once = pareto_front(&points).unwrap();
        let twice = pareto_front(&once.members).unwrap();
        prop_assert_eq!(sorted(once.genotypes()), sorted(twice.genotypes()));
    }

    #[test]
    fn front_ignores_input_order(points in points_strategy(), seed in any::<u64>()) {
        let mut shuffled = points.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(
            sorted(pareto_front(&points).unwrap().genotypes()),
            sorted(pareto_front(&shuffled).unwrap().genotypes())
        );
    }

    #[test]
    fn removal_leaves_no_dominated_pair(points in points_strategy(), eps in 0.0f64..0.2) {
        let measured: Vec<ScoredArch> = points
            .iter()
            .map(|p| ScoredArch { latency_source: LatencySource::Measured, ..p.clone() })
            .collect();
        prop_assert!(remove_non_pareto(&points, eps).is_err());
        let kept = remove_non_pareto(&measured, eps).unwrap();
        prop_assert!(!kept.is_empty());
        for a in &kept.members {
            prop_assert!(!kept.members.iter().any(|b| dominates(b, a)));
        }
    }

    #[test]
    fn hypervolume_of_front_equals_hypervolume_of_all(points in points_strategy()) {
        let front = pareto_front(&points).unwrap();
        let a = hypervolume(&points, 12.0);
        let b = hypervolume(&front.members, 12.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!((0.0..=11.0).contains(&a));
    }

    #[test]
    fn encode_decode_round_trip(seed in any::<u64>(), which in 0usize..3) {
        let space = match which {
            0 => SearchSpaceSpec::mbv2_like(),
            1 => SearchSpaceSpec::fbnet_like(),
            _ => SearchSpaceSpec::cell_like(6),
        };
        let g = space.random_sample(seed);
        let enc = space.encode(&g).unwrap();
        prop_assert_eq!(enc.len(), space.encoding_len());
        prop_assert_eq!(space.decode(&enc).unwrap(), space.canonical(&g).unwrap());
    }

    #[test]
    fn srcc_is_symmetric_and_bounded(
        a in prop::collection::vec(0u32..20, 2..60),
        shift in prop::collection::vec(0u32..20, 60)
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| (*x + *s) as f64).collect();
        let a: Vec<f64> = a.iter().map(|x| *x as f64).collect();
        let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
        prop_assume!(!constant(&a) && !constant(&b));
        let ab = srcc(&a, &b).unwrap();
        prop_assert_eq!(ab, srcc(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ab - naive_srcc(&a, &b)).abs() <= 1e-12);
        prop_assert_eq!(srcc(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn crossover_genes_come_from_parents(s1 in any::<u64>(), s2 in any::<u64>(), seed in any::<u64>()) {
        let space = SearchSpaceSpec::mbv2_like();
        let (p1, p2) = (space.random_sample(s1), space.random_sample(s2));
        let child = crossover(&p1, &p2, seed).unwrap();
        space.validate(&child).unwrap();
        let (g1, g2, gc) = (p1.genes(), p2.genes(), child.genes());
        for i in 0..gc.len() {
            prop_assert!(gc[i] == g1[i] || gc[i] == g2[i]);
        }
    }

    #[test]
    fn soft_threshold_matches_definition(z in -10.0f64..10.0, t in 0.0f64..5.0) {
        let s = soft_threshold(z, t);
        if z.abs() <= t {
            prop_assert_eq!(s, 0.0);
        } else {
            prop_assert!((s - (z - t * z.signum())).abs() <= 1e-12);
        }
    }

    #[test]
    fn prox_step_leaves_alpha_unthresholded(
        theta in prop::collection::vec(-3.0f64..3.0, 2..10),
        step in 0.01f64..1.0,
        lambda in 0.0f64..2.0
    ) {
        let grad = vec![0.0; theta.len()];
        let next = prox_step(&theta, &grad, step, lambda);
        prop_assert_eq!(next[0], theta[0]);
        for j in 1..theta.len() {
            prop_assert_eq!(next[j], soft_threshold(theta[j], lambda * step));
        }
    }
}

fn cell_fixture(noise_seed: u64) -> (SearchSpaceSpec, LatencyPredictor, MeasurementSet) {
    let space = SearchSpaceSpec::cell_like(4);
    let proxy = proxy_for(&space);
    let target = family_member(&proxy, 0.3, noise_seed);
    let mut set = measure(&space, &target, 70_000..70_060);
    for (i, s) in set.samples.iter_mut().enumerate() {
        // deterministic wiggle so the fit has a nonzero residual
        s.latency_ms *= 1.0 + 0.02 * ((i as f64 * 1.7 + noise_seed as f64).sin());
    }
    (space, proxy, set)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn penalty_norm_shrinks_as_lambda_grows(seed in 0u64..1000) {
        let (space, proxy, train) = cell_fixture(seed);
        let cfg = AdaptationConfig::default();
        let norms: Vec<f64> = cfg
            .lambda_grid
            .iter()
            .map(|&l| solve_adaptation(&proxy, &train, &space, l, &cfg).unwrap().params.l1())
            .collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-4) + 1e-9, "{:?}", norms);
        }
    }

    #[test]
    fn rescaled_targets_rescale_the_solution(seed in 0u64..1000, c in 0.25f64..4.0) {
        let (space, proxy, train) = cell_fixture(seed);
        let mut scaled = train.clone();
        for s in &mut scaled.samples {
            s.latency_ms *= c;
        }
        let cfg = AdaptationConfig::default();
        let lambda = 0.05;
        let base = solve_adaptation(&proxy, &train, &space, lambda / c, &cfg).unwrap();
        let big = solve_adaptation(&proxy, &scaled, &space, lambda, &cfg).unwrap();
        prop_assert!((big.objective - c * c * base.objective).abs() <= 1e-6 * big.objective.max(1e-9));
        prop_assert!((big.params.alpha - c * base.params.alpha).abs() <= 1e-3 * c);
    }

    #[test]
    fn solver_matches_coordinate_descent(seed in 0u64..1000, li in 0usize..11) {
        let (space, proxy, train) = cell_fixture(seed);
        let cfg = AdaptationConfig::default();
        let lambda = cfg.lambda_grid[li];
        let sol = solve_adaptation(&proxy, &train, &space, lambda, &cfg).unwrap();
        let (theta, oracle) = cd_solve(&proxy, &train, &space, lambda);
        prop_assert!((sol.objective - oracle).abs() <= 1e-6 * oracle.max(1e-12));
        let cd = AdaptationParams { alpha: theta[0], b: theta[1..].to_vec() };
        let recomputed = objective(&cd, &proxy, &train, &space, lambda).unwrap();
        prop_assert!((recomputed - oracle).abs() <= 1e-9 * oracle.max(1e-12));
    }
}

#[test]
fn unpenalized_fit_reaches_least_squares_residual() {
    let (space, proxy, train) = cell_fixture(5);
    let w = &proxy.weights;
    let n = train.len();
    let mut z = DMatrix::<f64>::zeros(n, w.len() + 1);
    for (i, s) in train.samples.iter().enumerate() {
        let x = space.encode(&s.genotype).unwrap().into_vec();
        for j in 0..w.len() {
            z[(i, 0)] += w[j] * x[j];
            z[(i, j + 1)] = w[j] * x[j];
        }
    }
    let y = DVector::from_vec(train.latencies());
    let theta = z.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let best = (&z * theta - &y).norm_squared() / n as f64;
    let cfg = AdaptationConfig {
        rel_tol: 1e-12,
        max_iter: 200_000,
        ..Default::default()
    };
    let sol = solve_adaptation(&proxy, &train, &space, 0.0, &cfg).unwrap();
    assert!(best > 0.0);
    assert!(
        (sol.objective - best).abs() <= 1e-6 * best,
        "solver {} vs least squares {}",
        sol.objective,
        best
    );
}
