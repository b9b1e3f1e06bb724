//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use oneproxy::adaptation::{solve_adaptation, tune_lambda, AdaptationConfig};
use oneproxy::evo_search::{exhaustive_search, score_all, sweep_tradeoff, EvoConfig, TradeoffGrid};
use oneproxy::pareto::{dominates, hypervolume, pareto_front, remove_non_pareto, LatencySource, ScoredArch};
use oneproxy::pipeline::{one_proxy_nas, Branch, OracleSource, PipelineConfig, ProxyState, TargetOracle};
use oneproxy::{estimate_srcc, srcc, ArchEncoding, Genotype, LatencyPredictor, RooflineDevice, SearchSpaceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 1000 {
        let n = rng.gen_range(2..120);
        let tied = rng.gen_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| if tied { rng.gen_range(0..6) as f64 } else { rng.gen::<f64>() * 100.0 })
                .collect()
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
        if constant(&a) || constant(&b) {
            continue;
        }
        let fast = srcc(&a, &b).unwrap();
        worst = worst.max((fast - naive_srcc(&a, &b)).abs());
        done += 1;
    }
    outcome(worst <= 1e-12, format!("max |fast - naive| = {worst:.2e} over 1000 instances"))
}

fn criterion_2() -> Outcome {
    let space = SearchSpaceSpec::mbv2_like();
    let stats: Vec<_> = (0..500)
        .map(|s| {
            let g = space.random_sample(20_000 + s);
            (g.clone(), space.arch_stats(&g).unwrap())
        })
        .collect();
    let mut oi: Vec<f64> = stats.iter().map(|s| s.1.operational_intensity).collect();
    oi.sort_by(f64::total_cmp);
    // ridges between the quartiles keep at least a quarter of the set in each regime
    let (lo, hi) = (oi[oi.len() / 4], oi[3 * oi.len() / 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let device = |rng: &mut ChaCha8Rng| {
        let ridge = rng.gen_range(lo..hi);
        let bw = rng.gen_range(2.0..50.0);
        let eff = rng.gen_range(0.3..=1.0);
        RooflineDevice::new("d", ridge * bw / eff, bw).unwrap().with_efficiency(eff).unwrap()
    };
    let mut failures = 0;
    let (mut min_c, mut min_m) = (usize::MAX, usize::MAX);
    for _ in 0..20 {
        let (d1, d2) = (device(&mut rng), device(&mut rng));
        let regime = |compute: bool| -> Vec<(f64, f64)> {
            stats
                .iter()
                .filter(|(_, st)| {
                    let bound = |d: &RooflineDevice| {
                        let c = st.flops / (d.peak_gflops * d.efficiency);
                        let m = st.bytes / d.bandwidth_gbps;
                        if compute {
                            c >= m
                        } else {
                            m >= c
                        }
                    };
                    bound(&d1) && bound(&d2)
                })
                .map(|(g, _)| (d1.simulate_latency(g, &space).unwrap(), d2.simulate_latency(g, &space).unwrap()))
                .collect()
        };
        for (compute, min) in [(true, &mut min_c), (false, &mut min_m)] {
            let pairs = regime(compute);
            *min = (*min).min(pairs.len());
            if pairs.len() < 2 {
                continue;
            }
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if srcc(&a, &b).unwrap() != 1.0 {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0 && min_c >= 2 && min_m >= 2,
        format!("20 pairs, SRCC != 1.0 in {failures} filtered sets; smallest compute/memory sets {min_c}/{min_m}"),
    )
}

fn criterion_3() -> Outcome {
    let space = SearchSpaceSpec::mbv2_like();
    let proxy = proxy_for(&space);
    let cfg = AdaptationConfig {
        record_trace: true,
        ..Default::default()
    };
    let same = measure(&space, &proxy, 30_000..30_080);
    let doubled = LatencyPredictor::new(proxy.space_id.clone(), proxy.weights.iter().map(|w| 2.0 * w).collect()).unwrap();
    let twice = measure(&space, &doubled, 30_000..30_080);
    let a = solve_adaptation(&proxy, &same, &space, 1e-3, &cfg).unwrap();
    let b = solve_adaptation(&proxy, &twice, &space, 1e-3, &cfg).unwrap();
    let binf = |p: &oneproxy::AdaptationParams| p.b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let ok_a = (a.params.alpha - 1.0).abs() <= 1e-6 && binf(&a.params) <= 1e-6 && a.objective <= 1e-12;
    let ok_b = (b.params.alpha - 2.0).abs() <= 1e-5 && binf(&b.params) <= 1e-5;
    let mut descent = true;
    let mut runs = 0;
    let mut check = |trace: &[f64]| {
        runs += 1;
        descent &= trace.windows(2).all(|w| w[1] <= w[0]);
    };
    check(&a.trace);
    check(&b.trace);
    let (cell, tripled, train) = tripled_fixture();
    for &lambda in &cfg.lambda_grid {
        check(&solve_adaptation(&tripled, &train, &cell, lambda, &cfg).unwrap().trace);
    }
    outcome(
        ok_a && ok_b && descent,
        format!(
            "identity: alpha {:.9}, |b|inf {:.1e}, obj {:.1e}; 2x: alpha {:.9}, |b|inf {:.1e}; monotone descent on {runs} runs: {descent}",
            a.params.alpha,
            binf(&a.params),
            a.objective,
            b.params.alpha,
            binf(&b.params)
        ),
    )
}

/// Six-edge cell space (30 operator features) with a proxy and 60 samples
/// from a target whose 3x3 conv weight on edge 2 is tripled. Returns the
/// proxy, not the target.
fn tripled_fixture() -> (SearchSpaceSpec, LatencyPredictor, oneproxy::MeasurementSet) {
    let space = SearchSpaceSpec::cell_like(6);
    assert_eq!(space.feature_len(), 30);
    let proxy = proxy_for(&space);
    let coord = tripled_coord(&space);
    let mut w = proxy.weights.clone();
    w[coord] *= 3.0;
    let target = LatencyPredictor::new(proxy.space_id.clone(), w).unwrap();
    let train = measure(&space, &target, 40_000..40_060);
    (space, proxy, train)
}

fn tripled_coord(space: &SearchSpaceSpec) -> usize {
    space.feature_index(2, 3).unwrap()
}

fn criterion_4() -> Outcome {
    let (space, proxy, train) = tripled_fixture();
    let coord = tripled_coord(&space);
    let covered = train
        .samples
        .iter()
        .filter(|s| space.encode(&s.genotype).unwrap().as_slice()[coord] == 1.0)
        .count();
    let cfg = AdaptationConfig::default();
    let mut worst = 0.0f64;
    let mut dominant_ok = true;
    for (i, &lambda) in cfg.lambda_grid.iter().enumerate() {
        let sol = solve_adaptation(&proxy, &train, &space, lambda, &cfg).unwrap();
        let (_, oracle) = cd_solve(&proxy, &train, &space, lambda);
        worst = worst.max((sol.objective - oracle).abs() / oracle.abs().max(1e-12));
        if i == 0 {
            let top = sol
                .params
                .b
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap()
                .0;
            dominant_ok = top == coord;
        }
    }
    outcome(
        worst <= 1e-6 && dominant_ok && covered > 0,
        format!("max relative objective gap {worst:.2e} over 11 lambdas; {covered} samples cover the tripled op; dominant b at it: {dominant_ok}"),
    )
}

struct Crit5 {
    pre: f64,
    validation: f64,
    post: f64,
    fingerprint: String,
}

fn run_criterion_5() -> Crit5 {
    let space = SearchSpaceSpec::mbv2_like();
    let proxy = proxy_for(&space);
    let target = family_member(&proxy, MBV2_FRACTION, MBV2_LOW_SRCC_SEED);
    let pop: Vec<ArchEncoding> = (0..10_000).map(|s| space.encode(&space.random_sample(1_000_000 + s)).unwrap()).collect();
    let pl: Vec<f64> = pop.iter().map(|e| proxy.predict(e).unwrap()).collect();
    let tl: Vec<f64> = pop.iter().map(|e| target.predict(e).unwrap()).collect();
    let pre = srcc(&pl, &tl).unwrap();
    let samples = measure(&space, &target, 5_000_000..5_000_070);
    let cfg = AdaptationConfig {
        train_count: Some(50),
        validation_count: 20,
        ..Default::default()
    };
    let tuned = tune_lambda(&proxy, &samples, &space, &cfg).unwrap();
    let adapted = tuned.params.adapted_predictor(&proxy).unwrap();
    let (al, tl_eval): (Vec<f64>, Vec<f64>) = (0..1000)
        .map(|s| {
            let e = space.encode(&space.random_sample(9_000_000 + s)).unwrap();
            (adapted.predict(&e).unwrap(), target.predict(&e).unwrap())
        })
        .unzip();
    let post = srcc(&al, &tl_eval).unwrap();
    Crit5 {
        pre,
        validation: tuned.validation_srcc,
        post,
        fingerprint: format!("{:?}{:?}", tuned.record(), tuned.per_lambda),
    }
}

fn criterion_5() -> Outcome {
    let r = run_criterion_5();
    outcome(
        r.pre <= 0.85 && r.post >= 0.95,
        format!(
            "pre-adaptation SRCC {:.4} (10k), validation {:.4}, post-adaptation SRCC {:.4} (fresh 1k)",
            r.pre, r.validation, r.post
        ),
    )
}

struct Crit6 {
    ratios: Vec<f64>,
    fingerprint: String,
}

fn run_criterion_6() -> Crit6 {
    let space = SearchSpaceSpec::cell_like(4);
    let proxy = proxy_for(&space);
    let acc = accuracy_for(&space);
    let lat = |g: &Genotype| proxy.predict_genotype(&space, g);
    let all = score_all(&space, &acc, &lat).unwrap();
    let ref_l = all.iter().map(|p| p.latency_ms).fold(0.0, f64::max);
    let exact = hypervolume(&pareto_front(&all).unwrap().members, ref_l);
    let mut ratios = Vec::new();
    let mut fingerprint = String::new();
    for seed in 0..5 {
        let cfg = EvoConfig {
            seed,
            ..Default::default()
        };
        let front = sweep_tradeoff(&space, &acc, &lat, &cfg, &TradeoffGrid::latency_span(11)).unwrap();
        ratios.push(hypervolume(&front.members, ref_l) / exact);
        fingerprint.push_str(&format!("{:?}", front.members));
    }
    Crit6 { ratios, fingerprint }
}

fn criterion_6() -> Outcome {
    let r = run_criterion_6();
    let min = r.ratios.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        min >= 0.95,
        format!("hypervolume ratio per seed {:?}, min {min:.4}", round4(&r.ratios)),
    )
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn criterion_7() -> Outcome {
    let space = SearchSpaceSpec::cell_like(4);
    let acc = accuracy_for(&space);
    let dev = s5e();
    let base = |g: &Genotype| dev.simulate_latency(g, &space);
    let reference: BTreeSet<Genotype> = exhaustive_search(&space, &acc, &base).unwrap().genotypes().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut mismatches = 0;
    for _ in 0..10 {
        let (a, b, p, k) = (
            rng.gen_range(0.1..10.0),
            rng.gen_range(0.0..5.0),
            rng.gen_range(0.3..3.0),
            rng.gen_range(0.01..0.5),
        );
        let transformed = |g: &Genotype| {
            base(g).map(|l: f64| a * l.powf(p) + b + (k * l).exp() + (1.0 + l).ln())
        };
        let front: BTreeSet<Genotype> = exhaustive_search(&space, &acc, &transformed)
            .unwrap()
            .genotypes()
            .into_iter()
            .collect();
        mismatches += usize::from(front != reference);
    }
    outcome(
        mismatches == 0,
        format!("front of {} genotypes; {mismatches} of 10 transforms changed the set", reference.len()),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut front_mismatch = 0;
    let mut dominated_pairs = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..150);
        let coarse = rng.gen_bool(0.5);
        let points: Vec<ScoredArch> = (0..n)
            .map(|i| {
                let (acc, lat) = if coarse {
                    (rng.gen_range(0..8) as f64 / 8.0, rng.gen_range(1..9) as f64)
                } else {
                    (rng.gen::<f64>(), rng.gen_range(0.5..20.0))
                };
                ScoredArch::new(Genotype::Cell { edge_op: vec![i] }, acc, lat, LatencySource::Measured).unwrap()
            })
            .collect();
        let fast: BTreeSet<Genotype> = pareto_front(&points).unwrap().genotypes().into_iter().collect();
        let brute: BTreeSet<Genotype> = brute_front(&points).into_iter().map(|i| points[i].genotype.clone()).collect();
        front_mismatch += usize::from(fast != brute);
        let eps = rng.gen_range(0.0..0.05);
        let cleaned = remove_non_pareto(&points, eps).unwrap();
        for a in &cleaned.members {
            dominated_pairs += cleaned.members.iter().filter(|b| dominates(b, a)).count();
        }
    }
    outcome(
        front_mismatch == 0 && dominated_pairs == 0,
        format!("{front_mismatch} front mismatches vs brute force, {dominated_pairs} dominated pairs after removal (1000 sets)"),
    )
}

fn cell_proxy_state(cfg: &PipelineConfig) -> ProxyState {
    let space = SearchSpaceSpec::cell_like(4);
    let proxy = proxy_for(&space);
    let acc = accuracy_for(&space);
    let evo = EvoConfig {
        seed: 17,
        ..cfg.evo.clone()
    };
    ProxyState::prepare("s5e", proxy, space, acc, &evo, &cfg.grid).unwrap()
}

fn target_front(state: &ProxyState, target: &LatencyPredictor) -> (Vec<ScoredArch>, f64) {
    let lat = |g: &Genotype| target.predict_genotype(&state.space, g);
    let all = score_all(&state.space, &state.acc_pred, &lat).unwrap();
    let ref_l = all.iter().map(|p| p.latency_ms).fold(0.0, f64::max);
    (pareto_front(&all).unwrap().members, ref_l)
}

struct PipelineRun {
    branch: Branch,
    subset: bool,
    count: usize,
    oracle_count: usize,
    front: usize,
    initial: f64,
    recheck: f64,
    budget_exhausted: bool,
    adaptation_measurements: usize,
    hv_ratio: f64,
    fingerprint: String,
}

fn run_pipeline(target: LatencyPredictor) -> PipelineRun {
    let cfg = PipelineConfig {
        seed: 9,
        ..Default::default()
    };
    let state = cell_proxy_state(&cfg);
    let oracle = TargetOracle::new("target", OracleSource::Predictor(target.clone()), state.space.clone());
    let out = one_proxy_nas(&state, &oracle, &cfg).unwrap();
    let (oracle_front, ref_l) = target_front(&state, &target);
    let oracle_set: BTreeSet<&Genotype> = oracle_front.iter().map(|m| &m.genotype).collect();
    PipelineRun {
        branch: out.report.branch,
        subset: out.pareto.members.iter().all(|m| oracle_set.contains(&m.genotype)),
        count: out.report.measurement_count,
        oracle_count: oracle.query_count(),
        front: out.pareto.len(),
        initial: out.report.initial_srcc,
        recheck: out.report.final_srcc(),
        budget_exhausted: out.report.budget_exhausted,
        adaptation_measurements: out.report.adaptation_measurements,
        hv_ratio: hypervolume(&out.pareto.members, ref_l) / hypervolume(&oracle_front, ref_l),
        fingerprint: format!("{:?}{:?}", out.pareto, out.report),
    }
}

fn reuse_target() -> LatencyPredictor {
    let proxy = proxy_for(&SearchSpaceSpec::cell_like(4));
    family_member(&proxy, 0.0, 91)
}

fn adapt_target() -> LatencyPredictor {
    let proxy = proxy_for(&SearchSpaceSpec::cell_like(4));
    family_member(&proxy, CELL_LOW_SRCC_FRACTION, CELL_LOW_SRCC_SEED)
}

fn criterion_9() -> Outcome {
    let r = run_pipeline(reuse_target());
    let pass = r.branch == Branch::Reuse && r.subset && r.count == r.oracle_count && r.count <= 50 + r.front;
    outcome(
        pass,
        format!(
            "branch {:?} (initial SRCC {:.4}), front {} subset of oracle front: {}, measurements {} (bound {})",
            r.branch,
            r.initial,
            r.front,
            r.subset,
            r.count,
            50 + r.front
        ),
    )
}

fn criterion_10() -> Outcome {
    let space = SearchSpaceSpec::cell_like(4);
    let proxy = proxy_for(&space);
    let target = adapt_target();
    let all = space.enumerate().unwrap();
    let pl: Vec<f64> = all.iter().map(|g| proxy.predict_genotype(&space, g).unwrap()).collect();
    let tl: Vec<f64> = all.iter().map(|g| target.predict_genotype(&space, g).unwrap()).collect();
    let pre = srcc(&pl, &tl).unwrap();
    let r = run_pipeline(target);
    let pass = pre <= 0.85
        && r.branch == Branch::Adapt
        && r.recheck >= 0.9
        && !r.budget_exhausted
        && r.adaptation_measurements <= 200
        && r.hv_ratio >= 0.9;
    outcome(
        pass,
        format!(
            "space SRCC {pre:.4}, branch {:?}, re-check SRCC {:.4} after {} measurements, hypervolume ratio {:.4}",
            r.branch, r.recheck, r.adaptation_measurements, r.hv_ratio
        ),
    )
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn criterion_11() -> Outcome {
    let runs = |threads: usize| -> Vec<String> {
        in_pool(threads, || {
            vec![
                run_criterion_5().fingerprint,
                run_criterion_6().fingerprint,
                run_pipeline(reuse_target()).fingerprint,
                run_pipeline(adapt_target()).fingerprint,
            ]
        })
    };
    let (one, eight) = (runs(1), runs(8));
    let same: Vec<bool> = one.iter().zip(&eight).map(|(a, b)| a == b).collect();
    outcome(
        same.iter().all(|s| *s),
        format!("identical at 1 and 8 workers for criteria 5, 6, 9, 10: {same:?}"),
    )
}

fn criterion_12() -> Outcome {
    let space = SearchSpaceSpec::mbv2_like();
    let proxy = proxy_for(&space);
    let target = family_member(&proxy, MBV2_FRACTION, MBV2_SRCC_095_SEED);
    let (a, b): (Vec<f64>, Vec<f64>) = (0..10_000)
        .map(|s| {
            let e = space.encode(&space.random_sample(1_000_000 + s)).unwrap();
            (proxy.predict(&e).unwrap(), target.predict(&e).unwrap())
        })
        .unzip();
    let exact = srcc(&a, &b).unwrap();
    let e50 = estimate_srcc(&a, &b, 50, 1000, 12).unwrap();
    let e10 = estimate_srcc(&a, &b, 10, 1000, 12).unwrap();
    outcome(
        (exact - 0.95).abs() <= 0.01 && (e50.mean - exact).abs() <= 0.05 && e50.std_dev < e10.std_dev,
        format!(
            "exact {exact:.4}; 50-sample mean {:.4} std {:.4}; 10-sample std {:.4}",
            e50.mean, e50.std_dev, e10.std_dev
        ),
    )
}

fn main() {
    type Criterion = (u32, &'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        (1, "SRCC matches naive oracle", 5, criterion_1),
        (2, "roofline regimes keep SRCC at 1", 10, criterion_2),
        (3, "adaptation trivial recovery and descent", 5, criterion_3),
        (4, "adaptation matches coordinate descent", 30, criterion_4),
        (5, "adaptation lifts SRCC", 60, criterion_5),
        (6, "evolutionary front vs exhaustive", 120, criterion_6),
        (7, "front invariant under monotone transforms", 30, criterion_7),
        (8, "Pareto front and removal correctness", 10, criterion_8),
        (9, "pipeline reuse branch", 120, criterion_9),
        (10, "pipeline adapt branch", 180, criterion_10),
        (11, "determinism across worker counts", 600, criterion_11),
        (12, "SRCC estimator behavior", 30, criterion_12),
    ];
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {}: {name}: {} ({:.1} s, limit {limit} s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
