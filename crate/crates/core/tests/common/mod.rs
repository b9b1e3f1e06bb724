//! Independent reference implementations and pinned fixtures shared by the
//! integration tests.
#![allow(dead_code)]

use oneproxy::pareto::{dominates, ScoredArch};
use oneproxy::{
    generate_family, AccuracyPredictor, LatencyPredictor, MeasurementSet, RooflineDevice, SearchSpaceSpec,
    SyntheticDeviceFamilySpec,
};

/// Spearman correlation from quadratic rank counting and the textbook
/// Pearson formula with explicit means.
pub fn naive_srcc(a: &[f64], b: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

/// Indices of points not dominated by any other point.
pub fn brute_front(points: &[ScoredArch]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}

/// Cyclic coordinate descent on the adaptation objective with exact
/// coordinate minimization. Returns `(theta, objective)` where `theta[0]`
/// is alpha and `theta[1..]` is b.
pub fn cd_solve(
    proxy: &LatencyPredictor,
    train: &MeasurementSet,
    space: &SearchSpaceSpec,
    lambda: f64,
) -> (Vec<f64>, f64) {
    let w = &proxy.weights;
    let k = w.len();
    let n = train.len();
    let mut cols = vec![vec![0.0; n]; k + 1];
    let y: Vec<f64> = train.latencies();
    for (i, s) in train.samples.iter().enumerate() {
        let x = space.encode(&s.genotype).unwrap().into_vec();
        for j in 0..k {
            cols[j + 1][i] = w[j] * x[j];
            cols[0][i] += w[j] * x[j];
        }
    }
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut theta = vec![0.0; k + 1];
    theta[0] = 1.0;
    let mut r: Vec<f64> = (0..n).map(|i| y[i] - cols[0][i]).collect();
    let objective = |r: &[f64], theta: &[f64]| {
        r.iter().map(|v| v * v).sum::<f64>() / n as f64 + lambda * theta[1..].iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut last = objective(&r, &theta);
    let mut stall = 0;
    for _ in 0..400_000 {
        for j in 0..=k {
            if norms[j] == 0.0 {
                theta[j] = 0.0;
                continue;
            }
            let rho: f64 = cols[j].iter().zip(&r).map(|(c, ri)| c * ri).sum::<f64>() + norms[j] * theta[j];
            let next = if j == 0 {
                rho / norms[j]
            } else {
                let t = n as f64 * lambda / 2.0;
                rho.signum() * (rho.abs() - t).max(0.0) / norms[j]
            };
            let delta = next - theta[j];
            if delta != 0.0 {
                for (ri, c) in r.iter_mut().zip(&cols[j]) {
                    *ri -= c * delta;
                }
                theta[j] = next;
            }
        }
        // refresh residuals to stop drift
        for i in 0..n {
            r[i] = y[i] - (0..=k).map(|j| cols[j][i] * theta[j]).sum::<f64>();
        }
        let f = objective(&r, &theta);
        if last - f <= 1e-15 * last.abs().max(1e-300) {
            stall += 1;
            if stall >= 50 {
                return (theta, f);
            }
        } else {
            stall = 0;
        }
        last = f;
    }
    (theta, last)
}

pub fn s5e() -> RooflineDevice {
    RooflineDevice::new("s5e", 40.6, 14.93).unwrap()
}

/// Operator-level proxy predictor built from the S5e roofline.
pub fn proxy_for(space: &SearchSpaceSpec) -> LatencyPredictor {
    s5e().operator_predictor(space, 1.0).unwrap()
}

pub fn accuracy_for(space: &SearchSpaceSpec) -> AccuracyPredictor {
    AccuracyPredictor::synthetic_for_space(space, 1).unwrap()
}

/// One member of the proxy's synthetic family.
pub fn family_member(proxy: &LatencyPredictor, perturb_fraction: f64, seed: u64) -> LatencyPredictor {
    generate_family(&SyntheticDeviceFamilySpec {
        base_weights: proxy.clone(),
        member_count: 1,
        global_scale_range: (0.5, 2.0),
        perturb_fraction,
        perturb_range: (0.2, 5.0),
        seed,
    })
    .unwrap()
    .remove(0)
}

/// Low-monotonicity MobileNet-V2 target (pre-adaptation SRCC about 0.61).
pub const MBV2_LOW_SRCC_SEED: u64 = 4;
/// MobileNet-V2 target with SRCC about 0.95 against the proxy.
pub const MBV2_SRCC_095_SEED: u64 = 17;
/// Low-monotonicity four-edge cell target (SRCC about 0.77 over the space).
pub const CELL_LOW_SRCC_SEED: u64 = 15;
pub const CELL_LOW_SRCC_FRACTION: f64 = 0.3;
pub const MBV2_FRACTION: f64 = 0.1;

pub fn measure(space: &SearchSpaceSpec, target: &LatencyPredictor, seeds: std::ops::Range<u64>) -> MeasurementSet {
    let mut set = MeasurementSet::new("target");
    for s in seeds {
        let g = space.random_sample(s);
        let y = target.predict_genotype(space, &g).unwrap();
        set.push(g, y);
    }
    set
}
