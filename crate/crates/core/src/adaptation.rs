//! Proxy adaptation: rescale a proxy's operator weights to a target device.
//!
//! The adapted predictor is `[(alpha * 1 + b) o w]^T x`. Fitting solves
//!
//! ```text
//! min_{alpha, b}  (1/N) sum_i ([(alpha * 1 + b) o w]^T x_i - y_i)^2 + lambda * |b|_1
//! ```
//!
//! with a monotone accelerated proximal-gradient method and backtracking.
//! The bias coordinate is part of `b`; `alpha` is not penalized.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latency_model::{dot, LatencyPredictor, MeasurementSet};
use crate::monotonicity::srcc;
use crate::rng::rng_for;
use crate::search_space::{ArchEncoding, SearchSpaceSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    pub alpha: f64,
    pub b: Vec<f64>,
}

impl AdaptationParams {
    pub fn identity(len: usize) -> Self {
        Self {
            alpha: 1.0,
            b: vec![0.0; len],
        }
    }

    /// Number of nonzero entries of `b`.
    pub fn nnz(&self) -> usize {
        self.b.iter().filter(|v| **v != 0.0).count()
    }

    pub fn l1(&self) -> f64 {
        self.b.iter().map(|v| v.abs()).sum()
    }

    pub fn effective_weights(&self, proxy: &LatencyPredictor) -> Result<Vec<f64>> {
        check_len(proxy.weights.len(), self.b.len())?;
        Ok(proxy
            .weights
            .iter()
            .zip(&self.b)
            .map(|(w, b)| (self.alpha + b) * w)
            .collect())
    }

    pub fn adapted_predictor(&self, proxy: &LatencyPredictor) -> Result<LatencyPredictor> {
        LatencyPredictor::new(proxy.space_id.clone(), self.effective_weights(proxy)?)
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub fn adapted_predict(params: &AdaptationParams, proxy: &LatencyPredictor, enc: &ArchEncoding) -> Result<f64> {
    let x = enc.as_slice();
    check_len(proxy.weights.len(), params.b.len())?;
    check_len(proxy.weights.len(), x.len())?;
    Ok(proxy
        .weights
        .iter()
        .zip(&params.b)
        .zip(x)
        .map(|((w, b), x)| (params.alpha + b) * w * x)
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    /// Starting Lipschitz estimate; `None` uses the largest squared column norm.
    pub initial_lipschitz: Option<f64>,
    /// Factor applied to the Lipschitz estimate on each failed sufficient-decrease test.
    pub growth: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            initial_lipschitz: None,
            growth: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    pub lambda_grid: Vec<f64>,
    pub step_rule: StepRule,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Training split size; `None` trains on everything outside the validation split.
    pub train_count: Option<usize>,
    pub validation_count: usize,
    pub seed: u64,
    /// Keep the objective value of every iterate.
    pub record_trace: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            lambda_grid: log_grid(1e-4, 1e1, 11),
            step_rule: StepRule::default(),
            rel_tol: 1e-8,
            max_iter: 50_000,
            train_count: None,
            validation_count: 20,
            seed: 0,
            record_trace: false,
        }
    }
}

/// `n` points spaced evenly in log10 between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

impl AdaptationConfig {
    pub fn check(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig("lambda grid must be nonempty and nonnegative".into()));
        }
        if !(self.rel_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig("rel_tol and max_iter must be positive".into()));
        }
        if !(self.step_rule.growth > 1.0) {
            return Err(Error::InvalidConfig("step growth must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub params: AdaptationParams,
    pub objective: f64,
    pub iterations: usize,
    /// False when `max_iter` was reached; `params` is then the best iterate.
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Design matrix of the reparametrized problem: column 0 is `w^T x_i` (for
/// alpha) and column `j + 1` is `w_j x_ij` (for `b_j`). Stored row-major.
struct Design {
    z: Vec<f64>,
    y: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Design {
    fn new(proxy: &LatencyPredictor, train: &MeasurementSet, space: &SearchSpaceSpec) -> Result<Self> {
        proxy.check_space(space)?;
        if train.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let k = proxy.weights.len();
        let cols = k + 1;
        let mut z = Vec::with_capacity(train.len() * cols);
        for s in &train.samples {
            let enc = space.encode(&s.genotype)?;
            check_len(k, enc.len())?;
            z.push(dot(&proxy.weights, enc.as_slice()));
            z.extend(proxy.weights.iter().zip(enc.as_slice()).map(|(w, x)| w * x));
        }
        Ok(Self {
            z,
            y: train.latencies(),
            rows: train.len(),
            cols,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.cols..(i + 1) * self.cols]
    }

    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), theta) - self.y[i]).collect()
    }

    fn smooth(&self, r: &[f64]) -> f64 {
        r.iter().map(|v| v * v).sum::<f64>() / self.rows as f64
    }

    fn gradient(&self, r: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.cols];
        for (i, ri) in r.iter().enumerate() {
            for (gj, zij) in g.iter_mut().zip(self.row(i)) {
                *gj += zij * ri;
            }
        }
        let scale = 2.0 / self.rows as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }

    fn max_col_norm_sq(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.z[i * self.cols + j].powi(2)).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn penalty(theta: &[f64], lambda: f64) -> f64 {
    lambda * theta[1..].iter().map(|v| v.abs()).sum::<f64>()
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// One proximal-gradient step from `theta`: a gradient step of length
/// `step` on all coordinates, then soft-thresholding every `b` coordinate.
pub fn prox_step(theta: &[f64], grad: &[f64], step: f64, lambda: f64) -> Vec<f64> {
    theta
        .iter()
        .zip(grad)
        .enumerate()
        .map(|(j, (t, g))| {
            let v = t - step * g;
            if j == 0 {
                v
            } else {
                soft_threshold(v, lambda * step)
            }
        })
        .collect()
}

/// Value of the fitting objective at `params` on `train`.
pub fn objective(
    params: &AdaptationParams,
    proxy: &LatencyPredictor,
    train: &MeasurementSet,
    space: &SearchSpaceSpec,
    lambda: f64,
) -> Result<f64> {
    let d = Design::new(proxy, train, space)?;
    check_len(proxy.weights.len(), params.b.len())?;
    let theta = pack(params);
    Ok(d.smooth(&d.residuals(&theta)) + penalty(&theta, lambda))
}

fn pack(p: &AdaptationParams) -> Vec<f64> {
    std::iter::once(p.alpha).chain(p.b.iter().copied()).collect()
}

fn unpack(theta: &[f64]) -> AdaptationParams {
    AdaptationParams {
        alpha: theta[0],
        b: theta[1..].to_vec(),
    }
}

pub fn solve_adaptation(
    proxy: &LatencyPredictor,
    train: &MeasurementSet,
    space: &SearchSpaceSpec,
    lambda: f64,
    cfg: &AdaptationConfig,
) -> Result<Solution> {
    cfg.check()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be nonnegative")));
    }
    let d = Design::new(proxy, train, space)?;
    Ok(mfista(&d, lambda, cfg))
}

fn mfista(d: &Design, lambda: f64, cfg: &AdaptationConfig) -> Solution {
    let mut x = pack(&AdaptationParams::identity(d.cols - 1));
    let mut fx = {
        let r = d.residuals(&x);
        d.smooth(&r) + penalty(&x, lambda)
    };
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut lip = cfg
        .step_rule
        .initial_lipschitz
        .unwrap_or_else(|| 2.0 * d.max_col_norm_sq() / d.rows as f64)
        .max(f64::MIN_POSITIVE);
    let mut trace = if cfg.record_trace { vec![fx] } else { Vec::new() };

    for iter in 1..=cfg.max_iter {
        let ry = d.residuals(&y);
        let fy = d.smooth(&ry);
        let gy = d.gradient(&ry);
        let (z, fz_smooth) = loop {
            let z = prox_step(&y, &gy, 1.0 / lip, lambda);
            let fz = d.smooth(&d.residuals(&z));
            let diff: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
            let model = fy + dot(&gy, &diff) + 0.5 * lip * dot(&diff, &diff);
            if fz <= model + 1e-12 * fy.abs().max(f64::MIN_POSITIVE) || !lip.is_finite() {
                break (z, fz);
            }
            lip *= cfg.step_rule.growth;
        };
        let fz = fz_smooth + penalty(&z, lambda);
        let residual = z.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = z.iter().map(|v| v.abs()).fold(1.0, f64::max);

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let x_prev = x.clone();
        if fz <= fx {
            x = z.clone();
            fx = fz;
        }
        y = (0..x.len())
            .map(|j| x[j] + (t / t_next) * (z[j] - x[j]) + ((t - 1.0) / t_next) * (x[j] - x_prev[j]))
            .collect();
        t = t_next;
        if cfg.record_trace {
            trace.push(fx);
        }
        if residual <= cfg.rel_tol * scale {
            return Solution {
                params: unpack(&x),
                objective: fx,
                iterations: iter,
                converged: true,
                trace,
            };
        }
    }
    Solution {
        params: unpack(&x),
        objective: fx,
        iterations: cfg.max_iter,
        converged: false,
        trace,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    pub validation_srcc: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tuned {
    pub lambda: f64,
    pub params: AdaptationParams,
    pub validation_srcc: f64,
    pub converged: bool,
    pub per_lambda: Vec<LambdaResult>,
}

/// JSON form of a tuned adaptation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationRecord {
    pub alpha: f64,
    pub b: Vec<f64>,
    pub lambda: f64,
    pub validation_srcc: f64,
}

impl Tuned {
    pub fn record(&self) -> AdaptationRecord {
        AdaptationRecord {
            alpha: self.params.alpha,
            b: self.params.b.clone(),
            lambda: self.lambda,
            validation_srcc: self.validation_srcc,
        }
    }
}

/// Splits `samples` into (train, validation) with a seeded shuffle.
pub fn split(samples: &MeasurementSet, cfg: &AdaptationConfig) -> Result<(MeasurementSet, MeasurementSet)> {
    let train_needed = cfg.train_count.unwrap_or(1).max(1);
    let needed = cfg.validation_count + train_needed;
    if cfg.validation_count < 3 || samples.len() < needed {
        return Err(Error::TooFewSamples {
            needed: needed.max(cfg.validation_count.max(3) + 1),
            got: samples.len(),
        });
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut rng_for(cfg.seed, &[0xADA7]));
    let (val, rest) = idx.split_at(cfg.validation_count);
    let train = match cfg.train_count {
        Some(n) => &rest[..n],
        None => rest,
    };
    Ok((samples.subset(train), samples.subset(val)))
}

/// Solves on the training split for every grid value and keeps the one with
/// the best validation SRCC, preferring larger lambda on ties.
pub fn tune_lambda(
    proxy: &LatencyPredictor,
    samples: &MeasurementSet,
    space: &SearchSpaceSpec,
    cfg: &AdaptationConfig,
) -> Result<Tuned> {
    cfg.check()?;
    let (train, val) = split(samples, cfg)?;
    let design = Design::new(proxy, &train, space)?;
    let val_enc: Vec<ArchEncoding> = val
        .samples
        .iter()
        .map(|s| space.encode(&s.genotype))
        .collect::<Result<_>>()?;
    let val_y = val.latencies();

    let solved: Vec<(Solution, f64)> = cfg
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let sol = mfista(&design, lambda, cfg);
            let pred: Vec<f64> = val_enc
                .iter()
                .map(|e| adapted_predict(&sol.params, proxy, e).unwrap_or(f64::NAN))
                .collect();
            let s = srcc(&pred, &val_y).ok().filter(|v| v.is_finite()).unwrap_or(f64::NEG_INFINITY);
            (sol, s)
        })
        .collect();

    let mut best = 0;
    for (i, (_, s)) in solved.iter().enumerate() {
        let (bs, bl) = (solved[best].1, cfg.lambda_grid[best]);
        if *s > bs || (*s == bs && cfg.lambda_grid[i] > bl) {
            best = i;
        }
    }
    let per_lambda = solved
        .iter()
        .zip(&cfg.lambda_grid)
        .map(|((sol, s), &lambda)| LambdaResult {
            lambda,
            validation_srcc: *s,
            converged: sol.converged,
        })
        .collect();
    let (sol, s) = &solved[best];
    Ok(Tuned {
        lambda: cfg.lambda_grid[best],
        params: sol.params.clone(),
        validation_srcc: *s,
        converged: sol.converged,
        per_lambda,
    })
}
