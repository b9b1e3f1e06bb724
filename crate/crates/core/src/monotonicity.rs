//! Spearman rank correlation, sampled SRCC estimation, device-pair SRCC
//! matrices and proxy-device selection.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Bootstrap draws that hit a constant subsample are re-drawn this many times.
pub const DEGENERATE_RETRY_CAP: usize = 100;

/// Average (fractional) ranks, 1-based. Tied values share the mean of the
/// ranks they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn srcc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 values, got {}", a.len())));
    }
    for v in [a, b] {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateInput("non-finite value".into()));
        }
        if v.iter().all(|&x| x == v[0]) {
            return Err(Error::DegenerateInput("constant list".into()));
        }
    }
    Ok(pearson_of_ranks(&average_ranks(a), &average_ranks(b)))
}

fn pearson_of_ranks(ra: &[f64], rb: &[f64]) -> f64 {
    // mean of average ranks is always (n + 1) / 2
    let mean = (ra.len() + 1) as f64 / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(rb) {
        let (dx, dy) = (x - mean, y - mean);
        num += dx * dy;
        da += dx * dx;
        db += dy * dy;
    }
    (num / (da * db).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SrccEstimate {
    pub mean: f64,
    pub std_dev: f64,
    pub sample_size: usize,
    pub runs: usize,
}

/// Repeatedly draws `sample_size` indices without replacement and computes
/// the SRCC of `a` and `b` restricted to them. Returns the mean and the
/// population standard deviation over `runs` draws.
pub fn estimate_srcc(a: &[f64], b: &[f64], sample_size: usize, runs: usize, seed: u64) -> Result<SrccEstimate> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    if sample_size < 2 || sample_size > a.len() {
        return Err(Error::InvalidConfig(format!(
            "sample size {sample_size} must lie in 2..={}",
            a.len()
        )));
    }
    let values: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut last_err = None;
            for attempt in 0..=DEGENERATE_RETRY_CAP {
                let mut rng = rng_for(seed, &[run as u64, attempt as u64]);
                let idx = index::sample(&mut rng, a.len(), sample_size);
                let sa: Vec<f64> = idx.iter().map(|i| a[i]).collect();
                let sb: Vec<f64> = idx.iter().map(|i| b[i]).collect();
                match srcc(&sa, &sb) {
                    Ok(v) => return Ok(v),
                    Err(e @ Error::DegenerateInput(_)) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last_err.expect("at least one attempt"))
        })
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / runs as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / runs as f64;
    Ok(SrccEstimate {
        mean,
        std_dev: var.sqrt(),
        sample_size,
        runs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SrccMatrix {
    pub device_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// Pairwise SRCC over a devices x architectures latency table.
pub fn srcc_matrix(device_ids: &[String], latencies: &[Vec<f64>]) -> Result<SrccMatrix> {
    if device_ids.len() != latencies.len() {
        return Err(Error::LengthMismatch(device_ids.len(), latencies.len()));
    }
    if device_ids.len() < 2 {
        return Err(Error::DegenerateInput("need at least 2 devices".into()));
    }
    let n = device_ids.len();
    let mut values = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = srcc(&latencies[i], &latencies[j])?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(SrccMatrix {
        device_ids: device_ids.to_vec(),
        values,
    })
}

impl SrccMatrix {
    /// Device x device CSV with headers on both axes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["device_id".to_string()];
        header.extend(self.device_ids.iter().cloned());
        wtr.write_record(&header)?;
        for (id, row) in self.device_ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    fn mean_off_diagonal(&self, i: usize) -> f64 {
        let n = self.values.len();
        let sum: f64 = (0..n).filter(|&j| j != i).map(|j| self.values[i][j]).sum();
        sum / (n - 1).max(1) as f64
    }
}

/// Picks the device with the most partners at or above `threshold`; ties go
/// to the highest mean off-diagonal SRCC, then the lexicographically
/// smallest id.
pub fn select_proxy(matrix: &SrccMatrix, threshold: f64) -> String {
    let n = matrix.device_ids.len();
    let score = |i: usize| {
        let count = (0..n).filter(|&j| j != i && matrix.values[i][j] >= threshold).count();
        (count, matrix.mean_off_diagonal(i))
    };
    let best = (0..n)
        .max_by(|&a, &b| {
            let (ca, ma) = score(a);
            let (cb, mb) = score(b);
            ca.cmp(&cb)
                .then(ma.total_cmp(&mb))
                .then_with(|| matrix.device_ids[b].cmp(&matrix.device_ids[a]))
        })
        .unwrap_or(0);
    matrix.device_ids.get(best).cloned().unwrap_or_default()
}
