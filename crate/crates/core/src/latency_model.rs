//! Operator-level linear latency predictors.
//!
//! A predictor is a weight vector over an architecture encoding: one weight
//! per searchable operator feature plus a trailing bias weight for the
//! non-searchable part of the network. Predicted latency is the inner
//! product with the encoding.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::monotonicity::srcc;
use crate::search_space::{ArchEncoding, Genotype, SearchSpaceSpec};

pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyPredictor {
    pub space_id: String,
    pub weights: Vec<f64>,
}

impl LatencyPredictor {
    pub fn new(space_id: impl Into<String>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("predictor weights must be finite and non-empty".into()));
        }
        Ok(Self {
            space_id: space_id.into(),
            weights,
        })
    }

    pub fn predict(&self, enc: &ArchEncoding) -> Result<f64> {
        if enc.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: enc.len(),
            });
        }
        Ok(dot(&self.weights, enc.as_slice()))
    }

    pub fn predict_genotype(&self, space: &SearchSpaceSpec, g: &Genotype) -> Result<f64> {
        self.predict(&space.encode(g)?)
    }

    /// Checks that the weight vector fits the space's encoding.
    pub fn check_space(&self, space: &SearchSpaceSpec) -> Result<()> {
        if self.weights.len() != space.encoding_len() {
            return Err(Error::DimensionMismatch {
                expected: space.encoding_len(),
                actual: self.weights.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("predictor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: LatencyPredictor = serde_json::from_str(s)?;
        Self::new(p.space_id, p.weights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub genotype: Genotype,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub device_id: String,
    pub samples: Vec<MeasurementSample>,
}

impl MeasurementSet {
    pub fn new(device_id: impl Into<String>) -> Self {
        Self {
            device_id: device_id.into(),
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, genotype: Genotype, latency_ms: f64) {
        self.samples.push(MeasurementSample { genotype, latency_ms });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.latency_ms).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            device_id: self.device_id.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Writes `device_id,genotype_json,latency_ms` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["device_id", "genotype_json", "latency_ms"])?;
        for s in &self.samples {
            wtr.write_record([self.device_id.as_str(), &s.genotype.to_json(), &s.latency_ms.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Parses a measurement CSV, grouping rows by device in order of first
/// appearance. Every genotype must be valid for `space`; a device may not
/// list the same architecture twice. Row numbers in errors are 1-based file
/// lines (the header is line 1).
pub fn read_measurement_csv<R: Read>(r: R, space: &SearchSpaceSpec) -> Result<Vec<MeasurementSet>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            row: 1,
            msg: format!("missing column {name}"),
        })
    };
    let (dev_col, geno_col, lat_col) = (col("device_id")?, col("genotype_json")?, col("latency_ms")?);

    let mut sets: Vec<MeasurementSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(usize, Genotype)> = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        let field = |c: usize| {
            record.get(c).map(str::trim).ok_or_else(|| Error::Parse {
                row,
                msg: "missing field".into(),
            })
        };
        let device = field(dev_col)?.to_string();
        let genotype: Genotype = serde_json::from_str(field(geno_col)?).map_err(|e| Error::Parse {
            row,
            msg: format!("genotype: {e}"),
        })?;
        let canonical = space.canonical(&genotype).map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        let latency: f64 = field(lat_col)?.parse().map_err(|e| Error::Parse {
            row,
            msg: format!("latency: {e}"),
        })?;
        if !latency.is_finite() {
            return Err(Error::Parse {
                row,
                msg: "latency is not finite".into(),
            });
        }
        if latency <= 0.0 {
            return Err(Error::NonpositiveLatency { row, value: latency });
        }
        let slot = *index.entry(device.clone()).or_insert_with(|| {
            sets.push(MeasurementSet::new(device));
            sets.len() - 1
        });
        if !seen.insert((slot, canonical)) {
            return Err(Error::DuplicateGenotype { row });
        }
        sets[slot].push(genotype, latency);
    }
    Ok(sets)
}

/// Ridge least squares: minimizes sum (w.x_i - y_i)^2 + ridge * |w|^2 through
/// the normal equations and a Cholesky factorization.
pub fn fit(samples: &MeasurementSet, space: &SearchSpaceSpec, ridge: f64) -> Result<LatencyPredictor> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge must be non-negative, got {ridge}")));
    }
    let dim = space.encoding_len();
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for s in &samples.samples {
        let enc = space.encode(&s.genotype)?;
        let x = enc.as_slice();
        let active: Vec<usize> = (0..dim).filter(|&j| x[j] != 0.0).collect();
        for &a in &active {
            rhs[a] += x[a] * s.latency_ms;
            for &b in &active {
                gram[(a, b)] += x[a] * x[b];
            }
        }
    }
    for j in 0..dim {
        gram[(j, j)] += ridge;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::DegenerateDesign("normal matrix is not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || (lo / hi).powi(2) < f64::EPSILON {
        return Err(Error::DegenerateDesign(format!(
            "normal matrix condition estimate {:.3e} exceeds tolerance",
            (hi / lo).powi(2)
        )));
    }
    let w = chol.solve(&rhs);
    LatencyPredictor::new(space.id(), w.iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub rmse_ms: f64,
    pub srcc_vs_actual: f64,
}

pub fn evaluate(pred: &LatencyPredictor, holdout: &MeasurementSet, space: &SearchSpaceSpec) -> Result<Evaluation> {
    if holdout.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            got: holdout.len(),
        });
    }
    let predicted: Vec<f64> = holdout
        .samples
        .iter()
        .map(|s| pred.predict_genotype(space, &s.genotype))
        .collect::<Result<_>>()?;
    let actual = holdout.latencies();
    evaluate_values(&predicted, &actual)
}

pub(crate) fn evaluate_values(predicted: &[f64], actual: &[f64]) -> Result<Evaluation> {
    let mse = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).powi(2))
        .sum::<f64>()
        / actual.len() as f64;
    Ok(Evaluation {
        rmse_ms: mse.sqrt(),
        srcc_vs_actual: srcc(predicted, actual)?,
    })
}
