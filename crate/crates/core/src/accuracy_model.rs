//! Device-independent accuracy oracles.
//!
//! [`AccuracyPredictor::Synthetic`] is a saturating function of FLOPs with a
//! small deterministic jitter per architecture, so accuracy and latency pull
//! in different directions whenever latency is not a pure function of FLOPs.
//! [`AccuracyPredictor::Tabular`] serves exact values from a benchmark file.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::rng::derive_seed;
use crate::search_space::{Genotype, SearchSpaceSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAccuracy {
    pub a_max: f64,
    /// FLOPs scale of the saturation curve.
    pub f0: f64,
    pub jitter_sigma: f64,
    pub seed: u64,
}

impl SyntheticAccuracy {
    pub const DEFAULT_A_MAX: f64 = 0.80;
    pub const DEFAULT_SIGMA: f64 = 0.005;

    /// Defaults with `f0` set to the median FLOPs of 1000 random samples.
    pub fn for_space(space: &SearchSpaceSpec, seed: u64) -> Result<Self> {
        let mut flops: Vec<f64> = (0..1000u64)
            .map(|i| space.arch_stats(&space.random_sample(derive_seed(seed, &[0xF0, i]))).map(|s| s.flops))
            .collect::<Result<_>>()?;
        flops.sort_by(f64::total_cmp);
        let f0 = (flops[499] + flops[500]) / 2.0;
        Ok(Self {
            a_max: Self::DEFAULT_A_MAX,
            f0,
            jitter_sigma: Self::DEFAULT_SIGMA,
            seed,
        })
    }

    fn jitter(&self, canonical: &Genotype) -> f64 {
        if self.jitter_sigma == 0.0 {
            return 0.0;
        }
        let h = derive_seed(self.seed, &canonical.genes().iter().map(|&g| u64::from(g)).collect::<Vec<_>>());
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        self.jitter_sigma * (2.0 * u - 1.0)
    }

    pub fn accuracy_for_flops(&self, flops: f64, canonical: &Genotype) -> f64 {
        let base = self.a_max * (1.0 - (-flops / self.f0).exp());
        (base + self.jitter(canonical)).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AccuracyPredictor {
    Synthetic(SyntheticAccuracy),
    Tabular(HashMap<Genotype, f64>),
}

impl AccuracyPredictor {
    pub fn synthetic_for_space(space: &SearchSpaceSpec, seed: u64) -> Result<Self> {
        Ok(Self::Synthetic(SyntheticAccuracy::for_space(space, seed)?))
    }

    pub fn predict_accuracy(&self, g: &Genotype, space: &SearchSpaceSpec) -> Result<f64> {
        let canonical = space.canonical(g)?;
        match self {
            Self::Synthetic(s) => {
                let flops = space.arch_stats(&canonical)?.flops;
                Ok(s.accuracy_for_flops(flops, &canonical))
            }
            Self::Tabular(table) => table
                .get(&canonical)
                .or_else(|| table.get(g))
                .copied()
                .ok_or_else(|| Error::UnknownArchitecture(g.to_json())),
        }
    }

    /// Reads a `genotype_json,accuracy` CSV.
    pub fn load_table(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_table(file)
    }

    pub fn read_table<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
                row: 1,
                msg: format!("missing column {name}"),
            })
        };
        let (gcol, acol) = (col("genotype_json")?, col("accuracy")?);
        let mut table = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
            let g: Genotype = serde_json::from_str(rec.get(gcol).unwrap_or_default()).map_err(|e| Error::Parse {
                row,
                msg: format!("genotype: {e}"),
            })?;
            let value: f64 = rec.get(acol).unwrap_or_default().trim().parse().map_err(|e| Error::Parse {
                row,
                msg: format!("accuracy: {e}"),
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRangeAccuracy { row, value });
            }
            if table.insert(g, value).is_some() {
                return Err(Error::Parse {
                    row,
                    msg: "duplicate genotype".into(),
                });
            }
        }
        Ok(Self::Tabular(table))
    }
}
