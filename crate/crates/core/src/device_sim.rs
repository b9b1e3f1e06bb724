//! Roofline device simulator and synthetic device families.
//!
//! A [`RooflineDevice`] turns an architecture's FLOPs and bytes into a
//! latency bounded by either peak compute or memory bandwidth. Families of
//! devices are generated by rescaling a base predictor's operator weights,
//! which gives targets with controllable latency monotonicity.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::latency_model::LatencyPredictor;
use crate::rng::rng_for;
use crate::search_space::{Genotype, OpCost, SearchSpaceSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    /// One roofline bound for the whole network.
    WholeModel,
    /// Each active block is bounded separately and the results summed.
    PerOperator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RooflineDevice {
    pub device_id: String,
    pub peak_gflops: f64,
    pub bandwidth_gbps: f64,
    #[serde(default = "one")]
    pub efficiency: f64,
    #[serde(default = "whole_model")]
    pub granularity: Granularity,
}

fn one() -> f64 {
    1.0
}

fn whole_model() -> Granularity {
    Granularity::WholeModel
}

impl RooflineDevice {
    pub fn new(device_id: impl Into<String>, peak_gflops: f64, bandwidth_gbps: f64) -> Result<Self> {
        let d = Self {
            device_id: device_id.into(),
            peak_gflops,
            bandwidth_gbps,
            efficiency: 1.0,
            granularity: Granularity::WholeModel,
        };
        d.check()?;
        Ok(d)
    }

    pub fn with_efficiency(mut self, efficiency: f64) -> Result<Self> {
        self.efficiency = efficiency;
        self.check()?;
        Ok(self)
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub(crate) fn check(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.peak_gflops) || !positive(self.bandwidth_gbps) {
            return Err(Error::InvalidConfig(format!(
                "device {}: peak and bandwidth must be positive",
                self.device_id
            )));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "device {}: efficiency {} outside (0, 1]",
                self.device_id, self.efficiency
            )));
        }
        Ok(())
    }

    /// Operational intensity (FLOPs/byte) where the two roofs meet.
    pub fn ridge_point(&self) -> f64 {
        self.peak_gflops * self.efficiency / self.bandwidth_gbps
    }

    /// Roofline latency in milliseconds for a single workload.
    pub fn latency_ms(&self, cost: OpCost) -> f64 {
        let compute_s = cost.flops / (self.peak_gflops * self.efficiency * 1e9);
        let memory_s = cost.bytes / (self.bandwidth_gbps * 1e9);
        compute_s.max(memory_s) * 1e3
    }

    pub fn simulate_latency(&self, g: &Genotype, space: &SearchSpaceSpec) -> Result<f64> {
        match self.granularity {
            Granularity::WholeModel => {
                let stats = space.arch_stats(g)?;
                Ok(self.latency_ms(OpCost {
                    flops: stats.flops,
                    bytes: stats.bytes,
                }))
            }
            Granularity::PerOperator => {
                let active = space.active_choices(g)?;
                if active.is_empty() {
                    return Err(Error::InvalidGenotype("no active blocks".into()));
                }
                Ok(active.iter().map(|&(p, c)| self.latency_ms(space.cost(p, c))).sum())
            }
        }
    }

    /// Operator-level predictor whose weights are this device's per-operator
    /// roofline latencies; `overhead_ms` becomes the bias weight.
    pub fn operator_predictor(&self, space: &SearchSpaceSpec, overhead_ms: f64) -> Result<LatencyPredictor> {
        let mut weights = vec![0.0; space.encoding_len()];
        for p in 0..space.positions() {
            for c in 0..space.choices().len() {
                if let Some(i) = space.feature_index(p, c) {
                    weights[i] = self.latency_ms(space.cost(p, c));
                }
            }
        }
        *weights.last_mut().expect("non-empty") = overhead_ms;
        LatencyPredictor::new(space.id(), weights)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: RooflineDevice = serde_json::from_str(s)?;
        d.check()?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("device serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDeviceFamilySpec {
    pub base_weights: LatencyPredictor,
    pub member_count: usize,
    pub global_scale_range: (f64, f64),
    pub perturb_fraction: f64,
    /// Range of the perturbed operators' total multiplier.
    pub perturb_range: (f64, f64),
    pub seed: u64,
}

/// On-disk family spec; the base predictor is referenced by path relative
/// to the spec file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpecDocument {
    pub base_predictor: PathBuf,
    pub member_count: usize,
    pub global_scale_range: (f64, f64),
    pub perturb_fraction: f64,
    pub perturb_range: (f64, f64),
    pub seed: u64,
}

impl SyntheticDeviceFamilySpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let doc: FamilySpecDocument = serde_json::from_str(&text)?;
        let base_path = match path.parent() {
            Some(dir) if doc.base_predictor.is_relative() => dir.join(&doc.base_predictor),
            _ => doc.base_predictor.clone(),
        };
        Ok(Self {
            base_weights: LatencyPredictor::load(&base_path)?,
            member_count: doc.member_count,
            global_scale_range: doc.global_scale_range,
            perturb_fraction: doc.perturb_fraction,
            perturb_range: doc.perturb_range,
            seed: doc.seed,
        })
    }

    fn check(&self) -> Result<()> {
        let (glo, ghi) = self.global_scale_range;
        let (plo, phi) = self.perturb_range;
        if !(glo > 0.0 && glo <= ghi && plo > 0.0 && plo <= phi) {
            return Err(Error::InvalidConfig("family ranges must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.perturb_fraction) {
            return Err(Error::InvalidConfig("perturb_fraction outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Draws from `[lo, hi]`, uniformly in log space.
fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Member `i` has weights `(alpha_i * 1 + b_i) o w_base`, with `alpha_i`
/// uniform in the global range and `b_i` nonzero on a random
/// `perturb_fraction` of coordinates, where the multiplier `alpha_i + b_ij`
/// is log-uniform in the perturbation range.
pub fn generate_family(spec: &SyntheticDeviceFamilySpec) -> Result<Vec<LatencyPredictor>> {
    spec.check()?;
    let base = &spec.base_weights.weights;
    let perturbed = (spec.perturb_fraction * base.len() as f64).round() as usize;
    (0..spec.member_count)
        .map(|i| {
            let mut rng = rng_for(spec.seed, &[i as u64]);
            let (lo, hi) = spec.global_scale_range;
            let alpha = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            let mut multipliers = vec![alpha; base.len()];
            for j in index::sample(&mut rng, base.len(), perturbed).into_vec() {
                multipliers[j] = log_uniform(&mut rng, spec.perturb_range);
            }
            let weights = base.iter().zip(&multipliers).map(|(w, m)| w * m).collect();
            LatencyPredictor::new(spec.base_weights.space_id.clone(), weights)
        })
        .collect()
}
