//! End-to-end flow: check monotonicity against the proxy, reuse or adapt,
//! search, then clean the front with measured target latencies.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::accuracy_model::AccuracyPredictor;
use crate::adaptation::{tune_lambda, AdaptationConfig};
use crate::device_sim::RooflineDevice;
use crate::error::{io_err, Error, Result};
use crate::evo_search::{sweep_tradeoff, EvoConfig, TradeoffGrid};
use crate::latency_model::{read_measurement_csv, LatencyPredictor, MeasurementSet};
use crate::monotonicity::srcc;
use crate::pareto::{remove_non_pareto, LatencySource, ParetoSet, ScoredArch};
use crate::rng::{derive_seed, rng_for};
use crate::search_space::{Genotype, SearchSpaceSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyState {
    pub proxy_device_id: String,
    pub proxy_predictor: LatencyPredictor,
    pub proxy_pareto: ParetoSet,
    pub space: SearchSpaceSpec,
    pub acc_pred: AccuracyPredictor,
}

impl ProxyState {
    /// Builds the proxy's own front by searching on its predictor.
    pub fn prepare(
        proxy_device_id: impl Into<String>,
        proxy_predictor: LatencyPredictor,
        space: SearchSpaceSpec,
        acc_pred: AccuracyPredictor,
        evo: &EvoConfig,
        grid: &TradeoffGrid,
    ) -> Result<Self> {
        proxy_predictor.check_space(&space)?;
        let lat = |g: &Genotype| proxy_predictor.predict_genotype(&space, g);
        let proxy_pareto = sweep_tradeoff(&space, &acc_pred, &lat, evo, grid)?;
        Ok(Self {
            proxy_device_id: proxy_device_id.into(),
            proxy_predictor,
            proxy_pareto,
            space,
            acc_pred,
        })
    }

    pub fn check(&self) -> Result<()> {
        self.proxy_predictor.check_space(&self.space)?;
        for m in &self.proxy_pareto.members {
            self.space.validate(&m.genotype)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum OracleSource {
    Simulator(RooflineDevice),
    Predictor(LatencyPredictor),
    Table(HashMap<Genotype, f64>),
}

/// Target-device latency source with a query counter.
#[derive(Debug)]
pub struct TargetOracle {
    pub device_id: String,
    source: OracleSource,
    space: SearchSpaceSpec,
    queries: AtomicUsize,
}

impl TargetOracle {
    pub fn new(device_id: impl Into<String>, source: OracleSource, space: SearchSpaceSpec) -> Self {
        Self {
            device_id: device_id.into(),
            source,
            space,
            queries: AtomicUsize::new(0),
        }
    }

    pub fn from_measurements(set: &MeasurementSet, space: SearchSpaceSpec) -> Self {
        let table = set.samples.iter().map(|s| (s.genotype.clone(), s.latency_ms)).collect();
        Self::new(set.device_id.clone(), OracleSource::Table(table), space)
    }

    pub fn measure(&self, g: &Genotype) -> Result<f64> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        match &self.source {
            OracleSource::Simulator(d) => d.simulate_latency(g, &self.space),
            OracleSource::Predictor(p) => p.predict_genotype(&self.space, g),
            OracleSource::Table(t) => {
                let hit = t.get(g).copied();
                let hit = match hit {
                    Some(v) => Some(v),
                    None => t.get(&self.space.canonical(g)?).copied(),
                };
                hit.ok_or_else(|| Error::OracleCoverage(g.to_json()))
            }
        }
    }

    pub fn query_count(&self) -> usize {
        self.queries.load(Ordering::SeqCst)
    }

    /// Genotypes the oracle can answer for, when it is table-backed.
    pub fn coverage(&self) -> Option<Vec<Genotype>> {
        match &self.source {
            OracleSource::Table(t) => {
                let mut v: Vec<Genotype> = t.keys().cloned().collect();
                v.sort();
                Some(v)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReuseMode {
    /// Transfer the proxy's front as is.
    ReuseSet,
    /// Search again on the proxy predictor.
    #[default]
    ResearchOnProxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub srcc_threshold: f64,
    pub initial_sample_count: usize,
    pub validation_count: usize,
    /// Cap on target measurements spent before the final search.
    pub adaptation_budget: usize,
    pub batch_size: usize,
    pub reuse_mode: ReuseMode,
    pub epsilon_acc: f64,
    pub evo: EvoConfig,
    pub grid: TradeoffGrid,
    pub adaptation: AdaptationConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            srcc_threshold: 0.9,
            initial_sample_count: 50,
            validation_count: 20,
            adaptation_budget: 200,
            batch_size: 25,
            reuse_mode: ReuseMode::default(),
            epsilon_acc: 0.001,
            evo: EvoConfig::default(),
            grid: TradeoffGrid::latency_span(11),
            adaptation: AdaptationConfig::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.srcc_threshold > 0.0 && self.srcc_threshold <= 1.0) {
            return Err(Error::InvalidConfig("srcc_threshold must lie in (0, 1]".into()));
        }
        if self.initial_sample_count < 3 || self.validation_count == 0 || self.batch_size < 3 {
            return Err(Error::InvalidConfig("sample counts too small".into()));
        }
        self.evo.check()?;
        self.adaptation.check()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Reuse,
    Adapt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrccRecord {
    pub stage: String,
    pub round: usize,
    pub measurements: usize,
    pub srcc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub target_device_id: String,
    pub proxy_device_id: String,
    pub branch: Branch,
    pub initial_srcc: f64,
    /// SRCC of the adapted predictor on each fresh re-check batch.
    pub recheck_srcc: Vec<f64>,
    pub adaptation_rounds: usize,
    pub lambda: Option<f64>,
    pub b_nonzero: Option<usize>,
    pub measurement_count: usize,
    pub adaptation_measurements: usize,
    pub candidate_count: usize,
    pub front_size: usize,
    pub removed: Vec<Genotype>,
    pub budget_exhausted: bool,
    pub srcc_trace: Vec<SrccRecord>,
}

impl PipelineReport {
    pub fn final_srcc(&self) -> f64 {
        self.recheck_srcc.last().copied().unwrap_or(self.initial_srcc)
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["stage", "round", "measurements", "srcc"])?;
        for r in &self.srcc_trace {
            wtr.write_record([
                r.stage.clone(),
                r.round.to_string(),
                r.measurements.to_string(),
                r.srcc.to_string(),
            ])?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub pareto: ParetoSet,
    /// Measured candidates before non-Pareto removal.
    pub candidates: Vec<ScoredArch>,
    pub report: PipelineReport,
}

/// Measures each genotype at most once.
struct Measurer<'a> {
    oracle: &'a TargetOracle,
    cache: HashMap<Genotype, f64>,
}

impl Measurer<'_> {
    fn measure(&mut self, g: &Genotype) -> Result<f64> {
        if let Some(v) = self.cache.get(g) {
            return Ok(*v);
        }
        let v = self.oracle.measure(g)?;
        self.cache.insert(g.clone(), v);
        Ok(v)
    }
}

/// Draws up to `n` genotypes not in `seen`, canonical and distinct. When
/// the oracle is table-backed the draw is from its coverage.
struct Sampler<'a> {
    space: &'a SearchSpaceSpec,
    pool: Option<Vec<Genotype>>,
    seed: u64,
    draws: u64,
    seen: HashSet<Genotype>,
}

impl Sampler<'_> {
    fn draw(&mut self, n: usize) -> Result<Vec<Genotype>> {
        let mut out = Vec::with_capacity(n);
        let cap = self.draws + 1000 * n as u64 + 10_000;
        while out.len() < n && self.draws < cap {
            let mut rng = rng_for(self.seed, &[0x5A3D, self.draws]);
            self.draws += 1;
            let g = match &self.pool {
                Some(pool) => {
                    use rand::Rng;
                    pool[rng.gen_range(0..pool.len())].clone()
                }
                None => self.space.canonical(&self.space.sample_with(&mut rng))?,
            };
            if self.seen.insert(g.clone()) {
                out.push(g);
            }
        }
        if out.len() < n {
            return Err(Error::TooFewSamples {
                needed: n,
                got: out.len(),
            });
        }
        Ok(out)
    }
}

pub fn one_proxy_nas(state: &ProxyState, target: &TargetOracle, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.check()?;
    state.check()?;
    let space = &state.space;
    let proxy = &state.proxy_predictor;
    let mut meas = Measurer {
        oracle: target,
        cache: HashMap::new(),
    };
    let mut sampler = Sampler {
        space,
        pool: target.coverage(),
        seed: cfg.seed,
        draws: 0,
        seen: HashSet::new(),
    };
    let measure_all = |meas: &mut Measurer, gs: &[Genotype]| -> Result<MeasurementSet> {
        let mut set = MeasurementSet::new(target.device_id.clone());
        for g in gs {
            let y = meas.measure(g)?;
            set.push(g.clone(), y);
        }
        Ok(set)
    };
    let predict_all = |p: &LatencyPredictor, set: &MeasurementSet| -> Result<Vec<f64>> {
        set.samples.iter().map(|s| p.predict_genotype(space, &s.genotype)).collect()
    };

    let initial = sampler.draw(cfg.initial_sample_count)?;
    let mut samples = measure_all(&mut meas, &initial)?;
    let initial_srcc = srcc(&predict_all(proxy, &samples)?, &samples.latencies())?;
    let mut trace = vec![SrccRecord {
        stage: "initial".into(),
        round: 0,
        measurements: target.query_count(),
        srcc: initial_srcc,
    }];

    let branch = if initial_srcc >= cfg.srcc_threshold {
        Branch::Reuse
    } else {
        Branch::Adapt
    };
    let mut operative = proxy.clone();
    let mut recheck_srcc = Vec::new();
    let mut rounds = 0;
    let mut lambda = None;
    let mut b_nonzero = None;
    let mut budget_exhausted = false;

    if branch == Branch::Adapt {
        let adapt_cfg = AdaptationConfig {
            validation_count: cfg.validation_count,
            train_count: None,
            seed: derive_seed(cfg.seed, &[0xADA]),
            ..cfg.adaptation.clone()
        };
        loop {
            rounds += 1;
            let tuned = tune_lambda(proxy, &samples, space, &adapt_cfg)?;
            operative = tuned.params.adapted_predictor(proxy)?;
            lambda = Some(tuned.lambda);
            b_nonzero = Some(tuned.params.nnz());
            trace.push(SrccRecord {
                stage: "validation".into(),
                round: rounds,
                measurements: target.query_count(),
                srcc: tuned.validation_srcc,
            });
            if target.query_count() + cfg.batch_size > cfg.adaptation_budget {
                budget_exhausted = true;
                break;
            }
            let fresh = sampler.draw(cfg.batch_size)?;
            let batch = measure_all(&mut meas, &fresh)?;
            let s = srcc(&predict_all(&operative, &batch)?, &batch.latencies())?;
            recheck_srcc.push(s);
            trace.push(SrccRecord {
                stage: "recheck".into(),
                round: rounds,
                measurements: target.query_count(),
                srcc: s,
            });
            if s >= cfg.srcc_threshold {
                break;
            }
            samples.samples.extend(batch.samples);
        }
    }
    let adaptation_measurements = target.query_count();

    let evo = EvoConfig {
        seed: derive_seed(cfg.seed, &[0xE70]),
        ..cfg.evo.clone()
    };
    let candidates: Vec<ScoredArch> = if branch == Branch::Reuse && cfg.reuse_mode == ReuseMode::ReuseSet {
        state.proxy_pareto.members.clone()
    } else {
        let lat = |g: &Genotype| operative.predict_genotype(space, g);
        sweep_tradeoff(space, &state.acc_pred, &lat, &evo, &cfg.grid)?.members
    };

    let mut measured = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let l = meas.measure(&c.genotype)?;
        measured.push(ScoredArch::new(c.genotype.clone(), c.accuracy, l, LatencySource::Measured)?);
    }
    let pareto = remove_non_pareto(&measured, cfg.epsilon_acc)?;
    let kept: HashSet<&Genotype> = pareto.members.iter().map(|m| &m.genotype).collect();
    let removed = measured
        .iter()
        .filter(|m| !kept.contains(&m.genotype))
        .map(|m| m.genotype.clone())
        .collect();

    let report = PipelineReport {
        target_device_id: target.device_id.clone(),
        proxy_device_id: state.proxy_device_id.clone(),
        branch,
        initial_srcc,
        recheck_srcc,
        adaptation_rounds: rounds,
        lambda,
        b_nonzero,
        measurement_count: target.query_count(),
        adaptation_measurements,
        candidate_count: candidates.len(),
        front_size: pareto.len(),
        removed,
        budget_exhausted,
        srcc_trace: trace,
    };
    Ok(PipelineOutput {
        pareto,
        candidates: measured,
        report,
    })
}

/// Reads a single-device measurement CSV.
pub fn ingest_measurements(path: &Path, space: &SearchSpaceSpec) -> Result<MeasurementSet> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut sets = read_measurement_csv(file, space)?;
    match sets.len() {
        0 => Err(Error::EmptyInput),
        1 => Ok(sets.remove(0)),
        n => Err(Error::InvalidConfig(format!(
            "{} holds {n} devices; expected one",
            path.display()
        ))),
    }
}

/// A device given inline or as a path to a profile JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceRef {
    Inline(RooflineDevice),
    Path(PathBuf),
}

impl DeviceRef {
    fn resolve(&self, base: &Path) -> Result<RooflineDevice> {
        match self {
            Self::Inline(d) => {
                d.check()?;
                Ok(d.clone())
            }
            Self::Path(p) => RooflineDevice::load(&base.join(p)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetSpec {
    Simulator { device: DeviceRef },
    Predictor { path: PathBuf, device_id: Option<String> },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Built-in space name or path to a space JSON.
    pub space: String,
    /// Proxy predictor JSON; when absent the proxy device's operator latencies are used.
    #[serde(default)]
    pub proxy_predictor: Option<PathBuf>,
    #[serde(default)]
    pub proxy_device: Option<DeviceRef>,
    #[serde(default)]
    pub proxy_overhead_ms: f64,
    /// Precomputed proxy front CSV; searched on the proxy when absent.
    #[serde(default)]
    pub proxy_front: Option<PathBuf>,
    /// Accuracy table CSV; the synthetic surrogate is used when absent.
    #[serde(default)]
    pub accuracy_table: Option<PathBuf>,
    pub target: TargetSpec,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub evo: Option<EvoConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path).map_err(io_err(path))?)?)
    }

    /// Effective pipeline settings after top-level overrides.
    pub fn pipeline_config(&self) -> PipelineConfig {
        let mut cfg = self.pipeline.clone();
        if let Some(evo) = &self.evo {
            cfg.evo = evo.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg
    }

    /// Loads every referenced artifact; relative paths are taken from `base`.
    pub fn materialize(&self, base: &Path) -> Result<(ProxyState, TargetOracle, PipelineConfig)> {
        let cfg = self.pipeline_config();
        let space = if SearchSpaceSpec::builtin(&self.space).is_some() {
            SearchSpaceSpec::resolve(&self.space)?
        } else {
            SearchSpaceSpec::load(&base.join(&self.space))?
        };
        let (proxy_id, proxy) = match (&self.proxy_predictor, &self.proxy_device) {
            (Some(p), _) => {
                let pred = LatencyPredictor::load(&base.join(p))?;
                ("proxy".to_string(), pred)
            }
            (None, Some(d)) => {
                let dev = d.resolve(base)?;
                let pred = dev.operator_predictor(&space, self.proxy_overhead_ms)?;
                (dev.device_id, pred)
            }
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "run config needs proxy_predictor or proxy_device".into(),
                ))
            }
        };
        let acc = match &self.accuracy_table {
            Some(p) => AccuracyPredictor::load_table(&base.join(p))?,
            None => AccuracyPredictor::synthetic_for_space(&space, derive_seed(cfg.seed, &[0xACC]))?,
        };
        let state = match &self.proxy_front {
            Some(p) => ProxyState {
                proxy_device_id: proxy_id,
                proxy_predictor: proxy,
                proxy_pareto: ParetoSet::load_csv(&base.join(p))?,
                space: space.clone(),
                acc_pred: acc,
            },
            None => {
                let evo = EvoConfig {
                    seed: derive_seed(cfg.seed, &[0xF0]),
                    ..cfg.evo.clone()
                };
                ProxyState::prepare(proxy_id, proxy, space.clone(), acc, &evo, &cfg.grid)?
            }
        };
        let oracle = match &self.target {
            TargetSpec::Simulator { device } => {
                let dev = device.resolve(base)?;
                TargetOracle::new(dev.device_id.clone(), OracleSource::Simulator(dev), space)
            }
            TargetSpec::Predictor { path, device_id } => {
                let pred = LatencyPredictor::load(&base.join(path))?;
                pred.check_space(&space)?;
                let id = device_id.clone().unwrap_or_else(|| "target".into());
                TargetOracle::new(id, OracleSource::Predictor(pred), space)
            }
            TargetSpec::File { path } => {
                let set = ingest_measurements(&base.join(path), &space)?;
                TargetOracle::from_measurements(&set, space)
            }
        };
        Ok((state, oracle, cfg))
    }
}

pub const FRONT_CSV: &str = "front.csv";
pub const FRONT_SVG: &str = "front.svg";
pub const REPORT_JSON: &str = "report.json";
pub const SRCC_TRACE_CSV: &str = "srcc_trace.csv";

/// Writes the stable set of output files into `out_dir`.
pub fn write_outputs(out: &PipelineOutput, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    out.pareto.save_csv(&out_dir.join(FRONT_CSV))?;
    let svg_path = out_dir.join(FRONT_SVG);
    std::fs::write(&svg_path, out.pareto.to_svg(&out.candidates)).map_err(io_err(&svg_path))?;
    let report_path = out_dir.join(REPORT_JSON);
    std::fs::write(&report_path, serde_json::to_string_pretty(&out.report)? + "\n").map_err(io_err(&report_path))?;
    let trace_path = out_dir.join(SRCC_TRACE_CSV);
    let f = std::fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    out.report.write_trace_csv(f)
}

/// Loads a run config, runs the pipeline and writes its outputs.
pub fn run_from_config(config_path: &Path, out_dir: &Path) -> Result<PipelineOutput> {
    let run = RunConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let (state, oracle, cfg) = run.materialize(base)?;
    let out = one_proxy_nas(&state, &oracle, &cfg)?;
    write_outputs(&out, out_dir)?;
    Ok(out)
}
