use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oneproxy::adaptation::tune_lambda;
use oneproxy::latency_model::{evaluate, read_measurement_csv};
use oneproxy::monotonicity::{select_proxy, srcc_matrix};
use oneproxy::pareto::ParetoSet;
use oneproxy::pipeline::{ingest_measurements, one_proxy_nas, write_outputs, RunConfig, FRONT_CSV, FRONT_SVG};
use oneproxy::rng::derive_seed;
use oneproxy::{
    estimate_srcc, fit, generate_family, srcc, AccuracyPredictor, AdaptationConfig, EvoConfig, Genotype,
    LatencyPredictor, MeasurementSet, RooflineDevice, SearchSpaceSpec, SyntheticDeviceFamilySpec, TradeoffGrid,
};

#[derive(Parser, Debug)]
#[command(name = "oneproxy", version, about = "Latency monotonicity analysis and proxy-based hardware-aware search")]
struct Cli {
    /// Overrides the seed in configs and seeds every random stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for fitness evaluation and lambda-grid solving.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// SRCC between two single-device measurement CSVs over their shared architectures.
    Srcc {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "mbv2")]
        space: String,
        /// Also estimate SRCC from random subsets of this size.
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
    },
    /// Pairwise SRCC matrix from a multi-device measurement CSV.
    Matrix {
        table: PathBuf,
        #[arg(long, default_value = "mbv2")]
        space: String,
        /// Print the device with the most partners at or above this SRCC.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Roofline latencies of random architectures.
    Simulate {
        device: PathBuf,
        #[arg(long, default_value = "mbv2")]
        space: String,
        #[arg(long, default_value_t = 100)]
        count: u64,
    },
    /// Synthetic device family predictors.
    Family { spec: PathBuf },
    /// Least-squares latency predictor from measurements.
    Fit {
        measurements: PathBuf,
        #[arg(long, default_value = "mbv2")]
        space: String,
        #[arg(long, default_value_t = 1e-6)]
        ridge: f64,
        /// Report RMSE and SRCC on this held-out CSV.
        #[arg(long)]
        holdout: Option<PathBuf>,
    },
    /// Adapts a proxy predictor to target measurements.
    Adapt {
        proxy: PathBuf,
        measurements: PathBuf,
        #[arg(long, default_value = "mbv2")]
        space: String,
        /// Adaptation settings JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evolutionary Pareto search on a latency predictor or device.
    Search {
        #[arg(long, default_value = "mbv2")]
        space: String,
        #[arg(long, conflicts_with = "device", required_unless_present = "device")]
        predictor: Option<PathBuf>,
        #[arg(long)]
        device: Option<PathBuf>,
        /// `genotype_json,accuracy` CSV; the synthetic surrogate is used otherwise.
        #[arg(long)]
        accuracy_table: Option<PathBuf>,
        /// Evolution settings JSON.
        #[arg(long)]
        evo: Option<PathBuf>,
        /// Latency bounds swept between the fastest and slowest probe.
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
    /// Full proxy-adaptation pipeline from a run config.
    Pipeline { config: PathBuf },
    /// Validates input files and prints a summary.
    Ingest {
        files: Vec<PathBuf>,
        #[arg(long, default_value = "mbv2")]
        space: String,
        #[arg(long, value_enum, default_value = "measurements")]
        kind: InputKind,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum InputKind {
    Measurements,
    Accuracy,
    Front,
    Predictor,
    Device,
    Space,
    Run,
}

enum Failure {
    Usage(String),
    Data(oneproxy::Error),
    /// Output is usable but a solver or budget limit was hit.
    Incomplete(String),
}

impl From<oneproxy::Error> for Failure {
    fn from(e: oneproxy::Error) -> Self {
        match e {
            oneproxy::Error::InvalidConfig(m) => Failure::Usage(m),
            e => Failure::Data(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Incomplete(m)) => {
            eprintln!("warning: {m}");
            ExitCode::from(3)
        }
    }
}

fn space(name: &str) -> Result<SearchSpaceSpec, Failure> {
    Ok(SearchSpaceSpec::resolve(name)?)
}

fn out_file(cli: &Cli, name: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(&cli.out_dir).map_err(|e| io(&cli.out_dir, e))?;
    Ok(cli.out_dir.join(name))
}

fn io(path: &Path, source: std::io::Error) -> Failure {
    Failure::Data(oneproxy::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: String) -> Outcome {
    fs::write(path, text).map_err(|e| io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(e.into()))
}

/// Latencies of the architectures present in every set, keyed by canonical
/// genotype and ordered as in the first set.
fn aligned(sets: &[MeasurementSet], space: &SearchSpaceSpec) -> Result<Vec<Vec<f64>>, Failure> {
    let maps: Vec<HashMap<Genotype, f64>> = sets
        .iter()
        .map(|s| {
            s.samples
                .iter()
                .map(|m| Ok((space.canonical(&m.genotype)?, m.latency_ms)))
                .collect::<oneproxy::Result<_>>()
        })
        .collect::<oneproxy::Result<_>>()?;
    let mut cols = vec![Vec::new(); sets.len()];
    for m in &sets[0].samples {
        let g = space.canonical(&m.genotype)?;
        if maps.iter().all(|map| map.contains_key(&g)) {
            for (col, map) in cols.iter_mut().zip(&maps) {
                col.push(map[&g]);
            }
        }
    }
    if cols[0].len() < 2 {
        return Err(Failure::Data(oneproxy::Error::DegenerateInput(format!(
            "only {} shared architectures",
            cols[0].len()
        ))));
    }
    Ok(cols)
}

fn run(cli: &Cli) -> Outcome {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Srcc {
            a,
            b,
            space: s,
            sample_size,
            runs,
        } => {
            let sp = space(s)?;
            let sets = [ingest_measurements(a, &sp)?, ingest_measurements(b, &sp)?];
            let cols = aligned(&sets, &sp)?;
            println!("{:?}", srcc(&cols[0], &cols[1])?);
            if let Some(k) = sample_size {
                let est = estimate_srcc(&cols[0], &cols[1], *k, *runs, seed)?;
                println!(
                    "estimate over {} runs of {} samples: mean {:?}, std {:?}",
                    est.runs, est.sample_size, est.mean, est.std_dev
                );
            }
        }
        Command::Matrix { table, space: s, threshold } => {
            let sp = space(s)?;
            let file = fs::File::open(table).map_err(|e| io(table, e))?;
            let sets = read_measurement_csv(file, &sp)?;
            if sets.is_empty() {
                return Err(Failure::Data(oneproxy::Error::EmptyInput));
            }
            let cols = aligned(&sets, &sp)?;
            let ids: Vec<String> = sets.iter().map(|s| s.device_id.clone()).collect();
            let m = srcc_matrix(&ids, &cols)?;
            let path = out_file(cli, "srcc_matrix.csv")?;
            let f = fs::File::create(&path).map_err(|e| io(&path, e))?;
            m.write_csv(f)?;
            m.write_csv(std::io::stdout())?;
            if let Some(t) = threshold {
                println!("proxy: {}", select_proxy(&m, *t));
            }
        }
        Command::Simulate { device, space: s, count } => {
            let sp = space(s)?;
            let dev = RooflineDevice::load(device)?;
            let mut set = MeasurementSet::new(dev.device_id.clone());
            let mut seen = std::collections::HashSet::new();
            for i in 0.. {
                if set.len() as u64 >= *count || i as u128 >= sp.space_size().saturating_mul(20) {
                    break;
                }
                let g = sp.canonical(&sp.random_sample(derive_seed(seed, &[i])))?;
                if seen.insert(g.clone()) {
                    let lat = dev.simulate_latency(&g, &sp)?;
                    set.push(g, lat);
                }
            }
            let path = out_file(cli, &format!("{}_latency.csv", dev.device_id))?;
            let f = fs::File::create(&path).map_err(|e| io(&path, e))?;
            set.write_csv(f)?;
            println!("{} architectures -> {}", set.len(), path.display());
        }
        Command::Family { spec } => {
            let mut spec = SyntheticDeviceFamilySpec::load(spec)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let members = generate_family(&spec)?;
            for (i, m) in members.iter().enumerate() {
                let path = out_file(cli, &format!("member_{i:03}.json"))?;
                m.save(&path)?;
            }
            println!("{} predictors -> {}", members.len(), cli.out_dir.display());
        }
        Command::Fit {
            measurements,
            space: s,
            ridge,
            holdout,
        } => {
            let sp = space(s)?;
            let set = ingest_measurements(measurements, &sp)?;
            let pred = fit(&set, &sp, *ridge)?;
            let path = out_file(cli, &format!("{}_predictor.json", set.device_id))?;
            pred.save(&path)?;
            println!("predictor -> {}", path.display());
            if let Some(h) = holdout {
                let ev = evaluate(&pred, &ingest_measurements(h, &sp)?, &sp)?;
                println!("holdout rmse {:.6} ms, srcc {:.6}", ev.rmse_ms, ev.srcc_vs_actual);
            }
        }
        Command::Adapt {
            proxy,
            measurements,
            space: s,
            config,
        } => {
            let sp = space(s)?;
            let proxy = LatencyPredictor::load(proxy)?;
            proxy.check_space(&sp)?;
            let set = ingest_measurements(measurements, &sp)?;
            let mut cfg: AdaptationConfig = match config {
                Some(p) => read_json(p)?,
                None => AdaptationConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let tuned = tune_lambda(&proxy, &set, &sp, &cfg)?;
            let path = out_file(cli, "adaptation.json")?;
            write(&path, serde_json::to_string_pretty(&tuned.record()).map_err(|e| Failure::Data(e.into()))? + "\n")?;
            tuned
                .params
                .adapted_predictor(&proxy)?
                .save(&out_file(cli, "adapted_predictor.json")?)?;
            println!(
                "lambda {:?}, alpha {:?}, nonzero b {}, validation srcc {:?}",
                tuned.lambda,
                tuned.params.alpha,
                tuned.params.nnz(),
                tuned.validation_srcc
            );
            if !tuned.converged {
                return Err(Failure::Incomplete("solver hit max_iter at the selected lambda".into()));
            }
        }
        Command::Search {
            space: s,
            predictor,
            device,
            accuracy_table,
            evo,
            points,
        } => {
            let sp = space(s)?;
            let pred = match (predictor, device) {
                (Some(p), _) => LatencyPredictor::load(p)?,
                (None, Some(d)) => RooflineDevice::load(d)?.operator_predictor(&sp, 0.0)?,
                (None, None) => return Err(Failure::Usage("--predictor or --device is required".into())),
            };
            pred.check_space(&sp)?;
            let acc = match accuracy_table {
                Some(p) => AccuracyPredictor::load_table(p)?,
                None => AccuracyPredictor::synthetic_for_space(&sp, derive_seed(seed, &[0xACC]))?,
            };
            let mut cfg: EvoConfig = match evo {
                Some(p) => read_json(p)?,
                None => EvoConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let lat = |g: &Genotype| pred.predict_genotype(&sp, g);
            let front = oneproxy::sweep_tradeoff(&sp, &acc, &lat, &cfg, &TradeoffGrid::latency_span(*points))?;
            front.save_csv(&out_file(cli, FRONT_CSV)?)?;
            write(&out_file(cli, FRONT_SVG)?, front.to_svg(&[]))?;
            println!("{} front members -> {}", front.len(), cli.out_dir.display());
        }
        Command::Pipeline { config } => {
            let mut run = RunConfig::load(config)?;
            if cli.seed.is_some() {
                run.seed = cli.seed;
            }
            let base = config.parent().unwrap_or(Path::new("."));
            let (state, oracle, cfg) = run.materialize(base)?;
            let out = one_proxy_nas(&state, &oracle, &cfg)?;
            write_outputs(&out, &cli.out_dir)?;
            let r = &out.report;
            println!(
                "branch {}, initial srcc {:.4}, final srcc {:.4}, measurements {}, front {}",
                serde_json::to_value(r.branch).map_err(|e| Failure::Data(e.into()))?.as_str().unwrap_or("?"),
                r.initial_srcc,
                r.final_srcc(),
                r.measurement_count,
                r.front_size
            );
            if r.budget_exhausted {
                return Err(Failure::Incomplete(
                    "adaptation budget exhausted before the SRCC threshold was reached".into(),
                ));
            }
        }
        Command::Ingest { files, space: s, kind } => {
            if files.is_empty() {
                return Err(Failure::Usage("no input files".into()));
            }
            let sp = space(s)?;
            for f in files {
                let summary = ingest_one(f, &sp, *kind)?;
                println!("{}: {summary}", f.display());
            }
        }
    }
    Ok(())
}

fn ingest_one(path: &Path, sp: &SearchSpaceSpec, kind: InputKind) -> Result<String, Failure> {
    Ok(match kind {
        InputKind::Measurements => {
            let file = fs::File::open(path).map_err(|e| io(path, e))?;
            let sets = read_measurement_csv(file, sp)?;
            let parts: Vec<String> = sets.iter().map(|s| format!("{} ({} rows)", s.device_id, s.len())).collect();
            format!("measurements for {}", parts.join(", "))
        }
        InputKind::Accuracy => match AccuracyPredictor::load_table(path)? {
            AccuracyPredictor::Tabular(t) => {
                for g in t.keys() {
                    sp.validate(g)?;
                }
                format!("accuracy table with {} architectures", t.len())
            }
            AccuracyPredictor::Synthetic(_) => "synthetic accuracy".into(),
        },
        InputKind::Front => {
            let front = ParetoSet::load_csv(path)?;
            for g in front.genotypes() {
                sp.validate(&g)?;
            }
            format!("front with {} members", front.len())
        }
        InputKind::Predictor => {
            let p = LatencyPredictor::load(path)?;
            p.check_space(sp)?;
            format!("predictor with {} weights", p.weights.len())
        }
        InputKind::Device => {
            let d = RooflineDevice::load(path)?;
            format!("device {} with ridge point {:.3} FLOPs/byte", d.device_id, d.ridge_point())
        }
        InputKind::Space => {
            let s = SearchSpaceSpec::load(path)?;
            format!("space {} with {} architectures", s.id(), s.space_size())
        }
        InputKind::Run => {
            let run = RunConfig::load(path)?;
            run.materialize(path.parent().unwrap_or(Path::new(".")))?;
            "run config resolves".into()
        }
    })
}
