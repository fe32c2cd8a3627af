mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use surrmeta::data::{
    aggregate_genesets, filter_studies, parse_study_csv, split_within_study, write_study_csv_file, GenesetCatalog,
};
use surrmeta::report::{write_evaluate_outputs, write_screen_outputs};
use surrmeta::sim::{write_sim_rows, MuRegime, SampleSizes};
use surrmeta::{
    evaluate_signature, run_calibration, run_power, screen, EpsilonPolicy, ErrorClass, EvaluateOptions, MetaModel,
    PoolOptions, ScreenOptions, SignatureSpec, SimConfig, SimRow, StudyDataset, SurrError,
};

use config::RunConfig;

const THREADS_ENV: &str = "SURRMETA_THREADS";
const CALIBRATION_ALPHAS: [f64; 4] = [0.01, 0.025, 0.05, 0.1];

#[derive(Debug, Parser)]
#[command(name = "surrmeta", version, about = "Screen and evaluate trial-level surrogate markers across studies")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Screen candidate markers and build the composite signature.
    Screen {
        /// Long-format study CSV.
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eps: EpsilonArgs,
        /// Split each study first and screen on the first part; the rest is written to `holdout.csv`.
        #[arg(long)]
        split_fraction: Option<f64>,
        /// Number of top-ranked markers that get forest-plot files.
        #[arg(long)]
        top_k: Option<usize>,
        /// Also write SVG forest plots.
        #[arg(long)]
        svg: bool,
    },
    /// Evaluate a signature on held-out studies.
    Evaluate {
        /// Long-format holdout CSV.
        data: PathBuf,
        /// signature.json written by `screen`.
        #[arg(long)]
        signature: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eps: EpsilonArgs,
        /// Bootstrap replicates for metric intervals.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        svg: bool,
    },
    /// Run the calibration and power simulation grids.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Scenario::Both)]
        scenario: Scenario,
        /// Simulated markers per grid cell.
        #[arg(long)]
        j: Option<usize>,
    },
    /// Replace marker columns by geneset means.
    AggregateGenesets {
        data: PathBuf,
        /// Catalog CSV with `geneset,feature` rows.
        #[arg(long)]
        genesets: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Split every study into screening and holdout parts.
    Split {
        data: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split_fraction: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scenario {
    Calibration,
    Power,
    Both,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Pooling model: re-hksj, re-conv or fe.
    #[arg(long)]
    meta: Option<MetaModel>,
    /// Studies with fewer complete cases are dropped.
    #[arg(long)]
    min_n: Option<usize>,
    /// Worker threads; falls back to SURRMETA_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct EpsilonArgs {
    /// Fixed equivalence bound.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Bound detectable at one-sided level ALPHA with the given POWER.
    #[arg(long, num_args = 2, value_names = ["ALPHA", "POWER"])]
    epsilon_power: Option<Vec<f64>>,
}

/// Flag values merged over the config file.
struct Settings {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
    alpha: f64,
    meta: MetaModel,
    min_n: usize,
}

impl Settings {
    fn new(common: &Common) -> Result<Self, SurrError> {
        let cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let threads = match common.threads.or(cfg.threads) {
            Some(t) => Some(t),
            None => match std::env::var(THREADS_ENV) {
                Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                    SurrError::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))
                })?),
                Err(_) => None,
            },
        };
        if let Some(t) = threads {
            if t == 0 {
                return Err(SurrError::InvalidArgument("thread count must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| SurrError::InvalidArgument(format!("thread pool: {e}")))?;
        }
        Ok(Settings {
            out: common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            seed: common.seed.or(cfg.seed).unwrap_or(1),
            alpha: common.alpha.or(cfg.alpha).unwrap_or(0.05),
            meta: common.meta.or(cfg.meta).unwrap_or_default(),
            min_n: common.min_n.or(cfg.min_n).unwrap_or(5),
            cfg,
        })
    }

    fn epsilon(&self, args: &EpsilonArgs) -> Result<EpsilonPolicy, SurrError> {
        let power = |a: f64, p: f64| {
            if !(a > 0.0 && a < 0.5 && p > 0.0 && p < 1.0) {
                return Err(SurrError::InvalidArgument(format!(
                    "--epsilon-power needs alpha in (0, 0.5) and power in (0, 1), got {a} {p}"
                )));
            }
            Ok(EpsilonPolicy::Power { alpha: a, power: p })
        };
        match (args.epsilon, args.epsilon_power.as_deref()) {
            (Some(e), _) => Ok(EpsilonPolicy::Fixed(e)),
            (None, Some(&[a, p])) => power(a, p),
            _ => match (self.cfg.epsilon, self.cfg.epsilon_power) {
                (Some(_), Some(_)) => Err(SurrError::InvalidArgument(
                    "config sets both epsilon and epsilon_power".into(),
                )),
                (Some(e), None) => Ok(EpsilonPolicy::Fixed(e)),
                (None, Some((a, p))) => power(a, p),
                (None, None) => Ok(EpsilonPolicy::Power { alpha: 0.05, power: 0.8 }),
            },
        }
    }

    fn split_fraction(&self, flag: Option<f64>) -> Option<f64> {
        flag.or(self.cfg.split_fraction)
    }

    fn pool(&self) -> PoolOptions {
        PoolOptions {
            model: self.meta,
            ci_level: 1.0 - 2.0 * self.alpha,
            ..PoolOptions::default()
        }
    }

    fn read(&self, path: &Path) -> Result<Vec<StudyDataset>, SurrError> {
        let data = parse_study_csv(path, &self.cfg.columns.clone().unwrap_or_default())?;
        let (kept, report) = filter_studies(data, self.min_n)?;
        log::info!("{} studies kept, {} dropped", kept.len(), report.dropped.len());
        Ok(kept)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}

fn run(command: Command) -> Result<(), SurrError> {
    match command {
        Command::Screen { data, common, eps, split_fraction, top_k, svg } => {
            let s = Settings::new(&common)?;
            let mut studies = s.read(&data)?;
            if let Some(f) = s.split_fraction(split_fraction) {
                let (screen_part, holdout) = split_all(&studies, f, s.seed)?;
                std::fs::create_dir_all(&s.out).map_err(|e| io(&s.out, e))?;
                write_study_csv_file(s.out.join("holdout.csv"), &holdout)?;
                studies = screen_part;
            }
            let opts = ScreenOptions {
                epsilon: s.epsilon(&eps)?,
                alpha: s.alpha,
                pool: s.pool(),
            };
            let report = screen(&studies, &opts)?;
            let top_k = top_k.or(s.cfg.top_k).unwrap_or(10);
            write_screen_outputs(&s.out, &report, top_k, svg || s.cfg.svg.unwrap_or(false))?;
            if report.gamma.is_empty() {
                log::warn!("no marker passed screening at epsilon = {}; signature is empty", report.epsilon);
            } else {
                log::info!("screened set: {}", report.gamma_names().join(", "));
            }
            println!(
                "epsilon={} screened={} of {} out={}",
                report.epsilon,
                report.gamma.len(),
                report.markers.len(),
                s.out.display()
            );
            Ok(())
        }
        Command::Evaluate { data, signature, common, eps, bootstrap, svg } => {
            let s = Settings::new(&common)?;
            let text = std::fs::read_to_string(&signature).map_err(|e| io(&signature, e))?;
            let spec = SignatureSpec::from_json(&text)?;
            let holdout = s.read(&data)?;
            let epsilon = s.epsilon(&eps)?.resolve(&holdout)?;
            let opts = EvaluateOptions {
                pool: s.pool(),
                alpha: s.alpha,
                bootstrap_replicates: bootstrap.or(s.cfg.bootstrap).unwrap_or(2000),
                seed: s.seed,
                min_n: s.min_n,
            };
            let report = evaluate_signature(&holdout, &spec, epsilon, &opts)?;
            write_evaluate_outputs(&s.out, &report, svg || s.cfg.svg.unwrap_or(false))?;
            println!(
                "epsilon={} studies={} p_tost={} out={}",
                report.epsilon,
                report.studies.len(),
                report.tost.p_tost,
                s.out.display()
            );
            Ok(())
        }
        Command::Simulate { common, scenario, j } => {
            let s = Settings::new(&common)?;
            let configs = match s.cfg.simulation.clone() {
                Some(mut c) => {
                    c.j = j.unwrap_or(c.j);
                    c.seed = common.seed.unwrap_or(c.seed);
                    if let Some(m) = common.meta {
                        c.model = m;
                    }
                    let mut out = Vec::new();
                    if scenario != Scenario::Power {
                        out.push((Scenario::Calibration, c.clone()));
                    }
                    if scenario != Scenario::Calibration {
                        out.push((Scenario::Power, c));
                    }
                    out
                }
                None => default_grid(scenario, j.unwrap_or(20_000), s.seed, s.meta),
            };
            let mut rows: Vec<SimRow> = Vec::new();
            for (kind, cfg) in &configs {
                cfg.validate()?;
                match kind {
                    Scenario::Power => rows.push(run_power(cfg)?),
                    _ => rows.extend(run_calibration(cfg, &CALIBRATION_ALPHAS)?),
                }
            }
            std::fs::create_dir_all(&s.out).map_err(|e| io(&s.out, e))?;
            let path = s.out.join("sim_summary.csv");
            write_sim_rows(BufWriter::new(File::create(&path).map_err(|e| io(&path, e))?), &rows)?;
            println!("{} rows out={}", rows.len(), path.display());
            Ok(())
        }
        Command::AggregateGenesets { data, genesets, common } => {
            let s = Settings::new(&common)?;
            let catalog = GenesetCatalog::from_path(&genesets)?;
            let studies = parse_study_csv(&data, &s.cfg.columns.clone().unwrap_or_default())?;
            let mut out = Vec::with_capacity(studies.len());
            let mut dropped = Vec::new();
            for d in &studies {
                let (agg, report) = aggregate_genesets(d, &catalog)?;
                dropped = report.dropped;
                out.push(agg);
            }
            if !dropped.is_empty() {
                log::warn!("{} genesets have no available member: {}", dropped.len(), dropped.join(", "));
            }
            std::fs::create_dir_all(&s.out).map_err(|e| io(&s.out, e))?;
            let path = s.out.join("aggregated.csv");
            write_study_csv_file(&path, &out)?;
            println!("{} genesets out={}", out.first().map_or(0, |d| d.n_markers()), path.display());
            Ok(())
        }
        Command::Split { data, common, split_fraction } => {
            let s = Settings::new(&common)?;
            let fraction = s.split_fraction(split_fraction).unwrap_or(0.5);
            let studies = s.read(&data)?;
            let (screen_part, holdout) = split_all(&studies, fraction, s.seed)?;
            std::fs::create_dir_all(&s.out).map_err(|e| io(&s.out, e))?;
            write_study_csv_file(s.out.join("screen.csv"), &screen_part)?;
            write_study_csv_file(s.out.join("holdout.csv"), &holdout)?;
            println!("{} studies out={}", studies.len(), s.out.display());
            Ok(())
        }
    }
}

fn io(path: &Path, source: std::io::Error) -> SurrError {
    SurrError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn split_all(
    data: &[StudyDataset],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<StudyDataset>, Vec<StudyDataset>), SurrError> {
    let mut a = Vec::with_capacity(data.len());
    let mut b = Vec::with_capacity(data.len());
    for d in data {
        let (x, y) = split_within_study(d, fraction, seed)?;
        a.push(x);
        b.push(y);
    }
    Ok((a, b))
}

/// Calibration over studies x sample size under the least favourable mean,
/// and power over studies x variance bound with valid means.
fn default_grid(scenario: Scenario, j: usize, seed: u64, model: MetaModel) -> Vec<(Scenario, SimConfig)> {
    let eps = 0.1;
    let base = |m: usize, n: usize, u_tau2: f64, u_nu: f64, regime: MuRegime, seed: u64| SimConfig {
        j,
        m,
        n: SampleSizes::Common(n),
        epsilon: eps,
        alpha: 0.05,
        u_tau2_max: u_tau2,
        u_nu_max: u_nu,
        mu_regime: regime,
        model,
        seed,
    };
    let mut out = Vec::new();
    let mut cell = 0u64;
    if scenario != Scenario::Power {
        for m in [3, 10, 25] {
            for n in [10, 50, 250] {
                out.push((Scenario::Calibration, base(m, n, eps / 10.0, 100.0 * eps, MuRegime::Lfc, seed + cell)));
                cell += 1;
            }
        }
    }
    if scenario != Scenario::Calibration {
        for u in [eps / 100.0, eps / 10.0, eps, 10.0 * eps, 100.0 * eps] {
            for m in [3, 10, 25] {
                out.push((Scenario::Power, base(m, 50, u, u, MuRegime::UniformValid, seed + cell)));
                cell += 1;
            }
        }
    }
    out
}
