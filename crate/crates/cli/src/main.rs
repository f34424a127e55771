use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use passkit::geometry::Scenario;
use passkit::par::{self, Execution};
use passkit_cli::experiments::{self, EstimateMethod, EstimateSetup, TrainMethod, TrainSetup};
use passkit_cli::output::{self, Manifest, Sweep};
use passkit_cli::spec::{self, ExperimentId, ExperimentSpec};
use passkit_cli::tools::{self, Arch, Metric, MetricAxis, MetricPoint, ProtocolArg};
use passkit_cli::verify::{self, Check};

#[derive(Debug, Parser)]
#[command(name = "passkit", version, about = "Pinching-antenna system experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Scenario TOML file. Each experiment has a bundled default.
    #[arg(long, global = true, env = "PASSKIT_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Base seed for all randomness.
    #[arg(long, global = true, env = "PASSKIT_SEED", default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, env = "PASSKIT_OUT", default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PASSKIT_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its CSV and manifest.
    Run {
        experiment: String,
        /// Sweep override, `axis=lo:step:hi` or `axis=v1,v2,...`.
        #[arg(long)]
        sweep: Option<String>,
        /// Parameter override `key=value`, repeatable.
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Run an acceptance check on a CSV produced by `run`.
    Verify { csv: PathBuf, check: String },
    /// List experiments, their sweep axes and parameters.
    ListExperiments,
    /// Position and beamforming optimizers.
    #[command(subcommand)]
    Optimize(Optimize),
    /// Channel estimation and beam training trials.
    #[command(subcommand)]
    Csi(Csi),
    /// Performance metrics.
    #[command(subcommand)]
    Metric(MetricCmd),
}

#[derive(Debug, Subcommand)]
enum Optimize {
    /// Single waveguide, single user.
    Single {
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        user: usize,
    },
    /// Single user over all waveguides.
    SuMiso {
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        n_rf: usize,
        #[arg(long, default_value_t = 0)]
        user: usize,
    },
    /// Multi-user weighted sum rate.
    Mu {
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 1)]
        m: usize,
    },
}

#[derive(Debug, Subcommand)]
enum Csi {
    Estimate {
        #[arg(long, value_enum)]
        method: EstimateMethod,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
        snr_db: f64,
        #[arg(long, default_value_t = 16)]
        ports: usize,
        #[arg(long, default_value_t = 4)]
        pilots: usize,
        #[arg(long, default_value_t = 12)]
        omp_slots: usize,
    },
    Train {
        #[arg(long, value_enum)]
        method: TrainMethod,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        snr_db: f64,
        #[arg(long, default_value_t = 16)]
        cells: usize,
        #[arg(long, default_value_t = 4)]
        fine: usize,
        #[arg(long, default_value_t = 2.0)]
        half_width: f64,
    },
}

#[derive(Debug, Subcommand)]
enum MetricCmd {
    /// Sweep one parameter and write `param,value,ci_lo,ci_hi`.
    Sweep {
        #[arg(long, value_enum)]
        metric: Metric,
        #[arg(long, value_enum, default_value = "p-dbm")]
        axis: MetricAxis,
        /// `lo:step:hi` or a comma-separated list.
        #[arg(long, default_value = "0:2:40")]
        values: String,
        #[arg(long, default_value_t = 1.0)]
        gamma0: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        r_target: f64,
        #[arg(long, default_value_t = 10.0)]
        d_y: f64,
        #[arg(long, default_value_t = 20_000)]
        samples: u64,
    },
}

fn load_scenario(path: &Option<PathBuf>, fallback: &str) -> Result<Scenario> {
    Ok(match path {
        Some(p) => Scenario::load(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?.0,
        None => Scenario::from_toml_str(fallback)?.0,
    })
}

const SINGLE: &str = include_str!("../scenarios/single_user.toml");
const MULTI: &str = include_str!("../scenarios/multi_user.toml");

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run_experiment(g: &Global, experiment: &str, sweep: Option<&str>, sets: &[String]) -> Result<()> {
    let id: ExperimentId = experiment.parse()?;
    let spec = ExperimentSpec::new(id, g.scenario.clone(), sweep, sets, g.seed, g.out.clone())?;
    let start = Instant::now();
    let table = experiments::run(&spec, Execution::Parallel)?;
    let csv = spec.out.join(format!("{id}.csv"));
    table.write(&csv)?;
    let manifest_path = spec.out.join(format!("{id}.manifest.json"));
    let manifest = Manifest {
        experiment: id.name().into(),
        version: output::version(),
        seed: spec.seed,
        threads: g.threads,
        wall_time_s: start.elapsed().as_secs_f64(),
        scenario: spec
            .scenario_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "bundled".into()),
        activation: spec.activation.clone(),
        sweep: spec.axis.clone().map(|(axis, values)| Sweep { axis, values }),
        params: spec.params.clone(),
        tolerances: experiments::tolerances(),
        outputs: vec![csv.clone()],
    };
    manifest.write(&manifest_path)?;
    report(&[csv, manifest_path]);
    Ok(())
}

fn list_experiments() {
    for id in spec::ALL {
        let axis = id
            .axis()
            .map(|(a, v)| format!("{a} (default {} values)", v.len()))
            .unwrap_or_else(|| "none".into());
        let params: Vec<String> = id.params().iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<12} {}", id.name(), id.description());
        println!("{:<12}   sweep: {axis}; params: {}", "", if params.is_empty() { "none".into() } else { params.join(", ") });
    }
    println!();
    println!("checks:");
    for (name, text) in verify::CHECKS {
        println!("  {name:<18} {text}");
    }
}

fn write_table(table: &output::Table, path: &Path) -> Result<()> {
    table.write(path)?;
    report(&[path.to_path_buf()]);
    Ok(())
}

fn main_inner(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            anyhow::bail!("--threads must be positive");
        }
        par::set_threads(n);
    }
    let exec = Execution::Parallel;
    match &cli.command {
        Command::Run { experiment, sweep, sets } => run_experiment(g, experiment, sweep.as_deref(), sets)?,
        Command::Verify { csv, check } => {
            let check: Check = check.parse()?;
            let r = verify::verify(csv, check)?;
            println!("{r}");
            return Ok(r.pass);
        }
        Command::ListExperiments => list_experiments(),
        Command::Optimize(o) => {
            let paths = match o {
                Optimize::Single { m, user } => tools::optimize_single(&load_scenario(&g.scenario, SINGLE)?, *m, *user, &g.out)?,
                Optimize::SuMiso { arch, m, n_rf, user } => {
                    tools::optimize_su_miso(&load_scenario(&g.scenario, MULTI)?, *arch, *m, *n_rf, *user, &g.out)?
                }
                Optimize::Mu { protocol, m } => tools::optimize_mu(&load_scenario(&g.scenario, MULTI)?, *protocol, *m, &g.out)?,
            };
            report(&paths);
        }
        Command::Csi(c) => {
            let s = load_scenario(&g.scenario, SINGLE)?;
            match c {
                Csi::Estimate { method, trials, snr_db, ports, pilots, omp_slots } => {
                    let setup = EstimateSetup { ports: *ports, pilots: *pilots, omp_slots: *omp_slots };
                    let t = tools::csi_estimate(&s, *method, *snr_db, *trials, setup, g.seed, exec)?;
                    write_table(&t, &g.out.join(format!("csi-estimate-{}.csv", method.name())))?;
                }
                Csi::Train { method, trials, snr_db, cells, fine, half_width } => {
                    let setup = TrainSetup { cells: *cells, fine: *fine, half_width: *half_width };
                    let t = tools::csi_train(&s, *method, *snr_db, *trials, setup, g.seed, exec)?;
                    write_table(&t, &g.out.join(format!("csi-train-{}.csv", method.name())))?;
                }
            }
        }
        Command::Metric(MetricCmd::Sweep { metric, axis, values, gamma0, beta, r_target, d_y, samples }) => {
            let s = load_scenario(&g.scenario, SINGLE)?;
            let base = MetricPoint {
                gamma0: *gamma0,
                beta: *beta,
                r_target: *r_target,
                d_y: *d_y,
                samples: *samples,
                ..MetricPoint::from_scenario(&s)
            };
            let values = spec::parse_values(values)?;
            let t = tools::metric_sweep(&s, *metric, *axis, &values, base, g.seed, exec)?;
            let name = format!("{metric:?}").to_lowercase();
            write_table(&t, &g.out.join(format!("metric-{name}.csv")))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
