use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use clearing_core::clearing::{clear_bisection, clear_decentralized, clear_stochastic, diagnose_rates, ORACLE_TOL};
use clearing_core::experiments::{self, FeeSchedule, FeeSpec, ScenarioConfig};
use clearing_core::io::{self, render_number, Format, IngestMode, ResultTable};
use clearing_core::Error;

/// Fee grid used by `sweep` when the config gives a single tau.
const DEFAULT_TAU_GRID: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];
/// Grids used by `grid` when the config gives single fees.
const DEFAULT_GRID_TAU: [f64; 3] = [0.0, 1.0, 2.0];
const DEFAULT_GRID_G: [f64; 3] = [0.0, 2.5, 5.0];

const ENV_OUT_DIR: &str = "CLEARING_OUT_DIR";
const ENV_THREADS: &str = "CLEARING_THREADS";

#[derive(Parser)]
#[command(
    name = "clearing",
    version,
    about = "Contract-clearing equilibria and allocation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (TOML). Omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `experiment.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file. Without it, results go to $CLEARING_OUT_DIR/<command>.<format>
    /// when that is set, otherwise to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Clear one instance and print the price, allocations and diagnostics.
    Clear(Common),
    /// Compare all configured mechanisms over the replications.
    Compare(Common),
    /// Proposed mechanism across the tau grid.
    Sweep(Common),
    /// Proposed mechanism over the tau x g factorial with dEff/dtau.
    Grid(Common),
    /// Fee shock with one price update per round.
    Shock {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        replication: usize,
    },
    /// Dynamic regret under drifting valuations.
    Regret {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        replication: usize,
    },
    /// Oracle clearing price across the capacity grid.
    Statics(Common),
    /// Mechanism comparison on a MovieLens u.data population.
    Movielens {
        #[command(flatten)]
        common: Common,
        /// Path to u.data (tab-separated user, item, rating, timestamp).
        #[arg(long)]
        data: PathBuf,
        /// Abort on the first malformed line instead of skipping it.
        #[arg(long)]
        strict: bool,
        /// Capacity; defaults to one unit per five users.
        #[arg(long)]
        capacity: Option<f64>,
    },
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

/// Errors while loading user-supplied inputs are validation failures even
/// when the underlying cause is I/O.
fn input<T>(r: clearing_core::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Validation(e.to_string()))
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => input(io::parse_scenario_config(path))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.experiment.master_seed = seed;
    }
    input(cfg.validate())?;
    Ok(cfg)
}

fn timestamp() -> String {
    std::env::var("SOURCE_DATE_EPOCH").unwrap_or_else(|_| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or_default()
            .to_string()
    })
}

fn emit(table: ResultTable, common: &Common, name: &str) -> Result<(), Failure> {
    let table = table.with_meta("timestamp", timestamp());
    let target = common
        .out
        .clone()
        .or_else(|| std::env::var_os(ENV_OUT_DIR).map(|dir| Path::new(&dir).join(format!("{name}.{}", common.format))));
    match target {
        Some(path) => {
            table.write(&path, common.format)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{}", table.render(common.format)?),
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Clear(common) => {
            let cfg = load_config(&common)?;
            let agents = input(experiments::sample_population(&cfg, 0))?;
            let c = input(cfg.contract())?;
            let seed = cfg.experiment.master_seed;
            let solution = if cfg.algo.noise_sigma > 0.0 {
                clear_stochastic(&agents, &c, &cfg.algo, seed)?
            } else {
                clear_decentralized(&agents, &c, &cfg.algo, seed)?
            };
            let oracle = clear_bisection(&agents, &c, ORACLE_TOL)?;
            let diagnostics = if solution.trace.is_empty() {
                None
            } else {
                Some(diagnose_rates(&solution.trace, oracle.mu_star, &agents, &c)?)
            };
            let xs: Vec<String> = solution.allocations.iter().map(|&x| render_number(x)).collect();
            let mut summary = format!(
                "mu* = {} (oracle {})\nallocations = ({})\nconverged = {} after {} iterations\n",
                render_number(solution.mu_star),
                render_number(oracle.mu_star),
                xs.join(", "),
                solution.converged,
                solution.iterations,
            );
            if let Some(d) = &diagnostics {
                summary.push_str(&format!(
                    "kappa = {}\nfejer_violations = {}\nlipschitz_l = {}\n",
                    d.contraction_kappa.map_or_else(|| "n/a".to_string(), render_number),
                    d.fejer_violations,
                    render_number(d.lipschitz_l),
                ));
            }
            // Keep stdout clean when the table itself goes there.
            if common.out.is_some() || std::env::var_os(ENV_OUT_DIR).is_some() {
                print!("{summary}");
            } else {
                eprint!("{summary}");
            }
            let table = io::clearing_table(&agents, &solution, oracle.mu_star, diagnostics.as_ref(), &cfg)?;
            emit(table, &common, "clear")
        }
        Command::Compare(common) => {
            let cfg = load_config(&common)?;
            input(cfg.contract())?;
            let result = experiments::compare_mechanisms(&cfg)?;
            emit(io::sweep_table(&result, &cfg)?, &common, "compare")
        }
        Command::Sweep(common) => {
            let mut cfg = load_config(&common)?;
            if cfg.contract.tau.scalar().is_some() {
                cfg.contract.tau = FeeSpec::Grid(DEFAULT_TAU_GRID.to_vec());
            }
            let result = experiments::fee_sweep(&cfg)?;
            emit(io::sweep_table(&result, &cfg)?, &common, "sweep")
        }
        Command::Grid(common) => {
            let mut cfg = load_config(&common)?;
            if cfg.contract.tau.scalar().is_some() && cfg.contract.g.scalar().is_some() {
                cfg.contract.tau = FeeSpec::Grid(DEFAULT_GRID_TAU.to_vec());
                cfg.contract.g = FeeSpec::Grid(DEFAULT_GRID_G.to_vec());
            }
            let result = experiments::sensitivity_grid(&cfg)?;
            emit(io::sweep_table(&result, &cfg)?, &common, "grid")
        }
        Command::Shock { common, replication } => {
            let cfg = load_config(&common)?;
            let schedule = input(FeeSchedule::from_config(&cfg))?;
            let result = experiments::shock_run(&cfg, &schedule, replication)?;
            eprintln!(
                "resilience = {}, reconvergence round = {}",
                result.resilience.map_or_else(|| "n/a".to_string(), render_number),
                result
                    .reconvergence_round
                    .map_or_else(|| "none".to_string(), |t| t.to_string()),
            );
            emit(io::shock_table(&result, &cfg)?, &common, "shock")
        }
        Command::Regret { common, replication } => {
            let cfg = load_config(&common)?;
            let result = experiments::regret_experiment(&cfg, replication)?;
            eprintln!(
                "fitted log-log slope = {}",
                result.slope.map_or_else(|| "n/a".to_string(), render_number)
            );
            emit(io::regret_table(&result, &cfg)?, &common, "regret")
        }
        Command::Statics(common) => {
            let cfg = load_config(&common)?;
            let series = experiments::capacity_statics(&cfg, &cfg.experiment.statics.capacities)?;
            emit(io::statics_table(&series, &cfg)?, &common, "statics")
        }
        Command::Movielens {
            common,
            data,
            strict,
            capacity,
        } => {
            let cfg = load_config(&common)?;
            let mode = if strict {
                IngestMode::Strict
            } else {
                IngestMode::Lenient
            };
            let ml = input(io::load_movielens(&data, mode))?;
            let r = &ml.report;
            eprintln!(
                "ingested {} users, {} records, {} malformed lines skipped",
                r.users, r.records, r.malformed
            );
            for (line, reason) in &r.skipped {
                eprintln!("  line {line}: {reason}");
            }
            let result = experiments::compare_movielens(&cfg, &ml, capacity)?;
            let table = io::sweep_table(&result, &cfg)?
                .with_meta("users", r.users)
                .with_meta("records", r.records)
                .with_meta("malformed_lines", r.malformed);
            emit(table, &common, "movielens")
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var(ENV_THREADS) {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::Validation(format!("{ENV_THREADS} must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status: 0 on success, 1 for usage and validation errors, 2 for runtime
/// failures.
fn dispatch<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => 0,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(std::env::args_os()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_path(name: &str) -> String {
        format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
    }

    fn code(args: &[&str]) -> u8 {
        dispatch(std::iter::once("clearing").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(code(&[]), 1);
        assert_eq!(code(&["bogus"]), 1);
        assert_eq!(code(&["clear", "--no-such-flag"]), 1);
        assert_eq!(code(&["clear", "--format", "xml"]), 1);
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(code(&["--help"]), 0);
        assert_eq!(code(&["--version"]), 0);
        assert_eq!(code(&["sweep", "--help"]), 0);
    }

    #[test]
    fn validation_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[contract]\ntau = -1\n").unwrap();
        assert_eq!(code(&["clear", "--config", bad.to_str().unwrap()]), 1);
        assert_eq!(code(&["clear", "--config", "/nonexistent/cfg.toml"]), 1);
        assert_eq!(
            code(&[
                "compare",
                "--config",
                &config_path("two_agent.toml"),
                "--out",
                "/dev/null/x.csv"
            ]),
            2
        );
        let grid = dir.path().join("grid.toml");
        std::fs::write(&grid, "[contract]\ntau = [0.0, 1.0]\n").unwrap();
        assert_eq!(code(&["compare", "--config", grid.to_str().unwrap()]), 1);
    }

    #[test]
    fn clear_writes_table() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("clear.json");
        let args = [
            "clear",
            "--config",
            &config_path("two_agent.toml"),
            "--out",
            out.to_str().unwrap(),
            "--format",
            "json",
        ];
        assert_eq!(code(&args), 0);
        let table = io::read_results(&out).unwrap();
        assert_eq!(table.rows.len(), 2);
        let x = table.column("allocation").unwrap();
        for row in &table.rows {
            assert!((row[x].as_f64().unwrap() - 4.0).abs() < 1e-4);
        }
        assert_eq!(table.metadata["converged"], "true");
    }
}
