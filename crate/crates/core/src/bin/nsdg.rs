use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use nsdg::harness::{
    configure_threads, emit_report, rates_from_csv, run_convergence, run_single, summary, Study, StudyConfig, StudyMode,
};
use nsdg::manufactured::{manufactured_case, verify_forcing};
use nsdg::solver::Scheme;

#[derive(Parser)]
#[command(name = "nsdg", version, about = "Space-time DG Navier-Stokes solver and convergence harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the JSON configuration.
#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    ell: Option<usize>,
    /// Write 0 in the wall_seconds column.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one discretization and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a refinement study and check the configured rate bands.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<StudyMode>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print empirical rates of a runs CSV.
    Rates { csv: PathBuf },
    /// Check a case's closed-form forcing against finite differences.
    VerifyForcing {
        #[arg(long)]
        case: String,
        #[arg(long, default_value_t = 1.0)]
        nu: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

fn load(path: &Path, o: &Overrides) -> nsdg::Result<StudyConfig> {
    let mut c = StudyConfig::from_file(path)?;
    if let Some(v) = &o.case {
        c.case = v.clone();
    }
    if let Some(v) = o.scheme {
        c.scheme = v;
    }
    if let Some(v) = o.k {
        c.k = v;
    }
    if o.ell.is_some() {
        c.ell = o.ell;
    }
    if o.no_timing {
        c.record_timing = false;
    }
    c.validate()?;
    Ok(c)
}

fn finish(study: &Study, out: Option<PathBuf>) -> nsdg::Result<bool> {
    match out {
        Some(dir) => print!("{}", emit_report(study, &dir)?),
        None => {
            print!("{}", summary(study));
            nsdg::harness::write_runs_csv(std::io::stdout().lock(), &study.runs)?;
        }
    }
    Ok(study.passed())
}

fn execute(cli: Cli) -> nsdg::Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Run { config, out, overrides } => {
            let c = load(&config, &overrides)?;
            let record = run_single(&c)?;
            let ok = record.solenoidal();
            let study = Study { mode: StudyMode::SpaceTime, runs: vec![record], rates: Vec::new(), checks: Vec::new(), failure: None };
            Ok(finish(&study, out.or(c.output_dir.clone()))? && ok)
        }
        Command::Convergence { config, mode, out, overrides } => {
            let c = load(&config, &overrides)?;
            let mode = mode.or(c.mode).unwrap_or_default();
            let study = run_convergence(&c, mode)?;
            if let Some(f) = &study.failure {
                error!("study aborted: {f}");
            }
            finish(&study, out.or(c.output_dir.clone()))
        }
        Command::Rates { csv } => {
            let rows = rates_from_csv(std::fs::File::open(csv)?)?;
            println!("level,size_from,size_to,err_u,linf_l2,a_norm,gamma_jump,p_final");
            for r in rows {
                let cols: Vec<String> = nsdg::harness::Quantity::ALL
                    .iter()
                    .map(|q| r.rates.get(q).map_or(String::new(), |v| format!("{v:.4}")))
                    .collect();
                println!("{},{},{},{}", r.level, r.size_from, r.size_to, cols.join(","));
            }
            Ok(true)
        }
        Command::VerifyForcing { case, nu, samples } => {
            let c = manufactured_case(&case, nu)?;
            let residual = verify_forcing(&c, samples)?;
            println!("{case}: max |f - f_fd| = {residual:e} over {samples} points");
            Ok(residual <= 1e-6)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
