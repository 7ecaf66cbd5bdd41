use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use obtorus::diagnostics::{check_energy_bound, check_positivity, check_r1_bound};
use obtorus::experiments::studies;
use obtorus::experiments::RunConfig;

/// Mollified Oldroyd-B simulator on the periodic unit cube.
#[derive(Parser)]
#[command(name = "obtorus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single run; writes diagnostics.csv and final.snap.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `run.output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance to the eps = 0 run for each eps (strictly descending).
    SweepEps {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
    },
    /// Perturbation growth ratios for each amplitude.
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        amps: Vec<f64>,
    },
    /// Richardson orders over a halving list of steps.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        dts: Vec<f64>,
    },
    /// Spectral, mollifier and vorticity identity suite.
    CheckIdentities {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::from_file(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let out = out.or_else(|| cfg.output.clone());
            let res = studies::run_single(&cfg, out.as_deref())?;
            let energy = check_energy_bound(&res.records, &res.bounds);
            let psd = check_positivity(&res.records);
            let r1 = check_r1_bound(&res.records);
            if let Some(last) = res.records.last() {
                println!(
                    "t = {:.6}  kinetic = {:.6e}  trace = {:.6e}  min_eig = {:.3e}",
                    last.t, last.kinetic, last.trace_int, last.min_eig
                );
            }
            println!(
                "energy bound: {} (worst margin {:.3e} at t = {:.4})",
                verdict(energy.pass),
                energy.worst_margin,
                energy.worst_t
            );
            println!("positivity:   {}", verdict(psd));
            println!("R1 bound:     {}", verdict(r1));
            if let Some(d) = res.max_det_defect {
                println!("max |det - 1| = {d:.3e}");
            }
            Ok(energy.pass && psd && r1)
        }
        Command::SweepEps { config, eps } => {
            let rep = studies::epsilon_sweep(&load(&config)?, &eps)?;
            println!("eps,max_distance,max_du,max_dsigma");
            for e in &rep.entries {
                println!("{:e},{:e},{:e},{:e}", e.eps, e.max_distance, e.max_du, e.max_dsigma);
            }
            println!("ratios: {:?}", rep.ratios);
            println!("fitted rate: {:.4}", rep.fitted_rate);
            println!("monotone: {}", rep.monotone);
            Ok(rep.monotone)
        }
        Command::Stability { config, amps } => {
            let rep = studies::stability_pair(&load(&config)?, &amps)?;
            println!("amp,initial_distance,final_distance,ratio");
            for e in &rep.entries {
                let r = e.ratio.map_or("undefined".to_string(), |r| format!("{r:e}"));
                println!("{:e},{:e},{:e},{}", e.amp, e.initial_distance, e.final_distance, r);
            }
            println!("spread: {:.4}  agree: {}", rep.spread, rep.agree);
            Ok(rep.agree)
        }
        Command::Convergence { config, dts } => {
            let rep = studies::self_convergence(&load(&config)?, &dts)?;
            println!("diff_u: {:?}", rep.diffs_u);
            println!("diff_sigma: {:?}", rep.diffs_sigma);
            println!("order_u: {:?}", rep.orders_u);
            println!("order_sigma: {:?}", rep.orders_sigma);
            Ok(true)
        }
        Command::CheckIdentities { n, seed, count } => {
            if count == 0 {
                bail!("--count must be at least 1");
            }
            let rep = studies::check_identities(n, seed, count)?;
            for c in &rep.checks {
                println!("{:<48} {:.3e} (tol {:.0e}) {}", c.name, c.error, c.tolerance, verdict(c.pass()));
            }
            Ok(rep.pass())
        }
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
