use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nykpca::persist::Model;
use nykpca_harness::commands;
use nykpca_harness::{run_experiment, ExperimentConfig, HarnessError, Method, Overrides};

#[derive(Parser)]
#[command(name = "nykpca", version, about = "Exact and Nystrom kernel PCA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and save it as JSON.
    Fit(Common),
    /// Run the configured m / repetition / ell sweep.
    Sweep(Common),
    /// Time the fits over the configured sample sizes.
    Bench(Common),
    /// Compare exact and approximate leverage scores.
    Leverage(Common),
    /// Write the configured synthetic sample as CSV.
    Synth(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Ekpca,
    Nystrom,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Comma-separated landmark counts.
    #[arg(long, value_delimiter = ',')]
    m_list: Option<Vec<usize>>,
    /// Comma-separated component counts.
    #[arg(long, value_delimiter = ',')]
    ell_list: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Write zero wall times, making results byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            method: self.method.map(|m| match m {
                MethodArg::Ekpca => Method::Ekpca,
                MethodArg::Nystrom => Method::Nystrom,
            }),
            m_list: self.m_list.clone(),
            ell_list: self.ell_list.clone(),
            repetitions: self.repetitions,
            no_timing: self.no_timing,
        }
        .apply(&mut cfg);
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Fit(c) => {
            let cfg = c.load()?;
            let desc = match commands::fit_model(&cfg)? {
                Model::Ekpca(m) => format!("EKPCA n={} ell={} error={:e}", m.n(), m.ell, m.recon_error()),
                Model::Nystrom(m) => format!(
                    "NYSTROM n={} m={} (distinct {}) ell={} error={:e}",
                    m.n,
                    m.m_requested,
                    m.m_distinct,
                    m.ell,
                    m.recon_error()
                ),
            };
            println!("{desc}; model written to {}", cfg.output.display());
        }
        Command::Sweep(c) => {
            let cfg = c.load()?;
            let out = run_experiment(&cfg)?;
            let failed = out.rows.iter().filter(|r| !r.is_ok()).count();
            println!("{} rows ({failed} failed) on n={}, d={}; results in {}", out.rows.len(), out.n, out.d, cfg.output.display());
        }
        Command::Bench(c) => {
            let cfg = c.load()?;
            let table = commands::bench(&cfg)?;
            for r in &table.rows {
                let e = r.ekpca_seconds.map(|t| format!("{t:.3}s")).unwrap_or_else(|| "-".into());
                println!("n={} m={} nystrom={:.3}s ekpca={e}", r.n, r.m, r.nystrom_seconds);
            }
            for q in &table.ratios {
                let e = q.ekpca_ratio.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into());
                println!("n {}->{}: nystrom x{:.2}, ekpca x{e}", q.n_from, q.n_to, q.nystrom_ratio);
            }
        }
        Command::Leverage(c) => {
            let cfg = c.load()?;
            let r = commands::leverage(&cfg)?;
            let sum: f64 = r.exact.iter().sum();
            println!("n={} s={:e} pilot={} sum(exact)={sum:.6} T={:.6}", r.n, r.s, r.pilot_size, r.t_factor);
        }
        Command::Synth(c) => {
            let cfg = c.load()?;
            let d = commands::synth(&cfg)?;
            println!("{} x {} sample written to {}", d.n(), d.dim(), cfg.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
