use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vaebm_lab::commands;
use vaebm_lab::{CliError, Layout, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "vaebm-lab", about = "Train and evaluate a VAE + energy model on the 25-Gaussians toy")]
struct Cli {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample train, test and OOD point sets.
    GenData {
        /// Points per train and test split.
        #[arg(long)]
        n: Option<usize>,
    },
    TrainVae,
    TrainEbm,
    /// Draw samples from the trained model.
    Sample {
        #[arg(long)]
        n: Option<usize>,
        /// Langevin steps; 0 gives plain VAE samples.
        #[arg(long)]
        steps: Option<usize>,
        /// Also write every chain's trajectory to trace.csv.
        #[arg(long)]
        trace: bool,
    },
    Eval,
    /// gen-data, train-vae, train-ebm, sample and eval in one go.
    All,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    cfg.validate()?;
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads = 0: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads = {}: {}", t, e)))?;
    }
    let layout = Layout::new(&cfg.out);
    let force = cli.force;
    match cli.cmd {
        Cmd::GenData { n } => commands::gen_data(&cfg, &layout, n, force),
        Cmd::TrainVae => commands::cmd_train_vae(&cfg, &layout, force),
        Cmd::TrainEbm => commands::cmd_train_ebm(&cfg, &layout, force),
        Cmd::Sample { n, steps, trace } => commands::cmd_sample(&cfg, &layout, n, steps, trace, force),
        Cmd::Eval => commands::cmd_eval(&cfg, &layout, force).map(|_| ()),
        Cmd::All => commands::cmd_all(&cfg, &layout, force).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
