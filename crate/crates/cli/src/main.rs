use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rzk_cli::{cmd_demo, cmd_halanay, cmd_simulate, cmd_sweep, cmd_verify, exit_code, CommonArgs, Outcome};
use rzk_core::halanay::RootVariant;

#[derive(Parser)]
#[command(name = "rzk", version, about = "Certificate-based control of time-delay systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Proof,
    Statement,
}

impl From<Variant> for RootVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Proof => RootVariant::Proof,
            Variant::Statement => RootVariant::Statement,
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Boundary grid points per edge for the construction check.
    #[arg(long = "grid-points")]
    grid_points: Option<usize>,
    /// Gain equation used for decay rates.
    #[arg(long, value_enum)]
    variant: Option<Variant>,
}

impl Common {
    fn args(&self) -> CommonArgs {
        CommonArgs {
            out: self.out.clone(),
            seed: self.seed,
            grid_points: self.grid_points,
            variant: self.variant.map(Into::into),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the mechanical example and its checks.
    Demo {
        #[command(flatten)]
        common: Common,
        /// Barrier weight in W = V + ψB.
        #[arg(long)]
        psi: Option<f64>,
    },
    /// Simulate and verify everything a config describes.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Decay rate of the delayed-sup decrease inequality.
    Halanay {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        delay: f64,
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        /// Also simulate the comparison system and check the envelope.
        #[arg(long)]
        envelope: bool,
    },
    /// Parameter sweep declared in a config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Re-run the trajectory checks on a CSV file.
    Verify {
        csv: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RZK_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut stdout = std::io::stdout();
    let result = match &cli.command {
        Command::Demo { common, psi } => cmd_demo(&common.args(), *psi),
        Command::Simulate { config, common } => cmd_simulate(config, &common.args()),
        Command::Halanay {
            gamma,
            eta,
            delay,
            variant,
            envelope,
        } => cmd_halanay(*gamma, *eta, *delay, variant.map(Into::into), *envelope, &mut stdout),
        Command::Sweep { config, common } => cmd_sweep(config, &common.args()),
        Command::Verify { csv, config, common } => cmd_verify(csv, config.as_deref(), &common.args(), &mut stdout),
    };
    match &result {
        Err(e) => eprintln!("error: {e}"),
        Ok(Outcome::Fail(names)) => {
            for n in names {
                eprintln!("FAILED: {n}");
            }
        }
        Ok(Outcome::Pass) => {}
    }
    ExitCode::from(exit_code(&result) as u8)
}
