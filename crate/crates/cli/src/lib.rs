//! Experiment pipelines behind the `affinedim` binary.

pub mod config;
pub mod error;
pub mod pipelines;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipelines::Context;

#[derive(Debug, Parser)]
#[command(name = "affinedim", version, about = "Dimensions of self-affine measures: theory and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Level-k pressure table over the s and q grids.
    Pressure(CommonArgs),
    /// d_q curve, affinity dimension and min(d_1, N).
    Dq(CommonArgs),
    /// Sample a point cloud.
    Sample(CommonArgs),
    /// Dimension estimates for the cloud named by `input`.
    Estimate(CommonArgs),
    /// Theory against simulation for a randomized system.
    Verify(CommonArgs),
    /// Two-sided bound for Markov measures.
    GibbsBracket(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; falls back to AFFINEDIM_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the master seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Pressure(a)
            | Command::Dq(a)
            | Command::Sample(a)
            | Command::Estimate(a)
            | Command::Verify(a)
            | Command::GibbsBracket(a) => a,
        }
    }
}

fn threads(args: &CommonArgs) -> Result<Option<usize>, CliError> {
    if let Some(t) = args.threads {
        return Ok(Some(t));
    }
    match std::env::var("AFFINEDIM_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("AFFINEDIM_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

/// Runs a parsed command; `Ok(false)` means a verification failed.
pub fn execute(cli: Cli) -> Result<bool, CliError> {
    let args = cli.command.args();
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&args.out)?;
    let mut ctx = Context {
        config,
        out: args.out.clone(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads(args)? {
        if n == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Pressure(_) => pipelines::cmd_pressure(&mut ctx),
        Command::Dq(_) => pipelines::cmd_dq(&mut ctx),
        Command::Sample(_) => pipelines::cmd_sample(&mut ctx),
        Command::Estimate(_) => pipelines::cmd_estimate(&mut ctx),
        Command::Verify(_) => pipelines::cmd_verify(&mut ctx),
        Command::GibbsBracket(_) => pipelines::cmd_gibbs_bracket(&mut ctx),
    })
}

/// Process exit code: 0 pass, 1 verification failure, 2 usage or
/// configuration error, 3 violated mathematical precondition.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("FAIL: see the report in the output directory");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
