use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mcgid_cli::{config, pipeline, Outcome, RunOptions, Target};

/// MCG identification pipeline.
#[derive(Parser)]
#[command(name = "mcgid", version)]
struct Args {
    /// Stage to run: gen, denoise, tfr, dataset, train, eval, sweep, report or all.
    #[arg(value_parser = parse_target)]
    stage: Target,

    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,

    /// Dotted-path override, e.g. `--set tfr.size=48`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Root seed; replaces `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory; replaces `output_dir` in the config.
    #[arg(short, long)]
    out: Option<PathBuf>,

    /// Re-run stages even when their manifests are unchanged.
    #[arg(long)]
    force: bool,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(short, long)]
    jobs: Option<usize>,

    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn parse_target(s: &str) -> Result<Target, String> {
    Target::parse(s).ok_or_else(|| format!("unknown stage `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &args.out {
        overrides.push(format!("output_dir={:?}", out.display().to_string()));
    }
    let cfg = match config::load(&args.config, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if args.print_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }

    match pipeline::run(&cfg, args.stage, &RunOptions { force: args.force, jobs: args.jobs }) {
        Ok(done) => {
            for (stage, outcome) in done {
                let what = match outcome {
                    Outcome::Ran => "done",
                    Outcome::UpToDate => "up to date",
                };
                println!("{:<8} {what}", stage.name());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
