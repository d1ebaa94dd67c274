use std::process::ExitCode;

use clap::Parser;

use entangle_cli::{load_with_overrides, parse_overrides, run, VERSION};

/// Runs one experiment and writes its logs, checkpoints and manifest.
///
/// Experiments: train-cfn, train-cfn-baseline, train-ffn, forgetting,
/// train-vae, grad-check, params-report. `describe` prints the resolved
/// configuration instead of running anything.
///
/// Any configuration key can be set with `--dotted.key value`, for example
/// `--seed 3 --train.opt.learning_rate 0.001`. Flags override `--config`.
#[derive(Parser)]
#[command(name = "entangle", version = VERSION)]
struct Cli {
    /// Experiment name, or `describe`.
    experiment: String,
    /// `--config <path>` and `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    rest: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> anyhow::Result<()> {
    let (path, mut pairs) = parse_overrides(&cli.rest)?;
    let describe = cli.experiment == "describe";
    if !describe {
        pairs.push(("experiment".into(), cli.experiment.clone()));
    }
    let cfg = load_with_overrides(path.as_deref(), &pairs)?;
    if describe {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    run(&cfg, &mut std::io::stdout().lock())
}
