//! Configuration loading and experiment dispatch for the `entangle` binary.

pub mod config;
pub mod run;

use std::path::PathBuf;

use anyhow::{bail, Result};

pub use config::{load_config, load_with_overrides, Experiment, RunConfig};
pub use run::{run, run_experiment, VERSION};

/// Splits `--key value` / `--key=value` pairs; `--config` is pulled out as the file path.
pub fn parse_overrides(args: &[String]) -> Result<(Option<PathBuf>, Vec<(String, String)>)> {
    let mut config = None;
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            bail!("unexpected argument `{arg}`; expected --key value");
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => match it.next() {
                Some(v) => (flag.to_string(), v.clone()),
                None => bail!("missing value for --{flag}"),
            },
        };
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            pairs.push((key, value));
        }
    }
    Ok((config, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pairs_and_config() {
        let (cfg, pairs) = parse_overrides(&args(&["--seed", "-1", "--config", "a.json", "--cfn.noise_sigma=0.1"])).unwrap();
        assert_eq!(cfg, Some(PathBuf::from("a.json")));
        assert_eq!(
            pairs,
            vec![("seed".into(), "-1".into()), ("cfn.noise_sigma".into(), "0.1".into())]
        );
    }

    #[test]
    fn dangling_flag_is_an_error() {
        assert!(parse_overrides(&args(&["--seed"])).is_err());
        assert!(parse_overrides(&args(&["seed", "1"])).is_err());
    }
}
