//! Command-line front end.
//!
//! Subcommands: `run` (simulate, write CSV + JSON artifacts), `check-gains`
//! (evaluate the sufficient gain conditions), `oracle` (print the Riccati
//! ground truth for a linear catalog plant). Diagnostics go to stderr;
//! stdout carries machine-readable JSON when `--out` is omitted.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 simulation abort,
//! 3 gain-condition failure.

use std::path::{Path, PathBuf};

use crate::adp;
use crate::analysis;
use crate::config::{parse_config, Assembled};
use crate::error::Error;
use crate::sim::{run_experiment, Experiment};

const USAGE: &str = "usage: cladp <run|check-gains|oracle> --config PATH [--out DIR] [--seed N]

subcommands:
  run          integrate the closed loop; writes trajectory.csv and summary.json
  check-gains  evaluate the sufficient gain conditions; exit 3 when they fail
  oracle       print the Riccati solution P, gain K, and ideal weights for a
               linear catalog plant

flags:
  --config PATH   experiment configuration file (required)
  --out DIR       artifact directory (default ./out); when omitted, the
                  summary/report JSON is also printed to stdout
  --seed N        override [sim].seed";

#[derive(Debug, Clone, PartialEq)]
pub struct CliArgs {
    pub subcommand: String,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Parses argv (without the program name). Errors carry a message for
/// stderr; the caller prints the usage text.
pub fn parse_args(args: &[String]) -> Result<CliArgs, String> {
    let mut it = args.iter();
    let subcommand = it.next().ok_or("missing subcommand")?.clone();
    if !matches!(subcommand.as_str(), "run" | "check-gains" | "oracle") {
        return Err(format!("unknown subcommand '{subcommand}'"));
    }
    let mut config = None;
    let mut out = None;
    let mut seed = None;
    while let Some(flag) = it.next() {
        match flag.as_str() {
            "--config" => {
                let v = it.next().ok_or("--config needs a path")?;
                config = Some(PathBuf::from(v));
            }
            "--out" => {
                let v = it.next().ok_or("--out needs a directory")?;
                out = Some(PathBuf::from(v));
            }
            "--seed" => {
                let v = it.next().ok_or("--seed needs an integer")?;
                seed = Some(v.parse::<u64>().map_err(|_| "--seed needs an integer")?);
            }
            other => return Err(format!("unknown flag '{other}'")),
        }
    }
    Ok(CliArgs {
        subcommand,
        config: config.ok_or("--config is required")?,
        out,
        seed,
    })
}

/// Entry point used by the binary; returns the process exit code.
pub fn run_cli(args: Vec<String>) -> i32 {
    let parsed = match parse_args(&args) {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("error: {msg}");
            eprintln!("{USAGE}");
            return 1;
        }
    };
    match dispatch(&parsed) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(args: &CliArgs) -> crate::Result<i32> {
    let cfg = parse_config(&args.config)?;
    let built = cfg.assemble(args.seed)?;
    match args.subcommand.as_str() {
        "run" => cmd_run(args, &built),
        "check-gains" => cmd_check_gains(args, &built),
        "oracle" => cmd_oracle(args, &built),
        _ => unreachable!("validated in parse_args"),
    }
}

fn gain_report(built: &Assembled) -> crate::Result<analysis::GainReport> {
    let inputs = built.gain_inputs()?;
    let sups = analysis::estimate_sups(
        &built.basis,
        &built.model,
        &built.cost,
        built.analysis.z_bar,
        built.analysis.grid_level,
    );
    let vartheta = analysis::compute_varthetas(&inputs, &sups, &built.samples, &built.cost);
    // c is measured at the initial estimates (it depends on the evolving
    // weights); y comes from the config since no stack exists before a run
    let c = adp::sample_rank_certificate(
        &built.samples,
        &built.cost,
        &built.adp_gains,
        &built.sim.gamma0,
        &built.sim.thetahat0,
        &built.sim.wa0,
        built.sim.c_threshold,
    )?;
    Ok(analysis::check_gain_conditions(
        &inputs,
        &vartheta,
        built.cost.q_under(),
        built.analysis.y_under,
        c.c_value,
    ))
}

fn cmd_run(args: &CliArgs, built: &Assembled) -> crate::Result<i32> {
    let report = gain_report(built)?;
    if !report.pass {
        eprintln!(
            "warning: sufficient gain conditions not satisfied (margins {:?}); continuing",
            report.condition_margins
        );
    }
    let experiment = Experiment {
        model: &built.model,
        cost: &built.cost,
        basis: &built.basis,
        identifier_gains: &built.identifier_gains,
        adp_gains: &built.adp_gains,
        samples: &built.samples,
        oracle: built.oracle.as_ref(),
        gain_report: Some(report),
    };
    let out = run_experiment(&experiment, &built.sim)?;

    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("trajectory.csv"), out.log.to_csv())?;
    let summary_json = serde_json::to_string_pretty(&out.summary).map_err(|e| Error::Config {
        path: "summary".into(),
        reason: e.to_string(),
    })?;
    std::fs::write(dir.join("summary.json"), &summary_json)?;
    if args.out.is_none() {
        println!("{summary_json}");
    }

    if let Some(reason) = out.aborted {
        eprintln!("simulation aborted: {reason}");
        return Ok(2);
    }
    Ok(0)
}

fn cmd_check_gains(args: &CliArgs, built: &Assembled) -> crate::Result<i32> {
    let report = gain_report(built)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config {
        path: "gain report".into(),
        reason: e.to_string(),
    })?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(Path::new(dir).join("gain_report.json"), &json)?;
    } else {
        println!("{json}");
    }
    Ok(if report.pass { 0 } else { 3 })
}

fn cmd_oracle(args: &CliArgs, built: &Assembled) -> crate::Result<i32> {
    let oracle = built.oracle.as_ref().ok_or_else(|| Error::Config {
        path: "[plant].name".into(),
        reason: format!(
            "'{}' has no linear-quadratic ground truth (need a linear plant and the full degree-2 basis)",
            built.plant_name
        ),
    })?;
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "plant": built.plant_name,
        "p": matrix_rows(&oracle.p),
        "k": matrix_rows(&oracle.k),
        "w_star": oracle.w_star.iter().copied().collect::<Vec<f64>>(),
    }))
    .map_err(|e| Error::Config {
        path: "oracle output".into(),
        reason: e.to_string(),
    })?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(Path::new(dir).join("oracle.json"), &json)?;
    } else {
        println!("{json}");
    }
    Ok(0)
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parses_full_flag_set() {
        let args = parse_args(&s(&[
            "run", "--config", "a.toml", "--out", "dir", "--seed", "7",
        ]))
        .unwrap();
        assert_eq!(args.subcommand, "run");
        assert_eq!(args.config, PathBuf::from("a.toml"));
        assert_eq!(args.out, Some(PathBuf::from("dir")));
        assert_eq!(args.seed, Some(7));
    }

    #[test]
    fn rejects_bad_invocations() {
        assert!(parse_args(&s(&[])).is_err());
        assert!(parse_args(&s(&["fly", "--config", "a.toml"])).is_err());
        assert!(parse_args(&s(&["run"])).is_err());
        assert!(parse_args(&s(&["run", "--config"])).is_err());
        assert!(parse_args(&s(&["run", "--config", "a.toml", "--seed", "x"])).is_err());
        assert!(parse_args(&s(&["run", "--config", "a.toml", "--frob"])).is_err());
    }
}
