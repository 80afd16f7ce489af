//! Batch front-end: config-driven subcommand dispatch, deterministic
//! parallel execution, and CSV/JSON artifact emission.
//!
//! Every run writes its artifacts plus a `manifest.json` holding the raw
//! config echo, the effective seed, the code version, and the wall time, so
//! any artifact can be regenerated from its manifest. Worker count is an
//! execution knob only: replica seeds derive from replica indices and
//! reductions merge in index order, so CSV bytes do not depend on it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::checks;
use crate::config::{parse_config, EngineSpec, RunConfig};
use crate::coupling::{joint_domination_run, sample_initial_pair, InitialPairSample};
use crate::dynamics::{simulate, Configuration, Driver, EventKind, ModelParams, Trajectory};
use crate::error::{Error, Result};
use crate::estimators::{
    compare_critical, estimate_critical, estimate_expected_infected_curve,
    integrability_functional, CriticalEstimate, CriticalProtocol,
};
use crate::graph::Graph;
use crate::graphical::GraphicalConstruction;
use crate::rng::derive_seed;

const SIM_TAG: u64 = 0x53494d; // "SIM"
const CPL_TAG: u64 = 0x43504c; // "CPL"

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "CONTACT_LAB_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Couple,
    ExactCheck,
    Curve,
    Critical,
    Compare,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::ExactCheck => "exact-check",
            Command::Curve => "curve",
            Command::Critical => "critical",
            Command::Compare => "compare",
        }
    }
}

/// Command-line overrides applied on top of the config document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// What a run produced. `exit_code` is zero iff every assertion and
/// tolerance in the subcommand passed.
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub artifacts: Vec<String>,
    /// Human-readable result lines (also printed by the binary).
    pub report_lines: Vec<String>,
}

/// Parses `config_text` and executes `command` with `overrides`.
pub fn run_str(config_text: &str, command: Command, overrides: &Overrides) -> Result<RunOutcome> {
    let config = parse_config(config_text)?;
    let raw: serde_json::Value = serde_json::from_str(config_text)?;
    let seed = overrides.seed.unwrap_or(config.master_seed);
    let workers = overrides.workers.or(config.workers).unwrap_or(0);
    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out_dir)?;

    let started = Instant::now();
    let body = || -> Result<(Vec<String>, Vec<String>, i32)> {
        match command {
            Command::Simulate => cmd_simulate(&config, seed, &out_dir),
            Command::Couple => cmd_couple(&config, seed, &out_dir),
            Command::ExactCheck => cmd_exact_check(&config, seed, &out_dir),
            Command::Curve => cmd_curve(&config, seed, &out_dir),
            Command::Critical => cmd_critical(&config, seed, &out_dir),
            Command::Compare => cmd_compare(&config, seed, &out_dir),
        }
    };
    let (artifacts, report_lines, exit_code) = if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::parameter("workers", e.to_string()))?;
        pool.install(body)?
    } else {
        body()?
    };

    let manifest = serde_json::json!({
        "subcommand": command.name(),
        "seed": seed,
        "workers_requested": workers,
        "code_version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": started.elapsed().as_secs_f64(),
        "artifacts": artifacts,
        "config": raw,
    });
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    Ok(RunOutcome {
        exit_code,
        out_dir,
        artifacts,
        report_lines,
    })
}

/// Reads the config from a file and runs.
pub fn run_file(path: &Path, command: Command, overrides: &Overrides) -> Result<RunOutcome> {
    let text = fs::read_to_string(path)?;
    run_str(&text, command, overrides)
}

fn write_artifact(out_dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(out_dir.join(name), contents)?;
    Ok(())
}

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::write(out_dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn build_grid(config: &RunConfig, horizon: f64) -> Result<Vec<f64>> {
    match &config.grid {
        Some(g) => g.build(horizon),
        None => Ok(vec![horizon]),
    }
}

fn cmd_simulate(
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<String>, i32)> {
    let (g, warnings) = config.graph.build()?;
    let lambda = config.require_lambda()?;
    let params = ModelParams::new(lambda)?;
    let horizon = config.require_horizon()?;
    let grid = build_grid(config, horizon)?;
    let init = config.init.build(&g)?;
    let rate_cap = config.rate_cap.unwrap_or(lambda);
    let window = config.stream_window.unwrap_or(1.0);
    let engine = config.engine;
    let log_events = config.log_events;

    let trajectories: Vec<Trajectory> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let replica_seed = derive_seed(seed, &[SIM_TAG, r]);
            match engine {
                EngineSpec::Gillespie => simulate(
                    &g,
                    &params,
                    &init,
                    horizon,
                    Driver::Fresh { seed: replica_seed },
                    &grid,
                    log_events,
                ),
                EngineSpec::Graphical => {
                    let c = GraphicalConstruction::with_window(replica_seed, rate_cap, window)?;
                    simulate(
                        &g,
                        &params,
                        &init,
                        horizon,
                        Driver::Construction(&c),
                        &grid,
                        log_events,
                    )
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from("replica,t,n_infected,survived\n");
    for (r, traj) in trajectories.iter().enumerate() {
        for (t, n) in traj.grid.iter().zip(&traj.counts) {
            let _ = writeln!(csv, "{r},{t},{n},{}", u8::from(*n > 0));
        }
    }
    write_artifact(out_dir, "simulate.csv", &csv)?;
    let mut artifacts = vec!["simulate.csv".to_string()];

    if log_events {
        let mut ev = String::from("replica,time,site,kind\n");
        for (r, traj) in trajectories.iter().enumerate() {
            if let Some(events) = &traj.events {
                for e in events {
                    let kind = match e.kind {
                        EventKind::Recovery => "recovery",
                        EventKind::Infection => "infection",
                    };
                    let _ = writeln!(ev, "{r},{},{},{kind}", e.time, e.site.csv_token());
                }
            }
        }
        write_artifact(out_dir, "events.csv", &ev)?;
        artifacts.push("events.csv".to_string());
    }

    let survived = trajectories.iter().filter(|t| t.survived()).count();
    let mut lines = warnings;
    lines.push(format!(
        "simulate: {} replicas, {} survived at t={horizon}",
        config.replicas, survived
    ));
    Ok((artifacts, lines, 0))
}

fn cmd_couple(
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<String>, i32)> {
    let (g, mut warnings) = config.graph.build()?;
    let (gp, warnings_p) = config.build_prime(&g)?;
    warnings.extend(warnings_p);
    let lambda = config.require_lambda()?;
    let params = ModelParams::new(lambda)?;
    let horizon = config.require_horizon()?;
    let grid = build_grid(config, horizon)?;
    let event_spec = config
        .event
        .as_ref()
        .ok_or_else(|| Error::validation("event", "required by couple"))?;
    let event = event_spec.build(g.base(), config.prime.as_ref().unwrap())?;
    let relax = config
        .relax
        .as_ref()
        .ok_or_else(|| Error::validation("relax", "required by couple"))?;
    let truncation = relax.truncation.unwrap_or(0);
    let rate_cap = config.rate_cap.unwrap_or(lambda);
    let window = config.stream_window.unwrap_or(1.0);

    let runs: Vec<_> = (0..config.replicas)
        .into_par_iter()
        .map(|r| {
            let replica_seed = derive_seed(seed, &[CPL_TAG, r]);
            let pair = if relax.force {
                let g_t = crate::graph::finite_truncation(&gp, truncation)?;
                let all_ones = Configuration::all_ones(&g_t)?;
                let relaxed = simulate(
                    &g_t,
                    &params,
                    &all_ones,
                    relax.t_relax,
                    Driver::Fresh {
                        seed: derive_seed(replica_seed, &[1]),
                    },
                    &[relax.t_relax],
                    false,
                )?;
                InitialPairSample::forcing(relaxed.final_state, &event)
            } else {
                sample_initial_pair(
                    &gp,
                    &params,
                    &event,
                    relax.t_relax,
                    truncation,
                    relax.attempts,
                    derive_seed(replica_seed, &[2]),
                )?
            };
            let construction = GraphicalConstruction::with_window(replica_seed, rate_cap, window)?;
            joint_domination_run(
                &g,
                &gp,
                &params,
                &event,
                &pair,
                horizon,
                &grid,
                &construction,
            )
        })
        .collect::<Result<_>>()?;

    let mut csv =
        String::from("replica,t,n_lower,n_upper,n_discrepancy,n_dominator,domination_ok\n");
    for (r, run) in runs.iter().enumerate() {
        for (j, t) in run.grid.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{r},{t},{},{},{},{},1",
                run.lower_counts[j],
                run.upper_counts[j],
                run.discrepancy_counts[j],
                run.dominator_counts[j]
            );
        }
    }
    write_artifact(out_dir, "couple.csv", &csv)?;

    // grid-wise means: the discrepancy mass stays below the dominator mass
    let n = runs.len() as f64;
    let mean = |extract: &dyn Fn(&crate::coupling::DominationRun, usize) -> usize, j: usize| {
        runs.iter().map(|r| extract(r, j) as f64).sum::<f64>() / n
    };
    let summary: Vec<_> = grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            serde_json::json!({
                "t": t,
                "mean_discrepancy": mean(&|r, j| r.discrepancy_counts[j], j),
                "mean_dominator": mean(&|r, j| r.dominator_counts[j], j),
            })
        })
        .collect();
    write_json(
        out_dir,
        "couple_summary.json",
        &serde_json::json!({
            "replicas": config.replicas,
            "pathwise_domination_ok": true,
            "grid_means": summary,
        }),
    )?;

    let mut lines = warnings;
    lines.push(format!(
        "couple: {} replicas, pathwise domination held in every event",
        config.replicas
    ));
    Ok((
        vec!["couple.csv".to_string(), "couple_summary.json".to_string()],
        lines,
        0,
    ))
}

fn cmd_exact_check(
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<String>, i32)> {
    let instances = config.exact_instances.unwrap_or(100);
    let reports = checks::default_suites(instances, seed)?;
    write_json(out_dir, "exact_check.json", &reports)?;
    let mut lines = Vec::new();
    let mut all_pass = true;
    for r in &reports {
        all_pass &= r.pass;
        lines.push(format!(
            "{}: {} over {} instances, max residual {:.3e} (tolerance {:.0e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.check_name,
            r.instances,
            r.max_residual,
            r.tolerance
        ));
    }
    Ok((
        vec!["exact_check.json".to_string()],
        lines,
        i32::from(!all_pass),
    ))
}

fn cmd_curve(
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<String>, i32)> {
    let (g, warnings) = config.graph.build()?;
    let lambda = config.require_lambda()?;
    let params = ModelParams::new(lambda)?;
    let horizon = config.require_horizon()?;
    let grid = build_grid(config, horizon)?;
    let init = config.init.build(&g)?;
    let curve = estimate_expected_infected_curve(
        &g,
        &params,
        &init,
        &grid,
        config.replicas,
        seed,
        config.fit_window,
    )?;
    let integral = integrability_functional(&curve);

    let mut csv = String::from("t,mean_n,stderr,replicas\n");
    for j in 0..curve.grid.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            curve.grid[j], curve.values[j], curve.std_errors[j], curve.replicas
        );
    }
    write_artifact(out_dir, "curve.csv", &csv)?;
    write_json(
        out_dir,
        "curve_summary.json",
        &serde_json::json!({
            "replicas": curve.replicas,
            "tail_fit": {
                "gamma": curve.tail.gamma,
                "gamma_std_error": curve.tail.gamma_std_error,
                "gamma_ci": curve.tail.gamma_ci(),
                "amplitude": curve.tail.amplitude,
                "window": curve.tail.window,
                "points": curve.tail.points,
                "r_squared": curve.tail.r_squared,
            },
            "integrability": {
                "divergent": integral.divergent,
                "value": integral.estimate.map(|e| e.value),
                "std_error": integral.estimate.map(|e| e.std_error),
                "tail_contribution": integral.tail_contribution,
            },
        }),
    )?;
    let mut lines = warnings;
    lines.push(match integral.estimate {
        Some(e) => format!(
            "curve: gamma = {:.4} +- {:.4}, integral = {:.4}",
            curve.tail.gamma, curve.tail.gamma_std_error, e.value
        ),
        None => format!(
            "curve: gamma = {:.4} +- {:.4}, integral flagged divergent",
            curve.tail.gamma, curve.tail.gamma_std_error
        ),
    });
    Ok((
        vec!["curve.csv".to_string(), "curve_summary.json".to_string()],
        lines,
        0,
    ))
}

fn critical_protocol(config: &RunConfig) -> Result<CriticalProtocol> {
    let spec = config
        .critical
        .as_ref()
        .ok_or_else(|| Error::validation("critical", "required by this subcommand"))?;
    let p = CriticalProtocol {
        bracket: spec.bracket,
        horizon: config.require_horizon()?,
        threshold: spec.threshold,
        replicas: config.replicas,
        bisection_steps: spec.bisection_steps,
        bootstrap: spec.bootstrap,
    };
    p.validate()?;
    Ok(p)
}

fn probes_csv(g: &Graph, estimate: &CriticalEstimate) -> String {
    let l = g.vertex_count().unwrap_or(0);
    let mut csv = String::from("lambda,L,T,replicas,survival,stderr\n");
    for p in &estimate.probes {
        let _ = writeln!(
            csv,
            "{},{l},{},{},{},{}",
            p.lambda, estimate.protocol.horizon, estimate.replicas, p.survival, p.std_error
        );
    }
    csv
}

fn critical_json(estimate: &CriticalEstimate) -> serde_json::Value {
    serde_json::json!({
        "lambda_hat": estimate.lambda_hat,
        "ci_lo": estimate.ci_lo,
        "ci_hi": estimate.ci_hi,
        "protocol": {
            "bracket": estimate.protocol.bracket,
            "horizon": estimate.protocol.horizon,
            "threshold": estimate.protocol.threshold,
            "replicas": estimate.protocol.replicas,
            "bisection_steps": estimate.protocol.bisection_steps,
            "bootstrap": estimate.protocol.bootstrap,
        },
        "seed": estimate.seed,
    })
}

fn cmd_critical(
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<String>, i32)> {
    let (g, warnings) = config.graph.build()?;
    let protocol = critical_protocol(config)?;
    let estimate = estimate_critical(&g, &protocol, seed)?;
    write_artifact(out_dir, "probes.csv", &probes_csv(&g, &estimate))?;
    write_json(out_dir, "critical.json", &critical_json(&estimate))?;
    let mut lines = warnings;
    lines.push(format!(
        "critical: lambda_hat = {:.4} (95% CI [{:.4}, {:.4}])",
        estimate.lambda_hat, estimate.ci_lo, estimate.ci_hi
    ));
    Ok((
        vec!["probes.csv".to_string(), "critical.json".to_string()],
        lines,
        0,
    ))
}

fn cmd_compare(
    config: &RunConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<(Vec<String>, Vec<String>, i32)> {
    let (g, mut warnings) = config.graph.build()?;
    let (gp, warnings_p) = config.build_prime(&g)?;
    warnings.extend(warnings_p);
    let protocol = critical_protocol(config)?;
    let cmp = compare_critical(&g, &gp, &protocol, seed)?;
    write_artifact(out_dir, "base_probes.csv", &probes_csv(&g, &cmp.base))?;
    write_artifact(out_dir, "prime_probes.csv", &probes_csv(&gp, &cmp.prime))?;
    write_json(
        out_dir,
        "compare.json",
        &serde_json::json!({
            "base": critical_json(&cmp.base),
            "prime": critical_json(&cmp.prime),
            "delta": cmp.delta,
            "delta_ci": cmp.delta_ci,
        }),
    )?;
    let mut lines = warnings;
    lines.push(format!(
        "compare: delta = {:.5} (95% CI [{:.5}, {:.5}])",
        cmp.delta, cmp.delta_ci.0, cmp.delta_ci.1
    ));
    Ok((
        vec![
            "base_probes.csv".to_string(),
            "prime_probes.csv".to_string(),
            "compare.json".to_string(),
        ],
        lines,
        0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_in(
        dir: &Path,
        text: &str,
        cmd: Command,
        seed: Option<u64>,
        workers: Option<usize>,
    ) -> RunOutcome {
        run_str(
            text,
            cmd,
            &Overrides {
                seed,
                workers,
                out_dir: Some(dir.to_path_buf()),
            },
        )
        .unwrap()
    }

    #[test]
    fn simulate_writes_deterministic_csv() {
        let tmp = tempfile::tempdir().unwrap();
        let text = r#"{"graph": {"base": "ring", "L": 20}, "lambda": 1.2,
                       "horizon": 4.0, "grid": {"points": 4}, "replicas": 50,
                       "master_seed": 5}"#;
        let a_dir = tmp.path().join("a");
        let b_dir = tmp.path().join("b");
        run_in(&a_dir, text, Command::Simulate, None, Some(1));
        run_in(&b_dir, text, Command::Simulate, None, Some(2));
        let a = fs::read(a_dir.join("simulate.csv")).unwrap();
        let b = fs::read(b_dir.join("simulate.csv")).unwrap();
        assert_eq!(a, b, "worker count changed CSV bytes");
        assert!(!a.is_empty());
    }

    #[test]
    fn exact_check_passes_and_reports() {
        let tmp = tempfile::tempdir().unwrap();
        let text = r#"{"graph": {"base": "ring", "L": 5}, "exact_instances": 20}"#;
        let out = run_in(tmp.path(), text, Command::ExactCheck, Some(3), None);
        assert_eq!(out.exit_code, 0);
        assert!(out.report_lines.iter().all(|l| l.starts_with("PASS")));
        let report = fs::read_to_string(tmp.path().join("exact_check.json")).unwrap();
        assert!(report.contains("generator_decomposition"));
        let manifest = fs::read_to_string(tmp.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("\"subcommand\": \"exact-check\""));
    }

    #[test]
    fn missing_required_fields_fail_with_named_field() {
        let tmp = tempfile::tempdir().unwrap();
        let text = r#"{"graph": {"base": "ring", "L": 10}}"#;
        let err = run_str(
            text,
            Command::Simulate,
            &Overrides {
                out_dir: Some(tmp.path().to_path_buf()),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("lambda"));
    }
}
