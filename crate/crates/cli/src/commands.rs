//! The run / verify / plotdata commands.

use crate::config::parse_config;
use crate::formats::{
    read_events, read_json, read_trace, write_events, write_json, write_trace, RunManifest,
    SlicesDoc, SummaryDoc, TraceData, EVENTS_FILE, MANIFEST_FILE, SLICES_FILE, SUMMARY_FILE,
    TRACE_FILE,
};
use crate::CliError;
use std::path::{Path, PathBuf};
use std::time::Instant;
use vch_core::agent::UpdateEvent;
use vch_core::ltv::{
    capture_step, check_growth_bound, verify_error_dynamics, GrowthBoundParams, SliceDecomposer,
    MAX_ANALYSIS_DIM, ROW_SUM_TOL,
};
use vch_core::sim::{error_norm, preset, run_monte_carlo, run_trial, SimConfig};
use vch_core::Vec2;

/// Tolerance for cross-checking stored numbers against recomputation.
const RECOMPUTE_TOL: f64 = 1e-12;
/// Error-dynamics certificate threshold on noiseless runs.
const DYNAMICS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub preset: Option<String>,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trials: Option<u32>,
    pub out_dir: PathBuf,
    pub max_steps: Option<u64>,
    pub noise_range: Option<f64>,
    pub noise_motion: Option<f64>,
    pub modifications: Option<bool>,
    pub verify: bool,
}

/// Build the effective config from a preset or a config file plus flag
/// overrides.
pub fn resolve_config(opts: &RunOptions) -> Result<SimConfig, CliError> {
    let mut cfg = match (&opts.preset, &opts.config_path) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give either --preset or --config, not both".into(),
            ))
        }
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            parse_config(&text)?
        }
        (None, None) => {
            return Err(CliError::Config(
                "a preset (--preset) or a config file (--config) is required".into(),
            ))
        }
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = opts.trials {
        cfg.trials = trials;
    }
    if let Some(max_steps) = opts.max_steps {
        cfg.max_steps = max_steps;
    }
    if let Some(f) = opts.noise_range {
        cfg.noise.range_noise_frac = f;
    }
    if let Some(f) = opts.noise_motion {
        cfg.noise.motion_noise_frac = f;
    }
    if let Some(on) = opts.modifications {
        cfg.modifications = on;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Execute a run (single trial or Monte Carlo batch) and write the output
/// files into the target directory.
pub fn cmd_run(opts: &RunOptions) -> Result<(), CliError> {
    let cfg = resolve_config(opts)?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let started = Instant::now();
    let mut outputs: Vec<String> = Vec::new();

    if cfg.trials == 1 {
        let run = run_trial(&cfg)?;
        write_trace(&opts.out_dir.join(TRACE_FILE), &run.records)?;
        outputs.push(TRACE_FILE.into());
        write_events(&opts.out_dir.join(EVENTS_FILE), run.events())?;
        outputs.push(EVENTS_FILE.into());
        write_json(
            &opts.out_dir.join(SUMMARY_FILE),
            &SummaryDoc {
                config: cfg.clone(),
                trials: vec![run.summary.clone()],
                aggregate: None,
            },
        )?;
        outputs.push(SUMMARY_FILE.into());
        write_json(
            &opts.out_dir.join(SLICES_FILE),
            &SlicesDoc {
                report: run.slice_report.clone(),
                growth: run.growth_report.clone(),
            },
        )?;
        outputs.push(SLICES_FILE.into());
        println!(
            "run: {} steps, {} updates, final error {:.6}",
            run.summary.steps, run.summary.total_updates, run.summary.final_error
        );
    } else {
        let report = run_monte_carlo(&cfg, cfg.trials)?;
        write_json(
            &opts.out_dir.join(SUMMARY_FILE),
            &SummaryDoc {
                config: cfg.clone(),
                trials: report.outcomes.iter().map(|o| o.summary.clone()).collect(),
                aggregate: Some(report.aggregate.clone()),
            },
        )?;
        outputs.push(SUMMARY_FILE.into());
        println!(
            "batch: {} trials, median final error {:.6}, tail median {:.6}",
            report.aggregate.trials,
            report.aggregate.final_error_median,
            report.aggregate.tail_median_error
        );
    }

    outputs.push(MANIFEST_FILE.into());
    write_json(
        &opts.out_dir.join(MANIFEST_FILE),
        &RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            outputs,
            wall_clock_ms: started.elapsed().as_millis() as u64,
        },
    )?;

    if opts.verify {
        if cfg.trials == 1 {
            cmd_verify(std::slice::from_ref(&opts.out_dir))?;
        } else {
            println!("verify: skipped (batch runs emit no trace)");
        }
    }
    Ok(())
}

struct CheckLog {
    label: String,
    failed: usize,
}

impl CheckLog {
    fn new(label: &str) -> Self {
        CheckLog {
            label: label.to_string(),
            failed: 0,
        }
    }

    fn result(&mut self, name: &str, ok: bool, detail: &str) {
        if ok {
            println!("[PASS] {} {name}: {detail}", self.label);
        } else {
            self.failed += 1;
            println!("[FAIL] {} {name}: {detail}", self.label);
        }
    }

    fn note(&self, name: &str, detail: &str) {
        println!("[NOTE] {} {name}: {detail}", self.label);
    }
}

/// Verify the certificates of finished runs: trace consistency, the error
/// recursion on noiseless runs, and the slice decomposition. Exits nonzero
/// if any applicable check fails.
pub fn cmd_verify(run_dirs: &[PathBuf]) -> Result<(), CliError> {
    let mut failed = 0;
    for dir in run_dirs {
        failed += verify_run_dir(dir)?;
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("{failed} check(s) failed")))
    }
}

fn verify_run_dir(dir: &Path) -> Result<usize, CliError> {
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let cfg = &manifest.config;
    let trace = read_trace(&dir.join(TRACE_FILE))?;
    let events = {
        let mut events = read_events(&dir.join(EVENTS_FILE))?;
        events.sort_by_key(|e| (e.k, e.agent));
        events
    };
    let mut log = CheckLog::new(&format!("{}:", dir.display()));

    check_trace_consistency(&mut log, cfg, &trace);
    check_error_dynamics(&mut log, cfg, &trace, &events);
    check_chain(&mut log, cfg, &trace, &events, dir)?;

    Ok(log.failed)
}

fn check_trace_consistency(log: &mut CheckLog, cfg: &SimConfig, trace: &TraceData) {
    if trace.n_agents() != cfg.n_agents {
        log.result(
            "trace-consistency",
            false,
            &format!(
                "trace has {} agents, config says {}",
                trace.n_agents(),
                cfg.n_agents
            ),
        );
        return;
    }
    let mut worst = 0.0f64;
    for step in &trace.steps {
        let estimates: Vec<Vec2> = step.agents.iter().map(|a| a.estimate).collect();
        let truths: Vec<Vec2> = step.agents.iter().map(|a| a.true_position).collect();
        let recomputed = error_norm(&estimates, &truths, &cfg.region);
        for err in &step.errors {
            worst = worst.max((err - recomputed).abs() / recomputed.max(1.0));
        }
    }
    log.result(
        "trace-consistency",
        worst <= RECOMPUTE_TOL,
        &format!("stored vs recomputed error deviates by {worst:.3e}"),
    );
}

fn check_error_dynamics(
    log: &mut CheckLog,
    cfg: &SimConfig,
    trace: &TraceData,
    events: &[UpdateEvent],
) {
    if !cfg.noise.is_noiseless() {
        log.note("error-dynamics", "skipped: run is noisy");
        return;
    }
    let dev = verify_error_dynamics(
        cfg.n_agents,
        &trace.truth_table(),
        &trace.estimate_table(),
        events,
    );
    log.result(
        "error-dynamics",
        dev <= DYNAMICS_TOL,
        &format!("max recursion deviation {dev:.3e} (tolerance {DYNAMICS_TOL:.0e})"),
    );
}

fn check_chain(
    log: &mut CheckLog,
    cfg: &SimConfig,
    trace: &TraceData,
    events: &[UpdateEvent],
    dir: &Path,
) -> Result<(), CliError> {
    if cfg.n_agents > MAX_ANALYSIS_DIM {
        log.note("chain", "skipped: dimension beyond the analysis limit");
        return Ok(());
    }
    if !cfg.modifications && !cfg.noise.is_noiseless() {
        log.note(
            "chain",
            "skipped: baseline weights under noise violate the chain assumptions",
        );
        return Ok(());
    }

    let anchors = vec![Vec2::ZERO; cfg.n_anchors];
    let mut decomposer = SliceDecomposer::new(cfg.n_agents);
    let mut idx = 0;
    let steps = trace.steps.len().saturating_sub(1) as u64;
    for k in 0..steps {
        let mut any = false;
        while idx < events.len() && events[idx].k == k {
            let m = capture_step(
                k,
                Some(&events[idx]),
                cfg.n_agents,
                cfg.n_anchors,
                &anchors,
                &cfg.weights,
                cfg.modifications,
            )
            .map_err(|e| CliError::Runtime(format!("event at k = {k}: {e}")))?;
            decomposer.push(&m);
            any = true;
            idx += 1;
        }
        if !any {
            let m = capture_step(
                k,
                None,
                cfg.n_agents,
                cfg.n_anchors,
                &anchors,
                &cfg.weights,
                cfg.modifications,
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            decomposer.push(&m);
        }
    }

    let report = decomposer.report();
    let norms_ok = report.slices.iter().all(|s| s.inf_norm < 1.0);
    log.result(
        "slice-norms",
        norms_ok,
        &format!(
            "{} completed slices, all below unit norm",
            report.slices.len()
        ),
    );

    if cfg.n_anchors == 0 {
        let dev = (report.product_norm - 1.0).abs();
        log.result(
            "product-norm",
            dev <= ROW_SUM_TOL,
            &format!(
                "product norm = 1 ({dev:.3e} off), no convergence certificate without anchors"
            ),
        );
    } else {
        log.note(
            "product-norm",
            &format!("running product norm {:.3e}", report.product_norm),
        );
    }

    // Cross-check against the stored decomposition, when the run captured
    // one.
    let stored: SlicesDoc = read_json(&dir.join(SLICES_FILE)).unwrap_or(SlicesDoc {
        report: None,
        growth: None,
    });
    if let Some(stored) = stored.report {
        let boundaries_ok = stored.slices.len() == report.slices.len()
            && stored.slices.iter().zip(&report.slices).all(|(a, b)| {
                a.start_k == b.start_k
                    && a.end_k == b.end_k
                    && a.len == b.len
                    && (a.inf_norm - b.inf_norm).abs() <= RECOMPUTE_TOL
            });
        let product_ok = (stored.product_norm - report.product_norm).abs() <= RECOMPUTE_TOL;
        log.result(
            "slice-consistency",
            boundaries_ok && product_ok,
            "stored decomposition matches the rebuilt chain",
        );
    } else {
        log.note("slice-consistency", "no stored decomposition to compare");
    }

    // Growth bound: reported, not gated (the existence-of-J judgment is a
    // summary statistic).
    let params = GrowthBoundParams::from_weights(&cfg.weights, 0.5, 0.1);
    match check_growth_bound(&report, &params) {
        Ok(growth) => log.note(
            "growth-bound",
            &format!(
                "{:.0}% of slices satisfy the bound; every prefix satisfied: {}",
                100.0 * growth.fraction_satisfied,
                growth.every_prefix_satisfied
            ),
        ),
        Err(e) => log.note("growth-bound", &format!("not evaluated: {e}")),
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct PlotdataOptions {
    pub traces: Vec<PathBuf>,
    pub slices: Option<PathBuf>,
    pub out: PathBuf,
}

/// Emit tidy long-format plot data (`k,series,value`) for error curves,
/// trajectories (single-trace runs) and slice lengths.
pub fn cmd_plotdata(opts: &PlotdataOptions) -> Result<(), CliError> {
    use std::io::Write;

    let mut curves: Vec<Vec<f64>> = Vec::new();
    let mut tables: Vec<TraceData> = Vec::new();
    for path in &opts.traces {
        // Unreadable input is a usage error for this command.
        let trace = read_trace(path).map_err(|e| CliError::Config(e.to_string()))?;
        curves.push(trace.steps.iter().map(|s| s.errors[0]).collect());
        tables.push(trace);
    }

    let file = std::fs::File::create(&opts.out)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "k,series,value")?;
    let fmt = |x: f64| format!("{x:.16e}");

    let multi = tables.len() > 1;
    for (t, trace) in tables.iter().enumerate() {
        let label = if multi {
            format!("trial{t}/error")
        } else {
            "error".to_string()
        };
        for step in &trace.steps {
            writeln!(w, "{},{label},{}", step.k, fmt(step.errors[0]))?;
        }
    }
    if let [trace] = tables.as_slice() {
        for step in &trace.steps {
            for (i, a) in step.agents.iter().enumerate() {
                writeln!(w, "{},agent{i}/x_true,{}", step.k, fmt(a.true_position.x))?;
                writeln!(w, "{},agent{i}/y_true,{}", step.k, fmt(a.true_position.y))?;
                writeln!(w, "{},agent{i}/x_est,{}", step.k, fmt(a.estimate.x))?;
                writeln!(w, "{},agent{i}/y_est,{}", step.k, fmt(a.estimate.y))?;
            }
        }
    }
    if multi {
        let longest = curves.iter().map(Vec::len).max().unwrap_or(0);
        let mut column = Vec::with_capacity(curves.len());
        for k in 0..longest {
            column.clear();
            column.extend(curves.iter().filter_map(|c| c.get(k).copied()));
            column.sort_by(f64::total_cmp);
            let median = if column.len() % 2 == 1 {
                column[column.len() / 2]
            } else {
                0.5 * (column[column.len() / 2 - 1] + column[column.len() / 2])
            };
            writeln!(w, "{k},median/error,{}", fmt(median))?;
        }
    }
    if let Some(path) = &opts.slices {
        let doc: SlicesDoc = read_json(path).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(report) = doc.report {
            for (i, slice) in report.slices.iter().enumerate() {
                writeln!(w, "{},slice/len,{}", i + 1, slice.len)?;
                writeln!(w, "{},slice/inf_norm,{}", i + 1, fmt(slice.inf_norm))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
