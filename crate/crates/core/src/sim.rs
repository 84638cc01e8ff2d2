//! Simulation driver: the per-step loop, Monte Carlo batching, the error
//! metric and the experiment presets.
//!
//! A step runs each agent in id order against an immutable start-of-step
//! snapshot: scan for the nearest node in radius, exchange, search for a
//! virtual hull, apply the gated update, then draw and execute the waypoint
//! motion. Agents only ever write their own state, so the id order exists
//! purely to keep the RNG consumption deterministic.

use crate::agent::{AgentState, Contact, UpdateEvent, UpdateWeights};
use crate::geometry::fold_angle;
use crate::ltv::{
    capture_step, check_growth_bound, verify_error_dynamics, GrowthBoundParams, GrowthReport,
    SliceDecomposer, SliceReport, MAX_ANALYSIS_DIM,
};
use crate::motion::{
    apply_motion, draw_motion, noisy_motion, noisy_range, MotionParams, NoiseConfig, Pose, Region,
};
use crate::vec2::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_agents: usize,
    pub n_anchors: usize,
    pub region: Region,
    /// Communication radius r.
    pub comm_radius: f64,
    /// Maximum waypoint step length.
    pub max_step: f64,
    pub noise: NoiseConfig,
    pub weights: UpdateWeights,
    /// Relative-error gate on the inclusion test, applied when the noise
    /// modifications are on.
    pub inclusion_epsilon: f64,
    /// Noise modifications: the agent floor and the inclusion-error gate.
    pub modifications: bool,
    /// Anchors follow the same waypoint model (with known positions) when
    /// set; static otherwise.
    pub mobile_anchors: bool,
    pub seed: u64,
    pub max_steps: u64,
    pub trials: u32,
    /// Error level used for convergence reporting and optional early stop.
    pub convergence_tolerance: f64,
    /// Stop once the error stays below the tolerance for 50 consecutive
    /// steps.
    pub early_stop: bool,
    /// Track the matrix chain (slices, running product) during the run.
    pub capture_ltv: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.n_agents < 1 {
            return fail("n_agents must be at least 1".into());
        }
        if !(self.comm_radius.is_finite() && self.comm_radius > 0.0) {
            return fail(format!("comm_radius {} must be positive", self.comm_radius));
        }
        if !(self.max_step.is_finite() && self.max_step >= 0.0) {
            return fail(format!("max_step {} must be nonnegative", self.max_step));
        }
        if self.noise.motion_noise_frac < 0.0 || self.noise.range_noise_frac < 0.0 {
            return fail("noise fractions must be nonnegative".into());
        }
        if let Err(msg) = self.weights.validate() {
            return fail(msg);
        }
        if !(self.inclusion_epsilon.is_finite() && self.inclusion_epsilon >= 0.0) {
            return fail(format!(
                "inclusion_epsilon {} must be nonnegative",
                self.inclusion_epsilon
            ));
        }
        if self.trials < 1 {
            return fail("trials must be at least 1".into());
        }
        if !(self.convergence_tolerance.is_finite() && self.convergence_tolerance > 0.0) {
            return fail("convergence_tolerance must be positive".into());
        }
        if self.capture_ltv && self.n_agents > MAX_ANALYSIS_DIM {
            return fail(format!(
                "capture_ltv needs n_agents <= {MAX_ANALYSIS_DIM}, got {}",
                self.n_agents
            ));
        }
        if self.capture_ltv && !self.modifications && !self.noise.is_noiseless() {
            return fail(
                "chain analysis requires the convexity modification under noise: \
                 baseline raw weights need not satisfy the row-sum bounds"
                    .into(),
            );
        }
        Ok(())
    }

    /// Total node count (agents plus anchors).
    pub fn n_nodes(&self) -> usize {
        self.n_agents + self.n_anchors
    }
}

/// The common parameters every preset shares.
///
/// Noiseless presets keep the modifications enabled with a zero agent
/// floor: the error gate passes every noiseless candidate and the zero
/// floor never binds, so the dynamics match the baseline algorithm while
/// every update still carries the exact-unit-sum weight construction.
fn base_config() -> SimConfig {
    SimConfig {
        n_agents: 3,
        n_anchors: 1,
        region: Region::new(-5.0, 15.0, -5.0, 15.0).expect("static bounds"),
        comm_radius: 2.0,
        max_step: 5.0,
        noise: NoiseConfig::NOISELESS,
        weights: UpdateWeights {
            agent_min: 0.0,
            ..UpdateWeights::default()
        },
        inclusion_epsilon: 0.05,
        modifications: true,
        mobile_anchors: false,
        seed: 1,
        max_steps: 5000,
        trials: 1,
        convergence_tolerance: 0.01,
        early_stop: false,
        capture_ltv: true,
    }
}

pub const PRESET_NAMES: [&str; 6] = [
    "fig7_n3",
    "fig8_n10",
    "fig8_n100",
    "fig9_noanchor",
    "fig11_noise",
    "fig12_mc",
];

/// The shared baseline configuration that presets and config files start
/// from (equal to `fig7_n3`).
pub fn default_config() -> SimConfig {
    base_config()
}

/// Named experiment presets over the shared square-region setup.
pub fn preset(name: &str) -> Result<SimConfig, ConfigError> {
    let mut cfg = base_config();
    match name {
        "fig7_n3" => {}
        "fig8_n10" => {
            cfg.n_agents = 10;
            cfg.max_steps = 20_000;
        }
        "fig8_n100" => {
            cfg.n_agents = 100;
            cfg.max_steps = 20_000;
            cfg.capture_ltv = false;
        }
        "fig9_noanchor" => {
            cfg.n_agents = 4;
            cfg.n_anchors = 0;
            cfg.max_steps = 20_000;
        }
        "fig11_noise" | "fig12_mc" => {
            cfg.n_agents = 10;
            cfg.max_steps = 20_000;
            cfg.noise.range_noise_frac = 0.1;
            cfg.noise.motion_noise_frac = 0.01;
            cfg.weights.agent_min = 0.05;
            cfg.mobile_anchors = true;
            cfg.capture_ltv = false;
            if name == "fig12_mc" {
                cfg.trials = 20;
            }
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    }
    Ok(cfg)
}

/// Per-agent state captured in the trace at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub true_position: Vec2,
    pub estimate: Vec2,
}

/// State at step k plus the update events executed during step k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: u64,
    pub agents: Vec<AgentSnapshot>,
    pub events: Vec<UpdateEvent>,
    /// Normalized network error at step k.
    pub error: f64,
}

/// Normalized localization error: root-mean-square over agents of the
/// region-normalized offsets, halved. A single agent displaced by a full
/// region diagonal scores the maximum 1/sqrt(2).
pub fn error_norm(estimates: &[Vec2], truths: &[Vec2], region: &Region) -> f64 {
    assert_eq!(estimates.len(), truths.len(), "length mismatch");
    if estimates.is_empty() {
        return 0.0;
    }
    let dx = region.width();
    let dy = region.height();
    let mut sum = 0.0;
    for (e, t) in estimates.iter().zip(truths) {
        let nx = (e.x - t.x) / dx;
        let ny = (e.y - t.y) / dy;
        sum += nx * nx + ny * ny;
    }
    0.5 * (sum / estimates.len() as f64).sqrt()
}

/// Compact chain statistics for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtvTrialStats {
    pub completed_slices: u64,
    pub open_slice_len: Option<u64>,
    pub max_slice_len: Option<u64>,
    pub max_slice_norm: Option<f64>,
    pub product_norm_final: f64,
    pub product_norm_min: f64,
    pub product_norm_max: f64,
    pub growth_fraction_satisfied: Option<f64>,
    pub growth_every_prefix_satisfied: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    /// Steps actually executed.
    pub steps: u64,
    pub initial_error: f64,
    pub final_error: f64,
    /// Median, minimum and maximum error over the last 20% of the records.
    pub tail_median_error: f64,
    pub tail_min_error: f64,
    pub tail_max_error: f64,
    pub convergence_tolerance: f64,
    /// First step whose error dropped below the tolerance.
    pub first_step_below_tol: Option<u64>,
    pub total_updates: u64,
    pub update_counts: Vec<u64>,
    /// Maximum deviation of the realized error recursion (noiseless runs).
    pub max_dynamics_deviation: Option<f64>,
    pub ltv: Option<LtvTrialStats>,
}

/// Everything one trial produces.
#[derive(Debug, Clone)]
pub struct TrialRun {
    pub config: SimConfig,
    pub records: Vec<StepRecord>,
    pub summary: TrialSummary,
    pub slice_report: Option<SliceReport>,
    pub growth_report: Option<GrowthReport>,
}

impl TrialRun {
    pub fn events(&self) -> impl Iterator<Item = &UpdateEvent> {
        self.records.iter().flat_map(|r| r.events.iter())
    }

    pub fn error_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    pub fn truth_table(&self) -> Vec<Vec<Vec2>> {
        self.records
            .iter()
            .map(|r| r.agents.iter().map(|a| a.true_position).collect())
            .collect()
    }

    pub fn estimate_table(&self) -> Vec<Vec<Vec2>> {
        self.records
            .iter()
            .map(|r| r.agents.iter().map(|a| a.estimate).collect())
            .collect()
    }
}

struct AnchorNode {
    pose: Pose,
    rng: ChaCha8Rng,
}

/// The baseline (unmodified) inclusion test reads the area-additivity
/// identity as equality to within measurement uncertainty. Noise on a
/// length perturbs an area at roughly twice its relative level and several
/// lengths feed each candidate, hence the factor applied to the summed
/// noise fractions.
const BASELINE_INCLUSION_FACTOR: f64 = 4.0;

struct World {
    cfg: SimConfig,
    agents: Vec<AgentState>,
    anchors: Vec<AnchorNode>,
    params: MotionParams,
    /// Inclusion tolerance handed to the triangulation search: the
    /// configured error gate when the modifications are on, the baseline
    /// equality threshold otherwise.
    inclusion_tolerance: f64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl World {
    fn new(cfg: &SimConfig) -> World {
        let mut deploy = stream_rng(cfg.seed, 0);
        let mut agents = Vec::with_capacity(cfg.n_agents);
        for id in 0..cfg.n_agents {
            let pose = Pose {
                position: cfg.region.sample(&mut deploy),
                heading: deploy.random_range(0.0..std::f64::consts::TAU),
            };
            let estimate = cfg.region.sample(&mut deploy);
            agents.push(AgentState::new(
                id,
                pose,
                estimate,
                stream_rng(cfg.seed, 1 + id as u64),
            ));
        }
        let mut anchors = Vec::with_capacity(cfg.n_anchors);
        for m in 0..cfg.n_anchors {
            let pose = Pose {
                position: cfg.region.sample(&mut deploy),
                heading: deploy.random_range(0.0..std::f64::consts::TAU),
            };
            anchors.push(AnchorNode {
                pose,
                rng: stream_rng(cfg.seed, 1 + (cfg.n_agents + m) as u64),
            });
        }
        let inclusion_tolerance = if cfg.modifications {
            cfg.inclusion_epsilon
        } else {
            BASELINE_INCLUSION_FACTOR * (cfg.noise.range_noise_frac + cfg.noise.motion_noise_frac)
        };
        World {
            cfg: cfg.clone(),
            agents,
            anchors,
            params: MotionParams {
                max_step: cfg.max_step,
            },
            inclusion_tolerance,
        }
    }

    fn node_positions(&self) -> Vec<Vec2> {
        self.agents
            .iter()
            .map(|a| a.pose.position)
            .chain(self.anchors.iter().map(|a| a.pose.position))
            .collect()
    }

    fn snapshot_record(&self, k: u64) -> StepRecord {
        let agents: Vec<AgentSnapshot> = self
            .agents
            .iter()
            .map(|a| AgentSnapshot {
                true_position: a.pose.position,
                estimate: a.estimate,
            })
            .collect();
        let estimates: Vec<Vec2> = agents.iter().map(|a| a.estimate).collect();
        let truths: Vec<Vec2> = agents.iter().map(|a| a.true_position).collect();
        let error = error_norm(&estimates, &truths, &self.cfg.region);
        StepRecord {
            k,
            agents,
            events: Vec::new(),
            error,
        }
    }

    /// Nearest node within the communication radius; ties break toward the
    /// lowest node id (ids iterate ascending, so strict improvement wins).
    fn nearest_contact(&self, i: usize, positions: &[Vec2]) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (id, pos) in positions.iter().enumerate() {
            if id == i {
                continue;
            }
            let d = positions[i].distance(*pos);
            if d <= self.cfg.comm_radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        best.map(|(_, id)| id)
    }

    /// One global step: contacts, gated updates and motion for every agent,
    /// then anchor motion. Returns the update events in agent-id order.
    fn step(&mut self, k: u64) -> Vec<UpdateEvent> {
        let positions = self.node_positions();
        let estimates: Vec<Vec2> = self.agents.iter().map(|a| a.estimate).collect();
        let touched: Vec<bool> = self.agents.iter().map(|a| a.anchor_touched).collect();
        let n = self.cfg.n_agents;
        let mut events = Vec::new();

        for i in 0..n {
            let contact = self.nearest_contact(i, &positions);
            let agent = &mut self.agents[i];
            let mut scan = 0.0;
            if let Some(c) = contact {
                let offset = positions[c] - positions[i];
                let true_d = offset.norm();
                if true_d > 0.0 {
                    scan = fold_angle(offset.angle() - agent.pose.heading);
                }
                let measured = noisy_range(true_d, &self.cfg.noise, &mut agent.rng);
                let (received, is_anchor, anchor_touched) = if c < n {
                    (estimates[c], false, touched[c])
                } else {
                    (positions[c], true, true)
                };
                agent.on_contact(
                    Contact {
                        node_id: c,
                        measured_distance: measured,
                        estimate: received,
                        is_anchor,
                        anchor_touched,
                    },
                    scan,
                    k,
                );
            }

            if let Some(ts) = agent.find_triangulation(
                &self.cfg.weights,
                self.inclusion_tolerance,
                self.cfg.modifications,
            ) {
                events.push(agent.apply_update(&ts, &self.cfg.weights, k));
            }

            let mut cmd = draw_motion(&mut agent.rng, &self.params);
            cmd.scan_angle = scan;
            let (pose, accepted, delta) =
                apply_motion(&agent.pose, cmd, &self.cfg.region, &mut agent.rng);
            let measured_delta = noisy_motion(delta, &self.cfg.noise, &mut agent.rng);
            agent.on_move(&accepted, measured_delta);
            agent.pose = pose;
        }

        if self.cfg.mobile_anchors {
            for anchor in &mut self.anchors {
                let cmd = draw_motion(&mut anchor.rng, &self.params);
                let (pose, _, _) =
                    apply_motion(&anchor.pose, cmd, &self.cfg.region, &mut anchor.rng);
                anchor.pose = pose;
            }
        }
        events
    }
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Run a single trial to completion.
pub fn run_trial(cfg: &SimConfig) -> Result<TrialRun, ConfigError> {
    cfg.validate()?;
    let mut world = World::new(cfg);
    let mut records: Vec<StepRecord> = Vec::with_capacity(cfg.max_steps as usize + 1);
    let mut decomposer = cfg.capture_ltv.then(|| SliceDecomposer::new(cfg.n_agents));
    let mut consecutive_below = 0u32;
    let mut stopped_early = false;

    for k in 0..cfg.max_steps {
        let mut record = world.snapshot_record(k);
        if cfg.early_stop {
            if record.error < cfg.convergence_tolerance {
                consecutive_below += 1;
            } else {
                consecutive_below = 0;
            }
            if consecutive_below >= 50 {
                records.push(record);
                stopped_early = true;
                break;
            }
        }
        let anchor_positions: Vec<Vec2> = world.anchors.iter().map(|a| a.pose.position).collect();
        let events = world.step(k);
        if let Some(dec) = decomposer.as_mut() {
            if events.is_empty() {
                let m = capture_step(
                    k,
                    None,
                    cfg.n_agents,
                    cfg.n_anchors,
                    &anchor_positions,
                    &cfg.weights,
                    cfg.modifications,
                )
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                dec.push(&m);
            } else {
                for ev in &events {
                    let m = capture_step(
                        k,
                        Some(ev),
                        cfg.n_agents,
                        cfg.n_anchors,
                        &anchor_positions,
                        &cfg.weights,
                        cfg.modifications,
                    )
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    dec.push(&m);
                }
            }
        }
        record.events = events;
        records.push(record);
    }
    if !stopped_early {
        let final_k = records.len() as u64;
        records.push(world.snapshot_record(final_k));
    }

    Ok(finish_trial(cfg, &world, records, decomposer))
}

fn finish_trial(
    cfg: &SimConfig,
    world: &World,
    records: Vec<StepRecord>,
    decomposer: Option<SliceDecomposer>,
) -> TrialRun {
    let steps = records.len() as u64 - 1;
    let errors: Vec<f64> = records.iter().map(|r| r.error).collect();
    let tail_start = records.len() - (records.len() / 5).max(1);
    let mut tail: Vec<f64> = errors[tail_start..].to_vec();
    tail.sort_by(f64::total_cmp);
    let first_below = errors
        .iter()
        .position(|&e| e < cfg.convergence_tolerance)
        .map(|k| k as u64);

    let max_dynamics_deviation = cfg.noise.is_noiseless().then(|| {
        let truths: Vec<Vec<Vec2>> = records
            .iter()
            .map(|r| r.agents.iter().map(|a| a.true_position).collect())
            .collect();
        let estimates: Vec<Vec<Vec2>> = records
            .iter()
            .map(|r| r.agents.iter().map(|a| a.estimate).collect())
            .collect();
        let events: Vec<UpdateEvent> = records.iter().flat_map(|r| r.events.clone()).collect();
        verify_error_dynamics(cfg.n_agents, &truths, &estimates, &events)
    });

    let (slice_report, growth_report, ltv_stats) = match decomposer {
        Some(dec) => {
            let report = dec.report();
            let (norm_min, norm_max) = dec.product_norm_range();
            let growth = GrowthBoundParams::from_weights(&cfg.weights, 0.5, 0.1);
            let growth_report = check_growth_bound(&report, &growth).ok();
            let stats = LtvTrialStats {
                completed_slices: report.slices.len() as u64,
                open_slice_len: report.open_len,
                max_slice_len: report.slices.iter().map(|s| s.len).max(),
                max_slice_norm: report
                    .slices
                    .iter()
                    .map(|s| s.inf_norm)
                    .max_by(f64::total_cmp),
                product_norm_final: report.product_norm,
                product_norm_min: norm_min,
                product_norm_max: norm_max,
                growth_fraction_satisfied: growth_report.as_ref().map(|g| g.fraction_satisfied),
                growth_every_prefix_satisfied: growth_report
                    .as_ref()
                    .map(|g| g.every_prefix_satisfied),
            };
            (Some(report), growth_report, Some(stats))
        }
        None => (None, None, None),
    };

    let summary = TrialSummary {
        seed: cfg.seed,
        steps,
        initial_error: errors[0],
        final_error: *errors.last().expect("at least one record"),
        tail_median_error: median_of(&tail),
        tail_min_error: tail.first().copied().unwrap_or(f64::NAN),
        tail_max_error: tail.last().copied().unwrap_or(f64::NAN),
        convergence_tolerance: cfg.convergence_tolerance,
        first_step_below_tol: first_below,
        total_updates: world.agents.iter().map(|a| a.update_count).sum(),
        update_counts: world.agents.iter().map(|a| a.update_count).collect(),
        max_dynamics_deviation,
        ltv: ltv_stats,
    };

    TrialRun {
        config: cfg.clone(),
        records,
        summary,
        slice_report,
        growth_report,
    }
}

/// One Monte Carlo outcome: the summary plus the error curve (full traces
/// are kept only for single-trial runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub summary: TrialSummary,
    pub error_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub trials: u32,
    pub final_error_mean: f64,
    pub final_error_median: f64,
    pub final_error_q10: f64,
    pub final_error_q90: f64,
    /// Median across trials of the per-trial tail medians.
    pub tail_median_error: f64,
    pub converged_trials: u32,
    /// Index-wise median of the error curves.
    pub median_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: SimConfig,
    pub outcomes: Vec<TrialOutcome>,
    pub aggregate: AggregateStats,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Run `trials` independent trials with seeds `cfg.seed + t` and aggregate.
/// Trials run concurrently; aggregation is by trial index, so the report is
/// byte-stable for a fixed (config, seed).
pub fn run_monte_carlo(cfg: &SimConfig, trials: u32) -> Result<MonteCarloReport, ConfigError> {
    cfg.validate()?;
    if trials < 1 {
        return Err(ConfigError::Invalid("trials must be at least 1".into()));
    }
    let mut outcomes: Vec<Option<TrialOutcome>> = vec![None; trials as usize];
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(trials as usize)
        .max(1);

    let results: Result<Vec<Vec<(u32, TrialOutcome)>>, ConfigError> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let cfg = cfg.clone();
            handles.push(scope.spawn(move || {
                let mut chunk = Vec::new();
                let mut t = w as u32;
                while t < trials {
                    let mut trial_cfg = cfg.clone();
                    trial_cfg.seed = cfg.seed + t as u64;
                    let run = run_trial(&trial_cfg)?;
                    chunk.push((
                        t,
                        TrialOutcome {
                            error_curve: run.error_curve(),
                            summary: run.summary,
                        },
                    ));
                    t += workers as u32;
                }
                Ok(chunk)
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("trial worker panicked"))
            .collect()
    });
    for (t, outcome) in results?.into_iter().flatten() {
        outcomes[t as usize] = Some(outcome);
    }
    let outcomes: Vec<TrialOutcome> = outcomes
        .into_iter()
        .map(|o| o.expect("every trial index filled"))
        .collect();

    let mut finals: Vec<f64> = outcomes.iter().map(|o| o.summary.final_error).collect();
    finals.sort_by(f64::total_cmp);
    let mut tails: Vec<f64> = outcomes
        .iter()
        .map(|o| o.summary.tail_median_error)
        .collect();
    tails.sort_by(f64::total_cmp);
    let longest = outcomes
        .iter()
        .map(|o| o.error_curve.len())
        .max()
        .unwrap_or(0);
    let mut median_curve = Vec::with_capacity(longest);
    let mut column = Vec::with_capacity(outcomes.len());
    for k in 0..longest {
        column.clear();
        column.extend(
            outcomes
                .iter()
                .filter_map(|o| o.error_curve.get(k).copied()),
        );
        column.sort_by(f64::total_cmp);
        median_curve.push(median_of(&column));
    }

    let aggregate = AggregateStats {
        trials,
        final_error_mean: finals.iter().sum::<f64>() / finals.len() as f64,
        final_error_median: median_of(&finals),
        final_error_q10: quantile(&finals, 0.1),
        final_error_q90: quantile(&finals, 0.9),
        tail_median_error: median_of(&tails),
        converged_trials: outcomes
            .iter()
            .filter(|o| o.summary.first_step_below_tol.is_some())
            .count() as u32,
        median_curve,
    };

    Ok(MonteCarloReport {
        config: cfg.clone(),
        outcomes,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_resolve() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
        }
        assert!(matches!(preset("nope"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn preset_parameters_match_their_experiments() {
        let fig7 = preset("fig7_n3").unwrap();
        assert_eq!((fig7.n_agents, fig7.n_anchors), (3, 1));
        assert!(fig7.noise.is_noiseless());
        assert_eq!(fig7.weights.self_weight, 0.2);
        assert_eq!(fig7.weights.anchor_min, 0.1);
        assert_eq!(fig7.comm_radius, 2.0);

        let fig9 = preset("fig9_noanchor").unwrap();
        assert_eq!((fig9.n_agents, fig9.n_anchors), (4, 0));

        let fig11 = preset("fig11_noise").unwrap();
        assert_eq!((fig11.n_agents, fig11.n_anchors), (10, 1));
        assert_eq!(fig11.noise.range_noise_frac, 0.1);
        assert_eq!(fig11.noise.motion_noise_frac, 0.01);
        assert!(fig11.modifications);
    }

    #[test]
    fn error_norm_zero_and_max() {
        let region = Region::new(-5.0, 15.0, -5.0, 15.0).unwrap();
        let truths = vec![Vec2::new(1.0, 2.0)];
        assert_eq!(error_norm(&truths, &truths, &region), 0.0);
        // A single agent off by a full region extent in both coordinates.
        let est = vec![Vec2::new(1.0 + 20.0, 2.0 + 20.0)];
        let err = error_norm(&est, &truths, &region);
        assert!((err - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn error_norm_matches_direct_recomputation() {
        let region = Region::new(-5.0, 15.0, -5.0, 15.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.random_range(1..20usize);
            let truths: Vec<Vec2> = (0..n).map(|_| region.sample(&mut rng)).collect();
            let estimates: Vec<Vec2> = (0..n).map(|_| region.sample(&mut rng)).collect();
            let got = error_norm(&estimates, &truths, &region);
            // Independent accumulation order.
            let mut acc: f64 = 0.0;
            for i in (0..n).rev() {
                acc += ((estimates[i].x - truths[i].x) / 20.0).powi(2);
                acc += ((estimates[i].y - truths[i].y) / 20.0).powi(2);
            }
            let expected = 0.5 * (acc / n as f64).sqrt();
            assert!((got - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_steps_gives_single_record() {
        let mut cfg = preset("fig7_n3").unwrap();
        cfg.max_steps = 0;
        let run = run_trial(&cfg).unwrap();
        assert_eq!(run.records.len(), 1);
        assert_eq!(run.summary.steps, 0);
        assert_eq!(run.summary.initial_error, run.summary.final_error);
    }

    #[test]
    fn trials_are_deterministic() {
        let mut cfg = preset("fig7_n3").unwrap();
        cfg.max_steps = 300;
        let a = run_trial(&cfg).unwrap();
        let b = run_trial(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn monte_carlo_single_trial_matches_run_trial() {
        let mut cfg = preset("fig7_n3").unwrap();
        cfg.max_steps = 200;
        let single = run_trial(&cfg).unwrap();
        let mc = run_monte_carlo(&cfg, 1).unwrap();
        assert_eq!(mc.outcomes.len(), 1);
        assert_eq!(mc.outcomes[0].summary, single.summary);
        assert_eq!(mc.outcomes[0].error_curve, single.error_curve());
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let mut cfg = preset("fig7_n3").unwrap();
        cfg.max_steps = 150;
        let a = run_monte_carlo(&cfg, 4).unwrap();
        let b = run_monte_carlo(&cfg, 4).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.aggregate, b.aggregate);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = preset("fig7_n3").unwrap();
        cfg.comm_radius = 0.0;
        assert!(matches!(run_trial(&cfg), Err(ConfigError::Invalid(_))));
        let mut cfg = preset("fig7_n3").unwrap();
        cfg.n_agents = 0;
        assert!(cfg.validate().is_err());
    }
}
