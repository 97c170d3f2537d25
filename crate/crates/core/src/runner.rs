//! Closed-loop simulation: one outer step freezes the graph, estimates the
//! Fiedler pair, plans goals, filters them through the CBF program, moves
//! robots and targets, samples failures and measurements, filters, and fuses.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, Mode, ScenarioConfig};
use crate::control::{compute_u_des, integrate, solve_cbf_qp, CbfProblem};
use crate::estimation::{finalize_estimate, kf_predict, kf_update, run_consensus, Belief, InfoPair};
use crate::graph::{exact_fiedler, CommGraph};
use crate::netsim::{local_views, LocalView, MessageLog, Traffic};
use crate::planning::{best_response_rounds, sensor_margin, solve_joint, BestResponse, GoalContext, PlanInput, PlannerConfig, Teammate};
use crate::rng::{keyed, substream, Stream};
use crate::spectral::{gradients_from_vector, read_out, run_pi, PiParams, PiState, SpectralEstimate};
use crate::world::{sample_failures, sample_measurement, RiskField, SensorCatalog, SensorStatus, TargetEnsemble};
use crate::{Mat2, Vec2};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("communication graph is disconnected at t = 0")]
    Disconnected,
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Disconnected => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotRecord {
    pub x: f64,
    pub y: f64,
    pub trace_p: f64,
    pub eta: f64,
    pub lambda2_est: f64,
    pub sensors: usize,
    pub gramian: f64,
    pub pi_fallback: bool,
    pub cbf_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub robots: Vec<RobotRecord>,
    pub lambda2_true: f64,
    pub connected: bool,
    pub min_distance: f64,
    pub rmse: Vec<f64>,
    pub total_risk: f64,
    pub failed_sensors: usize,
    pub messages: usize,
    pub bytes: usize,
    pub planner_rounds: usize,
    pub planner_converged: bool,
}

impl StepRecord {
    pub fn mean_trace_p(&self) -> f64 {
        mean(self.robots.iter().map(|r| r.trace_p))
    }

    pub fn mean_eta(&self) -> f64 {
        mean(self.robots.iter().map(|r| r.eta))
    }

    pub fn mean_gramian(&self) -> f64 {
        mean(self.robots.iter().map(|r| r.gramian))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn csv_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 0..n {
        for f in ["x", "y", "trace_p", "eta", "lambda2_est", "sensors", "gramian", "pi_fallback", "cbf_fallback"] {
            h.push(format!("{f}_{i}"));
        }
    }
    h.extend(["lambda2_true", "connected", "min_distance"].map(String::from));
    h.extend((0..m).map(|j| format!("rmse_{j}")));
    h.extend(["total_risk", "failed_sensors", "messages", "bytes", "planner_rounds", "planner_converged"].map(String::from));
    h
}

fn csv_row(r: &StepRecord) -> Vec<String> {
    let b = |v: bool| u8::from(v).to_string();
    let mut row = vec![r.t.to_string()];
    for rob in &r.robots {
        row.extend([
            rob.x.to_string(),
            rob.y.to_string(),
            rob.trace_p.to_string(),
            rob.eta.to_string(),
            rob.lambda2_est.to_string(),
            rob.sensors.to_string(),
            rob.gramian.to_string(),
            b(rob.pi_fallback),
            b(rob.cbf_fallback),
        ]);
    }
    row.extend([r.lambda2_true.to_string(), b(r.connected), r.min_distance.to_string()]);
    row.extend(r.rmse.iter().map(f64::to_string));
    row.extend([
        r.total_risk.to_string(),
        r.failed_sensors.to_string(),
        r.messages.to_string(),
        r.bytes.to_string(),
        r.planner_rounds.to_string(),
        b(r.planner_converged),
    ]);
    row
}

pub fn write_csv<W: Write>(out: W, n: usize, m: usize, records: &[StepRecord]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n, m))?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Values filled in by the implementation rather than the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImplementationDefaults {
    pub dt: f64,
    pub d_max: f64,
    pub d_min: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub failure_gain: f64,
    pub process_noise: f64,
    pub pi_rounds_per_step: usize,
    pub consensus_tol: f64,
    pub consensus_max_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub steps: usize,
    pub robots: usize,
    pub targets: usize,
    pub risk_aware: bool,
    pub initially_connected: bool,
    pub mean_trace_p: Option<f64>,
    pub final_trace_p: Option<f64>,
    pub mean_eta: Option<f64>,
    pub final_eta: Option<f64>,
    pub mean_gramian: Option<f64>,
    pub mean_total_risk: Option<f64>,
    pub failed_sensors: usize,
    pub min_distance: Option<f64>,
    pub connected_fraction: Option<f64>,
    pub lambda2_above_epsilon_fraction: Option<f64>,
    pub pi_fallbacks: usize,
    pub cbf_fallbacks: usize,
    pub planner_unconverged_steps: usize,
    pub messages: usize,
    pub bytes: usize,
    pub implementation_defaults: ImplementationDefaults,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub log_messages: bool,
    /// Fixes every robot's sensor margin (used by the sweep).
    pub eta_override: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub summary: Summary,
    pub log: Option<MessageLog>,
}

impl RunOutput {
    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        std::fs::create_dir_all(dir)?;
        let n = self.summary.robots;
        let m = self.summary.targets;
        write_csv(BufWriter::new(File::create(dir.join("steps.csv"))?), n, m, &self.records)?;
        let mut s = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut s, &self.summary)?;
        s.write_all(b"\n")?;
        if let Some(log) = &self.log {
            log.write_jsonl(BufWriter::new(File::create(dir.join("messages.jsonl"))?))?;
        }
        Ok(())
    }
}

/// Mutable state of one run between outer steps.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub mode: Mode,
    pub ensemble: TargetEnsemble,
    pub field: RiskField,
    pub catalog: SensorCatalog,
    pub planner: PlannerConfig,
    pub positions: Vec<Vec2>,
    pub graph: CommGraph,
    pub status: SensorStatus,
    /// One belief per robot; in centralized mode every entry is the fused one.
    pub beliefs: Vec<Belief>,
    pub pi: Vec<PiState>,
    pub t: usize,
    pub log: Option<MessageLog>,
    round_offset: usize,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Self, RunError> {
        cfg.validate()?;
        let n = cfg.robot_count();
        let m = cfg.target_count();
        let ensemble = cfg.ensemble()?;
        let field = cfg.risk_field()?;
        let catalog = cfg.catalog()?;
        let mut planner = cfg.planner_config()?;
        planner.eta_override = opts.eta_override;
        let positions = cfg.initial_positions();
        let graph = CommGraph::build(&positions, cfg.comm.radius, cfg.sigma());
        if !graph.is_connected() {
            return Err(RunError::Disconnected);
        }
        let mut status = SensorStatus::all_working(n, catalog.len());
        if let Some(initial) = &cfg.robots.sensors {
            for (i, kinds) in initial.iter().enumerate() {
                for k in 0..catalog.len() {
                    status.working[i][k] = kinds.contains(&k);
                }
            }
        }
        // shared prior: truth perturbed by a draw from N(0, σ₀² I)
        let var = cfg.estimation.initial_variance;
        let mut rng = substream(cfg.seed, Stream::Placement);
        let z0 = ensemble.z.map(|v| v + var.sqrt() * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
        let prior = Belief::new(z0, nalgebra::DMatrix::identity(2 * m, 2 * m) * var);
        let pi = (0..n).map(|i| PiState::seeded(cfg.seed, i)).collect();
        Ok(Self {
            mode: cfg.mode,
            ensemble,
            field,
            catalog,
            planner,
            positions,
            graph,
            status,
            beliefs: vec![prior; n],
            pi,
            t: 0,
            log: opts.log_messages.then(MessageLog::default),
            round_offset: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Stamps log entries appended since `start` with the step and a run-wide
    /// round counter.
    fn stamp_log(&mut self, start: usize, rounds: usize) {
        let (t, offset) = (self.t, self.round_offset);
        if let Some(log) = &mut self.log {
            for e in &mut log.entries[start..] {
                e.step = t;
                e.round += offset;
            }
        }
        self.round_offset += rounds;
    }

    fn log_len(&self) -> usize {
        self.log.as_ref().map_or(0, |l| l.entries.len())
    }

    fn pi_params(&self, graph: &CommGraph) -> PiParams {
        let s = &self.cfg.spectral;
        let mut p = PiParams::for_graph(graph);
        p.k1 = s.k1;
        p.k2 = s.k2;
        p.k3 = s.k3;
        p.power_rounds = s.power_rounds;
        p.settle_rounds = s.settle_rounds;
        p.nu_floor = s.nu_floor;
        p
    }

    fn spectral(&mut self, views: &[LocalView], traffic: &mut Traffic) -> Vec<SpectralEstimate> {
        let graph = self.graph.clone();
        if self.mode == Mode::Centralized {
            let f = exact_fiedler(&graph.laplacian);
            let grads = gradients_from_vector(&graph, &f.vector);
            return grads
                .into_iter()
                .enumerate()
                .map(|(i, g)| SpectralEstimate { lambda2: f.lambda2, nu_unit: f.vector[i], gradient: g, fallback: false })
                .collect();
        }
        let params = self.pi_params(&graph);
        let rounds = params.whole_blocks(self.cfg.spectral.rounds.max(1));
        let start = self.log_len();
        let out = run_pi(views, &params, std::mem::take(&mut self.pi), rounds, self.log.as_mut());
        self.stamp_log(start, out.rounds);
        *traffic += out.traffic;
        self.pi = out.states;
        let start = self.log_len();
        let (est, t) = read_out(views, &self.pi, &graph.positions, &params, graph.radius, graph.sigma, self.log.as_mut());
        self.stamp_log(start, 2);
        *traffic += t;
        est
    }

    fn plan(&mut self, views: &[LocalView], traffic: &mut Traffic) -> (Vec<Vec2>, usize, bool) {
        let a = &self.ensemble.a;
        let q = &self.ensemble.q;
        let m = self.ensemble.count();
        let inputs: Vec<PlanInput> = (0..self.len())
            .map(|i| {
                let pred = kf_predict(&self.beliefs[i], a, q);
                PlanInput {
                    current: self.positions[i],
                    sensors: self.status.functioning(i),
                    prior: (0..m).map(|j| pred.block(j)).collect(),
                    targets: (0..m).map(|j| pred.target(j)).collect(),
                }
            })
            .collect();
        if self.mode == Mode::Centralized {
            let etas: Vec<f64> = (0..self.len()).map(|i| self.margin(&self.graph, i)).collect();
            // same key as robot 0's first best-response round, so a lone
            // robot plans identically in both modes
            let mut rng = keyed(self.cfg.seed, Stream::Solver, &[self.t as u64, 0, 0]);
            let goals = solve_joint(&inputs, &self.graph.neighbors, &etas, &self.planner, &self.catalog, &self.field, &mut rng);
            return (goals, 1, true);
        }
        let proto = BestResponse { cfg: &self.planner, catalog: &self.catalog, risk: &self.field, seed: self.cfg.seed, step: self.t };
        let mut log = self.log.take();
        let start = log.as_ref().map_or(0, |l| l.entries.len());
        let out = best_response_rounds(views, &proto, inputs, log.as_mut());
        self.log = log;
        self.stamp_log(start, out.rounds);
        *traffic += out.traffic;
        if !out.converged {
            log::warn!("best response did not settle within {} rounds at t = {}", self.planner.max_rounds, self.t);
        }
        (out.states.iter().map(|s| s.intent).collect(), out.rounds, out.converged)
    }

    /// η for robot `i` over its closed neighborhood in `graph`.
    fn margin(&self, graph: &CommGraph, i: usize) -> f64 {
        self.planner.eta_override.unwrap_or_else(|| {
            sensor_margin(std::iter::once(self.status.count(i)).chain(graph.neighbors[i].iter().map(|&l| self.status.count(l))))
        })
    }

    fn fuse(&mut self, posteriors: Vec<Belief>, views: &[LocalView], traffic: &mut Traffic) {
        let init: Vec<InfoPair> = posteriors.iter().map(Belief::to_info).collect();
        let start = self.log_len();
        let out = run_consensus(views, init.clone(), self.cfg.estimation.consensus_tol, self.log.as_mut());
        self.stamp_log(start, out.rounds);
        *traffic += out.traffic;
        if !out.converged {
            log::warn!("consensus hit its round cap at t = {}", self.t);
        }
        self.beliefs = posteriors
            .into_iter()
            .zip(init.iter().zip(&out.states))
            // nothing arrived that changed the pair: keep the filter's own numbers
            .map(|(post, (before, after))| if before == after { post } else { finalize_estimate(after) })
            .collect();
    }

    pub fn step(&mut self) -> StepRecord {
        self.t += 1;
        let n = self.len();
        let m = self.ensemble.count();
        let dt = self.cfg.dt;
        let ctl = self.cfg.control.clone();
        let mut traffic = Traffic::default();

        // (1) freeze the graph
        let views = local_views(&self.graph);
        // (2) Fiedler estimate
        let spectral = self.spectral(&views, &mut traffic);
        // (3) goals
        let (goals, planner_rounds, planner_converged) = self.plan(&views, &mut traffic);
        // (4) safe velocities and motion
        let mut cbf_fallback = vec![false; n];
        let next: Vec<Vec2> = (0..n)
            .map(|i| {
                let x = self.positions[i];
                let problem = CbfProblem {
                    u_des: compute_u_des(&x, &goals[i], dt),
                    dt,
                    d_max: ctl.d_max,
                    d_min: ctl.d_min,
                    epsilon: ctl.epsilon,
                    lambda2: spectral[i].lambda2,
                    lambda2_grad: spectral[i].gradient,
                    position: x,
                    neighbors: self.graph.neighbors[i].iter().map(|&l| self.positions[l]).collect(),
                    keep_connected: n > 1,
                };
                let sol = solve_cbf_qp(&problem);
                cbf_fallback[i] = sol.fallback;
                integrate(&x, &sol.velocity(), dt)
            })
            .collect();
        self.positions = next;
        // (5) new graph; targets move over the same interval
        self.graph = CommGraph::build(&self.positions, self.cfg.comm.radius, self.cfg.sigma());
        let mut trng = keyed(self.cfg.seed, Stream::Targets, &[self.t as u64]);
        self.ensemble = self.ensemble.step(self.t - 1, &mut trng);
        let truth = self.ensemble.positions();
        // (6) failures at the true target positions
        let mut frng = keyed(self.cfg.seed, Stream::Failures, &[self.t as u64]);
        self.status = sample_failures(
            &mut frng,
            &self.status,
            &self.positions,
            &self.field,
            &truth,
            self.cfg.risk.failure_gain,
            self.t,
            &self.cfg.scripted_failures,
        );
        // (7) measurements
        let measurements: Vec<_> = (0..n)
            .map(|i| {
                let mut r = keyed(self.cfg.seed, Stream::Measurements, &[self.t as u64, i as u64]);
                sample_measurement(&mut r, i, &self.positions[i], &self.status.functioning(i), &self.ensemble, &self.catalog)
            })
            .collect();
        // (8)-(9) filter and fuse
        let (a, q) = (self.ensemble.a.clone(), self.ensemble.q.clone());
        let new_views = local_views(&self.graph);
        match self.mode {
            Mode::Centralized => {
                let mut fused = kf_predict(&self.beliefs[0], &a, &q);
                for meas in &measurements {
                    fused = kf_update(&fused, meas);
                }
                self.beliefs = vec![fused; n];
            }
            Mode::Decentralized => {
                let posteriors: Vec<Belief> =
                    (0..n).map(|i| kf_update(&kf_predict(&self.beliefs[i], &a, &q), &measurements[i])).collect();
                self.fuse(posteriors, &new_views, &mut traffic);
            }
        }
        // (10) record
        let true_l2 = exact_fiedler(&self.graph.laplacian).lambda2;
        let robots = (0..n)
            .map(|i| {
                let b = &self.beliefs[i];
                let targets: Vec<Vec2> = (0..m).map(|j| b.target(j)).collect();
                let ctx = GoalContext {
                    current: self.positions[i],
                    sensors: self.status.functioning(i),
                    teammates: self.graph.neighbors[i]
                        .iter()
                        .map(|&l| Teammate { x: self.positions[l], sensors: self.status.functioning(l) })
                        .collect(),
                    prior: vec![Mat2::identity(); m],
                    targets,
                    eta: 0.0,
                    catalog: &self.catalog,
                    risk: &self.field,
                };
                RobotRecord {
                    x: self.positions[i].x,
                    y: self.positions[i].y,
                    trace_p: b.trace(),
                    eta: self.margin(&self.graph, i),
                    lambda2_est: spectral[i].lambda2,
                    sensors: self.status.count(i),
                    gramian: ctx.gramian_trace_inv(&self.positions[i], self.planner.trace_cap),
                    pi_fallback: spectral[i].fallback,
                    cbf_fallback: cbf_fallback[i],
                }
            })
            .collect();
        let rmse = (0..m)
            .map(|j| {
                let z = truth[j];
                (self.beliefs.iter().map(|b| (b.target(j) - z).norm_squared()).sum::<f64>() / n as f64).sqrt()
            })
            .collect();
        StepRecord {
            t: self.t,
            robots,
            lambda2_true: true_l2,
            connected: self.graph.is_connected(),
            min_distance: self.graph.min_pairwise_distance(),
            rmse,
            total_risk: self.positions.iter().map(|x| self.field.total(x, &truth)).sum(),
            failed_sensors: self.status.failed_total(),
            messages: traffic.messages,
            bytes: traffic.bytes,
            planner_rounds,
            planner_converged,
        }
    }
}

fn summarize(cfg: &ScenarioConfig, sim: &Simulation, records: &[StepRecord], initially_connected: bool) -> Summary {
    let opt = |v: f64| (!records.is_empty() && v.is_finite()).then_some(v);
    let frac = |f: &dyn Fn(&StepRecord) -> bool| opt(records.iter().filter(|r| f(r)).count() as f64 / records.len() as f64);
    let last = records.last();
    let eps = cfg.control.epsilon;
    Summary {
        name: cfg.name.clone(),
        mode: sim.mode,
        seed: cfg.seed,
        steps: records.len(),
        robots: sim.len(),
        targets: sim.ensemble.count(),
        risk_aware: sim.planner.risk_aware,
        initially_connected,
        mean_trace_p: opt(mean(records.iter().map(StepRecord::mean_trace_p))),
        final_trace_p: last.map(StepRecord::mean_trace_p),
        mean_eta: opt(mean(records.iter().map(StepRecord::mean_eta))),
        final_eta: last.map(StepRecord::mean_eta),
        mean_gramian: opt(mean(records.iter().map(StepRecord::mean_gramian))),
        mean_total_risk: opt(mean(records.iter().map(|r| r.total_risk))),
        failed_sensors: sim.status.failed_total(),
        min_distance: records.iter().map(|r| r.min_distance).reduce(f64::min),
        connected_fraction: frac(&|r| r.connected),
        lambda2_above_epsilon_fraction: frac(&|r| r.lambda2_true >= eps),
        pi_fallbacks: records.iter().flat_map(|r| &r.robots).filter(|r| r.pi_fallback).count(),
        cbf_fallbacks: records.iter().flat_map(|r| &r.robots).filter(|r| r.cbf_fallback).count(),
        planner_unconverged_steps: records.iter().filter(|r| !r.planner_converged).count(),
        messages: records.iter().map(|r| r.messages).sum(),
        bytes: records.iter().map(|r| r.bytes).sum(),
        implementation_defaults: ImplementationDefaults {
            dt: cfg.dt,
            d_max: cfg.control.d_max,
            d_min: cfg.control.d_min,
            epsilon: cfg.control.epsilon,
            sigma: cfg.sigma(),
            failure_gain: cfg.risk.failure_gain,
            process_noise: cfg.targets.process_noise,
            pi_rounds_per_step: sim.pi_params(&sim.graph).whole_blocks(cfg.spectral.rounds.max(1)),
            consensus_tol: cfg.estimation.consensus_tol,
            consensus_max_rounds: 50 * sim.len(),
        },
    }
}

pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, RunError> {
    let mut sim = Simulation::new(cfg, opts)?;
    let records: Vec<StepRecord> = (0..cfg.steps).map(|_| sim.step()).collect();
    let summary = summarize(cfg, &sim, &records, true);
    Ok(RunOutput { records, summary, log: sim.log.take() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub seed: u64,
    /// Means over the second half of the run.
    pub trace_p: f64,
    pub gramian: f64,
}

/// Runs the scenario once per (η, seed) with η fixed and failures disabled.
pub fn sweep(cfg: &ScenarioConfig, etas: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>, RunError> {
    let mut base = cfg.clone();
    base.risk.failure_gain = 0.0;
    base.scripted_failures.clear();
    let mut rows = Vec::new();
    for &eta in etas {
        if !(eta >= 0.0) {
            return Err(ConfigError::Invalid(format!("sweep eta must be non-negative, got {eta}")).into());
        }
        for &seed in seeds {
            let mut c = base.clone();
            c.seed = seed;
            let out = run(&c, &RunOptions { log_messages: false, eta_override: Some(eta) })?;
            let tail = &out.records[out.records.len() / 2..];
            rows.push(SweepRow {
                eta,
                seed,
                trace_p: mean(tail.iter().map(StepRecord::mean_trace_p)),
                gramian: mean(tail.iter().map(StepRecord::mean_gramian)),
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
