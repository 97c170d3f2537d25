//! Ideal goal positions: each robot trades predicted tracking accuracy
//! against risk-discounted observability, given its neighbors' intents.
//!
//! The slack variables of the goal program only appear in the cost and
//! bound the constraint violations from below, so at the optimum they equal
//! the violations. That leaves an unconstrained problem in the next position,
//! solved by projected gradient descent on the travel disk.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::netsim::{run_rounds, LocalView, MessageLog, Protocol, RoundOutcome, Wire};
use crate::rng::{keyed, Stream};
use crate::world::{RiskField, SensorCatalog};
use crate::{Mat2, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    pub q1: f64,
    pub q2: f64,
    /// Per-target bound on Tr(P_ij).
    pub rho1: Vec<f64>,
    pub rho2: f64,
    pub d_max: f64,
    pub risk_aware: bool,
    pub fd_step: f64,
    pub max_iters: usize,
    pub random_restarts: usize,
    pub trace_cap: f64,
    pub damping: f64,
    pub tol: f64,
    pub max_rounds: usize,
    /// Fixed sensor margin used instead of the sensor count (trade-off sweeps).
    pub eta_override: Option<f64>,
}

impl PlannerConfig {
    pub fn new(q1: f64, q2: f64, rho1: Vec<f64>, rho2: f64, d_max: f64) -> Self {
        Self {
            q1,
            q2,
            rho1,
            rho2,
            d_max,
            risk_aware: true,
            fd_step: 1e-4,
            max_iters: 200,
            random_restarts: 1,
            trace_cap: 1e6,
            damping: 0.5,
            tol: 1e-3,
            max_rounds: 10,
            eta_override: None,
        }
    }
}

/// η = max(0, S/2 − 1) where S counts working sensors in the closed
/// neighborhood and 2 is the per-target state dimension.
pub fn sensor_margin(sensor_counts: impl IntoIterator<Item = usize>) -> f64 {
    let s: usize = sensor_counts.into_iter().sum();
    (s as f64 / crate::world::DIM as f64 - 1.0).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Teammate {
    pub x: Vec2,
    pub sensors: Vec<usize>,
}

/// Everything robot i knows when it plans: its own state and belief plus
/// what neighbors broadcast.
#[derive(Debug, Clone)]
pub struct GoalContext<'a> {
    pub current: Vec2,
    pub sensors: Vec<usize>,
    pub teammates: Vec<Teammate>,
    /// Predicted (prior) covariance block per target.
    pub prior: Vec<Mat2>,
    /// Estimated target positions.
    pub targets: Vec<Vec2>,
    pub eta: f64,
    pub catalog: &'a SensorCatalog,
    pub risk: &'a RiskField,
}

fn capped_trace_inv(m: &Mat2, cap: f64) -> f64 {
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if m.determinant().abs() <= 1e-14 * scale * scale {
        return cap;
    }
    match m.try_inverse() {
        Some(inv) => inv.trace().clamp(0.0, cap),
        None => cap,
    }
}

impl GoalContext<'_> {
    fn members<'b>(&'b self, x: &'b Vec2) -> impl Iterator<Item = (&'b Vec2, &'b [usize])> {
        std::iter::once((x, self.sensors.as_slice()))
            .chain(self.teammates.iter().map(|t| (&t.x, t.sensors.as_slice())))
    }

    /// Tr(P_ij) after one predicted update with the candidate position.
    pub fn predicted_trace(&self, x: &Vec2, j: usize, cap: f64) -> f64 {
        let Some(prior_info) = self.prior[j].try_inverse() else {
            return cap;
        };
        let mut info = prior_info;
        for (xl, sensors) in self.members(x) {
            info += self.catalog.info_block(sensors, (xl - self.targets[j]).norm());
        }
        capped_trace_inv(&info, cap)
    }

    /// Tr(O⁻¹) of the safety-weighted information summed over the closed
    /// neighborhood, one block per target.
    pub fn gramian_trace_inv(&self, x: &Vec2, cap: f64) -> f64 {
        let mut total = 0.0;
        for j in 0..self.targets.len() {
            let mut o = Mat2::zeros();
            for (xl, sensors) in self.members(x) {
                let safe = self.risk.safety_product(xl, &self.targets);
                o += self.catalog.info_block(sensors, (xl - self.targets[j]).norm()) * safe;
            }
            total += capped_trace_inv(&o, cap);
        }
        total.min(cap)
    }
}

pub fn predicted_trace_p(ctx: &GoalContext, x: &Vec2, j: usize, cap: f64) -> f64 {
    ctx.predicted_trace(x, j, cap)
}

pub fn gramian_trace_inv(ctx: &GoalContext, x: &Vec2, cap: f64) -> f64 {
    ctx.gramian_trace_inv(x, cap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParts {
    pub tracking: f64,
    pub risk: f64,
    pub trace_sum: f64,
    pub gramian: f64,
}

impl CostParts {
    pub fn total(&self) -> f64 {
        self.tracking + self.risk
    }
}

pub fn goal_cost(ctx: &GoalContext, x: &Vec2, cfg: &PlannerConfig) -> CostParts {
    let mut tracking = 0.0;
    let mut trace_sum = 0.0;
    for j in 0..ctx.targets.len() {
        let tr = ctx.predicted_trace(x, j, cfg.trace_cap);
        trace_sum += tr;
        tracking += (tr - cfg.rho1[j]).max(0.0).powi(2);
    }
    tracking *= cfg.q1 * ctx.eta;
    let (risk, gramian) = if cfg.risk_aware {
        let g = ctx.gramian_trace_inv(x, cfg.trace_cap);
        (cfg.q2 / (1.0 + ctx.eta) * (g - cfg.rho2).max(0.0).powi(2), g)
    } else {
        (0.0, f64::NAN)
    };
    CostParts { tracking, risk, trace_sum, gramian }
}

fn project(x: Vec2, center: &Vec2, radius: f64) -> Vec2 {
    let d = x - center;
    let n = d.norm();
    if n > radius {
        center + d * (radius / n)
    } else {
        x
    }
}

/// Projected descent along the normalized central-difference gradient with
/// step halving. Works on a stacked vector of robot positions, each kept
/// inside its own disk.
fn descend(
    f: &dyn Fn(&[Vec2]) -> f64,
    start: Vec<Vec2>,
    centers: &[Vec2],
    radius: f64,
    h: f64,
    max_iters: usize,
) -> (Vec<Vec2>, f64) {
    let proj = |xs: &[Vec2]| -> Vec<Vec2> { xs.iter().zip(centers).map(|(x, c)| project(*x, c, radius)).collect() };
    let mut x = proj(&start);
    let mut fx = f(&x);
    let mut step = 0.5 * radius;
    let min_step = 1e-9 * radius.max(1.0);
    for _ in 0..max_iters {
        let mut grad = vec![Vec2::zeros(); x.len()];
        let mut probe = x.clone();
        for i in 0..x.len() {
            for k in 0..2 {
                let orig = probe[i][k];
                probe[i][k] = orig + h;
                let up = f(&probe);
                probe[i][k] = orig - h;
                let down = f(&probe);
                probe[i][k] = orig;
                grad[i][k] = (up - down) / (2.0 * h);
            }
        }
        let gnorm = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        if !(gnorm > 0.0) {
            break;
        }
        let mut moved = false;
        while step >= min_step {
            let cand: Vec<Vec2> = x.iter().zip(&grad).map(|(xi, gi)| xi - gi * (step / gnorm)).collect();
            let cand = proj(&cand);
            let fc = f(&cand);
            if fc < fx {
                x = cand;
                fx = fc;
                step = (2.0 * step).min(radius);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (x, fx)
}

fn random_in_disk(rng: &mut ChaCha8Rng, center: &Vec2, radius: f64) -> Vec2 {
    let r = radius * rng.random::<f64>().sqrt();
    let th = std::f64::consts::TAU * rng.random::<f64>();
    center + Vec2::new(r * th.cos(), r * th.sin())
}

fn toward_nearest(current: &Vec2, targets: &[Vec2], radius: f64) -> Vec2 {
    let nearest = targets.iter().min_by(|a, b| (*a - current).norm().total_cmp(&(*b - current).norm()));
    match nearest {
        Some(z) => project(*z, current, radius),
        None => *current,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalSolution {
    pub x: Vec2,
    pub cost: f64,
    /// False when no restart beat staying put.
    pub improved: bool,
}

/// Objective actually minimized: the reduced goal cost, or, for the
/// risk-agnostic planner when that cost is flat at zero, Σ_j Tr(P_ij).
fn objective<'a>(ctx: &'a GoalContext<'a>, cfg: &'a PlannerConfig) -> impl Fn(&Vec2) -> f64 + 'a {
    let flat = !cfg.risk_aware && goal_cost(ctx, &ctx.current, cfg).total() == 0.0;
    move |x: &Vec2| {
        let c = goal_cost(ctx, x, cfg);
        if flat {
            c.trace_sum
        } else {
            c.total()
        }
    }
}

pub fn solve_goal(ctx: &GoalContext, cfg: &PlannerConfig, rng: &mut ChaCha8Rng) -> GoalSolution {
    solve_goal_from(ctx, cfg, rng, None)
}

/// As [`solve_goal`], with an extra start (e.g. the previous intent) tried
/// before the others.
pub fn solve_goal_from(ctx: &GoalContext, cfg: &PlannerConfig, rng: &mut ChaCha8Rng, warm: Option<Vec2>) -> GoalSolution {
    let obj = objective(ctx, cfg);
    let f = |xs: &[Vec2]| obj(&xs[0]);
    let here = ctx.current;
    let stay = f(&[here]);
    if stay == 0.0 {
        return GoalSolution { x: here, cost: 0.0, improved: false };
    }
    let mut starts: Vec<Vec2> = warm.into_iter().collect();
    starts.extend([here, toward_nearest(&here, &ctx.targets, cfg.d_max)]);
    for _ in 0..cfg.random_restarts {
        starts.push(random_in_disk(rng, &here, cfg.d_max));
    }
    let mut best = (here, stay);
    for s in starts {
        let (x, fx) = descend(&f, vec![s], &[here], cfg.d_max, cfg.fd_step, cfg.max_iters);
        if fx < best.1 {
            best = (x[0], fx);
        }
    }
    if best.0 == here {
        log::debug!("goal solver found nothing better than staying put");
    }
    GoalSolution { x: best.0, cost: best.1, improved: best.0 != here }
}

/// Per-robot planning input that stays fixed during best-response rounds.
#[derive(Debug, Clone)]
pub struct PlanInput {
    pub current: Vec2,
    pub sensors: Vec<usize>,
    pub prior: Vec<Mat2>,
    pub targets: Vec<Vec2>,
}

#[derive(Debug, Clone)]
pub struct Intent {
    pub x: Vec2,
    pub sensors: Vec<usize>,
}

impl Wire for Intent {
    fn kind(&self) -> &'static str {
        "intent"
    }
    fn size_bytes(&self) -> usize {
        16 + self.sensors.len()
    }
}

#[derive(Debug, Clone)]
pub struct IntentState {
    pub input: PlanInput,
    pub intent: Vec2,
    pub eta: f64,
    pub round: usize,
}

pub struct BestResponse<'a> {
    pub cfg: &'a PlannerConfig,
    pub catalog: &'a SensorCatalog,
    pub risk: &'a RiskField,
    pub seed: u64,
    pub step: usize,
}

impl BestResponse<'_> {
    pub fn context<'b>(&'b self, view: &LocalView, input: &PlanInput, inbox: &[Intent]) -> GoalContext<'b> {
        let eta = self
            .cfg
            .eta_override
            .unwrap_or_else(|| sensor_margin(std::iter::once(input.sensors.len()).chain(inbox.iter().map(|m| m.sensors.len()))));
        debug_assert_eq!(view.neighbors.len(), inbox.len());
        GoalContext {
            current: input.current,
            sensors: input.sensors.clone(),
            teammates: inbox.iter().map(|m| Teammate { x: m.x, sensors: m.sensors.clone() }).collect(),
            prior: input.prior.clone(),
            targets: input.targets.clone(),
            eta,
            catalog: self.catalog,
            risk: self.risk,
        }
    }
}

impl Protocol for BestResponse<'_> {
    type State = IntentState;
    type Message = Intent;

    fn message(&self, _: &LocalView, s: &IntentState) -> Intent {
        Intent { x: s.intent, sensors: s.input.sensors.clone() }
    }

    fn update(&self, view: &LocalView, s: &IntentState, inbox: &[Intent]) -> IntentState {
        let ctx = self.context(view, &s.input, inbox);
        let mut rng = keyed(self.seed, Stream::Solver, &[self.step as u64, view.id as u64, s.round as u64]);
        let warm = (s.round > 0).then_some(s.intent);
        let sol = solve_goal_from(&ctx, self.cfg, &mut rng, warm);
        let intent = if s.round == 0 { sol.x } else { s.intent * self.cfg.damping + sol.x * (1.0 - self.cfg.damping) };
        log::trace!("robot {} round {}: best {:?} cost {:.6} intent {:?}", view.id, s.round, sol.x, sol.cost, intent);
        IntentState { intent, eta: ctx.eta, round: s.round + 1, input: s.input.clone() }
    }

    fn settled(&self, view: &LocalView, old: &IntentState, new: &IntentState) -> bool {
        view.neighbors.is_empty() || (new.intent - old.intent).norm() <= self.cfg.tol
    }
}

pub fn best_response_rounds(
    views: &[LocalView],
    protocol: &BestResponse,
    inputs: Vec<PlanInput>,
    log: Option<&mut MessageLog>,
) -> RoundOutcome<IntentState> {
    let init = inputs
        .into_iter()
        .map(|input| IntentState { intent: input.current, eta: 0.0, round: 0, input })
        .collect();
    run_rounds(views, protocol, init, protocol.cfg.max_rounds, log)
}

/// Centralized goal generation: one program over every robot's next
/// position, the sum of each robot's reduced cost with its neighbors' terms
/// evaluated at the joint candidate.
pub fn solve_joint(
    inputs: &[PlanInput],
    neighbors: &[Vec<usize>],
    etas: &[f64],
    cfg: &PlannerConfig,
    catalog: &SensorCatalog,
    risk: &RiskField,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec2> {
    let n = inputs.len();
    let contexts = |xs: &[Vec2]| -> Vec<GoalContext> {
        (0..n)
            .map(|i| GoalContext {
                current: inputs[i].current,
                sensors: inputs[i].sensors.clone(),
                teammates: neighbors[i].iter().map(|&l| Teammate { x: xs[l], sensors: inputs[l].sensors.clone() }).collect(),
                prior: inputs[i].prior.clone(),
                targets: inputs[i].targets.clone(),
                eta: etas[i],
                catalog,
                risk,
            })
            .collect()
    };
    let here: Vec<Vec2> = inputs.iter().map(|p| p.current).collect();
    let reduced = |xs: &[Vec2]| -> f64 {
        contexts(xs).iter().zip(xs).map(|(c, x)| goal_cost(c, x, cfg).total()).sum()
    };
    let flat = !cfg.risk_aware && reduced(&here) == 0.0;
    let f = |xs: &[Vec2]| -> f64 {
        if flat {
            contexts(xs).iter().zip(xs).map(|(c, x)| goal_cost(c, x, cfg).trace_sum).sum()
        } else {
            reduced(xs)
        }
    };
    let stay = f(&here);
    if stay == 0.0 {
        return here;
    }
    let mut starts = vec![
        here.clone(),
        inputs.iter().map(|p| toward_nearest(&p.current, &p.targets, cfg.d_max)).collect(),
    ];
    for _ in 0..cfg.random_restarts {
        starts.push(here.iter().map(|c| random_in_disk(rng, c, cfg.d_max)).collect());
    }
    let mut best = (here.clone(), stay);
    for s in starts {
        let (x, fx) = descend(&f, s, &here, cfg.d_max, cfg.fd_step, cfg.max_iters);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best.0
}
