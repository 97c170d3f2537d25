//! Decentralized power iteration for the Fiedler pair.
//!
//! Each robot holds one entry ν_i of the Fiedler estimate plus two dynamic
//! average-consensus trackers: y₁ follows Ave(ν) and y₂ follows Ave(ν²), with
//! w₁, w₂ remembering the last tracked input. Rounds are grouped in blocks:
//! `power_rounds` Laplacian power steps ν ← ν − k₂β(Lν)_i, then
//! `settle_rounds` in which ν is held so the trackers converge, and on the
//! last round of the block ν is deflated by y₁ and rescaled by the tracked
//! spread √(y₂ − y₁²). Holding ν while the trackers settle is what keeps the
//! deflation accurate; the all-ones direction is the dominant one for the
//! power step, so any error left in y₁ grows geometrically.

use nalgebra::DVector;
use rand::Rng;

use crate::graph::{adjacency_weight_grad, CommGraph};
use crate::netsim::{run_rounds, LocalView, MessageLog, Protocol, RoundOutcome, Traffic, Wire};
use crate::rng::{keyed, Stream};
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiParams {
    /// Deflation gain.
    pub k1: f64,
    /// Power-step gain.
    pub k2: f64,
    /// Normalization gain (1 rescales to unit mean square).
    pub k3: f64,
    pub beta: f64,
    pub power_rounds: usize,
    pub settle_rounds: usize,
    pub nu_floor: f64,
}

impl PiParams {
    /// Defaults for a graph snapshot, with β = 0.9 / (2 max_i D_ii).
    pub fn for_graph(graph: &CommGraph) -> Self {
        let dmax = graph.max_weighted_degree();
        Self {
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            beta: if dmax > 0.0 { 0.9 / (2.0 * dmax) } else { 0.0 },
            power_rounds: 10,
            settle_rounds: 10,
            nu_floor: 1e-6,
        }
    }

    pub fn block(&self) -> usize {
        self.power_rounds + self.settle_rounds
    }

    /// Smallest whole number of blocks covering `rounds`.
    pub fn whole_blocks(&self, rounds: usize) -> usize {
        rounds.div_ceil(self.block()) * self.block()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiState {
    pub nu: f64,
    pub y1: f64,
    pub w1: f64,
    pub y2: f64,
    pub w2: f64,
    pub round: usize,
}

impl PiState {
    /// Trackers start at the robot's own input, which makes their sums exact.
    pub fn from_value(nu: f64) -> Self {
        Self { nu, y1: nu, w1: nu, y2: nu * nu, w2: nu * nu, round: 0 }
    }

    /// Pseudo-random start drawn from the run seed, one stream per robot.
    pub fn seeded(seed: u64, robot: usize) -> Self {
        let mut rng = keyed(seed, Stream::PowerIteration, &[robot as u64]);
        Self::from_value(rng.random_range(-1.0..1.0))
    }
}

pub type PiMessage = PiState;

impl Wire for PiState {
    fn kind(&self) -> &'static str {
        "pi"
    }
    fn size_bytes(&self) -> usize {
        5 * 8
    }
}

pub struct PowerIteration {
    pub params: PiParams,
}

impl PowerIteration {
    pub fn round(&self, view: &LocalView, own: &PiState, inbox: &[PiState]) -> PiState {
        let p = &self.params;
        let phase = own.round % p.block();
        let mut nu = own.nu;
        if phase < p.power_rounds {
            let others: Vec<f64> = inbox.iter().map(|m| m.nu).collect();
            nu -= p.k2 * p.beta * view.laplacian_apply(own.nu, &others);
        }
        let (self_w, w) = view.metropolis();
        let mix = |own_y: f64, pick: fn(&PiState) -> f64| {
            self_w * own_y + w.iter().zip(inbox).map(|(w, m)| w * pick(m)).sum::<f64>()
        };
        let y1 = mix(own.y1, |m| m.y1) + (nu - own.w1);
        let y2 = mix(own.y2, |m| m.y2) + (nu * nu - own.w2);
        let mut next = PiState { nu, y1, w1: nu, y2, w2: nu * nu, round: own.round + 1 };
        if phase + 1 == p.block() {
            let spread = y2 - y1 * y1;
            let deflated = nu - p.k1 * y1;
            next.nu = if spread > 1e-20 * y2.abs() && spread > f64::MIN_POSITIVE {
                deflated * (1.0 + p.k3 * (spread.sqrt().recip() - 1.0))
            } else {
                // nothing left but the consensus direction
                0.0
            };
        }
        next
    }
}

impl Protocol for PowerIteration {
    type State = PiState;
    type Message = PiMessage;

    fn message(&self, _: &LocalView, s: &PiState) -> PiMessage {
        *s
    }

    fn update(&self, view: &LocalView, s: &PiState, inbox: &[PiMessage]) -> PiState {
        self.round(view, s, inbox)
    }
}

pub fn pi_round(view: &LocalView, params: &PiParams, own: &PiState, inbox: &[PiState]) -> PiState {
    PowerIteration { params: *params }.round(view, own, inbox)
}

pub fn run_pi(
    views: &[LocalView],
    params: &PiParams,
    init: Vec<PiState>,
    rounds: usize,
    log: Option<&mut MessageLog>,
) -> RoundOutcome<PiState> {
    run_rounds(views, &PowerIteration { params: *params }, init, rounds, log)
}

/// Closed-neighborhood Rayleigh quotient (Lν)_i / ν_i; `None` when |ν_i| is
/// at or below the floor.
pub fn local_lambda2(view: &LocalView, nu_i: f64, neighbor_nu: &[f64], floor: f64) -> Option<f64> {
    if nu_i.abs() <= floor {
        return None;
    }
    Some(view.laplacian_apply(nu_i, neighbor_nu) / nu_i)
}

/// ∂λ₂/∂x_i = Σ_l ∂a_il/∂x_i (ν_i − ν_l)², for unit-norm ν.
pub fn lambda2_gradient(
    xi: &Vec2,
    neighbor_x: &[Vec2],
    nu_i: f64,
    neighbor_nu: &[f64],
    radius: f64,
    sigma: f64,
) -> Vec2 {
    neighbor_x
        .iter()
        .zip(neighbor_nu)
        .map(|(xl, nl)| adjacency_weight_grad(xi, xl, radius, sigma) * (nu_i - nl).powi(2))
        .fold(Vec2::zeros(), |a, b| a + b)
}

/// Gradient of λ₂ for every robot from a full unit-norm Fiedler vector.
pub fn gradients_from_vector(graph: &CommGraph, nu: &DVector<f64>) -> Vec<Vec2> {
    (0..graph.len())
        .map(|i| {
            let nb = &graph.neighbors[i];
            let xs: Vec<Vec2> = nb.iter().map(|&l| graph.positions[l]).collect();
            let ns: Vec<f64> = nb.iter().map(|&l| nu[l]).collect();
            lambda2_gradient(&graph.positions[i], &xs, nu[i], &ns, graph.radius, graph.sigma)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub lambda2: f64,
    pub nu_unit: f64,
    pub gradient: Vec2,
    /// λ₂ came from neighbors because |ν_i| was below the floor.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NuAndPosition {
    pub nu: f64,
    pub x: Vec2,
}

impl Wire for NuAndPosition {
    fn kind(&self) -> &'static str {
        "pi_readout"
    }
    fn size_bytes(&self) -> usize {
        3 * 8
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LambdaReport(pub Option<f64>);

impl Wire for LambdaReport {
    fn kind(&self) -> &'static str {
        "lambda2"
    }
    fn size_bytes(&self) -> usize {
        9
    }
}

#[derive(Debug, Clone, Copy)]
struct Readout {
    radius: f64,
    sigma: f64,
    floor: f64,
}

#[derive(Debug, Clone, Copy)]
struct ReadoutState {
    nu: f64,
    x: Vec2,
    raw: Option<f64>,
    est: SpectralEstimate,
}

impl Protocol for Readout {
    type State = ReadoutState;
    type Message = NuAndPosition;

    fn message(&self, _: &LocalView, s: &ReadoutState) -> NuAndPosition {
        NuAndPosition { nu: s.nu, x: s.x }
    }

    fn update(&self, view: &LocalView, s: &ReadoutState, inbox: &[NuAndPosition]) -> ReadoutState {
        let nus: Vec<f64> = inbox.iter().map(|m| m.nu).collect();
        let xs: Vec<Vec2> = inbox.iter().map(|m| m.x).collect();
        // an isolated robot has a zero Laplacian row; report λ₂ = 0 like the oracle
        let raw = if view.neighbors.is_empty() { Some(0.0) } else { local_lambda2(view, s.nu, &nus, self.floor) };
        let gradient = lambda2_gradient(&s.x, &xs, s.nu, &nus, self.radius, self.sigma);
        let est = SpectralEstimate { lambda2: raw.unwrap_or(0.0), nu_unit: s.nu, gradient, fallback: raw.is_none() };
        ReadoutState { raw, est, ..*s }
    }
}

struct Fallback;

impl Protocol for Fallback {
    type State = ReadoutState;
    type Message = LambdaReport;

    fn message(&self, _: &LocalView, s: &ReadoutState) -> LambdaReport {
        LambdaReport(s.raw)
    }

    fn update(&self, _: &LocalView, s: &ReadoutState, inbox: &[LambdaReport]) -> ReadoutState {
        if s.raw.is_some() {
            return *s;
        }
        let known: Vec<f64> = inbox.iter().filter_map(|m| m.0).collect();
        let lambda2 = if known.is_empty() { 0.0 } else { known.iter().sum::<f64>() / known.len() as f64 };
        if known.is_empty() {
            log::warn!("no neighbor λ₂ estimate available for fallback");
        } else {
            log::debug!("λ₂ fallback to neighbor mean {lambda2}");
        }
        ReadoutState { est: SpectralEstimate { lambda2, ..s.est }, ..*s }
    }
}

/// Two readout rounds after the power iteration: share unit-scaled ν and
/// positions to form λ₂ and its gradient, then share λ₂ so robots with a
/// vanishing ν entry can fall back to their neighbors' mean.
///
/// Expects the states to sit on a block boundary, where ν has just been
/// rescaled to unit mean square.
pub fn read_out(
    views: &[LocalView],
    states: &[PiState],
    positions: &[Vec2],
    params: &PiParams,
    radius: f64,
    sigma: f64,
    mut log: Option<&mut MessageLog>,
) -> (Vec<SpectralEstimate>, Traffic) {
    let n = views.len();
    let scale = (n as f64).sqrt().recip();
    let init: Vec<ReadoutState> = states
        .iter()
        .zip(positions)
        .map(|(s, x)| ReadoutState {
            nu: s.nu * scale,
            x: *x,
            raw: None,
            est: SpectralEstimate { lambda2: 0.0, nu_unit: 0.0, gradient: Vec2::zeros(), fallback: true },
        })
        .collect();
    let proto = Readout { radius, sigma, floor: params.nu_floor };
    let first = run_rounds(views, &proto, init, 1, log.as_deref_mut());
    let second = run_rounds(views, &Fallback, first.states, 1, log);
    let mut traffic = first.traffic;
    traffic += second.traffic;
    (second.states.into_iter().map(|s| s.est).collect(), traffic)
}
