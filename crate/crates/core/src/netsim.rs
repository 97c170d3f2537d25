//! Synchronous round-based message passing over a frozen graph snapshot.
//!
//! A [`Protocol`] never sees another robot's state. Each round every robot
//! broadcasts one message built from its own state; the engine delivers it to
//! graph neighbors only, then every robot updates from its own state and its
//! inbox. Delivery is a barrier, so the order robots are stepped in does not
//! matter.

use serde::Serialize;
use std::io::{self, Write};

use crate::graph::CommGraph;

/// What a robot knows about its surroundings without communicating: its own
/// id, who its neighbors are and the weights of its incident edges.
#[derive(Debug, Clone)]
pub struct LocalView {
    pub id: usize,
    pub neighbors: Vec<usize>,
    /// Edge weights a_il aligned with `neighbors`.
    pub weights: Vec<f64>,
    /// Unweighted neighbor degrees aligned with `neighbors`, learned at link
    /// setup time.
    pub neighbor_degrees: Vec<usize>,
    /// Team size, known to every robot.
    pub team_size: usize,
}

impl LocalView {
    pub fn degree(&self) -> usize {
        self.neighbors.len()
    }

    pub fn weighted_degree(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// (Lv)_i given own value and neighbor values aligned with `neighbors`.
    pub fn laplacian_apply(&self, own: f64, others: &[f64]) -> f64 {
        self.weights.iter().zip(others).map(|(a, v)| a * (own - v)).sum()
    }

    /// Metropolis weights: (self weight, per-neighbor weights).
    pub fn metropolis(&self) -> (f64, Vec<f64>) {
        let d = self.degree();
        let w: Vec<f64> = self.neighbor_degrees.iter().map(|&dl| 1.0 / (1 + d.max(dl)) as f64).collect();
        (1.0 - w.iter().sum::<f64>(), w)
    }
}

pub fn local_views(graph: &CommGraph) -> Vec<LocalView> {
    (0..graph.len())
        .map(|i| LocalView {
            id: i,
            neighbors: graph.neighbors[i].clone(),
            weights: graph.neighbors[i].iter().map(|&l| graph.adjacency[(i, l)]).collect(),
            neighbor_degrees: graph.neighbors[i].iter().map(|&l| graph.degree(l)).collect(),
            team_size: graph.len(),
        })
        .collect()
}

pub trait Wire {
    fn kind(&self) -> &'static str;
    fn size_bytes(&self) -> usize;
}

pub trait Protocol {
    type State: Clone;
    type Message: Clone + Wire;

    fn message(&self, view: &LocalView, state: &Self::State) -> Self::Message;

    /// `inbox` holds one message per neighbor, in the order of `view.neighbors`.
    fn update(&self, view: &LocalView, state: &Self::State, inbox: &[Self::Message]) -> Self::State;

    /// Per-robot halting predicate; the run stops once it holds everywhere.
    fn settled(&self, _view: &LocalView, _old: &Self::State, _new: &Self::State) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    /// Outer simulation step; set by the caller, 0 inside a bare run.
    pub step: usize,
    pub round: usize,
    pub src: usize,
    pub dst: usize,
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub size: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageLog {
    pub entries: Vec<LogEntry>,
}

impl MessageLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Traffic {
    pub messages: usize,
    pub bytes: usize,
}

impl std::ops::AddAssign for Traffic {
    fn add_assign(&mut self, o: Self) {
        self.messages += o.messages;
        self.bytes += o.bytes;
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutcome<S> {
    pub states: Vec<S>,
    pub rounds: usize,
    /// False when `max_rounds` ran out before every robot settled.
    pub converged: bool,
    pub traffic: Traffic,
}

pub fn run_rounds<P: Protocol>(
    views: &[LocalView],
    protocol: &P,
    init: Vec<P::State>,
    max_rounds: usize,
    log: Option<&mut MessageLog>,
) -> RoundOutcome<P::State> {
    let order: Vec<usize> = (0..views.len()).collect();
    run_rounds_ordered(views, protocol, init, max_rounds, log, &order)
}

/// Same as [`run_rounds`] but steps robots in the given order each round.
pub fn run_rounds_ordered<P: Protocol>(
    views: &[LocalView],
    protocol: &P,
    init: Vec<P::State>,
    max_rounds: usize,
    mut log: Option<&mut MessageLog>,
    order: &[usize],
) -> RoundOutcome<P::State> {
    let n = views.len();
    assert_eq!(init.len(), n, "one initial state per robot");
    assert_eq!(order.len(), n, "order must be a permutation");
    let mut states = init;
    let mut traffic = Traffic::default();
    let mut rounds = 0;
    let mut converged = false;
    while rounds < max_rounds {
        rounds += 1;
        let mut outbox: Vec<Option<P::Message>> = vec![None; n];
        for &i in order {
            outbox[i] = Some(protocol.message(&views[i], &states[i]));
        }
        let mut next: Vec<Option<P::State>> = vec![None; n];
        let mut all_settled = true;
        for &i in order {
            let view = &views[i];
            let inbox: Vec<P::Message> = view
                .neighbors
                .iter()
                .map(|&l| outbox[l].clone().expect("message sent"))
                .collect();
            for &l in &view.neighbors {
                let size = outbox[l].as_ref().map(Wire::size_bytes).unwrap_or(0);
                traffic.messages += 1;
                traffic.bytes += size;
                if let Some(log) = log.as_deref_mut() {
                    let kind = outbox[l].as_ref().map(Wire::kind).unwrap_or("");
                    log.entries.push(LogEntry { step: 0, round: rounds, src: l, dst: i, kind, size });
                }
            }
            let new = protocol.update(view, &states[i], &inbox);
            all_settled &= protocol.settled(view, &states[i], &new);
            next[i] = Some(new);
        }
        states = next.into_iter().map(|s| s.expect("every robot stepped")).collect();
        if all_settled {
            converged = true;
            break;
        }
    }
    if let Some(log) = log {
        // keep the log independent of the stepping order
        let start = log.entries.len() - traffic.messages.min(log.entries.len());
        log.entries[start..].sort_by_key(|e| (e.round, e.dst, e.src));
    }
    RoundOutcome { states, rounds, converged, traffic }
}
