//! Consensus ADMM for the two linear stages. Areas run a closed-form local
//! update, then swap copies of shared elements over a [`MessageBus`] and
//! agree on their averages.

pub mod bus;
mod local;
mod stage1;
mod stage2;

pub use bus::{BusValue, Delivery, Message, MessageBus, Payload, PayloadKind, Phase, TieValue};
pub use stage1::{init_stage1, run_stage1, Stage1Area};
pub use stage2::{init_stage2, local_transform, run_stage2, Stage2Area};

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::Result;

/// Which variables carry the proximal penalty `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    /// `ρ` on every local variable. Unshared entries are pulled toward zero.
    Identity,
    /// `ρ` only on entries that have copies in other areas.
    #[default]
    SharedOnly,
}

/// Order in which area workers run their local update inside a round.
/// Results do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Sequential,
    Reversed,
    Parallel,
}

/// When a stage counts as converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// `δ = max(‖r‖∞, ‖d‖∞) ≤ ε`.
    Consensus,
    /// As above, and the local iterates moved by at most `ε` in the round.
    #[default]
    ConsensusAndDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub rho: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub augmentation: Augmentation,
    pub schedule: Schedule,
    pub stop: StopRule,
    /// Upper bound on `w`/`o` alternations inside one local update. One
    /// sweep gives a linearized update; more sweeps solve the local
    /// subproblem exactly.
    pub inner_sweeps: usize,
}

pub const DEFAULT_INNER_SWEEPS: usize = 200;

impl StageParams {
    pub fn new(rho: f64, lambda: f64) -> Self {
        StageParams {
            rho,
            lambda,
            epsilon: 5e-4,
            max_iter: 500,
            augmentation: Augmentation::default(),
            schedule: Schedule::default(),
            stop: StopRule::default(),
            inner_sweeps: DEFAULT_INNER_SWEEPS,
        }
    }
}

/// Residual maxima of one round.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    /// Copy mismatch against the consensus average.
    pub primal: f64,
    /// Change of the consensus average.
    pub dual: f64,
    /// Change of the local iterate.
    pub drift: f64,
}

impl Residuals {
    pub fn delta(&self) -> f64 {
        self.primal.max(self.dual)
    }

    fn merge(self, other: Residuals) -> Residuals {
        Residuals {
            primal: self.primal.max(other.primal),
            dual: self.dual.max(other.dual),
            drift: self.drift.max(other.drift),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub delta: f64,
    pub r_inf: f64,
    pub d_inf: f64,
    pub local_inf: f64,
    /// Local objective per area, in area order.
    pub objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutcome {
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl StageOutcome {
    pub fn final_delta(&self) -> f64 {
        self.trace.last().map_or(0.0, |r| r.delta)
    }
}

/// Renders a trace as CSV: `stage,iteration,delta,r_inf,d_inf,local_inf,J_1..J_R`.
pub fn trace_csv(stage: &str, trace: &[TraceRow]) -> String {
    let areas = trace.first().map_or(0, |r| r.objectives.len());
    let mut out = String::from("stage,iteration,delta,r_inf,d_inf,local_inf");
    for a in 1..=areas {
        let _ = write!(out, ",J_{a}");
    }
    out.push('\n');
    for r in trace {
        let _ = write!(out, "{stage},{},{:e},{:e},{:e},{:e}", r.iteration, r.delta, r.r_inf, r.d_inf, r.local_inf);
        for j in &r.objectives {
            let _ = write!(out, ",{j:e}");
        }
        out.push('\n');
    }
    out
}

/// One area's side of a stage.
pub trait AreaWorker: Send {
    fn area(&self) -> usize;
    fn local_update(&mut self);
    /// Messages for every neighbor, built from the current local iterate.
    fn outgoing(&self) -> Vec<Message>;
    /// Consumes the messages delivered at the last barrier.
    fn absorb(&mut self, inbox: &[Message]) -> Result<Residuals>;
    fn objective(&self) -> f64;
}

fn update_all<W: AreaWorker>(workers: &mut [W], schedule: Schedule) {
    match schedule {
        Schedule::Sequential => workers.iter_mut().for_each(AreaWorker::local_update),
        Schedule::Reversed => workers.iter_mut().rev().for_each(AreaWorker::local_update),
        Schedule::Parallel => workers.par_iter_mut().for_each(AreaWorker::local_update),
    }
}

/// Bulk-synchronous rounds: local updates, barrier, consensus, until the
/// stop rule holds or `max_iter` rounds ran.
pub fn run_rounds<W: AreaWorker>(
    workers: &mut [W],
    bus: &mut MessageBus,
    params: &StageParams,
) -> Result<StageOutcome> {
    let mut trace = Vec::new();
    for iteration in 1..=params.max_iter {
        update_all(workers, params.schedule);
        for w in workers.iter() {
            for msg in w.outgoing() {
                bus.post(msg)?;
            }
        }
        bus.barrier();
        let mut res = Residuals::default();
        for w in workers.iter_mut() {
            let own = w.absorb(bus.inbox(w.area()))?;
            res = res.merge(own);
        }
        trace.push(TraceRow {
            iteration,
            delta: res.delta(),
            r_inf: res.primal,
            d_inf: res.dual,
            local_inf: res.drift,
            objectives: workers.iter().map(AreaWorker::objective).collect(),
        });
        let done = match params.stop {
            StopRule::Consensus => res.delta() <= params.epsilon,
            StopRule::ConsensusAndDrift => res.delta().max(res.drift) <= params.epsilon,
        };
        if done {
            return Ok(StageOutcome { iterations: iteration, converged: true, trace });
        }
    }
    Ok(StageOutcome { iterations: params.max_iter, converged: false, trace })
}

/// Groups received pairs by element key, keeping the sender.
fn collect_copies(
    inbox: &[Message],
    mut unpack: impl FnMut(&Payload) -> Result<Vec<(usize, [f64; 2])>>,
) -> Result<std::collections::BTreeMap<usize, Vec<(usize, [f64; 2])>>> {
    let mut map: std::collections::BTreeMap<usize, Vec<(usize, [f64; 2])>> = Default::default();
    for msg in inbox {
        for (key, v) in unpack(&msg.payload)? {
            map.entry(key).or_default().push((msg.from, v));
        }
    }
    Ok(map)
}
