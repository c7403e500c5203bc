//! In-process synchronous message bus between area workers.

use std::collections::BTreeMap;
use std::mem::size_of;

use serde::Serialize;

use crate::{Error, Result};

/// `(K, L)` copy of one tie-line held by the sender.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TieValue {
    pub branch: usize,
    pub k: f64,
    pub l: f64,
}

/// `(α, θ)` copy of one boundary bus held by the sender.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusValue {
    pub bus: usize,
    pub alpha: f64,
    pub theta: f64,
}

/// The only payloads areas can exchange.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    TieLines(Vec<TieValue>),
    BoundaryBuses(Vec<BusValue>),
}

impl Payload {
    /// Number of floating-point values carried. Element identifiers are
    /// topology both sides already know and are not counted.
    pub fn floats(&self) -> usize {
        match self {
            Payload::TieLines(v) => 2 * v.len(),
            Payload::BoundaryBuses(v) => 2 * v.len(),
        }
    }

    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::TieLines(_) => PayloadKind::TieLines,
            Payload::BoundaryBuses(_) => PayloadKind::BoundaryBuses,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    TieLines,
    BoundaryBuses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub payload: Payload,
}

/// Pipeline step a message was sent in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    StageOne,
    Transform,
    StageTwo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delivery {
    pub phase: Phase,
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub payload: PayloadKind,
    pub floats: usize,
    pub bytes: usize,
}

/// Round-based mailboxes. Messages posted during a round become readable
/// only after [`MessageBus::barrier`].
#[derive(Debug, Default)]
pub struct MessageBus {
    phase: Option<Phase>,
    round: usize,
    outbox: BTreeMap<(usize, usize), Message>,
    inbox: BTreeMap<usize, Vec<Message>>,
    log: Vec<Delivery>,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = Some(phase);
        self.round = 0;
        self.outbox.clear();
        self.inbox.clear();
    }

    pub fn phase(&self) -> Option<Phase> {
        self.phase
    }

    pub fn post(&mut self, msg: Message) -> Result<()> {
        if self.phase.is_none() {
            return Err(Error::Protocol("message posted outside a pipeline phase".into()));
        }
        if msg.from == msg.to {
            return Err(Error::Protocol(format!("area {} messaging itself", msg.from)));
        }
        if self.outbox.insert((msg.from, msg.to), msg).is_some() {
            return Err(Error::Protocol("two messages for one area pair in a round".into()));
        }
        Ok(())
    }

    /// Ends the round: everything posted is logged and moved to the receivers.
    pub fn barrier(&mut self) {
        let phase = self.phase.expect("barrier outside a phase");
        self.round += 1;
        self.inbox.clear();
        for ((from, to), msg) in std::mem::take(&mut self.outbox) {
            let floats = msg.payload.floats();
            self.log.push(Delivery {
                phase,
                round: self.round,
                from,
                to,
                payload: msg.payload.kind(),
                floats,
                bytes: floats * size_of::<f64>(),
            });
            self.inbox.entry(to).or_default().push(msg);
        }
    }

    /// Messages delivered to `area` at the last barrier, ordered by sender.
    pub fn inbox(&self, area: usize) -> &[Message] {
        self.inbox.get(&area).map_or(&[], Vec::as_slice)
    }

    pub fn log(&self) -> &[Delivery] {
        &self.log
    }

    pub fn deliveries_in(&self, phase: Phase) -> impl Iterator<Item = &Delivery> {
        self.log.iter().filter(move |d| d.phase == phase)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tie_msg(from: usize, to: usize, n: usize) -> Message {
        Message {
            from,
            to,
            payload: Payload::TieLines((0..n).map(|b| TieValue { branch: b, k: 1.0, l: 0.0 }).collect()),
        }
    }

    #[test]
    fn messages_visible_only_after_barrier() {
        let mut bus = MessageBus::new();
        bus.set_phase(Phase::StageOne);
        bus.post(tie_msg(1, 2, 3)).unwrap();
        assert!(bus.inbox(2).is_empty());
        bus.barrier();
        assert_eq!(bus.inbox(2).len(), 1);
        assert_eq!(bus.log()[0].bytes, 2 * 3 * 8);
        bus.barrier();
        assert!(bus.inbox(2).is_empty());
    }

    #[test]
    fn protocol_violations() {
        let mut bus = MessageBus::new();
        assert!(bus.post(tie_msg(1, 2, 1)).is_err());
        bus.set_phase(Phase::StageOne);
        assert!(bus.post(tie_msg(1, 1, 1)).is_err());
        bus.post(tie_msg(1, 2, 1)).unwrap();
        assert!(bus.post(tie_msg(1, 2, 1)).is_err());
    }
}
