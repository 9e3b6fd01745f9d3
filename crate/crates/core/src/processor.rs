//! The processor contract, per-processor confidence learning and the link
//! table carrying direct (non-broadcast) messages.

use std::any::Any;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chunk::{Gist, ProcessorId, Tick};
use crate::error::{CtmError, Result};
use crate::stm::BroadcastEvent;
use crate::world::{ActuatorCommand, SensorReadings};

/// What a processor puts into its leaf this tick. The scheduler scales the
/// raw weight by the processor's confidence before building the chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub gist: Gist,
    pub weight: f64,
}

impl Proposal {
    pub fn new(gist: Gist, weight: f64) -> Self {
        Self { gist, weight }
    }

    /// Nothing to say: a weight-0 chunk with an empty gist.
    pub fn silent() -> Self {
        Self {
            gist: Gist::empty(),
            weight: 0.0,
        }
    }
}

/// A proposal weight that is a pure function of the tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixedWeight {
    Zero,
    /// `mix64(key ^ tick) >> 61`, an integer in `0..8`.
    Hashed(u64),
}

impl FixedWeight {
    #[inline]
    pub fn at(self, tick: Tick) -> f64 {
        match self {
            FixedWeight::Zero => 0.0,
            FixedWeight::Hashed(key) => (crate::rng::mix64(key ^ tick) >> 61) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkMessage {
    pub from: ProcessorId,
    pub to: ProcessorId,
    pub sent: Tick,
    pub gist: Gist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    Correct,
    Incorrect,
    None,
}

/// Handle given to a processor during its callbacks: identity, the current
/// tick, a read-only view of the links, and outboxes the scheduler drains
/// after each phase.
pub struct ProcessorCtx<'a> {
    pub id: ProcessorId,
    pub tick: Tick,
    links: &'a LinkTable,
    outbox: &'a mut Vec<LinkMessage>,
    feedback: &'a mut Vec<(ProcessorId, Feedback)>,
}

impl<'a> ProcessorCtx<'a> {
    pub fn new(
        id: ProcessorId,
        tick: Tick,
        links: &'a LinkTable,
        outbox: &'a mut Vec<LinkMessage>,
        feedback: &'a mut Vec<(ProcessorId, Feedback)>,
    ) -> Self {
        Self {
            id,
            tick,
            links,
            outbox,
            feedback,
        }
    }

    pub fn is_linked(&self, other: ProcessorId) -> bool {
        self.links.is_linked(self.id, other)
    }

    /// Queues a direct message, delivered at the next tick. Fails when the
    /// two processors are not linked; the sender must then compete for STM.
    pub fn send_via_link(&mut self, to: ProcessorId, gist: Gist) -> Result<()> {
        if !self.links.is_linked(self.id, to) {
            return Err(CtmError::NoLink { from: self.id, to });
        }
        self.outbox.push(LinkMessage {
            from: self.id,
            to,
            sent: self.tick,
            gist,
        });
        Ok(())
    }

    /// Ground-truth channel: reports whether `target`'s contribution was
    /// right. Applied to the target's confidence after the current phase.
    pub fn give_feedback(&mut self, target: ProcessorId, feedback: Feedback) {
        self.feedback.push((target, feedback));
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Bindings {
    pub sensor: bool,
    pub actuator: bool,
}

impl Bindings {
    pub const SENSOR: Bindings = Bindings { sensor: true, actuator: false };
    pub const ACTUATOR: Bindings = Bindings { sensor: false, actuator: true };
    pub const BOTH: Bindings = Bindings { sensor: true, actuator: true };
}

/// An LTM processor. Internal state is private; the only ways in are the
/// broadcast, link messages and (for sensor/actuator processors) the world
/// bindings.
pub trait Processor: Send + 'static {
    fn name(&self) -> &str;

    fn on_broadcast(&mut self, _event: &BroadcastEvent, _ctx: &mut ProcessorCtx<'_>) {}

    /// A direct message from a linked processor. A returned gist is sent
    /// straight back over the same link and delivered in the same phase.
    fn on_link_message(&mut self, _msg: &LinkMessage, _ctx: &mut ProcessorCtx<'_>) -> Option<Gist> {
        None
    }

    /// Whether the processor is wired to the world's sensors and/or
    /// actuators. Queried once when the instance is built.
    fn bindings(&self) -> Bindings {
        Bindings::default()
    }

    /// For processors whose proposal is always an empty gist with a weight
    /// that depends only on the tick. The scheduler then fills their leaves
    /// in a tight loop instead of calling `propose`.
    fn fixed_weight(&self) -> Option<FixedWeight> {
        None
    }

    /// False if `on_broadcast` ignores its input, so delivery can skip it.
    /// Queried once when the instance is built.
    fn hears_broadcasts(&self) -> bool {
        true
    }

    /// Output binding: world commands for this tick.
    fn actuate(&mut self, _tick: Tick, _commands: &mut Vec<ActuatorCommand>) {}

    /// Input binding: this tick's sensor readings.
    fn sense(&mut self, _readings: &SensorReadings, _ctx: &mut ProcessorCtx<'_>) {}

    /// The chunk for this processor's leaf. Called exactly once per tick.
    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal;

    fn as_any(&self) -> &dyn Any;

    fn as_any_mut(&mut self) -> &mut dyn Any;
}

/// Multiplicative confidence in `(0, 1]`, lowered on incorrect feedback and
/// restored on correct feedback.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SleepingExperts {
    confidence: f64,
    beta: f64,
}

impl Default for SleepingExperts {
    fn default() -> Self {
        Self {
            confidence: 1.0,
            beta: 0.5,
        }
    }
}

impl SleepingExperts {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(CtmError::Config(format!("beta must be in (0, 1), got {beta}")));
        }
        Ok(Self {
            confidence: 1.0,
            beta,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn update(self, feedback: Feedback) -> Self {
        let confidence = match feedback {
            Feedback::Incorrect => self.confidence * self.beta,
            Feedback::Correct => (self.confidence / self.beta).min(1.0),
            Feedback::None => self.confidence,
        };
        // Long runs of incorrect feedback would otherwise underflow to 0.
        Self {
            confidence: confidence.max(f64::MIN_POSITIVE),
            ..self
        }
    }
}

pub fn update_confidence(state: SleepingExperts, feedback: Feedback) -> SleepingExperts {
    state.update(feedback)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkConfig {
    /// Completed query/answer episodes needed to form a link.
    pub episodes: u32,
    /// Window, in multiples of the tree height, within which an answer must
    /// follow its query's broadcast.
    pub window_heights: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            episodes: 5,
            window_heights: 2,
        }
    }
}

fn pair(p: ProcessorId, q: ProcessorId) -> (ProcessorId, ProcessorId) {
    if p <= q {
        (p, q)
    } else {
        (q, p)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LinkTable {
    cfg: LinkConfig,
    links: BTreeMap<(ProcessorId, ProcessorId), Tick>,
    episodes: BTreeMap<(ProcessorId, ProcessorId), u32>,
    pending: Vec<LinkMessage>,
}

impl LinkTable {
    pub fn new(cfg: LinkConfig) -> Self {
        Self {
            cfg,
            ..Self::default()
        }
    }

    pub fn config(&self) -> LinkConfig {
        self.cfg
    }

    pub fn is_linked(&self, p: ProcessorId, q: ProcessorId) -> bool {
        self.links.contains_key(&pair(p, q))
    }

    pub fn link_tick(&self, p: ProcessorId, q: ProcessorId) -> Option<Tick> {
        self.links.get(&pair(p, q)).copied()
    }

    pub fn links(&self) -> impl Iterator<Item = (ProcessorId, ProcessorId, Tick)> + '_ {
        self.links.iter().map(|(&(p, q), &t)| (p, q, t))
    }

    /// Episodes counted between `p` and `q`, up to and including the one
    /// that formed their link.
    pub fn episodes(&self, p: ProcessorId, q: ProcessorId) -> u32 {
        self.episodes.get(&pair(p, q)).copied().unwrap_or(0)
    }

    /// Records one completed query/answer episode between `requester` and
    /// `responder`; creates the link when the threshold is reached. Returns
    /// `true` when a link was created by this call.
    pub fn maybe_form_link(&mut self, responder: ProcessorId, requester: ProcessorId, tick: Tick) -> bool {
        let key = pair(responder, requester);
        if responder == requester || self.links.contains_key(&key) {
            return false;
        }
        let count = self.episodes.entry(key).or_insert(0);
        *count += 1;
        if *count >= self.cfg.episodes {
            self.links.insert(key, tick);
            true
        } else {
            false
        }
    }

    /// Creates a link directly (used for pre-wired scenarios and tests).
    pub fn force_link(&mut self, p: ProcessorId, q: ProcessorId, tick: Tick) {
        self.links.entry(pair(p, q)).or_insert(tick);
    }

    /// Queues a message for delivery at `tick + 1`.
    pub fn send_via_link(&mut self, from: ProcessorId, to: ProcessorId, gist: Gist, tick: Tick) -> Result<()> {
        if !self.is_linked(from, to) {
            return Err(CtmError::NoLink { from, to });
        }
        self.pending.push(LinkMessage {
            from,
            to,
            sent: tick,
            gist,
        });
        Ok(())
    }

    pub(crate) fn enqueue(&mut self, msgs: &mut Vec<LinkMessage>) {
        self.pending.append(msgs);
    }

    /// Moves every message due at `tick` into `out`.
    pub(crate) fn take_due(&mut self, tick: Tick, out: &mut Vec<LinkMessage>) {
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].sent < tick {
                out.push(self.pending.remove(i));
            } else {
                i += 1;
            }
        }
    }

    pub fn pending(&self) -> &[LinkMessage] {
        &self.pending
    }
}
