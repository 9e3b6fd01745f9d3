//! The tick scheduler tying STM, the processors, the up-tree, the
//! broadcast fan-out, links and the world bindings together.
//!
//! One call to [`CtmInstance::tick`] runs, in order:
//! 1. delivery of last tick's broadcast and due link messages,
//! 2. one world step (actuators act, sensors sample),
//! 3. one proposal per processor (weight scaled by confidence),
//! 4. the up-tree advance followed by this tick's submission,
//! 5. the STM broadcast, queued for the next tick,
//! 6. link-formation bookkeeping,
//! 7. the trace record.

use std::collections::VecDeque;

use serde::Serialize;

use crate::chunk::{Chunk, Disposition, GistKind, ProcessorId, Reference, SimParams, Tick};
use crate::error::{CtmError, Result};
use crate::motw::Motw;
use crate::oracle::pairwise_tree_sum;
use crate::processor::{Feedback, FixedWeight, LinkConfig, LinkMessage, LinkTable, Processor, ProcessorCtx, SleepingExperts};
use crate::rng::CounterRng;
use crate::stm::{BroadcastEvent, ClassifierConfig, ConsciousStream, MachineState, StateTracker, Stm, StreamEntry, WindowEntry};
use crate::uptree::{LeafBatch, NodeAddr, UpTree};
use crate::world::{ActuatorCommand, World};

/// Something that happened to the instance from outside the tick loop
/// (a fault, a reboot). Each is recorded once in the trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceEvent {
    pub tick: Tick,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub tick: Tick,
    pub state: MachineState,
    pub winner: Option<Chunk>,
    pub commands: u32,
    pub notes: Vec<String>,
}

/// Running check that every root winner's auxiliary pair equals the
/// tree-order sums of its competition's submissions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AggregateAudit {
    pub checked: u64,
    pub mismatches: u64,
}

#[derive(Clone, Debug, Default)]
pub struct InstanceOptions {
    pub links: LinkConfig,
    pub classifier: ClassifierConfig,
    pub beta: Option<f64>,
    /// Keep the conscious stream in memory.
    pub record_stream: bool,
    /// Recompute the expected root sums independently at submission.
    pub audit_aggregates: bool,
}

pub struct CtmInstance {
    params: SimParams,
    tick: Tick,
    processors: Vec<Box<dyn Processor>>,
    /// Input bindings: processors that read the sensors.
    sensors: Vec<usize>,
    /// Output bindings: processors that drive the actuators.
    actuators: Vec<usize>,
    confidence: Vec<SleepingExperts>,
    muted: Vec<bool>,
    /// Per-leaf weight multiplier: the confidence, or 0 when muted.
    scale: Vec<f64>,
    /// Processors that need a `propose` call each tick.
    proposers: Vec<usize>,
    /// The others with a nonzero fixed weight, as `(leaf, key)`.
    hashed: Vec<(u32, u64)>,
    /// Processors that want broadcasts delivered.
    listeners: Vec<usize>,
    delivered: u64,
    propose_calls: u64,
    tree: UpTree,
    rng: CounterRng,
    stm: Stm,
    pending_broadcast: Option<BroadcastEvent>,
    links: LinkTable,
    world: Option<World>,
    stream: ConsciousStream,
    record_stream: bool,
    tracker: StateTracker,
    proposals: LeafBatch,
    commands: Vec<ActuatorCommand>,
    outbox: Vec<LinkMessage>,
    inbox: Vec<LinkMessage>,
    feedback: Vec<(ProcessorId, Feedback)>,
    /// Query broadcasts awaiting an answer: (origin, creation tick, STM tick).
    open_queries: VecDeque<(ProcessorId, Tick, Tick)>,
    audit: Option<(AggregateAudit, VecDeque<(Tick, f64, f64)>)>,
    events: Vec<InstanceEvent>,
    pending_notes: Vec<String>,
    created_links: Vec<(ProcessorId, ProcessorId, Tick)>,
}

impl CtmInstance {
    /// Builds an instance. `processors` is in leaf order and must have
    /// exactly `params.processors` entries.
    pub fn new(
        params: SimParams,
        processors: Vec<Box<dyn Processor>>,
        world: Option<World>,
        opts: InstanceOptions,
    ) -> Result<Self> {
        let n = params.processors;
        if processors.len() != n {
            return Err(CtmError::Config(format!(
                "need exactly {n} processors, got {}",
                processors.len()
            )));
        }
        let experts = match opts.beta {
            Some(b) => SleepingExperts::new(b)?,
            None => SleepingExperts::default(),
        };
        let sensors = (0..n).filter(|&i| processors[i].bindings().sensor).collect();
        let actuators = (0..n).filter(|&i| processors[i].bindings().actuator).collect();
        let listeners = (0..n).filter(|&i| processors[i].hears_broadcasts()).collect();
        let proposers = (0..n).filter(|&i| processors[i].fixed_weight().is_none()).collect();
        let hashed = (0..n)
            .filter_map(|i| match processors[i].fixed_weight() {
                Some(FixedWeight::Hashed(key)) => Some((i as u32, key)),
                _ => None,
            })
            .collect();
        Ok(Self {
            sensors,
            actuators,
            tree: UpTree::new(params.height)?,
            rng: CounterRng::new(params.seed),
            tick: 0,
            confidence: vec![experts; n],
            muted: vec![false; n],
            scale: vec![experts.confidence(); n],
            listeners,
            proposers,
            hashed,
            delivered: 0,
            propose_calls: 0,
            stm: Stm::new(),
            pending_broadcast: None,
            links: LinkTable::new(opts.links),
            world,
            stream: ConsciousStream::new(),
            record_stream: opts.record_stream,
            tracker: StateTracker::new(opts.classifier),
            proposals: LeafBatch::with_capacity(n),
            commands: Vec::new(),
            outbox: Vec::new(),
            inbox: Vec::new(),
            feedback: Vec::new(),
            open_queries: VecDeque::new(),
            audit: opts
                .audit_aggregates
                .then(|| (AggregateAudit::default(), VecDeque::new())),
            events: Vec::new(),
            pending_notes: Vec::new(),
            created_links: Vec::new(),
            processors,
            params,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// The next tick to run.
    pub fn current_tick(&self) -> Tick {
        self.tick
    }

    pub fn disposition(&self) -> Disposition {
        self.params.disposition
    }

    pub fn stream(&self) -> &ConsciousStream {
        &self.stream
    }

    pub fn links(&self) -> &LinkTable {
        &self.links
    }

    pub fn links_mut(&mut self) -> &mut LinkTable {
        &mut self.links
    }

    pub fn world(&self) -> Option<&World> {
        self.world.as_ref()
    }

    pub fn tree(&self) -> &UpTree {
        &self.tree
    }

    pub fn confidence(&self, p: ProcessorId) -> f64 {
        self.confidence[p.index()].confidence()
    }

    /// Broadcasts delivered so far. Every listening processor receives
    /// each of them.
    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn propose_calls(&self) -> u64 {
        self.propose_calls
    }

    pub fn events(&self) -> &[InstanceEvent] {
        &self.events
    }

    pub fn created_links(&self) -> &[(ProcessorId, ProcessorId, Tick)] {
        &self.created_links
    }

    pub fn audit(&self) -> Option<&AggregateAudit> {
        self.audit.as_ref().map(|(a, _)| a)
    }

    pub fn processor(&self, p: ProcessorId) -> &dyn Processor {
        self.processors[p.index()].as_ref()
    }

    pub fn processor_mut(&mut self, p: ProcessorId) -> &mut dyn Processor {
        self.processors[p.index()].as_mut()
    }

    pub fn processor_id(&self, name: &str) -> Option<ProcessorId> {
        self.processors
            .iter()
            .position(|p| p.name() == name)
            .map(|i| ProcessorId(i as u32))
    }

    pub fn processor_names(&self) -> Vec<String> {
        self.processors.iter().map(|p| p.name().to_string()).collect()
    }

    /// Downcasts the first processor of type `P`.
    pub fn find<P: Processor>(&self) -> Option<(ProcessorId, &P)> {
        self.processors.iter().enumerate().find_map(|(i, p)| {
            p.as_any()
                .downcast_ref::<P>()
                .map(|x| (ProcessorId(i as u32), x))
        })
    }

    pub fn find_mut<P: Processor>(&mut self) -> Option<&mut P> {
        self.processors
            .iter_mut()
            .find_map(|p| p.as_any_mut().downcast_mut::<P>())
    }

    /// The world model held by the MotW processor, if the roster has one.
    pub fn motw(&self) -> Option<&Motw> {
        self.find::<crate::builtin::MotwProcessor>().map(|(_, p)| p.model())
    }

    pub fn motw_mut(&mut self) -> Option<&mut Motw> {
        self.find_mut::<crate::builtin::MotwProcessor>().map(|p| p.model_mut())
    }

    pub(crate) fn record_event(&mut self, note: String) {
        self.events.push(InstanceEvent {
            tick: self.tick,
            note: note.clone(),
        });
        self.pending_notes.push(note);
    }

    /// Sets a new disposition, leaving all other state untouched.
    pub fn reboot(&mut self, new_d: f64) -> Result<()> {
        let d = Disposition::new(new_d)?;
        let old = self.params.disposition.value();
        self.params.disposition = d;
        self.record_event(format!("reboot: disposition {old} -> {new_d}"));
        Ok(())
    }

    pub(crate) fn set_disposition(&mut self, d: Disposition) {
        self.params.disposition = d;
    }

    pub(crate) fn cut_edge(&mut self, node: NodeAddr) -> Result<()> {
        self.tree.cut_edge(node, self.tick)
    }

    pub(crate) fn mute(&mut self, p: ProcessorId) -> Result<()> {
        let slot = self
            .muted
            .get_mut(p.index())
            .ok_or_else(|| CtmError::InvalidInput(format!("no processor {p}")))?;
        *slot = true;
        self.scale[p.index()] = 0.0;
        Ok(())
    }

    /// Runs one tick. Fails with [`CtmError::RunComplete`] once the
    /// lifetime is exhausted.
    pub fn tick(&mut self) -> Result<TickRecord> {
        let now = self.tick;
        if now >= self.params.lifetime {
            return Err(CtmError::RunComplete(self.params.lifetime));
        }

        // (1) delivery
        if let Some(ev) = self.pending_broadcast.take() {
            debug_assert_eq!(ev.delivery_tick, now);
            for &i in &self.listeners {
                let mut ctx = ProcessorCtx::new(
                    ProcessorId(i as u32),
                    now,
                    &self.links,
                    &mut self.outbox,
                    &mut self.feedback,
                );
                self.processors[i].on_broadcast(&ev, &mut ctx);
            }
            self.delivered += 1;
        }
        self.links.take_due(now, &mut self.inbox);
        for msg in self.inbox.drain(..) {
            let to = msg.to.index();
            let reply = {
                let mut ctx =
                    ProcessorCtx::new(msg.to, now, &self.links, &mut self.outbox, &mut self.feedback);
                self.processors[to].on_link_message(&msg, &mut ctx)
            };
            if let Some(gist) = reply {
                let back = LinkMessage {
                    from: msg.to,
                    to: msg.from,
                    sent: now,
                    gist,
                };
                let mut ctx =
                    ProcessorCtx::new(msg.from, now, &self.links, &mut self.outbox, &mut self.feedback);
                // replies to replies are not carried
                let _ = self.processors[msg.from.index()].on_link_message(&back, &mut ctx);
            }
        }

        // (2) world
        self.commands.clear();
        for &i in &self.actuators {
            self.processors[i].actuate(now, &mut self.commands);
        }
        let commands = self.commands.len() as u32;
        if let Some(world) = self.world.as_mut() {
            let readings = world.step(&self.commands, now);
            for &i in &self.sensors {
                let mut ctx = ProcessorCtx::new(
                    ProcessorId(i as u32),
                    now,
                    &self.links,
                    &mut self.outbox,
                    &mut self.feedback,
                );
                self.processors[i].sense(readings, &mut ctx);
            }
        }

        // (3) proposals
        self.proposals.reset(self.processors.len());
        for &i in &self.proposers {
            let id = ProcessorId(i as u32);
            let mut ctx = ProcessorCtx::new(id, now, &self.links, &mut self.outbox, &mut self.feedback);
            let proposal = self.processors[i].propose(&mut ctx);
            self.proposals.set(i, proposal.gist, proposal.weight);
        }
        for &(i, key) in &self.hashed {
            self.proposals.weights[i as usize] = FixedWeight::Hashed(key).at(now);
        }
        // Scales are finite, so a non-finite raw weight stays non-finite.
        let mut finite = true;
        for (w, s) in self.proposals.weights.iter_mut().zip(&self.scale) {
            *w *= s;
            finite &= w.is_finite();
        }
        if !finite {
            let i = self.proposals.weights.iter().position(|w| !w.is_finite()).unwrap_or(0);
            return Err(CtmError::InvalidInput(format!(
                "processor {} proposed a non-finite weight",
                ProcessorId(i as u32)
            )));
        }
        self.propose_calls += self.processors.len() as u64;
        self.links.enqueue(&mut self.outbox);
        for (target, fb) in self.feedback.drain(..) {
            let i = target.index();
            if let Some(c) = self.confidence.get_mut(i) {
                *c = c.update(fb);
                if !self.muted[i] {
                    self.scale[i] = c.confidence();
                }
            }
        }

        // (4) up-tree
        let root = self.tree.advance(self.params.disposition, &self.rng);
        if let Some((_, expected)) = self.audit.as_mut() {
            let tree = &self.tree;
            let (intensity, mood): (Vec<f64>, Vec<f64>) = self
                .proposals
                .weights
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    if tree.leaf_is_severed(i, now) {
                        (0.0, 0.0)
                    } else {
                        (w.abs(), w)
                    }
                })
                .unzip();
            expected.push_back((now, pairwise_tree_sum(&intensity), pairwise_tree_sum(&mood)));
        }
        self.tree.submit_batch(&mut self.proposals, now)?;
        let winner = match root {
            Some(w) => {
                if let Some((audit, expected)) = self.audit.as_mut() {
                    let (tag, ei, em) = expected.pop_front().ok_or_else(|| CtmError::Scheduler {
                        tick: now,
                        detail: "root winner without a recorded submission".into(),
                    })?;
                    audit.checked += 1;
                    if tag != w.tag.start_tick || ei != w.chunk.intensity() || em != w.chunk.mood() {
                        audit.mismatches += 1;
                    }
                }
                if w.tag.start_tick + self.params.height as u64 != now {
                    return Err(CtmError::Scheduler {
                        tick: now,
                        detail: format!("competition {} resolved at the wrong tick", w.tag.start_tick),
                    });
                }
                self.stm.receive_winner(w.chunk, now)?;
                true
            }
            None => {
                self.stm.mark_empty(now);
                false
            }
        };

        // (5) broadcast
        self.pending_broadcast = self.stm.broadcast(self.params.processors);

        // (6) links
        if let Some(ev) = &self.pending_broadcast {
            self.link_bookkeeping(&ev.chunk.clone(), now);
        }

        // (7) record
        let winner_chunk = self.pending_broadcast.as_ref().map(|e| e.chunk.clone());
        if let Some(c) = &winner_chunk {
            self.tracker.push(WindowEntry::of(c, commands));
        } else {
            self.tracker.note_commands(commands);
        }
        let state = self.tracker.classify();
        if self.record_stream {
            self.stream.append(StreamEntry {
                tick: now,
                state,
                winner: winner_chunk.clone(),
            })?;
        }
        debug_assert_eq!(winner, winner_chunk.is_some());
        self.tick += 1;
        Ok(TickRecord {
            tick: now,
            state,
            winner: winner_chunk,
            commands,
            notes: std::mem::take(&mut self.pending_notes),
        })
    }

    fn link_bookkeeping(&mut self, chunk: &Chunk, now: Tick) {
        let window = self.links.config().window_heights * self.params.height as u64;
        while let Some(&(_, _, at)) = self.open_queries.front() {
            if now.saturating_sub(at) > window {
                self.open_queries.pop_front();
            } else {
                break;
            }
        }
        match chunk.gist.kind {
            GistKind::Query => self.open_queries.push_back((chunk.origin, chunk.time, now)),
            GistKind::Answer => {
                if let Some(Reference::Chunk { origin, time }) = chunk.gist.refers_to() {
                    if let Some(pos) = self
                        .open_queries
                        .iter()
                        .position(|&(o, t, _)| o == *origin && t == *time)
                    {
                        self.open_queries.remove(pos);
                        if self.links.maybe_form_link(chunk.origin, *origin, now) {
                            self.created_links.push((*origin, chunk.origin, now));
                            self.pending_notes
                                .push(format!("link formed: {origin} <-> {}", chunk.origin));
                        }
                    }
                }
            }
            _ => {}
        }
    }
}
