//! The one-chunk short-term memory, its one-tick broadcast, and the
//! conscious stream with machine-state classification.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::chunk::{Chunk, GistKind, Tick};
use crate::error::{CtmError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum StmContent {
    /// The pipeline is still filling; nothing to broadcast.
    Empty,
    Chunk(Chunk),
}

#[derive(Clone, Debug)]
pub struct Stm {
    current: StmContent,
    tick: Option<Tick>,
}

impl Default for Stm {
    fn default() -> Self {
        Self::new()
    }
}

impl Stm {
    pub fn new() -> Self {
        Self {
            current: StmContent::Empty,
            tick: None,
        }
    }

    pub fn current(&self) -> &StmContent {
        &self.current
    }

    pub fn tick(&self) -> Option<Tick> {
        self.tick
    }

    /// Places the root winner of `tick` in STM. A second winner for the
    /// same tick is a scheduler bug.
    pub fn receive_winner(&mut self, winner: Chunk, tick: Tick) -> Result<()> {
        if let (Some(prev), StmContent::Chunk(_)) = (self.tick, &self.current) {
            if prev >= tick {
                return Err(CtmError::Scheduler {
                    tick,
                    detail: format!("second STM winner for tick {tick} (last at {prev})"),
                });
            }
        }
        self.current = StmContent::Chunk(winner);
        self.tick = Some(tick);
        Ok(())
    }

    /// Marks `tick` as a pipeline-fill tick.
    pub fn mark_empty(&mut self, tick: Tick) {
        self.current = StmContent::Empty;
        self.tick = Some(tick);
    }

    /// The event delivered to every processor at the next tick, or `None`
    /// while the pipeline fills.
    pub fn broadcast(&self, processors: usize) -> Option<BroadcastEvent> {
        match (&self.current, self.tick) {
            (StmContent::Chunk(c), Some(t)) => Some(BroadcastEvent {
                stm_tick: t,
                delivery_tick: t + 1,
                chunk: c.clone(),
                processors,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BroadcastEvent {
    /// Tick at which the chunk reached STM.
    pub stm_tick: Tick,
    /// Tick at which every processor receives it.
    pub delivery_tick: Tick,
    /// The winner, carrying the summed intensity and mood of its
    /// competition.
    pub chunk: Chunk,
    pub processors: usize,
}

impl BroadcastEvent {
    pub fn average_intensity(&self) -> f64 {
        self.chunk.intensity() / self.processors as f64
    }

    pub fn average_mood(&self) -> f64 {
        self.chunk.mood() / self.processors as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineState {
    Awake,
    Asleep,
    Dreaming,
    UnconsciousFlitting,
}

impl MachineState {
    pub fn as_str(self) -> &'static str {
        match self {
            MachineState::Awake => "awake",
            MachineState::Asleep => "asleep",
            MachineState::Dreaming => "dreaming",
            MachineState::UnconsciousFlitting => "unconscious_flitting",
        }
    }
}

/// Summary of one broadcast as seen by the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct WindowEntry {
    pub noop: bool,
    pub dream: bool,
    pub zero_weight: bool,
    /// World commands issued by actuators during the tick.
    pub actuator_commands: u32,
}

impl WindowEntry {
    pub fn of(chunk: &Chunk, actuator_commands: u32) -> Self {
        Self {
            noop: chunk.gist.kind == GistKind::NoOp,
            dream: chunk.gist.kind == GistKind::Dream,
            zero_weight: chunk.weight == 0.0,
            actuator_commands,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub window: usize,
    pub asleep_noop_fraction: f64,
    pub dreaming_fraction: f64,
    pub flitting_zero_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            window: 50,
            asleep_noop_fraction: 0.99,
            dreaming_fraction: 0.5,
            flitting_zero_fraction: 0.95,
        }
    }
}

/// Classifies the machine from its most recent broadcasts.
/// Precedence: asleep, dreaming, unconscious flitting, awake.
pub fn classify_state(window: &[WindowEntry], cfg: &ClassifierConfig) -> MachineState {
    if window.is_empty() {
        return MachineState::Awake;
    }
    let n = window.len() as f64;
    let frac = |pred: fn(&WindowEntry) -> bool| window.iter().filter(|e| pred(e)).count() as f64 / n;
    let commands: u32 = window.iter().map(|e| e.actuator_commands).sum();
    if frac(|e| e.noop) >= cfg.asleep_noop_fraction {
        MachineState::Asleep
    } else if frac(|e| e.dream) >= cfg.dreaming_fraction && commands == 0 {
        MachineState::Dreaming
    } else if frac(|e| e.zero_weight) >= cfg.flitting_zero_fraction {
        MachineState::UnconsciousFlitting
    } else {
        MachineState::Awake
    }
}

/// Fixed-capacity sliding window feeding [`classify_state`].
#[derive(Clone, Debug)]
pub struct StateTracker {
    cfg: ClassifierConfig,
    window: VecDeque<WindowEntry>,
    scratch: Vec<WindowEntry>,
}

impl StateTracker {
    pub fn new(cfg: ClassifierConfig) -> Self {
        let w = cfg.window.max(1);
        Self {
            cfg,
            window: VecDeque::with_capacity(w),
            scratch: Vec::with_capacity(w),
        }
    }

    pub fn push(&mut self, entry: WindowEntry) {
        if self.window.len() == self.cfg.window.max(1) {
            self.window.pop_front();
        }
        self.window.push_back(entry);
    }

    /// Adds actuator activity for a tick without a broadcast.
    pub fn note_commands(&mut self, commands: u32) {
        if let Some(last) = self.window.back_mut() {
            last.actuator_commands += commands;
        }
    }

    pub fn classify(&mut self) -> MachineState {
        self.scratch.clear();
        self.scratch.extend(self.window.iter().copied());
        classify_state(&self.scratch, &self.cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamEntry {
    pub tick: Tick,
    pub state: MachineState,
    pub winner: Option<Chunk>,
}

/// Append-only, tick-ordered record of what reached STM.
#[derive(Clone, Debug, Default)]
pub struct ConsciousStream {
    entries: Vec<StreamEntry>,
}

impl ConsciousStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: StreamEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.tick <= last.tick {
                return Err(CtmError::Scheduler {
                    tick: entry.tick,
                    detail: format!("stream entry not after tick {}", last.tick),
                });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[StreamEntry] {
        &self.entries
    }

    pub fn winners(&self) -> impl Iterator<Item = (Tick, &Chunk)> {
        self.entries
            .iter()
            .filter_map(|e| e.winner.as_ref().map(|c| (e.tick, c)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
