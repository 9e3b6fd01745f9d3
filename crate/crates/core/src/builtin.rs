//! Built-in processors: the MotW holder, body sensors and motors, sleep and
//! dream generators, and the small casts used by the bundled scenarios.
//!
//! Processors that need to say something until it is heard use
//! [`Outgoing`]: the chunk is re-proposed every `retry` ticks until its
//! own broadcast comes back or `patience` ticks pass.

use std::any::Any;
use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunk::{Gist, GistKind, Label, ProcessorId, Reference, Tick};
use crate::motw::{LabelEvent, Motw, MotwSnapshot, FUEL_SOURCE, NOT_SELF, OUTCOME, OUTER_PREFIX, SELF_REFERENT, WILLED_ACTION};
use crate::processor::{Bindings, Feedback, FixedWeight, LinkMessage, Processor, ProcessorCtx, Proposal};
use crate::rng::CounterRng;
use crate::stm::BroadcastEvent;
use crate::world::{ActuatorCommand, SensorReadings};

macro_rules! any_impl {
    () => {
        fn as_any(&self) -> &dyn Any {
            self
        }

        fn as_any_mut(&mut self) -> &mut dyn Any {
            self
        }
    };
}

pub const LOW_FUEL: &str = "LOW_FUEL";
pub const FUEL_RISING: &str = "FUEL_RISING";
pub const FUEL_GAUGE_REFERENT: &str = "fuel_gauge";
pub const BALANCE_QUERY: &str = "BALANCE?";
pub const LEAN: &str = "LEAN";
pub const WHERE_FUEL: &str = "WHERE_FUEL?";
pub const FUEL_DIRECTION: &str = "FUEL_DIRECTION";
pub const SEES_STATION: &str = "SEES_STATION";
pub const REFLECTION: &str = "REFLECTION";
pub const DISOWNED: &str = "DISOWNED";

/// Per-processor RNG stream, independent of the up-tree's coin tosses.
pub fn processor_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(CounterRng::new(seed).derive(0x5052_4f43).bits(index as u64, 0, 0))
}

/// Referent of the outer-world sketch for station `node`.
pub fn station_referent(node: usize) -> String {
    format!("{OUTER_PREFIX}station{node}")
}

pub fn parse_station_referent(r: &str) -> Option<usize> {
    r.strip_prefix(OUTER_PREFIX)?.strip_prefix("station")?.parse().ok()
}

/// A chunk being pushed toward STM until it is heard.
#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    pub gist: Gist,
    pub weight: f64,
    pub created: Tick,
    last_sent: Option<Tick>,
}

impl Outgoing {
    pub fn new(gist: Gist, weight: f64, created: Tick) -> Self {
        Self {
            gist,
            weight,
            created,
            last_sent: None,
        }
    }

    fn expired(&self, now: Tick, patience: Tick) -> bool {
        now > self.created + patience
    }

    /// The proposal for this tick, if a retry is due.
    fn poll(&mut self, now: Tick, retry: Tick) -> Option<Proposal> {
        if self.last_sent.map_or(true, |t| now >= t + retry.max(1)) {
            self.last_sent = Some(now);
            Some(Proposal::new(self.gist.clone(), self.weight))
        } else {
            None
        }
    }

    fn heard(&self, event: &BroadcastEvent, me: ProcessorId) -> bool {
        event.chunk.origin == me && event.chunk.gist == self.gist
    }
}

/// Retry cadence shared by the chatty processors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persistence {
    pub retry: Tick,
    pub patience: Tick,
}

impl Persistence {
    /// One attempt in flight at a time, given up after a few tries.
    pub fn for_height(height: u32) -> Self {
        let h = height as Tick;
        Self {
            retry: h + 1,
            patience: 4 * (h + 1),
        }
    }
}

// ---------------------------------------------------------------------------
// Fillers

/// Idle leaf: always proposes a weight-0 empty chunk.
#[derive(Clone, Debug)]
pub struct Inert {
    name: String,
}

impl Inert {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl Processor for Inert {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&mut self, _ctx: &mut ProcessorCtx<'_>) -> Proposal {
        Proposal::silent()
    }

    fn fixed_weight(&self) -> Option<FixedWeight> {
        Some(FixedWeight::Zero)
    }

    fn hears_broadcasts(&self) -> bool {
        false
    }

    any_impl!();
}

/// Cheap load generator: a hashed weight in `0..8` with an empty gist.
#[derive(Clone, Debug)]
pub struct Stub {
    name: String,
    key: u64,
}

impl Stub {
    pub fn new(name: impl Into<String>, salt: u64) -> Self {
        Self {
            name: name.into(),
            key: crate::rng::mix64(salt ^ 0x5354_5542),
        }
    }
}

impl Processor for Stub {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        Proposal {
            gist: Gist::empty(),
            weight: FixedWeight::Hashed(self.key).at(ctx.tick),
        }
    }

    fn fixed_weight(&self) -> Option<FixedWeight> {
        Some(FixedWeight::Hashed(self.key))
    }

    fn hears_broadcasts(&self) -> bool {
        false
    }

    any_impl!();
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatterParams {
    /// Probability of speaking on a given tick.
    pub rate: f64,
    pub max_weight: f64,
    pub labels: Vec<String>,
}

impl Default for ChatterParams {
    fn default() -> Self {
        Self {
            rate: 0.5,
            max_weight: 3.0,
            labels: vec!["CHATTER".into()],
        }
    }
}

/// Background traffic: random low-weight informational chunks.
#[derive(Clone, Debug)]
pub struct Chatter {
    name: String,
    rate: f64,
    max_weight: f64,
    gist: Gist,
    rng: ChaCha8Rng,
}

impl Chatter {
    pub fn new(name: impl Into<String>, params: &ChatterParams, rng: ChaCha8Rng) -> Self {
        let labels: Vec<&str> = params.labels.iter().map(String::as_str).collect();
        Self {
            name: name.into(),
            rate: params.rate,
            max_weight: params.max_weight,
            gist: Gist::tagged(GistKind::Info, &labels, None),
            rng,
        }
    }

    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }
}

impl Processor for Chatter {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&mut self, _ctx: &mut ProcessorCtx<'_>) -> Proposal {
        if self.rng.gen::<f64>() < self.rate {
            let w = self.rng.gen::<f64>() * self.max_weight;
            Proposal::new(self.gist.clone(), w)
        } else {
            Proposal::silent()
        }
    }

    any_impl!();
}

// ---------------------------------------------------------------------------
// Model of the world

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotwParams {
    /// Weight of the chunk announcing a newly attached label.
    pub announce_weight: f64,
    /// Period of self-reflection chunks once the self-sketch exists.
    pub reflect_every: Tick,
    pub reflect_weight: f64,
}

impl Default for MotwParams {
    fn default() -> Self {
        Self {
            announce_weight: 40.0,
            reflect_every: 50,
            reflect_weight: 15.0,
        }
    }
}

/// A broadcast the model recognised as referring to a labeled sketch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AwareEvent {
    pub tick: Tick,
    pub origin: ProcessorId,
    pub kind: GistKind,
}

/// The processor that owns the model of the world. It folds every
/// broadcast into the model and announces newly attached labels.
#[derive(Debug)]
pub struct MotwProcessor {
    name: String,
    model: Motw,
    params: MotwParams,
    persistence: Persistence,
    queue: VecDeque<Outgoing>,
    aware: Vec<AwareEvent>,
}

impl MotwProcessor {
    pub fn new(name: impl Into<String>, model: Motw, params: MotwParams, persistence: Persistence) -> Self {
        Self {
            name: name.into(),
            model,
            params,
            persistence,
            queue: VecDeque::new(),
            aware: Vec::new(),
        }
    }

    pub fn model(&self) -> &Motw {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Motw {
        &mut self.model
    }

    pub fn aware_events(&self) -> &[AwareEvent] {
        &self.aware
    }

    /// Injects a label into the model and announces it like any other.
    pub fn inject_mislabel(
        &mut self,
        referent: &str,
        label: &str,
        replaces: Option<&str>,
        tick: Tick,
    ) -> crate::error::Result<()> {
        self.model.inject_mislabel(referent, label, replaces, tick)?;
        if let Some(e) = self.model.timeline().last().cloned() {
            self.announce(&e, tick);
        }
        Ok(())
    }

    fn announce(&mut self, e: &LabelEvent, tick: Tick) {
        let gist = Gist::tagged(
            GistKind::Info,
            &[e.label.as_str()],
            Some(Reference::Sketch(e.referent.clone())),
        );
        self.queue
            .push_back(Outgoing::new(gist, self.params.announce_weight, tick));
    }
}

impl Processor for MotwProcessor {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        if self.model.is_consciously_aware(event) {
            self.aware.push(AwareEvent {
                tick: event.delivery_tick,
                origin: event.chunk.origin,
                kind: event.chunk.gist.kind,
            });
        }
        if self.queue.front().is_some_and(|o| o.heard(event, ctx.id)) {
            self.queue.pop_front();
        }
        for e in self.model.observe_broadcast(event) {
            self.announce(&e, ctx.tick);
        }
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        while self
            .queue
            .front()
            .is_some_and(|o| o.expired(now, self.persistence.patience))
        {
            self.queue.pop_front();
        }
        if let Some(front) = self.queue.front_mut() {
            if let Some(p) = front.poll(now, self.persistence.retry) {
                return p;
            }
            return Proposal::silent();
        }
        let every = self.params.reflect_every;
        if every > 0 && now % every == 0 && self.model.sketch(SELF_REFERENT).is_some() {
            return Proposal::new(
                Gist::tagged(GistKind::Info, &[REFLECTION], Some(Reference::sketch(SELF_REFERENT))),
                self.params.reflect_weight,
            );
        }
        Proposal::silent()
    }

    any_impl!();
}

// ---------------------------------------------------------------------------
// Body

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuelGaugeParams {
    /// Level below which the gauge reports.
    pub theta: f64,
    /// Magnitude of the report at an empty tank.
    pub scale: f64,
}

impl Default for FuelGaugeParams {
    fn default() -> Self {
        Self {
            theta: 0.25,
            scale: 100.0,
        }
    }
}

/// The gauge's chunk at fuel `level`: negative and growing as the tank
/// empties below `theta`, silent above it.
pub fn fuel_gauge_propose(level: f64, params: &FuelGaugeParams) -> Proposal {
    let w = -params.scale * ((params.theta - level) / params.theta).max(0.0);
    if w == 0.0 {
        return Proposal::silent();
    }
    Proposal::new(
        Gist::tagged(GistKind::Info, &[LOW_FUEL], Some(Reference::sketch(FUEL_GAUGE_REFERENT))),
        w,
    )
}

#[derive(Clone, Debug)]
pub struct FuelGauge {
    name: String,
    params: FuelGaugeParams,
    level: f64,
}

impl FuelGauge {
    pub fn new(name: impl Into<String>, params: FuelGaugeParams) -> Self {
        Self {
            name: name.into(),
            params,
            level: 1.0,
        }
    }
}

impl Processor for FuelGauge {
    fn name(&self) -> &str {
        &self.name
    }

    fn bindings(&self) -> Bindings {
        Bindings::SENSOR
    }

    fn sense(&mut self, readings: &SensorReadings, _ctx: &mut ProcessorCtx<'_>) {
        self.level = readings.fuel;
    }

    fn propose(&mut self, _ctx: &mut ProcessorCtx<'_>) -> Proposal {
        fuel_gauge_propose(self.level, &self.params)
    }

    any_impl!();
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PumpSensorParams {
    pub weight: f64,
    /// Ticks the report keeps being proposed after the last pumped tick.
    pub linger: Tick,
}

impl Default for PumpSensorParams {
    fn default() -> Self {
        Self {
            weight: 30.0,
            linger: 5,
        }
    }
}

/// Reports rising fuel, pointing at the station it came from.
#[derive(Clone, Debug)]
pub struct PumpSensor {
    name: String,
    params: PumpSensorParams,
    station: Option<usize>,
    until: Tick,
}

impl PumpSensor {
    pub fn new(name: impl Into<String>, params: PumpSensorParams) -> Self {
        Self {
            name: name.into(),
            params,
            station: None,
            until: 0,
        }
    }
}

impl Processor for PumpSensor {
    fn name(&self) -> &str {
        &self.name
    }

    fn bindings(&self) -> Bindings {
        Bindings::SENSOR
    }

    fn sense(&mut self, readings: &SensorReadings, _ctx: &mut ProcessorCtx<'_>) {
        if readings.pumped {
            self.station = Some(readings.position);
            self.until = readings.tick + self.params.linger;
        }
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        match self.station {
            Some(s) if ctx.tick <= self.until => Proposal::new(
                Gist::tagged(GistKind::Info, &[FUEL_RISING], Some(Reference::sketch(station_referent(s)))),
                self.params.weight,
            ),
            _ => Proposal::silent(),
        }
    }

    any_impl!();
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForagerParams {
    /// Stop refuelling at this level.
    pub full_at: f64,
    /// Once a fuel source is known, head there below this level.
    pub seek_below: f64,
}

impl Default for ForagerParams {
    fn default() -> Self {
        Self {
            full_at: 0.95,
            seek_below: 0.4,
        }
    }
}

/// The infant motor system. Hunger (a broadcast LOW_FUEL) sets it
/// wandering and trying the pump at each node; once the model announces a
/// FUEL_SOURCE it walks straight there, and starts earlier.
#[derive(Clone, Debug)]
pub struct Forager {
    name: String,
    params: ForagerParams,
    adjacency: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    hungry: bool,
    known: BTreeSet<usize>,
    position: usize,
    fuel: f64,
    pumped: bool,
    tried_pump_at: Option<usize>,
}

impl Forager {
    pub fn new(name: impl Into<String>, params: ForagerParams, adjacency: Vec<Vec<usize>>, rng: ChaCha8Rng) -> Self {
        Self {
            name: name.into(),
            params,
            adjacency,
            rng,
            hungry: false,
            known: BTreeSet::new(),
            position: 0,
            fuel: 1.0,
            pumped: false,
            tried_pump_at: None,
        }
    }

    pub fn known_sources(&self) -> &BTreeSet<usize> {
        &self.known
    }

    /// First step of a shortest path to the nearest known source.
    fn step_toward_known(&self) -> Option<usize> {
        let n = self.adjacency.len();
        let mut parent = vec![usize::MAX; n];
        let mut queue = VecDeque::from([self.position]);
        parent[self.position] = self.position;
        while let Some(u) = queue.pop_front() {
            if self.known.contains(&u) {
                let mut v = u;
                while parent[v] != self.position {
                    v = parent[v];
                }
                return Some(v);
            }
            for &v in &self.adjacency[u] {
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        None
    }
}

impl Processor for Forager {
    fn name(&self) -> &str {
        &self.name
    }

    fn bindings(&self) -> Bindings {
        Bindings::BOTH
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, _ctx: &mut ProcessorCtx<'_>) {
        let gist = &event.chunk.gist;
        if gist.has_label(LOW_FUEL) {
            self.hungry = true;
        }
        if gist.has_label(FUEL_SOURCE) {
            if let Some(s) = gist.sketch_ref().and_then(|r| parse_station_referent(r.as_str())) {
                self.known.insert(s);
            }
        }
    }

    fn sense(&mut self, readings: &SensorReadings, _ctx: &mut ProcessorCtx<'_>) {
        self.position = readings.position;
        self.fuel = readings.fuel;
        self.pumped = readings.pumped;
        if self.fuel >= self.params.full_at {
            self.hungry = false;
        } else if !self.known.is_empty() && self.fuel < self.params.seek_below {
            self.hungry = true;
        }
    }

    fn actuate(&mut self, _tick: Tick, commands: &mut Vec<ActuatorCommand>) {
        if !self.hungry || self.position >= self.adjacency.len() {
            return;
        }
        if self.known.contains(&self.position) || self.pumped {
            commands.push(ActuatorCommand::Pump);
            return;
        }
        if let Some(next) = self.step_toward_known() {
            if next != self.position {
                commands.push(ActuatorCommand::Move { to: next });
                return;
            }
        }
        if self.tried_pump_at != Some(self.position) {
            self.tried_pump_at = Some(self.position);
            commands.push(ActuatorCommand::Pump);
        } else if let Some(&to) = self.adjacency[self.position].choose(&mut self.rng) {
            commands.push(ActuatorCommand::Move { to });
        }
    }

    fn propose(&mut self, _ctx: &mut ProcessorCtx<'_>) -> Proposal {
        Proposal::silent()
    }

    any_impl!();
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WillerParams {
    pub effector: String,
    pub action: String,
    pub intended: Vec<String>,
    pub weight: f64,
    pub period: Tick,
    pub offset: Tick,
}

impl Default for WillerParams {
    fn default() -> Self {
        Self {
            effector: "leg".into(),
            action: "move".into(),
            intended: vec!["LEG_MOVED".into()],
            weight: 25.0,
            period: 100,
            offset: 10,
        }
    }
}

/// Wills an action on an effector: broadcasts the intent, then acts once
/// the intent has been heard. Stops and complains once its effector is
/// announced NOT-SELF.
#[derive(Clone, Debug)]
pub struct Willer {
    name: String,
    params: WillerParams,
    persistence: Persistence,
    intent: Option<Outgoing>,
    act: bool,
    disowned: bool,
    acts: u64,
}

impl Willer {
    pub fn new(name: impl Into<String>, params: WillerParams, persistence: Persistence) -> Self {
        Self {
            name: name.into(),
            params,
            persistence,
            intent: None,
            act: false,
            disowned: false,
            acts: 0,
        }
    }

    pub fn acts(&self) -> u64 {
        self.acts
    }

    pub fn is_disowned(&self) -> bool {
        self.disowned
    }

    fn intent_gist(&self) -> Gist {
        let mut labels = vec![Label::new(WILLED_ACTION)];
        labels.extend(self.params.intended.iter().map(|l| Label::new(l.as_str())));
        Gist::new(
            GistKind::Info,
            labels,
            self.params.action.as_bytes().to_vec(),
            Some(Reference::sketch(self.params.effector.as_str())),
        )
        .expect("intent gist within cap")
    }
}

impl Processor for Willer {
    fn name(&self) -> &str {
        &self.name
    }

    fn bindings(&self) -> Bindings {
        Bindings::ACTUATOR
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        if self.intent.as_ref().is_some_and(|o| o.heard(event, ctx.id)) {
            self.intent = None;
            self.act = true;
        }
        let gist = &event.chunk.gist;
        if gist.has_label(NOT_SELF)
            && gist.sketch_ref().is_some_and(|r| r.as_str() == self.params.effector)
        {
            self.disowned = true;
            self.intent = None;
        }
    }

    fn actuate(&mut self, _tick: Tick, commands: &mut Vec<ActuatorCommand>) {
        if std::mem::take(&mut self.act) {
            self.acts += 1;
            commands.push(ActuatorCommand::Effector {
                effector: crate::chunk::Referent::new(self.params.effector.as_str()),
                action: self.params.action.clone(),
            });
        }
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        let p = &self.params;
        let on_beat = p.period > 0 && now % p.period == p.offset % p.period;
        if self.disowned {
            if on_beat {
                return Proposal::new(
                    Gist::tagged(GistKind::Info, &[DISOWNED], Some(Reference::sketch(p.effector.as_str()))),
                    p.weight,
                );
            }
            return Proposal::silent();
        }
        if self
            .intent
            .as_ref()
            .is_some_and(|o| o.expired(now, self.persistence.patience))
        {
            self.intent = None;
        }
        if self.intent.is_none() && on_beat {
            self.intent = Some(Outgoing::new(self.intent_gist(), p.weight, now));
        }
        match self.intent.as_mut() {
            Some(o) => o.poll(now, self.persistence.retry).unwrap_or_else(Proposal::silent),
            None => Proposal::silent(),
        }
    }

    any_impl!();
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProprioceptorParams {
    pub weight: f64,
}

impl Default for ProprioceptorParams {
    fn default() -> Self {
        Self { weight: 25.0 }
    }
}

/// Reports the sensed outcome of every effector command.
#[derive(Clone, Debug)]
pub struct Proprioceptor {
    name: String,
    params: ProprioceptorParams,
    persistence: Persistence,
    queue: VecDeque<Outgoing>,
}

impl Proprioceptor {
    pub fn new(name: impl Into<String>, params: ProprioceptorParams, persistence: Persistence) -> Self {
        Self {
            name: name.into(),
            params,
            persistence,
            queue: VecDeque::new(),
        }
    }
}

impl Processor for Proprioceptor {
    fn name(&self) -> &str {
        &self.name
    }

    fn bindings(&self) -> Bindings {
        Bindings::SENSOR
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        if self.queue.front().is_some_and(|o| o.heard(event, ctx.id)) {
            self.queue.pop_front();
        }
    }

    fn sense(&mut self, readings: &SensorReadings, _ctx: &mut ProcessorCtx<'_>) {
        for o in &readings.outcomes {
            let mut labels = vec![Label::new(OUTCOME)];
            labels.extend(o.labels.iter().map(|l| Label::new(l.as_str())));
            if let Ok(gist) = Gist::new(
                GistKind::Info,
                labels,
                o.action.as_bytes().to_vec(),
                Some(Reference::Sketch(o.effector.clone())),
            ) {
                self.queue
                    .push_back(Outgoing::new(gist, self.params.weight, readings.tick));
            }
        }
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        while self
            .queue
            .front()
            .is_some_and(|o| o.expired(now, self.persistence.patience))
        {
            self.queue.pop_front();
        }
        self.queue
            .front_mut()
            .and_then(|o| o.poll(now, self.persistence.retry))
            .unwrap_or_else(Proposal::silent)
    }

    any_impl!();
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SenseParams {
    /// Ambient channel this sense picks up.
    pub channel: String,
    /// Sketch the reports refer to, if any.
    pub referent: Option<String>,
    /// Extra label on every report.
    pub tag: Option<String>,
}

impl Default for SenseParams {
    fn default() -> Self {
        Self {
            channel: "hearing".into(),
            referent: None,
            tag: None,
        }
    }
}

/// A sensory channel turning ambient events into chunks whose weight is
/// the event's weight.
#[derive(Clone, Debug)]
pub struct Sense {
    name: String,
    params: SenseParams,
    current: Option<(String, f64)>,
}

impl Sense {
    pub fn new(name: impl Into<String>, params: SenseParams) -> Self {
        Self {
            name: name.into(),
            params,
            current: None,
        }
    }

    pub fn hearing(name: impl Into<String>) -> Self {
        Self::new(name, SenseParams::default())
    }

    pub fn nociceptor(name: impl Into<String>) -> Self {
        Self::new(
            name,
            SenseParams {
                channel: "touch".into(),
                referent: Some("body".into()),
                tag: Some("DAMAGE".into()),
            },
        )
    }
}

impl Processor for Sense {
    fn name(&self) -> &str {
        &self.name
    }

    fn bindings(&self) -> Bindings {
        Bindings::SENSOR
    }

    fn sense(&mut self, readings: &SensorReadings, _ctx: &mut ProcessorCtx<'_>) {
        self.current = readings
            .ambient
            .iter()
            .filter(|e| e.channel == self.params.channel)
            .max_by(|a, b| a.weight.abs().total_cmp(&b.weight.abs()))
            .map(|e| (e.label.clone(), e.weight));
    }

    fn propose(&mut self, _ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let Some((label, weight)) = self.current.take() else {
            return Proposal::silent();
        };
        let mut labels = vec![label.as_str()];
        if let Some(t) = &self.params.tag {
            labels.push(t.as_str());
        }
        let refers = self.params.referent.as_deref().map(Reference::sketch);
        Proposal::new(Gist::tagged(GistKind::Info, &labels, refers), weight)
    }

    any_impl!();
}

// ---------------------------------------------------------------------------
// Sleep and dreams

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Awake,
    Dream,
    Deep,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SleepPhase {
    pub band: Band,
    pub ticks: Tick,
}

/// A repeating cycle of sleep bands, with the NoOp weight of each band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SleepSchedule {
    pub phases: Vec<SleepPhase>,
    pub awake_weight: f64,
    pub dream_weight: f64,
    pub deep_weight: f64,
}

impl Default for SleepSchedule {
    fn default() -> Self {
        let p = |band, ticks| SleepPhase { band, ticks };
        Self {
            phases: vec![
                p(Band::Awake, 200),
                p(Band::Deep, 400),
                p(Band::Dream, 150),
                p(Band::Deep, 300),
                p(Band::Dream, 150),
            ],
            awake_weight: 0.0,
            dream_weight: 200.0,
            deep_weight: 1000.0,
        }
    }
}

impl SleepSchedule {
    pub fn cycle_length(&self) -> Tick {
        self.phases.iter().map(|p| p.ticks).sum()
    }

    pub fn band_at(&self, tick: Tick) -> Band {
        let len = self.cycle_length();
        if len == 0 {
            return Band::Awake;
        }
        let mut t = tick % len;
        for p in &self.phases {
            if t < p.ticks {
                return p.band;
            }
            t -= p.ticks;
        }
        Band::Awake
    }

    /// Start and end (exclusive) of every band occurrence in `0..until`.
    pub fn intervals(&self, until: Tick) -> Vec<(Band, Tick, Tick)> {
        let mut out = Vec::new();
        if self.cycle_length() == 0 {
            return out;
        }
        let mut t = 0;
        'outer: loop {
            for p in &self.phases {
                if t >= until {
                    break 'outer;
                }
                if p.ticks > 0 {
                    out.push((p.band, t, (t + p.ticks).min(until)));
                }
                t += p.ticks;
            }
        }
        out
    }

    pub fn weight(&self, band: Band) -> f64 {
        match band {
            Band::Awake => self.awake_weight,
            Band::Dream => self.dream_weight,
            Band::Deep => self.deep_weight,
        }
    }
}

/// The sleep processor's chunk at `tick`: a NoOp at the band's weight.
pub fn sleep_cycle(schedule: &SleepSchedule, tick: Tick) -> Proposal {
    Proposal::new(Gist::noop(), schedule.weight(schedule.band_at(tick)))
}

#[derive(Clone, Debug)]
pub struct SleepProcessor {
    name: String,
    schedule: SleepSchedule,
}

impl SleepProcessor {
    pub fn new(name: impl Into<String>, schedule: SleepSchedule) -> Self {
        Self {
            name: name.into(),
            schedule,
        }
    }

    pub fn schedule(&self) -> &SleepSchedule {
        &self.schedule
    }
}

impl Processor for SleepProcessor {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        sleep_cycle(&self.schedule, ctx.tick)
    }

    any_impl!();
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DreamParams {
    pub weight: f64,
}

impl Default for DreamParams {
    fn default() -> Self {
        Self { weight: 300.0 }
    }
}

/// A dream chunk recombining labels of two random sketches from the
/// snapshot, referring to the first. Silent on an empty snapshot.
pub fn dream_propose(snapshot: &MotwSnapshot, weight: f64, rng: &mut impl Rng) -> Proposal {
    if snapshot.is_empty() {
        return Proposal::silent();
    }
    let (a_ref, a_labels) = &snapshot[rng.gen_range(0..snapshot.len())];
    let (_, b_labels) = &snapshot[rng.gen_range(0..snapshot.len())];
    let mut labels: Vec<&str> = Vec::with_capacity(4);
    labels.extend(a_labels.choose_multiple(rng, 2).map(String::as_str));
    labels.extend(b_labels.choose_multiple(rng, 2).map(String::as_str));
    Proposal::new(
        Gist::tagged(GistKind::Dream, &labels, Some(Reference::Sketch(a_ref.clone()))),
        weight,
    )
}

#[derive(Clone, Debug)]
pub struct DreamProcessor {
    name: String,
    schedule: SleepSchedule,
    snapshot: MotwSnapshot,
    params: DreamParams,
    rng: ChaCha8Rng,
}

impl DreamProcessor {
    pub fn new(
        name: impl Into<String>,
        schedule: SleepSchedule,
        snapshot: MotwSnapshot,
        params: DreamParams,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            name: name.into(),
            schedule,
            snapshot,
            params,
            rng,
        }
    }
}

impl Processor for DreamProcessor {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        if self.schedule.band_at(ctx.tick) != Band::Dream {
            return Proposal::silent();
        }
        dream_propose(&self.snapshot, self.params.weight, &mut self.rng)
    }

    any_impl!();
}

// ---------------------------------------------------------------------------
// Riding a bike: a query/answer pair that ends up on a link

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiderParams {
    /// Name of the processor that answers.
    pub balancer: String,
    pub period: Tick,
    pub weight: f64,
}

impl Default for RiderParams {
    fn default() -> Self {
        Self {
            balancer: "balancer".into(),
            period: 250,
            weight: 40.0,
        }
    }
}

/// One balance question and its answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Exchange {
    pub start: Tick,
    pub answered: Tick,
    pub via_link: bool,
}

impl Exchange {
    pub fn round_trip(&self) -> Tick {
        self.answered - self.start
    }
}

#[derive(Clone, Debug)]
struct Ride {
    start: Tick,
    query: Option<Outgoing>,
    asked: Vec<Tick>,
    linked_sent: bool,
}

/// Periodically asks how to balance. Before a link exists the question
/// goes through STM; after, straight to the balancer.
#[derive(Clone, Debug)]
pub struct Rider {
    name: String,
    balancer: ProcessorId,
    params: RiderParams,
    persistence: Persistence,
    ride: Option<Ride>,
    exchanges: Vec<Exchange>,
}

impl Rider {
    pub fn new(name: impl Into<String>, balancer: ProcessorId, params: RiderParams, persistence: Persistence) -> Self {
        Self {
            name: name.into(),
            balancer,
            params,
            persistence,
            ride: None,
            exchanges: Vec::new(),
        }
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }

    fn finish(&mut self, at: Tick, via_link: bool) {
        if let Some(r) = self.ride.take() {
            self.exchanges.push(Exchange {
                start: r.start,
                answered: at,
                via_link,
            });
        }
    }
}

impl Processor for Rider {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        let c = &event.chunk;
        if c.gist.kind == GistKind::Answer && c.origin == self.balancer {
            if let Some(Reference::Chunk { origin, time }) = c.gist.refers_to() {
                if *origin == ctx.id && self.ride.as_ref().is_some_and(|r| r.asked.contains(time)) {
                    self.finish(ctx.tick, false);
                }
            }
        }
        if let Some(r) = self.ride.as_mut() {
            if r.query.as_ref().is_some_and(|o| o.heard(event, ctx.id)) {
                r.query = None;
            }
        }
    }

    fn on_link_message(&mut self, msg: &LinkMessage, ctx: &mut ProcessorCtx<'_>) -> Option<Gist> {
        if msg.from == self.balancer && msg.gist.kind == GistKind::Answer && self.ride.is_some() {
            self.finish(ctx.tick, true);
        }
        None
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        if self.ride.as_ref().is_some_and(|r| now > r.start + self.params.period) {
            self.ride = None;
        }
        if self.ride.is_none() && self.params.period > 0 && now % self.params.period == 0 {
            self.ride = Some(Ride {
                start: now,
                query: None,
                asked: Vec::new(),
                linked_sent: false,
            });
        }
        let linked = ctx.is_linked(self.balancer);
        let Some(r) = self.ride.as_mut() else {
            return Proposal::silent();
        };
        if linked {
            if !r.linked_sent {
                r.linked_sent = true;
                let q = Gist::tagged(GistKind::Query, &[BALANCE_QUERY], None);
                let _ = ctx.send_via_link(self.balancer, q);
            }
            return Proposal::silent();
        }
        if r.query.is_none() && r.asked.is_empty() {
            r.query = Some(Outgoing::new(
                Gist::tagged(GistKind::Query, &[BALANCE_QUERY], None),
                self.params.weight,
                now,
            ));
        }
        let retry = self.persistence.retry;
        match r.query.as_mut().and_then(|o| o.poll(now, retry)) {
            Some(p) => {
                r.asked.push(now);
                p
            }
            None => Proposal::silent(),
        }
    }

    any_impl!();
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalancerParams {
    pub weight: f64,
}

impl Default for BalancerParams {
    fn default() -> Self {
        Self { weight: 40.0 }
    }
}

/// Answers balance questions, over STM or over a link.
#[derive(Clone, Debug)]
pub struct Balancer {
    name: String,
    params: BalancerParams,
    persistence: Persistence,
    pending: Option<Outgoing>,
    answered_by_link: u64,
}

impl Balancer {
    pub fn new(name: impl Into<String>, params: BalancerParams, persistence: Persistence) -> Self {
        Self {
            name: name.into(),
            params,
            persistence,
            pending: None,
            answered_by_link: 0,
        }
    }

    pub fn answered_by_link(&self) -> u64 {
        self.answered_by_link
    }
}

impl Processor for Balancer {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        let c = &event.chunk;
        if self.pending.as_ref().is_some_and(|o| o.heard(event, ctx.id)) {
            self.pending = None;
        }
        if c.gist.kind == GistKind::Query && c.gist.has_label(BALANCE_QUERY) {
            let gist = Gist::tagged(
                GistKind::Answer,
                &[LEAN],
                Some(Reference::Chunk {
                    origin: c.origin,
                    time: c.time,
                }),
            );
            self.pending = Some(Outgoing::new(gist, self.params.weight, ctx.tick));
        }
    }

    fn on_link_message(&mut self, msg: &LinkMessage, _ctx: &mut ProcessorCtx<'_>) -> Option<Gist> {
        if msg.gist.kind == GistKind::Query && msg.gist.has_label(BALANCE_QUERY) {
            self.answered_by_link += 1;
            return Some(Gist::tagged(
                GistKind::Answer,
                &[LEAN],
                Some(Reference::Chunk {
                    origin: msg.from,
                    time: msg.sent,
                }),
            ));
        }
        None
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        if self
            .pending
            .as_ref()
            .is_some_and(|o| o.expired(now, self.persistence.patience))
        {
            self.pending = None;
        }
        // answers have a deadline, so they are pushed every tick
        self.pending
            .as_mut()
            .and_then(|o| o.poll(now, 1))
            .unwrap_or_else(Proposal::silent)
    }

    any_impl!();
}

// ---------------------------------------------------------------------------
// Recalling a name

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuestionerParams {
    pub label: String,
    /// An answer carrying this label ends the episode.
    pub done_label: String,
    pub period: Tick,
    pub weight: f64,
}

impl Default for QuestionerParams {
    fn default() -> Self {
        Self {
            label: "WHATS_HER_NAME".into(),
            done_label: "TINA".into(),
            period: 300,
            weight: 50.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RecallEpisode {
    pub start: Tick,
    pub resolved: Option<Tick>,
}

#[derive(Clone, Debug)]
pub struct Questioner {
    name: String,
    params: QuestionerParams,
    persistence: Persistence,
    query: Option<Outgoing>,
    episodes: Vec<RecallEpisode>,
    open: bool,
}

impl Questioner {
    pub fn new(name: impl Into<String>, params: QuestionerParams, persistence: Persistence) -> Self {
        Self {
            name: name.into(),
            params,
            persistence,
            query: None,
            episodes: Vec::new(),
            open: false,
        }
    }

    pub fn episodes(&self) -> &[RecallEpisode] {
        &self.episodes
    }
}

impl Processor for Questioner {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        if self.query.as_ref().is_some_and(|o| o.heard(event, ctx.id)) {
            self.query = None;
        }
        let g = &event.chunk.gist;
        if self.open && g.kind == GistKind::Answer && g.has_label(&self.params.done_label) {
            self.open = false;
            if let Some(e) = self.episodes.last_mut() {
                e.resolved = Some(ctx.tick);
            }
        }
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        if self.params.period > 0 && now % self.params.period == 0 {
            self.open = true;
            self.episodes.push(RecallEpisode {
                start: now,
                resolved: None,
            });
            self.query = Some(Outgoing::new(
                Gist::tagged(GistKind::Query, &[self.params.label.as_str()], None),
                self.params.weight,
                now,
            ));
        }
        if self
            .query
            .as_ref()
            .is_some_and(|o| o.expired(now, self.persistence.patience))
        {
            self.query = None;
        }
        self.query
            .as_mut()
            .and_then(|o| o.poll(now, self.persistence.retry))
            .unwrap_or_else(Proposal::silent)
    }

    any_impl!();
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallerParams {
    /// Label whose broadcast sets this processor off.
    pub trigger: String,
    pub response: Vec<String>,
    #[serde(default = "answer_kind")]
    pub gist_kind: GistKind,
    #[serde(default = "recall_weight")]
    pub weight: f64,
}

fn answer_kind() -> GistKind {
    GistKind::Answer
}

fn recall_weight() -> f64 {
    30.0
}

/// Responds to one association. All responses refer to the question that
/// started the chain, so feedback on answers lands on the right processor.
#[derive(Clone, Debug)]
pub struct Recaller {
    name: String,
    params: RecallerParams,
    persistence: Persistence,
    question: Option<Reference>,
    pending: Option<Outgoing>,
}

impl Recaller {
    pub fn new(name: impl Into<String>, params: RecallerParams, persistence: Persistence) -> Self {
        Self {
            name: name.into(),
            params,
            persistence,
            question: None,
            pending: None,
        }
    }
}

impl Processor for Recaller {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        let c = &event.chunk;
        if self.pending.as_ref().is_some_and(|o| o.heard(event, ctx.id)) {
            self.pending = None;
        }
        if c.gist.kind == GistKind::Query {
            self.question = Some(Reference::Chunk {
                origin: c.origin,
                time: c.time,
            });
        }
        if c.origin != ctx.id && c.gist.has_label(&self.params.trigger) {
            if let Some(q) = self.question.clone() {
                let labels: Vec<&str> = self.params.response.iter().map(String::as_str).collect();
                let gist = Gist::tagged(self.params.gist_kind, &labels, Some(q));
                self.pending = Some(Outgoing::new(gist, self.params.weight, ctx.tick));
            }
        }
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        if self
            .pending
            .as_ref()
            .is_some_and(|o| o.expired(now, self.persistence.patience))
        {
            self.pending = None;
        }
        self.pending
            .as_mut()
            .and_then(|o| o.poll(now, self.persistence.retry))
            .unwrap_or_else(Proposal::silent)
    }

    any_impl!();
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthParams {
    /// Answers carrying any of these labels are correct; all others are not.
    pub correct: Vec<String>,
}

impl Default for GroundTruthParams {
    fn default() -> Self {
        Self {
            correct: vec!["BEGINS_WITH_T".into(), "TINA".into()],
        }
    }
}

/// The outside teacher: grades every broadcast answer.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    name: String,
    params: GroundTruthParams,
    graded: u64,
}

impl GroundTruth {
    pub fn new(name: impl Into<String>, params: GroundTruthParams) -> Self {
        Self {
            name: name.into(),
            params,
            graded: 0,
        }
    }

    pub fn graded(&self) -> u64 {
        self.graded
    }
}

impl Processor for GroundTruth {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        let c = &event.chunk;
        if c.gist.kind != GistKind::Answer || c.origin == ProcessorId::LESION {
            return;
        }
        let right = self.params.correct.iter().any(|l| c.gist.has_label(l));
        self.graded += 1;
        ctx.give_feedback(
            c.origin,
            if right {
                Feedback::Correct
            } else {
                Feedback::Incorrect
            },
        );
    }

    fn propose(&mut self, _ctx: &mut ProcessorCtx<'_>) -> Proposal {
        Proposal::silent()
    }

    any_impl!();
}

// ---------------------------------------------------------------------------
// Seeing the way to fuel

fn direction_payload(position: usize, hop: usize) -> Vec<u8> {
    format!("{position}:{hop}").into_bytes()
}

fn parse_direction(payload: &[u8]) -> Option<(usize, usize)> {
    let s = std::str::from_utf8(payload).ok()?;
    let (a, b) = s.split_once(':')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionParams {
    pub weight: f64,
    /// Period of the routine "station in sight" report.
    pub report_every: Tick,
    pub answer_weight: f64,
}

impl Default for VisionParams {
    fn default() -> Self {
        Self {
            weight: 10.0,
            report_every: 20,
            answer_weight: 40.0,
        }
    }
}

/// Sees which way the nearest station lies. Reports it routinely and
/// answers direction questions over STM or a link.
#[derive(Clone, Debug)]
pub struct Vision {
    name: String,
    params: VisionParams,
    persistence: Persistence,
    position: usize,
    hop: Option<usize>,
    pending: Option<Outgoing>,
}

impl Vision {
    pub fn new(name: impl Into<String>, params: VisionParams, persistence: Persistence) -> Self {
        Self {
            name: name.into(),
            params,
            persistence,
            position: 0,
            hop: None,
            pending: None,
        }
    }

    fn direction(&self, refers: Option<Reference>, kind: GistKind, label: &str) -> Option<Gist> {
        let hop = self.hop?;
        Gist::new(
            kind,
            vec![Label::new(label)],
            direction_payload(self.position, hop),
            refers,
        )
        .ok()
    }
}

impl Processor for Vision {
    fn name(&self) -> &str {
        &self.name
    }

    fn bindings(&self) -> Bindings {
        Bindings::SENSOR
    }

    fn sense(&mut self, readings: &SensorReadings, _ctx: &mut ProcessorCtx<'_>) {
        self.position = readings.position;
        self.hop = readings.next_hop_to_station;
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        let c = &event.chunk;
        if self.pending.as_ref().is_some_and(|o| o.heard(event, ctx.id)) {
            self.pending = None;
        }
        if c.gist.kind == GistKind::Query && c.gist.has_label(WHERE_FUEL) {
            let refers = Reference::Chunk {
                origin: c.origin,
                time: c.time,
            };
            if let Some(g) = self.direction(Some(refers), GistKind::Answer, FUEL_DIRECTION) {
                self.pending = Some(Outgoing::new(g, self.params.answer_weight, ctx.tick));
            }
        }
    }

    fn on_link_message(&mut self, msg: &LinkMessage, _ctx: &mut ProcessorCtx<'_>) -> Option<Gist> {
        if msg.gist.kind != GistKind::Query || !msg.gist.has_label(WHERE_FUEL) {
            return None;
        }
        let refers = Reference::Chunk {
            origin: msg.from,
            time: msg.sent,
        };
        self.direction(Some(refers), GistKind::Answer, FUEL_DIRECTION)
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        if self
            .pending
            .as_ref()
            .is_some_and(|o| o.expired(now, self.persistence.patience))
        {
            self.pending = None;
        }
        if let Some(p) = self.pending.as_mut().and_then(|o| o.poll(now, 1)) {
            return p;
        }
        let every = self.params.report_every;
        if every > 0 && now % every == 0 {
            if let Some(g) = self.direction(None, GistKind::Info, SEES_STATION) {
                return Proposal::new(g, self.params.weight);
            }
        }
        Proposal::silent()
    }

    any_impl!();
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigatorParams {
    /// Name of the processor that can see.
    pub vision: String,
    pub weight: f64,
    /// Period of idle "which way?" questions.
    pub explore_period: Tick,
    pub seek_below: f64,
    pub full_at: f64,
    /// When not hungry, step to a random neighbor every this many ticks.
    pub wander_every: Tick,
}

impl Default for NavigatorParams {
    fn default() -> Self {
        Self {
            vision: "vision".into(),
            weight: 40.0,
            explore_period: 100,
            seek_below: 0.4,
            full_at: 0.95,
            wander_every: 10,
        }
    }
}

/// Motor system that cannot see: it asks Vision which way to go and
/// follows the answer.
#[derive(Clone, Debug)]
pub struct Navigator {
    name: String,
    vision: ProcessorId,
    params: NavigatorParams,
    persistence: Persistence,
    adjacency: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    position: usize,
    fuel: f64,
    at_station: bool,
    seeking: bool,
    direction: Option<(usize, usize)>,
    query: Option<Outgoing>,
    moves: u64,
}

impl Navigator {
    pub fn new(
        name: impl Into<String>,
        vision: ProcessorId,
        params: NavigatorParams,
        persistence: Persistence,
        adjacency: Vec<Vec<usize>>,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            name: name.into(),
            vision,
            params,
            persistence,
            adjacency,
            rng,
            position: 0,
            fuel: 1.0,
            at_station: false,
            seeking: false,
            direction: None,
            query: None,
            moves: 0,
        }
    }

    pub fn moves(&self) -> u64 {
        self.moves
    }

    fn take_direction(&mut self, gist: &Gist) {
        if gist.has_label(FUEL_DIRECTION) {
            if let Some(d) = parse_direction(gist.payload()) {
                self.direction = Some(d);
            }
        }
    }

    fn has_fresh_direction(&self) -> bool {
        self.direction.is_some_and(|(at, _)| at == self.position)
    }
}

impl Processor for Navigator {
    fn name(&self) -> &str {
        &self.name
    }

    fn bindings(&self) -> Bindings {
        Bindings::BOTH
    }

    fn on_broadcast(&mut self, event: &BroadcastEvent, ctx: &mut ProcessorCtx<'_>) {
        let c = &event.chunk;
        if self.query.as_ref().is_some_and(|o| o.heard(event, ctx.id)) {
            self.query = None;
        }
        if c.gist.kind == GistKind::Answer
            && matches!(c.gist.refers_to(), Some(Reference::Chunk { origin, .. }) if *origin == ctx.id)
        {
            self.take_direction(&c.gist);
        }
    }

    fn on_link_message(&mut self, msg: &LinkMessage, _ctx: &mut ProcessorCtx<'_>) -> Option<Gist> {
        if msg.from == self.vision {
            self.take_direction(&msg.gist);
        }
        None
    }

    fn sense(&mut self, readings: &SensorReadings, _ctx: &mut ProcessorCtx<'_>) {
        self.position = readings.position;
        self.fuel = readings.fuel;
        self.at_station = readings.at_station;
        if self.fuel < self.params.seek_below {
            self.seeking = true;
        } else if self.fuel >= self.params.full_at {
            self.seeking = false;
        }
    }

    fn actuate(&mut self, tick: Tick, commands: &mut Vec<ActuatorCommand>) {
        if !self.seeking {
            let every = self.params.wander_every;
            if every > 0 && tick % every == 0 {
                if let Some(&to) = self.adjacency.get(self.position).and_then(|a| a.choose(&mut self.rng)) {
                    commands.push(ActuatorCommand::Move { to });
                }
            }
            return;
        }
        if self.at_station {
            commands.push(ActuatorCommand::Pump);
        } else if self.has_fresh_direction() {
            let (_, to) = self.direction.take().expect("checked fresh");
            self.moves += 1;
            commands.push(ActuatorCommand::Move { to });
        }
    }

    fn propose(&mut self, ctx: &mut ProcessorCtx<'_>) -> Proposal {
        let now = ctx.tick;
        let need = self.seeking && !self.at_station && !self.has_fresh_direction();
        let curious = self.params.explore_period > 0 && now % self.params.explore_period == 0;
        if ctx.is_linked(self.vision) {
            if need {
                let q = Gist::tagged(GistKind::Query, &[WHERE_FUEL], None);
                let _ = ctx.send_via_link(self.vision, q);
            }
            return Proposal::silent();
        }
        if self
            .query
            .as_ref()
            .is_some_and(|o| o.expired(now, self.persistence.patience))
        {
            self.query = None;
        }
        if self.query.is_none() && (need || curious) {
            self.query = Some(Outgoing::new(
                Gist::tagged(GistKind::Query, &[WHERE_FUEL], None),
                self.params.weight,
                now,
            ));
        }
        self.query
            .as_mut()
            .and_then(|o| o.poll(now, self.persistence.retry))
            .unwrap_or_else(Proposal::silent)
    }

    any_impl!();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauge_is_silent_above_theta_and_grows_below() {
        let p = FuelGaugeParams::default();
        assert_eq!(fuel_gauge_propose(0.5, &p).weight, 0.0);
        assert_eq!(fuel_gauge_propose(0.25, &p).weight, 0.0);
        let half = fuel_gauge_propose(0.125, &p);
        assert!((half.weight + 50.0).abs() < 1e-12);
        assert!(half.gist.has_label(LOW_FUEL));
        assert_eq!(fuel_gauge_propose(0.0, &p).weight, -100.0);
    }

    #[test]
    fn sleep_bands_cycle() {
        let s = SleepSchedule::default();
        assert_eq!(s.cycle_length(), 1200);
        assert_eq!(s.band_at(0), Band::Awake);
        assert_eq!(s.band_at(200), Band::Deep);
        assert_eq!(s.band_at(650), Band::Dream);
        assert_eq!(s.band_at(1199), Band::Dream);
        assert_eq!(s.band_at(1200), Band::Awake);
        let p = sleep_cycle(&s, 300);
        assert_eq!(p.gist.kind, GistKind::NoOp);
        assert_eq!(p.weight, 1000.0);
        let iv = s.intervals(1300);
        assert_eq!(iv[0], (Band::Awake, 0, 200));
        assert_eq!(iv.last().copied(), Some((Band::Awake, 1200, 1300)));
    }

    #[test]
    fn dream_mixes_snapshot_labels() {
        let snap: MotwSnapshot = vec![
            (crate::chunk::Referent::new("a"), vec!["X".into(), "Y".into()]),
            (crate::chunk::Referent::new("b"), vec!["Z".into()]),
        ];
        let mut rng = processor_rng(1, 0);
        for _ in 0..20 {
            let p = dream_propose(&snap, 300.0, &mut rng);
            assert_eq!(p.gist.kind, GistKind::Dream);
            assert!(!p.gist.labels().is_empty());
            assert!(p.gist.sketch_ref().is_some());
        }
        assert_eq!(dream_propose(&Vec::new(), 300.0, &mut rng).weight, 0.0);
    }

    #[test]
    fn station_referents_round_trip() {
        assert_eq!(parse_station_referent(&station_referent(7)), Some(7));
        assert_eq!(parse_station_referent("world/rock"), None);
        assert_eq!(parse_direction(&direction_payload(3, 4)), Some((3, 4)));
    }
}
