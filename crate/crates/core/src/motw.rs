//! Model of the world: labeled sketches of inner- and outer-world
//! referents, a prediction log for willed actions, and the awareness
//! predicate.
//!
//! Labels are attached by a declarative rule table ([`LabelRule`]) driven
//! by broadcasts. Willed actions are predicted with [`Motw::simulate_action`]
//! and checked against sensed outcomes with [`Motw::record_outcome`];
//! enough consecutive successful, correctly predicted acts on an effector
//! label it `SELF`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chunk::{Referent, Tick};
use crate::error::{CtmError, Result};
use crate::stm::BroadcastEvent;

pub const SELF: &str = "SELF";
pub const NOT_SELF: &str = "NOT-SELF";
pub const FEELS: &str = "FEELS";
pub const CONSCIOUS: &str = "CONSCIOUS";
pub const FUEL_SOURCE: &str = "FUEL_SOURCE";
pub const PAIN_RELIEVER: &str = "PAIN_RELIEVER";
pub const PLEASURE_PROVIDER: &str = "PLEASURE_PROVIDER";
pub const LOW_FUEL_PAIN: &str = "LOW_FUEL/PAIN";

/// Gist label marking a willed action; the remaining labels are the
/// intended outcome and the payload is the action name.
pub const WILLED_ACTION: &str = "WILLED_ACTION";
/// Gist label marking a sensed action outcome.
pub const OUTCOME: &str = "OUTCOME";

/// Referent of the machine's own sketch.
pub const SELF_REFERENT: &str = "self";

/// Prefix of outer-world referents; everything else is inner world.
pub const OUTER_PREFIX: &str = "world/";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Inner,
    Outer,
}

impl Partition {
    pub fn of(referent: &Referent) -> Self {
        if referent.0.starts_with(OUTER_PREFIX) {
            Partition::Outer
        } else {
            Partition::Inner
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchLabel {
    pub label: String,
    pub valence: f64,
    pub tick: Tick,
    pub rule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub referent: Referent,
    pub partition: Partition,
    pub labels: Vec<SketchLabel>,
    pub fidelity: f64,
    pub created: Tick,
    pub observations: u64,
}

impl Sketch {
    fn new(referent: Referent, tick: Tick) -> Self {
        Self {
            partition: Partition::of(&referent),
            referent,
            labels: Vec::new(),
            fidelity: 1.0,
            created: tick,
            observations: 0,
        }
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l.label == label)
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.label.clone()).collect()
    }
}

/// One level of the self-sketch recursion (a sketch of the machine that
/// contains a sketch of the machine, ...).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedSketch {
    pub depth: u32,
    pub fidelity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "when")]
pub enum Trigger {
    /// A broadcast carries `label`.
    BroadcastLabel { label: String },
    /// A broadcast carrying `relief` follows one carrying `pain` within
    /// `window` ticks.
    Relief { pain: String, relief: String, window: Tick },
    /// `confirmations` consecutive willed acts on an effector were
    /// predicted correctly and achieved their intended outcome.
    ConfirmedWill { confirmations: u32 },
    /// The self-sketch exists and at least `count` aware broadcasts have
    /// referred to it.
    SelfAwareness { count: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The sketch the triggering broadcast refers to.
    Referenced,
    SelfSketch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub name: String,
    pub label: String,
    pub valence: f64,
    pub target: Target,
    pub trigger: Trigger,
}

impl LabelRule {
    fn new(name: &str, label: &str, valence: f64, target: Target, trigger: Trigger) -> Self {
        Self {
            name: name.into(),
            label: label.into(),
            valence,
            target,
            trigger,
        }
    }
}

/// The built-in rule table.
pub fn default_rules() -> Vec<LabelRule> {
    let relief = || Trigger::Relief {
        pain: "LOW_FUEL".into(),
        relief: "FUEL_RISING".into(),
        window: 300,
    };
    vec![
        LabelRule::new(
            "low_fuel_pain",
            LOW_FUEL_PAIN,
            -1.0,
            Target::Referenced,
            Trigger::BroadcastLabel { label: "LOW_FUEL".into() },
        ),
        LabelRule::new(
            "nociception",
            "PAIN",
            -1.0,
            Target::Referenced,
            Trigger::BroadcastLabel { label: "DAMAGE".into() },
        ),
        LabelRule::new("pain_reliever", PAIN_RELIEVER, 1.0, Target::Referenced, relief()),
        LabelRule::new("pleasure_provider", PLEASURE_PROVIDER, 1.0, Target::Referenced, relief()),
        LabelRule::new("fuel_source", FUEL_SOURCE, 1.0, Target::Referenced, relief()),
        LabelRule::new("feels", FEELS, 1.0, Target::SelfSketch, relief()),
        LabelRule::new(
            "self",
            SELF,
            1.0,
            Target::Referenced,
            Trigger::ConfirmedWill { confirmations: 3 },
        ),
        LabelRule::new(
            "conscious",
            CONSCIOUS,
            1.0,
            Target::SelfSketch,
            Trigger::SelfAwareness { count: 10 },
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotwConfig {
    pub rules: Vec<LabelRule>,
    /// Depth at which the self-sketch recursion reaches fidelity 0.
    pub nesting_depth: u32,
}

impl Default for MotwConfig {
    fn default() -> Self {
        Self {
            rules: default_rules(),
            nesting_depth: 3,
        }
    }
}

impl MotwConfig {
    fn self_confirmations(&self) -> u32 {
        self.rules
            .iter()
            .find_map(|r| match r.trigger {
                Trigger::ConfirmedWill { confirmations } => Some(confirmations),
                _ => None,
            })
            .unwrap_or(u32::MAX)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStatus {
    Pending,
    Confirmed,
    Disconfirmed,
    /// No sketch of the effector existed; nothing to check against.
    Unconfirmable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tick: Tick,
    pub effector: Referent,
    pub action: String,
    pub intended: Vec<String>,
    pub predicted: Vec<String>,
    pub observed: Option<Vec<String>>,
    pub status: PredictionStatus,
    pub resolved: Option<Tick>,
}

impl Prediction {
    /// Confirmed and the willed outcome actually happened.
    pub fn is_successful_will(&self) -> bool {
        self.status == PredictionStatus::Confirmed
            && self.observed.as_deref() == Some(self.intended.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PredictedOutcome {
    Outcome(Vec<String>),
    NoModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Association {
    outcome: Vec<String>,
    strength: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub tick: Tick,
    pub referent: Referent,
    pub label: String,
    pub rule: String,
    /// Label removed by this event (mislabel injection only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaced: Option<String>,
}

/// Labeled sketches as seen from outside the model (the dream processor
/// works from one).
pub type MotwSnapshot = Vec<(Referent, Vec<String>)>;

#[derive(Clone, Debug, Default)]
pub struct Motw {
    cfg: MotwConfig,
    sketches: BTreeMap<Referent, Sketch>,
    predictions: Vec<Prediction>,
    associations: BTreeMap<(Referent, String), Association>,
    streak: BTreeMap<Referent, u32>,
    last_pain: BTreeMap<String, Tick>,
    self_aware_events: u32,
    deferred_self_labels: Vec<(String, f64, String, Tick)>,
    timeline: Vec<LabelEvent>,
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v.dedup();
    v
}

impl Motw {
    pub fn new(cfg: MotwConfig) -> Self {
        Self {
            cfg,
            ..Self::default()
        }
    }

    pub fn config(&self) -> &MotwConfig {
        &self.cfg
    }

    pub fn sketch(&self, referent: &str) -> Option<&Sketch> {
        self.sketches.get(&Referent::new(referent))
    }

    pub fn sketches(&self) -> impl Iterator<Item = &Sketch> {
        self.sketches.values()
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    pub fn timeline(&self) -> &[LabelEvent] {
        &self.timeline
    }

    pub fn first_label_tick(&self) -> Option<Tick> {
        self.timeline.first().map(|e| e.tick)
    }

    /// Tick at which `label` was first attached anywhere.
    pub fn label_attached_at(&self, label: &str) -> Option<Tick> {
        self.timeline
            .iter()
            .find(|e| e.label == label && e.replaced.is_none())
            .map(|e| e.tick)
    }

    pub fn snapshot(&self) -> MotwSnapshot {
        self.sketches
            .values()
            .filter(|s| !s.labels.is_empty())
            .map(|s| (s.referent.clone(), s.label_names()))
            .collect()
    }

    fn ensure_sketch(&mut self, referent: &Referent, tick: Tick) -> &mut Sketch {
        self.sketches
            .entry(referent.clone())
            .or_insert_with(|| Sketch::new(referent.clone(), tick))
    }

    /// Attaches `label` unless already present. Returns whether it was new.
    fn attach(&mut self, referent: &Referent, label: &str, valence: f64, rule: &str, tick: Tick) -> bool {
        let sketch = self.ensure_sketch(referent, tick);
        if sketch.has_label(label) {
            return false;
        }
        sketch.labels.push(SketchLabel {
            label: label.into(),
            valence,
            tick,
            rule: rule.into(),
        });
        self.timeline.push(LabelEvent {
            tick,
            referent: referent.clone(),
            label: label.into(),
            rule: rule.into(),
            replaced: None,
        });
        if label == SELF && referent.0 != SELF_REFERENT {
            self.discover_self(tick);
        }
        true
    }

    fn discover_self(&mut self, tick: Tick) {
        let me = Referent::new(SELF_REFERENT);
        if self.sketches.contains_key(&me) {
            return;
        }
        self.ensure_sketch(&me, tick);
        self.attach(&me, SELF, 1.0, "self", tick);
        for (label, valence, rule, _) in std::mem::take(&mut self.deferred_self_labels) {
            self.attach(&me, &label, valence, &rule, tick);
        }
    }

    fn attach_to_self(&mut self, label: &str, valence: f64, rule: &str, tick: Tick) {
        let me = Referent::new(SELF_REFERENT);
        if self.sketches.contains_key(&me) {
            self.attach(&me, label, valence, rule, tick);
        } else if !self.deferred_self_labels.iter().any(|d| d.0 == label) {
            self.deferred_self_labels
                .push((label.into(), valence, rule.into(), tick));
        }
    }

    /// A broadcast is an aware event iff its chunk refers to a sketch that
    /// carries at least one label.
    pub fn is_consciously_aware(&self, event: &BroadcastEvent) -> bool {
        event
            .chunk
            .gist
            .sketch_ref()
            .and_then(|r| self.sketches.get(r))
            .is_some_and(|s| !s.labels.is_empty())
    }

    /// Folds one broadcast into the model: creates or updates the
    /// referenced sketch, logs willed actions and sensed outcomes, and
    /// fires label rules. Returns the labels attached by this call.
    pub fn observe_broadcast(&mut self, event: &BroadcastEvent) -> Vec<LabelEvent> {
        let before = self.timeline.len();
        let tick = event.delivery_tick;
        let aware = self.is_consciously_aware(event);
        let gist = &event.chunk.gist;
        let referent = gist.sketch_ref().cloned();

        if let Some(r) = &referent {
            self.ensure_sketch(r, tick).observations += 1;
            if aware && r.0 == SELF_REFERENT {
                self.self_aware_events += 1;
            }
        }

        if let Some(r) = &referent {
            let rest: Vec<String> = gist
                .labels()
                .iter()
                .map(|l| l.name.clone())
                .filter(|n| n != WILLED_ACTION && n != OUTCOME)
                .collect();
            let action = String::from_utf8_lossy(gist.payload()).into_owned();
            if gist.has_label(WILLED_ACTION) {
                self.simulate_action(r, &action, rest, tick);
            } else if gist.has_label(OUTCOME) {
                self.record_outcome(r, &action, rest, tick);
            }
        }

        let rules = self.cfg.rules.clone();
        for rule in &rules {
            match &rule.trigger {
                Trigger::BroadcastLabel { label } => {
                    if gist.has_label(label) {
                        self.apply(rule, referent.as_ref(), tick);
                    }
                }
                Trigger::Relief { pain, relief, window } => {
                    if gist.has_label(relief) {
                        let relieved = self
                            .last_pain
                            .get(pain)
                            .is_some_and(|&p| tick.saturating_sub(p) <= *window);
                        if relieved {
                            self.apply(rule, referent.as_ref(), tick);
                        }
                    }
                }
                Trigger::SelfAwareness { count } => {
                    if self.self_aware_events >= *count
                        && self.sketches.contains_key(&Referent::new(SELF_REFERENT))
                    {
                        self.apply(rule, None, tick);
                    }
                }
                Trigger::ConfirmedWill { .. } => {}
            }
        }
        for rule in &rules {
            if let Trigger::Relief { pain, .. } = &rule.trigger {
                if gist.has_label(pain) {
                    self.last_pain.insert(pain.clone(), tick);
                }
            }
        }
        self.timeline[before..].to_vec()
    }

    fn apply(&mut self, rule: &LabelRule, referenced: Option<&Referent>, tick: Tick) {
        match rule.target {
            Target::Referenced => {
                if let Some(r) = referenced {
                    self.attach(r, &rule.label, rule.valence, &rule.name, tick);
                }
            }
            Target::SelfSketch => self.attach_to_self(&rule.label, rule.valence, &rule.name, tick),
        }
    }

    /// Predicts the outcome of willing `action` on `effector` and logs the
    /// prediction for later confirmation. Without a sketch of the effector
    /// there is no model to predict from.
    pub fn simulate_action(
        &mut self,
        effector: &Referent,
        action: &str,
        intended: Vec<String>,
        tick: Tick,
    ) -> PredictedOutcome {
        let intended = sorted(intended);
        if !self.sketches.contains_key(effector) {
            self.predictions.push(Prediction {
                tick,
                effector: effector.clone(),
                action: action.into(),
                intended,
                predicted: Vec::new(),
                observed: None,
                status: PredictionStatus::Unconfirmable,
                resolved: None,
            });
            return PredictedOutcome::NoModel;
        }
        let predicted = match self.associations.get(&(effector.clone(), action.to_string())) {
            Some(a) if a.strength > 0 => a.outcome.clone(),
            _ => intended.clone(),
        };
        self.predictions.push(Prediction {
            tick,
            effector: effector.clone(),
            action: action.into(),
            intended,
            predicted: predicted.clone(),
            observed: None,
            status: PredictionStatus::Pending,
            resolved: None,
        });
        PredictedOutcome::Outcome(predicted)
    }

    /// Checks the oldest pending prediction for `(effector, action)`
    /// against what the sensors reported. Label sets are compared, not
    /// payloads. Returns the resolved status, if a prediction was pending.
    pub fn record_outcome(
        &mut self,
        effector: &Referent,
        action: &str,
        observed: Vec<String>,
        tick: Tick,
    ) -> Option<PredictionStatus> {
        let observed = sorted(observed);
        let idx = self.predictions.iter().position(|p| {
            p.status == PredictionStatus::Pending && &p.effector == effector && p.action == action
        })?;
        let p = &mut self.predictions[idx];
        let confirmed = p.predicted == observed;
        p.status = if confirmed {
            PredictionStatus::Confirmed
        } else {
            PredictionStatus::Disconfirmed
        };
        p.observed = Some(observed.clone());
        p.resolved = Some(tick);
        let success = p.is_successful_will();
        let status = p.status;

        let assoc = self
            .associations
            .entry((effector.clone(), action.to_string()))
            .or_insert(Association {
                outcome: observed.clone(),
                strength: 0,
            });
        if confirmed {
            assoc.strength += 1;
        } else {
            assoc.strength -= 1;
            if assoc.strength <= 0 {
                // the old belief is exhausted; adopt what was sensed
                assoc.outcome = observed;
                assoc.strength = 1;
            }
        }

        let streak = self.streak.entry(effector.clone()).or_insert(0);
        if success {
            *streak += 1;
        } else {
            *streak = 0;
        }
        self.label_self(effector, tick);
        Some(status)
    }

    /// Labels `effector` SELF once the prediction log shows the configured
    /// number of consecutive successful willed acts on it. Returns whether
    /// the label is present afterwards.
    pub fn label_self(&mut self, effector: &Referent, tick: Tick) -> bool {
        let need = self.cfg.self_confirmations();
        if self.streak.get(effector).copied().unwrap_or(0) >= need {
            self.attach(effector, SELF, 1.0, "self", tick);
        }
        self.sketches.get(effector).is_some_and(|s| s.has_label(SELF))
    }

    /// Forces a label onto a sketch, optionally replacing an existing one.
    pub fn inject_mislabel(
        &mut self,
        referent: &str,
        label: &str,
        replaces: Option<&str>,
        tick: Tick,
    ) -> Result<()> {
        let r = Referent::new(referent);
        let sketch = self
            .sketches
            .get_mut(&r)
            .ok_or_else(|| CtmError::UnknownSketch(referent.into()))?;
        if let Some(old) = replaces {
            sketch.labels.retain(|l| l.label != old);
        }
        if !sketch.has_label(label) {
            sketch.labels.push(SketchLabel {
                label: label.into(),
                valence: -1.0,
                tick,
                rule: "injected".into(),
            });
        }
        self.timeline.push(LabelEvent {
            tick,
            referent: r,
            label: label.into(),
            rule: "injected".into(),
            replaced: replaces.map(str::to_string),
        });
        Ok(())
    }

    /// Seeds a labeled sketch directly (a model grown before the run).
    pub fn seed_sketch(&mut self, referent: &str, labels: &[&str], tick: Tick) {
        let r = Referent::new(referent);
        for l in labels {
            self.attach(&r, l, 0.0, "seed", tick);
        }
    }

    /// The self-sketch recursion: each nested level is degraded until the
    /// fidelity reaches 0 at the configured depth.
    pub fn self_sketch_recursion(&self) -> Vec<NestedSketch> {
        let depth = self.cfg.nesting_depth.max(1);
        (0..=depth)
            .map(|k| NestedSketch {
                depth: k,
                fidelity: (depth - k) as f64 / depth as f64,
            })
            .collect()
    }

    pub fn pathologies(&self) -> Vec<Pathology> {
        let mut out = Vec::new();
        for s in self.sketches.values() {
            if s.has_label(NOT_SELF) {
                let working = self
                    .predictions
                    .iter()
                    .any(|p| p.effector == s.referent && p.is_successful_will());
                if working {
                    out.push(Pathology::BodyIntegrityDysphoria(s.referent.clone()));
                }
            }
            if s.referent.0 == SELF_REFERENT && s.has_label("DEAD") {
                out.push(Pathology::Cotard);
            }
            if s.has_label("SPY") {
                out.push(Pathology::Paranoia(s.referent.clone()));
            }
        }
        out
    }

    pub fn dump(&self) -> MotwDump {
        MotwDump {
            sketches: self.sketches.values().cloned().collect(),
            predictions: self.predictions.clone(),
            timeline: self.timeline.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pathology {
    BodyIntegrityDysphoria(Referent),
    Cotard,
    Paranoia(Referent),
}

/// JSON document of the model for post-run inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotwDump {
    pub sketches: Vec<Sketch>,
    pub predictions: Vec<Prediction>,
    pub timeline: Vec<LabelEvent>,
}
