//! Scenario configuration (TOML) and the builder turning it into a running
//! instance. A roster lists processors in leaf order; the remaining leaves
//! are padded with fillers.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::builtin::*;
use crate::chunk::{SimParams, Tick};
use crate::error::{CtmError, Result};
use crate::motw::{default_rules, LabelRule, Motw, MotwConfig};
use crate::processor::{LinkConfig, Processor};
use crate::scheduler::{CtmInstance, InstanceOptions};
use crate::stm::ClassifierConfig;
use crate::uptree::NodeAddr;
use crate::world::{World, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessorKind {
    Inert,
    Stub,
    Chatter(ChatterParams),
    Motw(MotwParams),
    FuelGauge(FuelGaugeParams),
    PumpSensor(PumpSensorParams),
    Forager(ForagerParams),
    Willer(WillerParams),
    Proprioceptor(ProprioceptorParams),
    Hearing,
    Nociceptor,
    Sense(SenseParams),
    Sleep(SleepSchedule),
    Dream(DreamParams),
    Rider(RiderParams),
    Balancer(BalancerParams),
    Questioner(QuestionerParams),
    Recaller(RecallerParams),
    GroundTruth(GroundTruthParams),
    Vision(VisionParams),
    Navigator(NavigatorParams),
}

impl ProcessorKind {
    /// Largest |weight| this processor proposes on its own initiative.
    /// Senses are driven by world events and have no fixed bound.
    fn routine_weight(&self) -> Option<f64> {
        use ProcessorKind::*;
        Some(match self {
            Inert | GroundTruth(_) | Forager(_) | Hearing | Nociceptor | Sense(_) | Sleep(_) => return None,
            Stub => 7.0,
            Chatter(p) => p.max_weight,
            Motw(p) => p.announce_weight.max(p.reflect_weight),
            FuelGauge(p) => p.scale,
            PumpSensor(p) => p.weight,
            Willer(p) => p.weight,
            Proprioceptor(p) => p.weight,
            Dream(p) => p.weight,
            Rider(p) => p.weight,
            Balancer(p) => p.weight,
            Questioner(p) => p.weight,
            Recaller(p) => p.weight,
            Vision(p) => p.weight.max(p.answer_weight),
            Navigator(p) => p.weight,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessorSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ProcessorKind,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filler {
    #[default]
    Inert,
    Stub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSketch {
    pub referent: String,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotwSection {
    /// Replaces the built-in rule table when present.
    pub rules: Option<Vec<LabelRule>>,
    pub nesting_depth: Option<u32>,
    /// Sketches present before the run starts.
    pub seed: Vec<SeedSketch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// Severs the edge above a node: give either a processor (its leaf) or
    /// a level and index.
    CutUptreeEdge {
        #[serde(default)]
        processor: Option<String>,
        #[serde(default)]
        level: Option<u32>,
        #[serde(default)]
        index: Option<usize>,
    },
    ZeroConfidence {
        processor: String,
    },
    Mislabel {
        sketch: String,
        label: String,
        #[serde(default)]
        replaces: Option<String>,
    },
    PinDisposition {
        d: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// Tick at which the fault is applied, before that tick runs.
    pub at: Tick,
    #[serde(flatten)]
    pub fault: Fault,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub trace: Option<PathBuf>,
    pub motw_dump: Option<PathBuf>,
}

fn default_height() -> u32 {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_height")]
    pub height: u32,
    pub ticks: Tick,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub disposition: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub links: LinkConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub filler: Filler,
    #[serde(default)]
    pub processors: Vec<ProcessorSpec>,
    #[serde(default)]
    pub world: Option<WorldConfig>,
    #[serde(default)]
    pub motw: MotwSection,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Recompute every root winner's sums independently.
    #[serde(default)]
    pub audit: bool,
    /// Keep the conscious stream in memory.
    #[serde(default = "default_true")]
    pub record_stream: bool,
}

const BUILTIN: &[(&str, &str)] = &[
    ("hunger", include_str!("../scenarios/hunger.toml")),
    ("name-recall", include_str!("../scenarios/name_recall.toml")),
    ("bike", include_str!("../scenarios/bike.toml")),
    ("navigation", include_str!("../scenarios/navigation.toml")),
    ("sleep", include_str!("../scenarios/sleep.toml")),
    ("stub", include_str!("../scenarios/stub.toml")),
    ("body", include_str!("../scenarios/body.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

/// One of the bundled scenarios.
pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| ScenarioConfig::from_toml(src).expect("bundled scenario parses"))
}

impl ScenarioConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| CtmError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CtmError::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<SimParams> {
        SimParams::new(self.height, self.ticks, self.disposition, self.seed)
    }

    pub fn motw_config(&self) -> MotwConfig {
        let mut cfg = MotwConfig {
            rules: self.motw.rules.clone().unwrap_or_else(default_rules),
            ..MotwConfig::default()
        };
        if let Some(d) = self.motw.nesting_depth {
            cfg.nesting_depth = d;
        }
        cfg
    }

    /// The schedule of the first sleep processor, if any.
    pub fn sleep_schedule(&self) -> Option<&SleepSchedule> {
        self.processors.iter().find_map(|p| match &p.kind {
            ProcessorKind::Sleep(s) => Some(s),
            _ => None,
        })
    }

    pub fn leaf_of(&self, name: &str) -> Option<usize> {
        self.processors.iter().position(|p| p.name == name)
    }

    /// Static checks: roster size, unique names, references between
    /// processors, sleep band ordering and fault targets.
    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        if self.processors.len() > params.processors {
            return Err(CtmError::Config(format!(
                "{} processors do not fit in {} leaves",
                self.processors.len(),
                params.processors
            )));
        }
        for (i, p) in self.processors.iter().enumerate() {
            if self.processors[..i].iter().any(|q| q.name == p.name) {
                return Err(CtmError::Config(format!("duplicate processor name {:?}", p.name)));
            }
            let needs = match &p.kind {
                ProcessorKind::Rider(r) => Some(&r.balancer),
                ProcessorKind::Navigator(n) => Some(&n.vision),
                _ => None,
            };
            if let Some(other) = needs {
                if self.leaf_of(other).is_none() {
                    return Err(CtmError::Config(format!("{:?} refers to unknown processor {other:?}", p.name)));
                }
            }
        }
        if let Some(s) = self.sleep_schedule() {
            if !(s.deep_weight > s.dream_weight && s.dream_weight >= s.awake_weight && s.awake_weight >= 0.0) {
                return Err(CtmError::Config(
                    "sleep weights must satisfy deep > dream >= awake >= 0".into(),
                ));
            }
            let routine = self
                .processors
                .iter()
                .filter_map(|p| p.kind.routine_weight())
                .fold(0.0_f64, f64::max);
            if routine >= s.deep_weight {
                return Err(CtmError::Config(format!(
                    "deep-sleep weight {} must exceed every routine weight (max {routine})",
                    s.deep_weight
                )));
            }
        }
        for f in &self.faults {
            match &f.fault {
                Fault::CutUptreeEdge { processor, level, index } => match (processor, level, index) {
                    (Some(name), None, None) => {
                        if self.leaf_of(name).is_none() {
                            return Err(CtmError::Config(format!("fault targets unknown processor {name:?}")));
                        }
                    }
                    (None, Some(l), Some(_)) if *l < self.height => {}
                    _ => {
                        return Err(CtmError::Config(
                            "cut_uptree_edge needs a processor, or a level below the root and an index".into(),
                        ))
                    }
                },
                Fault::ZeroConfidence { processor } => {
                    if self.leaf_of(processor).is_none() {
                        return Err(CtmError::Config(format!("fault targets unknown processor {processor:?}")));
                    }
                }
                Fault::PinDisposition { d } => {
                    crate::chunk::Disposition::new(*d)?;
                }
                Fault::Mislabel { .. } => {}
            }
        }
        Ok(())
    }

    /// Resolves a cut target to a node address.
    pub fn cut_node(&self, fault: &Fault) -> Result<NodeAddr> {
        match fault {
            Fault::CutUptreeEdge {
                processor: Some(name),
                ..
            } => self
                .leaf_of(name)
                .map(|index| NodeAddr { level: 0, index })
                .ok_or_else(|| CtmError::Config(format!("unknown processor {name:?}"))),
            Fault::CutUptreeEdge {
                level: Some(level),
                index: Some(index),
                ..
            } => Ok(NodeAddr {
                level: *level,
                index: *index,
            }),
            _ => Err(CtmError::Config("not a cut fault".into())),
        }
    }

    /// Builds the instance: processors in leaf order, fillers after them.
    pub fn build(&self) -> Result<CtmInstance> {
        self.build_with(Vec::new())
    }

    /// Like [`ScenarioConfig::build`], with `extra` processors placed in the
    /// leaves right after the configured roster, ahead of the fillers.
    pub fn build_with(&self, extra: Vec<Box<dyn Processor>>) -> Result<CtmInstance> {
        self.validate()?;
        let params = self.params()?;
        let seed = self.seed;
        let persistence = Persistence::for_height(self.height);
        let world = self.world.clone().map(World::new).transpose()?;
        let adjacency: Vec<Vec<usize>> = world
            .as_ref()
            .map(|w| (0..w.config().nodes).map(|n| w.neighbors(n).to_vec()).collect())
            .unwrap_or_default();

        let mut model = Motw::new(self.motw_config());
        for s in &self.motw.seed {
            let labels: Vec<&str> = s.labels.iter().map(String::as_str).collect();
            model.seed_sketch(&s.referent, &labels, 0);
        }
        let snapshot = model.snapshot();
        let mut model = Some(model);
        let schedule = self.sleep_schedule().cloned().unwrap_or_default();
        let id_of = |name: &str| {
            crate::chunk::ProcessorId(self.leaf_of(name).expect("validated reference") as u32)
        };

        let mut roster: Vec<Box<dyn Processor>> = Vec::with_capacity(params.processors);
        for (i, spec) in self.processors.iter().enumerate() {
            let name = spec.name.clone();
            let rng = || processor_rng(seed, i);
            let p: Box<dyn Processor> = match &spec.kind {
                ProcessorKind::Inert => Box::new(Inert::new(name)),
                ProcessorKind::Stub => Box::new(Stub::new(name, seed ^ (i as u64).wrapping_mul(0x9e37_79b9))),
                ProcessorKind::Chatter(p) => Box::new(Chatter::new(name, p, rng())),
                ProcessorKind::Motw(p) => {
                    let m = model
                        .take()
                        .ok_or_else(|| CtmError::Config("only one motw processor is allowed".into()))?;
                    Box::new(MotwProcessor::new(name, m, p.clone(), persistence))
                }
                ProcessorKind::FuelGauge(p) => Box::new(FuelGauge::new(name, *p)),
                ProcessorKind::PumpSensor(p) => Box::new(PumpSensor::new(name, *p)),
                ProcessorKind::Forager(p) => Box::new(Forager::new(name, *p, adjacency.clone(), rng())),
                ProcessorKind::Willer(p) => Box::new(Willer::new(name, p.clone(), persistence)),
                ProcessorKind::Proprioceptor(p) => Box::new(Proprioceptor::new(name, *p, persistence)),
                ProcessorKind::Hearing => Box::new(Sense::hearing(name)),
                ProcessorKind::Nociceptor => Box::new(Sense::nociceptor(name)),
                ProcessorKind::Sense(p) => Box::new(Sense::new(name, p.clone())),
                ProcessorKind::Sleep(s) => Box::new(SleepProcessor::new(name, s.clone())),
                ProcessorKind::Dream(p) => Box::new(DreamProcessor::new(
                    name,
                    schedule.clone(),
                    snapshot.clone(),
                    *p,
                    rng(),
                )),
                ProcessorKind::Rider(p) => Box::new(Rider::new(name, id_of(&p.balancer), p.clone(), persistence)),
                ProcessorKind::Balancer(p) => Box::new(Balancer::new(name, *p, persistence)),
                ProcessorKind::Questioner(p) => Box::new(Questioner::new(name, p.clone(), persistence)),
                ProcessorKind::Recaller(p) => Box::new(Recaller::new(name, p.clone(), persistence)),
                ProcessorKind::GroundTruth(p) => Box::new(GroundTruth::new(name, p.clone())),
                ProcessorKind::Vision(p) => Box::new(Vision::new(name, *p, persistence)),
                ProcessorKind::Navigator(p) => {
                    Box::new(Navigator::new(
                    name,
                    id_of(&p.vision),
                    p.clone(),
                    persistence,
                    adjacency.clone(),
                    rng(),
                ))
                }
            };
            roster.push(p);
        }
        if roster.len() + extra.len() > params.processors {
            return Err(CtmError::Config(format!(
                "{} extra processors do not fit in {} free leaves",
                extra.len(),
                params.processors - roster.len()
            )));
        }
        roster.extend(extra);
        for i in roster.len()..params.processors {
            roster.push(match self.filler {
                Filler::Inert => Box::new(Inert::new(format!("inert{i}"))),
                Filler::Stub => Box::new(Stub::new(
                    format!("stub{i}"),
                    seed ^ (i as u64).wrapping_mul(0x9e37_79b9),
                )),
            });
        }

        CtmInstance::new(
            params,
            roster,
            world,
            InstanceOptions {
                links: self.links,
                classifier: self.classifier,
                beta: self.beta,
                record_stream: self.record_stream,
                audit_aggregates: self.audit,
            },
        )
    }
}
