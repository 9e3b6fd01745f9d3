//! A minimal outer world: a graph of locations with fuel stations, a fuel
//! tank that burns down every tick, a few effectors, and a schedule of
//! ambient events for the sensors.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::chunk::{Referent, Tick};
use crate::error::{CtmError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbientEvent {
    pub tick: Tick,
    /// Sensory channel that picks the event up, e.g. `hearing` or `touch`.
    pub channel: String,
    pub label: String,
    pub weight: f64,
    #[serde(default = "one")]
    pub duration: Tick,
}

fn one() -> Tick {
    1
}

/// Outcome, as sensed, of willing `action` on `effector`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectorSpec {
    pub effector: String,
    pub action: String,
    pub outcome: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub stations: Vec<usize>,
    pub start: usize,
    pub fuel: f64,
    pub burn: f64,
    pub pump_rate: f64,
    pub events: Vec<AmbientEvent>,
    pub effectors: Vec<EffectorSpec>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            nodes: 6,
            edges: (0..6).map(|i| (i, (i + 1) % 6)).collect(),
            stations: vec![3],
            start: 0,
            fuel: 1.0,
            burn: 0.0,
            pump_rate: 0.1,
            events: Vec::new(),
            effectors: vec![EffectorSpec {
                effector: "leg".into(),
                action: "move".into(),
                outcome: vec!["LEG_MOVED".into()],
            }],
        }
    }
}

impl WorldConfig {
    pub fn ring(nodes: usize, stations: Vec<usize>) -> Self {
        Self {
            nodes,
            edges: (0..nodes).map(|i| (i, (i + 1) % nodes)).collect(),
            stations,
            ..Self::default()
        }
    }
}

/// Label reported for an effector command the world cannot carry out.
pub const NO_CHANGE: &str = "NO_CHANGE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "command")]
pub enum ActuatorCommand {
    Move { to: usize },
    Pump,
    Effector { effector: Referent, action: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionOutcome {
    pub effector: Referent,
    pub action: String,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensorReadings {
    pub tick: Tick,
    pub position: usize,
    pub fuel: f64,
    pub at_station: bool,
    /// Pumping raised the fuel level this tick.
    pub pumped: bool,
    pub pump_failed: bool,
    pub move_failed: bool,
    /// Next node on a shortest path to the nearest station.
    pub next_hop_to_station: Option<usize>,
    pub ambient: Vec<AmbientEvent>,
    pub outcomes: Vec<ActionOutcome>,
}

#[derive(Clone, Debug)]
pub struct World {
    cfg: WorldConfig,
    adjacency: Vec<Vec<usize>>,
    /// Per node: next hop toward the nearest station.
    next_hop: Vec<Option<usize>>,
    position: usize,
    fuel: f64,
    starved_at: Option<Tick>,
    readings: SensorReadings,
    commands_total: u64,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        if cfg.nodes == 0 {
            return Err(CtmError::Config("world needs at least one node".into()));
        }
        if cfg.start >= cfg.nodes {
            return Err(CtmError::Config(format!("start node {} out of range", cfg.start)));
        }
        if !(0.0..=1.0).contains(&cfg.fuel) {
            return Err(CtmError::Config(format!("initial fuel {} outside [0, 1]", cfg.fuel)));
        }
        if cfg.burn < 0.0 || cfg.pump_rate < 0.0 {
            return Err(CtmError::Config("burn and pump rates must be non-negative".into()));
        }
        let mut adjacency = vec![Vec::new(); cfg.nodes];
        for &(a, b) in &cfg.edges {
            if a >= cfg.nodes || b >= cfg.nodes {
                return Err(CtmError::Config(format!("edge ({a}, {b}) out of range")));
            }
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        if let Some(&s) = cfg.stations.iter().find(|&&s| s >= cfg.nodes) {
            return Err(CtmError::Config(format!("station {s} out of range")));
        }
        let next_hop = Self::hops(&adjacency, &cfg.stations);
        Ok(Self {
            position: cfg.start,
            fuel: cfg.fuel,
            adjacency,
            next_hop,
            starved_at: None,
            readings: SensorReadings::default(),
            commands_total: 0,
            cfg,
        })
    }

    /// Multi-source BFS from the stations; each node points to its parent
    /// in the BFS forest, i.e. one step closer to a station.
    fn hops(adjacency: &[Vec<usize>], stations: &[usize]) -> Vec<Option<usize>> {
        let mut hop = vec![None; adjacency.len()];
        let mut seen = vec![false; adjacency.len()];
        let mut queue = VecDeque::new();
        for &s in stations {
            if !seen[s] {
                seen[s] = true;
                hop[s] = Some(s);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    hop[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        hop
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn fuel(&self) -> f64 {
        self.fuel
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn is_station(&self, node: usize) -> bool {
        self.cfg.stations.contains(&node)
    }

    pub fn starved_at(&self) -> Option<Tick> {
        self.starved_at
    }

    pub fn commands_total(&self) -> u64 {
        self.commands_total
    }

    pub fn readings(&self) -> &SensorReadings {
        &self.readings
    }

    /// Advances the world one tick under `commands` and returns what the
    /// sensors pick up.
    pub fn step(&mut self, commands: &[ActuatorCommand], tick: Tick) -> &SensorReadings {
        let r = &mut self.readings;
        r.tick = tick;
        r.pumped = false;
        r.pump_failed = false;
        r.move_failed = false;
        r.ambient.clear();
        r.outcomes.clear();
        self.commands_total += commands.len() as u64;

        for cmd in commands {
            match cmd {
                ActuatorCommand::Move { to } => {
                    if self.adjacency[self.position].contains(to) {
                        self.position = *to;
                    } else {
                        r.move_failed = true;
                    }
                }
                ActuatorCommand::Pump => {
                    if self.cfg.stations.contains(&self.position) && self.fuel < 1.0 {
                        self.fuel = (self.fuel + self.cfg.pump_rate).min(1.0);
                        r.pumped = true;
                    } else if !self.cfg.stations.contains(&self.position) {
                        r.pump_failed = true;
                    }
                }
                ActuatorCommand::Effector { effector, action } => {
                    let labels = self
                        .cfg
                        .effectors
                        .iter()
                        .find(|e| e.effector == effector.0 && &e.action == action)
                        .map(|e| e.outcome.clone())
                        .unwrap_or_else(|| vec![NO_CHANGE.to_string()]);
                    r.outcomes.push(ActionOutcome {
                        effector: effector.clone(),
                        action: action.clone(),
                        labels,
                    });
                }
            }
        }

        self.fuel = (self.fuel - self.cfg.burn).max(0.0);
        if self.fuel <= 0.0 && self.starved_at.is_none() {
            self.starved_at = Some(tick);
        }
        for e in &self.cfg.events {
            if tick >= e.tick && tick < e.tick + e.duration {
                r.ambient.push(e.clone());
            }
        }
        r.position = self.position;
        r.fuel = self.fuel;
        r.at_station = self.cfg.stations.contains(&self.position);
        r.next_hop_to_station = self.next_hop[self.position];
        &self.readings
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pumping_at_station_raises_fuel() {
        let mut w = World::new(WorldConfig {
            start: 3,
            fuel: 0.5,
            ..WorldConfig::default()
        })
        .unwrap();
        let r = w.step(&[ActuatorCommand::Pump], 0);
        assert!(r.pumped && (r.fuel - 0.6).abs() < 1e-12);
        for t in 1..10 {
            w.step(&[ActuatorCommand::Pump], t);
        }
        assert_eq!(w.fuel(), 1.0);
    }

    #[test]
    fn pump_away_from_station_fails() {
        let mut w = World::new(WorldConfig::default()).unwrap();
        assert!(w.step(&[ActuatorCommand::Pump], 0).pump_failed);
    }

    #[test]
    fn invalid_move_is_a_noop_with_failure_reading() {
        let mut w = World::new(WorldConfig::default()).unwrap();
        let r = w.step(&[ActuatorCommand::Move { to: 3 }], 0);
        assert!(r.move_failed);
        assert_eq!(r.position, 0);
        let r = w.step(&[ActuatorCommand::Move { to: 1 }], 1);
        assert!(!r.move_failed && r.position == 1);
    }

    #[test]
    fn next_hop_leads_to_station() {
        let w = World::new(WorldConfig::ring(12, vec![6])).unwrap();
        let mut node = 0;
        for _ in 0..6 {
            node = w.next_hop[node].unwrap();
        }
        assert_eq!(node, 6);
    }

    #[test]
    fn starvation_is_flagged() {
        let mut w = World::new(WorldConfig {
            fuel: 0.03,
            burn: 0.01,
            ..WorldConfig::default()
        })
        .unwrap();
        for t in 0..5 {
            w.step(&[], t);
        }
        assert_eq!(w.starved_at(), Some(2));
    }

    #[test]
    fn effector_outcomes_and_events() {
        let mut cfg = WorldConfig::default();
        cfg.events.push(AmbientEvent {
            tick: 2,
            channel: "hearing".into(),
            label: "EXPLOSION".into(),
            weight: 1500.0,
            duration: 1,
        });
        let mut w = World::new(cfg).unwrap();
        let r = w.step(
            &[
                ActuatorCommand::Effector { effector: Referent::new("leg"), action: "move".into() },
                ActuatorCommand::Effector { effector: Referent::new("rock"), action: "lift".into() },
            ],
            0,
        );
        assert_eq!(r.outcomes[0].labels, vec!["LEG_MOVED"]);
        assert_eq!(r.outcomes[1].labels, vec![NO_CHANGE]);
        assert!(w.step(&[], 1).ambient.is_empty());
        assert_eq!(w.step(&[], 2).ambient.len(), 1);
        assert!(w.step(&[], 3).ambient.is_empty());
    }

    #[test]
    fn rejects_bad_config() {
        assert!(World::new(WorldConfig { start: 9, ..WorldConfig::default() }).is_err());
        assert!(World::new(WorldConfig { stations: vec![10], ..WorldConfig::default() }).is_err());
        assert!(World::new(WorldConfig { fuel: 2.0, ..WorldConfig::default() }).is_err());
    }
}
