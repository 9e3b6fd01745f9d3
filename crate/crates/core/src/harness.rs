//! Running scenarios end to end, statistical verification of the
//! competition, disposition sweeps, and fault injection.

use std::collections::BTreeMap;
use std::fs::File;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::builtin::MotwProcessor;
use crate::chunk::{make_chunk, Disposition, Gist, ProcessorId, Tick};
use crate::error::{CtmError, Result};
use crate::motw::LabelEvent;
use crate::processor::Processor;
use crate::oracle::{total_variation, win_distribution_analytic, win_distribution_exhaustive, EXHAUSTIVE_MAX_HEIGHT};
use crate::rng::CounterRng;
use crate::scenario::{Fault, FaultSpec, ScenarioConfig};
use crate::scheduler::{AggregateAudit, CtmInstance, InstanceEvent, TickRecord};
use crate::stm::MachineState;
use crate::trace::TraceWriter;
use crate::uptree::{NodeAddr, Tournament};

// ---------------------------------------------------------------------------
// Faults

/// Applies `fault` to a running instance, effective from its current tick.
pub fn inject_fault(inst: &mut CtmInstance, fault: &Fault) -> Result<()> {
    let lookup = |inst: &CtmInstance, name: &str| {
        inst.processor_id(name)
            .ok_or_else(|| CtmError::InvalidInput(format!("no processor named {name:?}")))
    };
    let note = match fault {
        Fault::CutUptreeEdge { processor, level, index } => {
            let node = match (processor, level, index) {
                (Some(name), _, _) => NodeAddr {
                    level: 0,
                    index: lookup(inst, name)?.index(),
                },
                (None, Some(level), Some(index)) => NodeAddr {
                    level: *level,
                    index: *index,
                },
                _ => return Err(CtmError::InvalidInput("cut needs a processor or a node".into())),
            };
            inst.cut_edge(node)?;
            format!("fault: cut up-tree edge above level {} node {}", node.level, node.index)
        }
        Fault::ZeroConfidence { processor } => {
            let p = lookup(inst, processor)?;
            inst.mute(p)?;
            format!("fault: zero confidence for {processor}")
        }
        Fault::Mislabel { sketch, label, replaces } => {
            let tick = inst.current_tick();
            let m = inst
                .find_mut::<MotwProcessor>()
                .ok_or_else(|| CtmError::InvalidInput("no model of the world to mislabel".into()))?;
            m.inject_mislabel(sketch, label, replaces.as_deref(), tick)?;
            format!("fault: {sketch} labeled {label}")
        }
        Fault::PinDisposition { d } => {
            let d = Disposition::new(*d)?;
            inst.set_disposition(d);
            format!("fault: disposition pinned to {}", d.value())
        }
    };
    inst.record_event(note);
    Ok(())
}

/// Sets a new disposition on a running instance. The world model, links,
/// confidences and pipeline are untouched.
pub fn reboot(inst: &mut CtmInstance, new_d: f64) -> Result<()> {
    inst.reboot(new_d)
}

impl FromStr for Fault {
    type Err = CtmError;

    /// `cut_uptree_edge:NAME`, `cut_uptree_edge:LEVEL/INDEX`,
    /// `zero_confidence:NAME`, `mislabel:SKETCH=LABEL[/REPLACED]`,
    /// `pin_disposition:D`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CtmError::InvalidInput(format!("cannot parse fault {s:?}"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        Ok(match kind {
            "cut_uptree_edge" => match arg.split_once('/') {
                Some((l, i)) => Fault::CutUptreeEdge {
                    processor: None,
                    level: Some(l.parse().map_err(|_| bad())?),
                    index: Some(i.parse().map_err(|_| bad())?),
                },
                None => Fault::CutUptreeEdge {
                    processor: Some(arg.into()),
                    level: None,
                    index: None,
                },
            },
            "zero_confidence" => Fault::ZeroConfidence { processor: arg.into() },
            "mislabel" => {
                let (sketch, rest) = arg.split_once('=').ok_or_else(bad)?;
                let (label, replaces) = match rest.split_once('/') {
                    Some((l, r)) => (l, Some(r.to_string())),
                    None => (rest, None),
                };
                Fault::Mislabel {
                    sketch: sketch.into(),
                    label: label.into(),
                    replaces,
                }
            }
            "pin_disposition" => Fault::PinDisposition {
                d: arg.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        })
    }
}

// ---------------------------------------------------------------------------
// Runs

/// Summary of a finished (or stopped) run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunRecord {
    pub name: String,
    pub seed: u64,
    pub ticks: Tick,
    pub winners: u64,
    pub state_occupancy: BTreeMap<String, u64>,
    pub awareness_events: usize,
    pub first_aware_tick: Option<Tick>,
    pub label_timeline: Vec<LabelEvent>,
    pub first_refuel: Option<Tick>,
    pub starved_at: Option<Tick>,
    pub world_commands: u64,
    pub audit: Option<AggregateAudit>,
    pub links: Vec<(u32, u32, Tick)>,
    pub events: Vec<InstanceEvent>,
}

/// A scenario being stepped: applies scheduled faults, writes the trace and
/// keeps the running summary.
pub struct Simulation {
    cfg: ScenarioConfig,
    inst: CtmInstance,
    faults: Vec<FaultSpec>,
    next_fault: usize,
    trace: Option<TraceWriter<File>>,
    occupancy: BTreeMap<MachineState, u64>,
    winners: u64,
    first_refuel: Option<Tick>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        Self::with_processors(cfg, Vec::new())
    }

    /// A simulation with `extra` processors added after the roster (see
    /// [`ScenarioConfig::build_with`]).
    pub fn with_processors(cfg: ScenarioConfig, extra: Vec<Box<dyn Processor>>) -> Result<Self> {
        let inst = cfg.build_with(extra)?;
        let trace = cfg.output.trace.as_deref().map(TraceWriter::create).transpose()?;
        let mut faults = cfg.faults.clone();
        faults.sort_by_key(|f| f.at);
        Ok(Self {
            cfg,
            inst,
            faults,
            next_fault: 0,
            trace,
            occupancy: BTreeMap::new(),
            winners: 0,
            first_refuel: None,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn instance(&self) -> &CtmInstance {
        &self.inst
    }

    pub fn instance_mut(&mut self) -> &mut CtmInstance {
        &mut self.inst
    }

    pub fn is_done(&self) -> bool {
        self.inst.current_tick() >= self.cfg.ticks
    }

    pub fn step(&mut self) -> Result<TickRecord> {
        let now = self.inst.current_tick();
        while let Some(f) = self.faults.get(self.next_fault).filter(|f| f.at <= now) {
            let fault = f.fault.clone();
            self.next_fault += 1;
            inject_fault(&mut self.inst, &fault)?;
        }
        let rec = self.inst.tick()?;
        *self.occupancy.entry(rec.state).or_default() += 1;
        if rec.winner.is_some() {
            self.winners += 1;
        }
        if self.first_refuel.is_none() && self.inst.world().is_some_and(|w| w.readings().pumped) {
            self.first_refuel = Some(rec.tick);
        }
        if let Some(t) = self.trace.as_mut() {
            t.write(&rec)?;
        }
        Ok(rec)
    }

    /// Runs to the end of the lifetime, calling `observe` after each tick.
    pub fn run_with(&mut self, mut observe: impl FnMut(&CtmInstance, &TickRecord)) -> Result<()> {
        while !self.is_done() {
            let rec = self.step()?;
            observe(&self.inst, &rec);
        }
        Ok(())
    }

    pub fn record(&self) -> RunRecord {
        let inst = &self.inst;
        let motw = inst.find::<MotwProcessor>().map(|(_, m)| m);
        let aware = motw.map(|m| m.aware_events()).unwrap_or_default();
        RunRecord {
            name: self.cfg.name.clone(),
            seed: self.cfg.seed,
            ticks: inst.current_tick(),
            winners: self.winners,
            state_occupancy: self
                .occupancy
                .iter()
                .map(|(s, n)| (s.as_str().to_string(), *n))
                .collect(),
            awareness_events: aware.len(),
            first_aware_tick: aware.first().map(|e| e.tick),
            label_timeline: motw.map(|m| m.model().timeline().to_vec()).unwrap_or_default(),
            first_refuel: self.first_refuel,
            starved_at: inst.world().and_then(|w| w.starved_at()),
            world_commands: inst.world().map_or(0, |w| w.commands_total()),
            audit: inst.audit().cloned(),
            links: inst
                .created_links()
                .iter()
                .map(|&(a, b, t)| (a.0, b.0, t))
                .collect(),
            events: inst.events().to_vec(),
        }
    }

    /// Flushes the trace and writes the model dump if configured.
    pub fn finish(mut self) -> Result<(RunRecord, CtmInstance)> {
        if let Some(t) = self.trace.take() {
            t.finish()?;
        }
        if let Some(path) = &self.cfg.output.motw_dump {
            let dump = self
                .inst
                .motw()
                .map(|m| m.dump())
                .ok_or_else(|| CtmError::Config("motw_dump needs a motw processor".into()))?;
            let json = serde_json::to_string_pretty(&dump).map_err(|e| CtmError::Io(e.to_string()))?;
            std::fs::write(path, json)?;
        }
        let record = self.record();
        Ok((record, self.inst))
    }
}

/// Runs `cfg` to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunRecord> {
    let mut sim = Simulation::new(cfg.clone())?;
    sim.run_with(|_, _| {})?;
    Ok(sim.finish()?.0)
}

// ---------------------------------------------------------------------------
// Statistics of the competition

const BLOCK: u64 = 4096;

/// Win counts per leaf over competitions `0..trials`. Blocks of
/// competitions run in parallel; the result does not depend on the
/// thread count.
pub fn win_counts(aux: &[(f64, f64)], d: Disposition, trials: u64, rng: &CounterRng) -> Result<Vec<u64>> {
    Tournament::new(aux)?;
    let blocks = trials.div_ceil(BLOCK);
    let n = aux.len();
    Ok((0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut t = Tournament::new(aux).expect("validated above");
            let mut counts = vec![0u64; n];
            for c in b * BLOCK..((b + 1) * BLOCK).min(trials) {
                counts[t.play(d, rng, c).0] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        ))
}

fn padded(weights: &[f64], height: u32) -> Result<Vec<f64>> {
    let n = 1usize << height;
    if weights.len() > n {
        return Err(CtmError::InvalidInput(format!(
            "{} weights do not fit in {n} leaves",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(CtmError::InvalidInput(format!("weight {w} is not finite")));
    }
    let mut v = weights.to_vec();
    v.resize(n, 0.0);
    Ok(v)
}

fn aux_of(weights: &[f64]) -> Vec<(f64, f64)> {
    weights.iter().map(|w| (w.abs(), *w)).collect()
}

fn chunks_of(weights: &[f64]) -> Vec<crate::chunk::Chunk> {
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| make_chunk(ProcessorId(i as u32), 0, Gist::empty(), *w).expect("finite weights"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProportionalityCheck {
    pub height: u32,
    /// Leaf weights in leaf order; missing leaves weigh 0.
    pub weights: Vec<f64>,
    pub disposition: f64,
    pub trials: u64,
    /// Largest allowed |empirical - expected| on any leaf.
    pub tolerance: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsReport {
    pub trials: u64,
    pub expected: Vec<f64>,
    pub empirical: Vec<f64>,
    pub max_abs_error: f64,
    /// Total-variation distance between `empirical` and `expected`.
    pub total_variation: f64,
    pub tolerance: f64,
    /// Largest difference between the exhaustive and analytic laws, for
    /// trees small enough to enumerate.
    pub exhaustive_max_error: Option<f64>,
    pub seconds: f64,
    pub pass: bool,
}

pub fn verify_proportionality(check: &ProportionalityCheck) -> Result<StatsReport> {
    let started = Instant::now();
    if check.trials == 0 {
        return Err(CtmError::InvalidInput("trials must be positive".into()));
    }
    let d = Disposition::new(check.disposition)?;
    let weights = padded(&check.weights, check.height)?;
    let chunks = chunks_of(&weights);
    let expected = win_distribution_analytic(&chunks, d);
    let exhaustive_max_error = if check.height <= EXHAUSTIVE_MAX_HEIGHT {
        let ex = win_distribution_exhaustive(&chunks, d)?;
        Some(ex.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    let counts = win_counts(&aux_of(&weights), d, check.trials, &CounterRng::new(check.seed))?;
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / check.trials as f64).collect();
    let max_abs_error = empirical
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let tv = total_variation(&empirical, &expected);
    Ok(StatsReport {
        trials: check.trials,
        pass: max_abs_error <= check.tolerance
            && tv <= check.tolerance
            && exhaustive_max_error.map_or(true, |e| e <= 1e-12),
        expected,
        empirical,
        max_abs_error,
        total_variation: tv,
        tolerance: check.tolerance,
        exhaustive_max_error,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocationCheck {
    pub height: u32,
    pub weights: Vec<f64>,
    pub disposition: f64,
    pub trials: u64,
    /// Random leaf permutations compared against the identity arrangement.
    pub permutations: usize,
    /// Largest allowed total-variation distance between any two arrangements.
    pub tolerance: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocationReport {
    /// `arrangements[k][i]` is the leaf holding weight `i` in arrangement `k`.
    pub arrangements: Vec<Vec<usize>>,
    /// Win distributions indexed by weight, one per arrangement.
    pub distributions: Vec<Vec<f64>>,
    pub max_pairwise_tv: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub pass: bool,
}

/// Compares win distributions, indexed by the weight's identity rather
/// than its leaf, across random placements of the same weights.
pub fn verify_location_independence(check: &LocationCheck) -> Result<LocationReport> {
    let started = Instant::now();
    if check.trials == 0 {
        return Err(CtmError::InvalidInput("trials must be positive".into()));
    }
    let d = Disposition::new(check.disposition)?;
    let weights = padded(&check.weights, check.height)?;
    let n = weights.len();
    let mut shuffler = ChaCha8Rng::seed_from_u64(check.seed);
    let mut arrangements = vec![(0..n).collect::<Vec<_>>()];
    for _ in 0..check.permutations {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut shuffler);
        arrangements.push(p);
    }
    let base = CounterRng::new(check.seed);
    let mut distributions = Vec::with_capacity(arrangements.len());
    for (k, perm) in arrangements.iter().enumerate() {
        let mut placed = vec![0.0; n];
        for (i, &leaf) in perm.iter().enumerate() {
            placed[leaf] = weights[i];
        }
        let counts = win_counts(&aux_of(&placed), d, check.trials, &base.derive(k as u64))?;
        distributions.push(
            perm.iter()
                .map(|&leaf| counts[leaf] as f64 / check.trials as f64)
                .collect::<Vec<_>>(),
        );
    }
    let mut max_pairwise_tv = 0.0_f64;
    for a in 0..distributions.len() {
        for b in a + 1..distributions.len() {
            max_pairwise_tv = max_pairwise_tv.max(total_variation(&distributions[a], &distributions[b]));
        }
    }
    Ok(LocationReport {
        pass: max_pairwise_tv <= check.tolerance,
        arrangements,
        distributions,
        max_pairwise_tv,
        tolerance: check.tolerance,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub disposition: f64,
    pub trials: u64,
    /// Fraction of competitions won by a positive-weight chunk.
    pub positive: f64,
    pub negative: f64,
    pub zero: f64,
}

/// Win fractions by sign of the winner's weight, for each disposition.
pub fn disposition_sweep(weights: &[f64], dispositions: &[f64], trials: u64, seed: u64) -> Result<Vec<SweepRow>> {
    if trials == 0 {
        return Err(CtmError::InvalidInput("trials must be positive".into()));
    }
    let height = weights.len().max(2).next_power_of_two().trailing_zeros();
    let weights = padded(weights, height)?;
    let aux = aux_of(&weights);
    dispositions
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let counts = win_counts(&aux, Disposition::new(d)?, trials, &CounterRng::new(seed).derive(k as u64))?;
            let share = |pred: fn(f64) -> bool| {
                counts
                    .iter()
                    .zip(&weights)
                    .filter(|(_, w)| pred(**w))
                    .map(|(c, _)| *c)
                    .sum::<u64>() as f64
                    / trials as f64
            };
            Ok(SweepRow {
                disposition: d,
                trials,
                positive: share(|w| w > 0.0),
                negative: share(|w| w < 0.0),
                zero: share(|w| w == 0.0),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("disposition,trials,positive,negative,zero\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.disposition, r.trials, r.positive, r.negative, r.zero
        ));
    }
    s
}

/// The positive-win share never decreases as the disposition increases.
pub fn sweep_is_monotone(rows: &[SweepRow]) -> bool {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.disposition.total_cmp(&b.disposition));
    sorted.windows(2).all(|w| w[1].positive >= w[0].positive)
}

/// Evenly spaced values from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..steps)
            .map(|i| from + (to - from) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_strings_parse() {
        assert_eq!(
            "cut_uptree_edge:vision".parse::<Fault>().unwrap(),
            Fault::CutUptreeEdge {
                processor: Some("vision".into()),
                level: None,
                index: None
            }
        );
        assert_eq!(
            "cut_uptree_edge:2/1".parse::<Fault>().unwrap(),
            Fault::CutUptreeEdge {
                processor: None,
                level: Some(2),
                index: Some(1)
            }
        );
        assert_eq!(
            "mislabel:leg=NOT-SELF/SELF".parse::<Fault>().unwrap(),
            Fault::Mislabel {
                sketch: "leg".into(),
                label: "NOT-SELF".into(),
                replaces: Some("SELF".into())
            }
        );
        assert_eq!(
            "pin_disposition:-1".parse::<Fault>().unwrap(),
            Fault::PinDisposition { d: -1.0 }
        );
        assert!("explode:now".parse::<Fault>().is_err());
        assert!("pin_disposition:x".parse::<Fault>().is_err());
    }

    #[test]
    fn win_counts_do_not_depend_on_threads() {
        let aux = aux_of(&[5.0, 1.0, 0.0, 2.0]);
        let rng = CounterRng::new(9);
        let a = win_counts(&aux, Disposition::NEUTRAL, 10_000, &rng).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| win_counts(&aux, Disposition::NEUTRAL, 10_000, &rng).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.iter().sum::<u64>(), 10_000);
        assert_eq!(a[2], 0);
    }

    #[test]
    fn small_proportionality_check_passes() {
        let r = verify_proportionality(&ProportionalityCheck {
            height: 2,
            weights: vec![3.0, 1.0],
            disposition: 0.0,
            trials: 50_000,
            tolerance: 0.01,
            seed: 1,
        })
        .unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.exhaustive_max_error.unwrap() < 1e-12);
        assert!((r.empirical.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut c = ProportionalityCheck {
            height: 1,
            weights: vec![1.0, 2.0, 3.0],
            disposition: 0.0,
            trials: 10,
            tolerance: 0.1,
            seed: 0,
        };
        assert!(verify_proportionality(&c).is_err());
        c.weights = vec![f64::NAN];
        assert!(verify_proportionality(&c).is_err());
        c.weights = vec![1.0];
        c.trials = 0;
        assert!(verify_proportionality(&c).is_err());
        c.trials = 10;
        c.disposition = 2.0;
        assert!(verify_proportionality(&c).is_err());
    }

    #[test]
    fn sweep_helpers() {
        assert_eq!(linspace(-1.0, 1.0, 5), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let rows = disposition_sweep(&[4.0, -6.0, 1.0, -1.0], &[-1.0, 0.0, 1.0], 20_000, 3).unwrap();
        assert!(sweep_is_monotone(&rows));
        assert_eq!(rows[0].positive, 0.0);
        assert_eq!(rows[2].negative, 0.0);
        assert!(sweep_csv(&rows).starts_with("disposition,trials"));
    }
}
