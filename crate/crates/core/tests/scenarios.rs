use ctmr::builtin::{Forager, MotwProcessor, Questioner, Willer};
use ctmr::chunk::ProcessorId;
use ctmr::harness::{run_scenario, Simulation};
use ctmr::scenario::{builtin, builtin_names, Fault, FaultSpec, ScenarioConfig};

fn scenario(name: &str) -> ScenarioConfig {
    builtin(name).unwrap()
}

#[test]
fn every_bundled_scenario_validates_and_round_trips() {
    for name in builtin_names() {
        let cfg = scenario(name);
        cfg.validate().unwrap();
        let again = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg, "{name}");
    }
}

#[test]
fn hunger_learns_the_fuel_source() {
    let rec = run_scenario(&scenario("hunger")).unwrap();
    let first = |label: &str| rec.label_timeline.iter().find(|e| e.label == label).map(|e| e.tick);
    let fuel_source = first("FUEL_SOURCE").expect("FUEL_SOURCE attached");
    assert!(first("LOW_FUEL/PAIN").unwrap() <= fuel_source);
    assert!(first("SELF").is_some());
    assert!(rec.first_refuel.is_some());
    assert_eq!(rec.starved_at, None);
    assert!(rec.awareness_events > 0);
}

#[test]
fn forager_remembers_the_station() {
    let mut cfg = scenario("hunger");
    cfg.ticks = 2000;
    let station = cfg.world.as_ref().unwrap().stations[0];
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run_with(|_, _| {}).unwrap();
    let (_, inst) = sim.finish().unwrap();
    let forager = inst.find::<Forager>().unwrap().1;
    assert!(forager.known_sources().contains(&station));
}

#[test]
fn name_recall_grades_answers_and_adjusts_confidence() {
    let mut sim = Simulation::new(scenario("name-recall")).unwrap();
    sim.run_with(|_, _| {}).unwrap();
    let (_, inst) = sim.finish().unwrap();
    let q = inst.find::<Questioner>().unwrap().1;
    assert!(!q.episodes().is_empty());
    assert!(q.episodes().iter().any(|e| e.resolved.is_some()), "some question is answered");
    let wrong = inst.processor_id("guess_s").unwrap();
    let right = inst.processor_id("name").unwrap();
    assert!(inst.confidence(wrong) < inst.confidence(right));
}

#[test]
fn mislabelled_leg_is_disowned() {
    let mut cfg = scenario("body");
    cfg.faults.push(FaultSpec {
        at: 1000,
        fault: Fault::Mislabel {
            sketch: "leg".into(),
            label: "NOT-SELF".into(),
            replaces: Some("SELF".into()),
        },
    });
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run_with(|_, _| {}).unwrap();
    let (rec, inst) = sim.finish().unwrap();
    let leg = inst.find::<Willer>().unwrap().1;
    assert!(leg.is_disowned());
    assert!(rec.events.iter().any(|e| e.tick == 1000));
    let model = inst.find::<MotwProcessor>().unwrap().1.model();
    assert!(model.timeline().iter().any(|e| e.label == "NOT-SELF" && e.tick == 1000));
}

#[test]
fn zero_confidence_silences_vision() {
    let mut cfg = scenario("navigation");
    cfg.ticks = 3000;
    cfg.faults.push(FaultSpec {
        at: 1000,
        fault: Fault::ZeroConfidence {
            processor: "vision".into(),
        },
    });
    let vision = ProcessorId(cfg.leaf_of("vision").unwrap() as u32);
    let h = cfg.height as u64;
    let mut after = 0;
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run_with(|_, rec| {
        if rec.tick > 1000 + h {
            if let Some(w) = &rec.winner {
                if w.origin == vision && w.weight != 0.0 {
                    after += 1;
                }
            }
        }
    })
    .unwrap();
    let (rec, _) = sim.finish().unwrap();
    assert_eq!(after, 0);
    assert_eq!(rec.starved_at, None);
}

#[test]
fn fault_note_appears_once_at_its_tick() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let mut cfg = scenario("body");
    cfg.ticks = 500;
    cfg.output.trace = Some(trace.clone());
    cfg.faults.push(FaultSpec {
        at: 321,
        fault: Fault::PinDisposition { d: 0.5 },
    });
    run_scenario(&cfg).unwrap();
    let text = std::fs::read_to_string(&trace).unwrap();
    let noted: Vec<u64> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v.get("notes").is_some())
        .map(|v| v["tick"].as_u64().unwrap())
        .collect();
    assert_eq!(noted, vec![321]);
    assert_eq!(text.lines().count(), 500);
}

#[test]
fn motw_dump_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("motw.json");
    let mut cfg = scenario("body");
    cfg.ticks = 400;
    cfg.output.motw_dump = Some(dump.clone());
    run_scenario(&cfg).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dump).unwrap()).unwrap();
    assert!(v.is_object());
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut too_many = scenario("hunger");
    too_many.height = 2;
    assert!(Simulation::new(too_many).is_err());

    let mut bad_fault = scenario("bike");
    bad_fault.faults.push(FaultSpec {
        at: 5,
        fault: Fault::ZeroConfidence {
            processor: "nobody".into(),
        },
    });
    assert!(Simulation::new(bad_fault).is_err());

    let mut bad_d = scenario("bike");
    bad_d.disposition = 1.5;
    assert!(Simulation::new(bad_d).is_err());

    assert!(ScenarioConfig::from_toml("name = \"x\"\nticks = 5\nseed = 1\nbogus = 3\n").is_err());
}
