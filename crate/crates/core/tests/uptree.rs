use ctmr::chunk::{make_chunk, Chunk, Disposition, Gist, ProcessorId, Tick};
use ctmr::rng::CounterRng;
use ctmr::uptree::{LeafBatch, NodeAddr, UpTree};

fn chunks(weights: &[f64], tick: Tick) -> Vec<Chunk> {
    weights
        .iter()
        .enumerate()
        .map(|(i, &w)| make_chunk(ProcessorId(i as u32), tick, Gist::empty(), w).unwrap())
        .collect()
}

fn d0() -> Disposition {
    Disposition::new(0.0).unwrap()
}

#[test]
fn height_three_winner_at_tick_three() {
    let mut tree = UpTree::new(3).unwrap();
    let rng = CounterRng::new(1);
    tree.submit(&mut chunks(&[1.0; 8], 0), 0).unwrap();
    for t in 1..=3 {
        let root = tree.advance(d0(), &rng);
        assert_eq!(root.is_some(), t == 3, "tick {t}");
        if t < 3 {
            tree.submit(&mut chunks(&[1.0; 8], t), t).unwrap();
        } else {
            let w = root.unwrap();
            assert_eq!(w.tag.start_tick, 0);
            assert_eq!((w.chunk.intensity(), w.chunk.mood()), (8.0, 8.0));
        }
    }
}

#[test]
fn batch_and_chunk_submission_agree() {
    let weights = [3.0, -1.0, 0.0, 2.5, -4.0, 1.0, 0.5, 0.0];
    let rng = CounterRng::new(9);
    let d = Disposition::new(0.3).unwrap();
    let mut a = UpTree::new(3).unwrap();
    let mut b = UpTree::new(3).unwrap();
    let mut out = (Vec::new(), Vec::new());
    for t in 0..50 {
        if let Some(w) = a.advance(d, &rng) {
            out.0.push(w.chunk);
        }
        if let Some(w) = b.advance(d, &rng) {
            out.1.push(w.chunk);
        }
        a.submit(&mut chunks(&weights, t), t).unwrap();
        let mut batch = LeafBatch::with_capacity(8);
        for c in chunks(&weights, t) {
            batch.push(c.gist, c.weight);
        }
        b.submit_batch(&mut batch, t).unwrap();
        assert!(batch.weights.is_empty());
    }
    assert_eq!(out.0, out.1);
    assert_eq!(out.0.len(), 47);
}

#[test]
fn chunk_submission_checks_origin_and_time() {
    let mut tree = UpTree::new(1).unwrap();
    let mut wrong_time = chunks(&[1.0, 1.0], 4);
    assert!(tree.submit(&mut wrong_time, 5).is_err());
    let mut swapped = chunks(&[1.0, 1.0], 5);
    swapped.swap(0, 1);
    assert!(tree.submit(&mut swapped, 5).is_err());
}

#[test]
fn severing_both_leaves_of_a_pair() {
    let rng = CounterRng::new(3);
    let mut tree = UpTree::new(2).unwrap();
    tree.cut_edge(NodeAddr { level: 0, index: 0 }, 0).unwrap();
    tree.cut_edge(NodeAddr { level: 0, index: 1 }, 0).unwrap();
    let mut wins = [0u32; 4];
    for t in 0..400 {
        if let Some(w) = tree.advance(d0(), &rng) {
            assert_eq!((w.chunk.intensity(), w.chunk.mood()), (3.0, -1.0));
            wins[w.chunk.origin.index()] += 1;
        }
        tree.submit(&mut chunks(&[9.0, 9.0, 1.0, -2.0], t), t).unwrap();
    }
    assert_eq!(wins[0] + wins[1], 0);
    assert!(wins[2] > 0 && wins[3] > 0);
    assert!(tree.leaf_is_severed(1, 10) && !tree.leaf_is_severed(2, 10));
}

#[test]
fn cuts_do_not_touch_competitions_already_running() {
    let rng = CounterRng::new(5);
    let mut tree = UpTree::new(2).unwrap();
    let w = [6.0, 0.0, 0.0, 0.0];
    let mut winners = Vec::new();
    for t in 0..10 {
        if t == 3 {
            tree.cut_edge(NodeAddr { level: 1, index: 0 }, 3).unwrap();
        }
        if let Some(r) = tree.advance(d0(), &rng) {
            winners.push((r.tag.start_tick, r.chunk.origin));
        }
        tree.submit(&mut chunks(&w, t), t).unwrap();
    }
    for (tag, origin) in winners {
        if tag < 3 {
            assert_eq!(origin, ProcessorId(0));
        } else {
            assert_ne!(origin, ProcessorId(0));
        }
    }
}
