//! The pipelined probabilistic competition.
//!
//! The up-tree is a perfect binary tree of height `h`. Level 0 holds the
//! `2^h` leaves, level `h` is the root in STM. A competition submitted at
//! tick `t` sits at level 0 after tick `t`, at level `k` after tick `t + k`
//! and reaches the root at tick `t + h`. Up to `h` competitions are in
//! flight at once, one per level.
//!
//! Internally each node keeps a compact [`Slot`] (winning leaf plus the
//! running auxiliary sums). A competition's leaf weights, and the gists of
//! leaves that said something, stay in a submission buffer until its root
//! winner is known; the winning chunk is rebuilt from them. All buffers are
//! allocated once, so a steady-state tick does not allocate.

use crate::chunk::{f_of, merge_winner, Chunk, Disposition, Gist, ProcessorId, Tick};
use crate::error::{CtmError, Result};
use crate::rng::CounterRng;

const LESION_LEAF: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Slot {
    pub leaf: u32,
    pub intensity: f64,
    pub mood: f64,
}

impl Slot {
    const LESION: Slot = Slot {
        leaf: LESION_LEAF,
        intensity: 0.0,
        mood: 0.0,
    };

    #[inline]
    fn leaf(leaf: usize, weight: f64) -> Self {
        Slot {
            leaf: leaf as u32,
            intensity: weight.abs(),
            mood: weight,
        }
    }
}

/// One competition's leaf data: a weight per leaf and the non-empty gists,
/// sorted by leaf. Leaves absent from `gists` carry [`Gist::empty`].
#[derive(Debug, Default)]
pub struct LeafBatch {
    pub weights: Vec<f64>,
    pub gists: Vec<(u32, Gist)>,
}

impl LeafBatch {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            weights: Vec::with_capacity(n),
            gists: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.weights.clear();
        self.gists.clear();
    }

    /// Appends the next leaf.
    #[inline]
    pub fn push(&mut self, gist: Gist, weight: f64) {
        let leaf = self.weights.len() as u32;
        self.weights.push(weight);
        if !gist.is_empty() {
            self.gists.push((leaf, gist));
        }
    }

    /// Clears the batch and sets every leaf of `n` to weight 0.
    pub fn reset(&mut self, n: usize) {
        self.weights.clear();
        self.weights.resize(n, 0.0);
        self.gists.clear();
    }

    /// Sets leaf `leaf`. Gists must be set in increasing leaf order.
    #[inline]
    pub fn set(&mut self, leaf: usize, gist: Gist, weight: f64) {
        self.weights[leaf] = weight;
        if !gist.is_empty() {
            debug_assert!(self.gists.last().map_or(true, |(l, _)| (*l as usize) < leaf));
            self.gists.push((leaf as u32, gist));
        }
    }

    fn take_gist(&mut self, leaf: u32) -> Gist {
        match self.gists.binary_search_by_key(&leaf, |(l, _)| *l) {
            Ok(i) => std::mem::replace(&mut self.gists[i].1, Gist::empty()),
            Err(_) => Gist::empty(),
        }
    }
}

/// Decides one coin toss: `true` when the first contestant wins.
///
/// The first contestant wins with probability `f1 / (f1 + f2)`; when both
/// `f` values are zero the toss is a fair coin.
#[inline]
pub fn first_wins(f1: f64, f2: f64, draw: f64) -> bool {
    let total = f1 + f2;
    if total > 0.0 {
        draw * total < f1
    } else {
        draw < 0.5
    }
}

#[inline]
pub(crate) fn contest(a: Slot, b: Slot, d: f64, draw: f64) -> Slot {
    let leaf = if first_wins(f_of(a.intensity, a.mood, d), f_of(b.intensity, b.mood, d), draw) {
        a.leaf
    } else {
        b.leaf
    };
    Slot {
        leaf,
        intensity: a.intensity + b.intensity,
        mood: a.mood + b.mood,
    }
}

/// The coin-toss neuron on two chunks: picks a winner with `draw` and
/// returns it merged with the loser.
pub fn local_winner(c1: &Chunk, c2: &Chunk, d: Disposition, draw: f64) -> Chunk {
    let f1 = crate::chunk::f_value(c1, d);
    let f2 = crate::chunk::f_value(c2, d);
    if first_wins(f1, f2, draw) {
        merge_winner(c1.clone(), c2)
    } else {
        merge_winner(c2.clone(), c1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CompetitionTag {
    pub start_tick: Tick,
}

/// A node of the tree, addressed by level (0 = leaves) and index within
/// the level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct NodeAddr {
    pub level: u32,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct RootWinner {
    pub tag: CompetitionTag,
    pub chunk: Chunk,
}

#[derive(Debug)]
struct Level {
    tag: Option<Tick>,
    slots: Vec<Slot>,
}

#[derive(Debug)]
struct Cut {
    node: NodeAddr,
    /// Only competitions started at or after this tick are affected.
    since: Tick,
}

#[derive(Debug)]
pub struct UpTree {
    height: u32,
    levels: Vec<Level>,
    /// Ring of `h + 1` submission buffers indexed by `tag % (h + 1)`.
    submissions: Vec<(Option<Tick>, LeafBatch)>,
    cuts: Vec<Cut>,
    last_tick: Option<Tick>,
}

impl UpTree {
    pub fn new(height: u32) -> Result<Self> {
        if height == 0 || height > 30 {
            return Err(CtmError::Config(format!(
                "tree height must be in 1..=30, got {height}"
            )));
        }
        let n = 1usize << height;
        // Leaves are read straight from the submission buffer, so level 0
        // holds no slots. Level `height` is the root.
        let levels = (0..=height)
            .map(|l| Level {
                tag: None,
                slots: if l == 0 { Vec::new() } else { vec![Slot::LESION; n >> l] },
            })
            .collect();
        let submissions = (0..=height)
            .map(|_| (None, LeafBatch::with_capacity(n)))
            .collect();
        Ok(Self {
            height,
            levels,
            submissions,
            cuts: Vec::new(),
            last_tick: None,
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn leaves(&self) -> usize {
        1 << self.height
    }

    /// Tags of the in-flight competitions, indexed by level.
    pub fn in_flight(&self) -> Vec<Option<CompetitionTag>> {
        self.levels[..self.height as usize]
            .iter()
            .map(|l| l.tag.map(|t| CompetitionTag { start_tick: t }))
            .collect()
    }

    /// Severs the edge above `node` for every competition started at or
    /// after `since`. The subtree then contributes a weight-0 placeholder.
    pub fn cut_edge(&mut self, node: NodeAddr, since: Tick) -> Result<()> {
        if node.level >= self.height || node.index >= self.leaves() >> node.level {
            return Err(CtmError::InvalidInput(format!(
                "no up-tree edge above node {node:?} in a tree of height {}",
                self.height
            )));
        }
        self.cuts.push(Cut { node, since });
        Ok(())
    }

    /// Whether leaf `leaf` is below an active cut for a competition started
    /// at `tag`.
    pub fn leaf_is_severed(&self, leaf: usize, tag: Tick) -> bool {
        self.cuts
            .iter()
            .any(|c| tag >= c.since && leaf >> c.node.level == c.node.index)
    }

    fn apply_cuts(&mut self, level: u32, tag: Tick) {
        for cut in &self.cuts {
            if cut.node.level == level && tag >= cut.since {
                self.levels[level as usize].slots[cut.node.index] = Slot::LESION;
            }
        }
    }

    /// Starts the competition for tick `tick` with one chunk per leaf.
    /// Chunk `i` must come from processor `i` and be created at `tick`.
    ///
    /// On return `chunks` is empty, with its capacity kept.
    pub fn submit(&mut self, chunks: &mut Vec<Chunk>, tick: Tick) -> Result<()> {
        let n = self.leaves();
        if chunks.len() != n {
            return Err(CtmError::Config(format!(
                "expected {n} leaf chunks, got {}",
                chunks.len()
            )));
        }
        if let Some((i, c)) = chunks
            .iter()
            .enumerate()
            .find(|(i, c)| c.origin.index() != *i || c.time != tick)
        {
            return Err(CtmError::InvalidInput(format!(
                "leaf {i} got a chunk from {} created at {}",
                c.origin, c.time
            )));
        }
        let mut batch = LeafBatch::with_capacity(n);
        for c in chunks.drain(..) {
            batch.push(c.gist, c.weight);
        }
        self.submit_batch(&mut batch, tick)
    }

    /// Starts the competition for tick `tick` from a leaf batch. The batch
    /// is swapped into the tree; on return `batch` is an emptied buffer.
    pub fn submit_batch(&mut self, batch: &mut LeafBatch, tick: Tick) -> Result<()> {
        let n = self.leaves();
        if batch.weights.len() != n {
            return Err(CtmError::Config(format!(
                "expected {n} leaf chunks, got {}",
                batch.weights.len()
            )));
        }
        if self.levels[0].tag.is_some() {
            return Err(CtmError::Scheduler {
                tick,
                detail: "leaf level already occupied; advance before submitting".into(),
            });
        }
        if let Some(last) = self.last_tick {
            if tick <= last {
                return Err(CtmError::Scheduler {
                    tick,
                    detail: format!("submission tick not after previous submission {last}"),
                });
            }
        }
        let ring = self.submissions.len();
        let entry = &mut self.submissions[(tick % ring as u64) as usize];
        if entry.0.is_some() {
            return Err(CtmError::Scheduler {
                tick,
                detail: "submission buffer still holds an unresolved competition".into(),
            });
        }
        std::mem::swap(&mut entry.1, batch);
        entry.0 = Some(tick);
        batch.clear();

        self.levels[0].tag = Some(tick);
        self.last_tick = Some(tick);
        Ok(())
    }

    /// Moves every in-flight competition up one level. Returns the root
    /// winner when a competition completes.
    pub fn advance(&mut self, d: Disposition, rng: &CounterRng) -> Option<RootWinner> {
        let dv = d.value();
        let h = self.height as usize;
        for l in (0..h).rev() {
            let Some(tag) = self.levels[l].tag.take() else {
                continue;
            };
            let parent_level = (l + 1) as u32;
            let draws = rng.level(tag, parent_level);
            let (lower, upper) = self.levels.split_at_mut(l + 1);
            let dst = &mut upper[0];
            if l == 0 {
                let ring = self.submissions.len();
                let w = &self.submissions[(tag % ring as u64) as usize].1.weights;
                for (j, (out, pair)) in dst.slots.iter_mut().zip(w.chunks_exact(2)).enumerate() {
                    let (a, b) = (Slot::leaf(2 * j, pair[0]), Slot::leaf(2 * j + 1, pair[1]));
                    *out = contest(a, b, dv, draws.uniform(j as u64));
                }
                for cut in self.cuts.iter().filter(|c| c.node.level == 0 && tag >= c.since) {
                    let j = cut.node.index / 2;
                    let leaf = |i: usize| {
                        let severed = self
                            .cuts
                            .iter()
                            .any(|c| c.node.level == 0 && c.node.index == i && tag >= c.since);
                        if severed {
                            Slot::LESION
                        } else {
                            Slot::leaf(i, w[i])
                        }
                    };
                    dst.slots[j] = contest(leaf(2 * j), leaf(2 * j + 1), dv, draws.uniform(j as u64));
                }
            } else {
                let src = &lower[l].slots;
                for (j, (out, pair)) in dst.slots.iter_mut().zip(src.chunks_exact(2)).enumerate() {
                    *out = contest(pair[0], pair[1], dv, draws.uniform(j as u64));
                }
            }
            dst.tag = Some(tag);
            self.apply_cuts(parent_level, tag);
        }
        let root = self.levels[h].tag.take().map(|tag| (tag, self.levels[h].slots[0]));
        root.map(|(tag, slot)| {
            let ring = self.submissions.len();
            let entry = &mut self.submissions[(tag % ring as u64) as usize];
            debug_assert_eq!(entry.0, Some(tag));
            entry.0 = None;
            let chunk = if slot.leaf == LESION_LEAF {
                Chunk::lesion(tag)
            } else {
                Chunk::fresh(
                    ProcessorId(slot.leaf),
                    tag,
                    entry.1.take_gist(slot.leaf),
                    entry.1.weights[slot.leaf as usize],
                )
            };
            RootWinner {
                tag: CompetitionTag { start_tick: tag },
                chunk: chunk.with_aux(slot.intensity, slot.mood),
            }
        })
    }
}

/// Runs independent single-shot competitions over a fixed leaf assignment,
/// reusing its buffers. Uses the same coin-toss kernel and draw keying as
/// [`UpTree`].
#[derive(Debug)]
pub struct Tournament {
    height: u32,
    leaves: Vec<Slot>,
    scratch: Vec<Slot>,
}

impl Tournament {
    /// `aux` holds `(intensity, mood)` per leaf; its length must be a power
    /// of two.
    pub fn new(aux: &[(f64, f64)]) -> Result<Self> {
        let n = aux.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(CtmError::Config(format!(
                "leaf count must be a power of two >= 2, got {n}"
            )));
        }
        let leaves: Vec<Slot> = aux
            .iter()
            .enumerate()
            .map(|(i, &(intensity, mood))| Slot {
                leaf: i as u32,
                intensity,
                mood,
            })
            .collect();
        Ok(Self {
            height: n.trailing_zeros(),
            scratch: vec![Slot::LESION; n / 2],
            leaves,
        })
    }

    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let aux: Vec<(f64, f64)> = weights.iter().map(|w| (w.abs(), *w)).collect();
        Self::new(&aux)
    }

    /// Plays competition number `competition` and returns
    /// `(winning leaf, root intensity, root mood)`.
    pub fn play(&mut self, d: Disposition, rng: &CounterRng, competition: u64) -> (usize, f64, f64) {
        let dv = d.value();
        let mut width = self.leaves.len() / 2;
        let draws = rng.level(competition, 1);
        for j in 0..width {
            let draw = draws.uniform(j as u64);
            self.scratch[j] = contest(self.leaves[2 * j], self.leaves[2 * j + 1], dv, draw);
        }
        for level in 2..=self.height {
            width /= 2;
            let draws = rng.level(competition, level);
            for j in 0..width {
                let draw = draws.uniform(j as u64);
                self.scratch[j] = contest(self.scratch[2 * j], self.scratch[2 * j + 1], dv, draw);
            }
        }
        let s = self.scratch[0];
        (s.leaf as usize, s.intensity, s.mood)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::{make_chunk, Gist, ProcessorId};

    fn chunks(weights: &[f64], tick: Tick) -> Vec<Chunk> {
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| make_chunk(ProcessorId(i as u32), tick, Gist::empty(), *w).unwrap())
            .collect()
    }

    #[test]
    fn submit_fills_leaf_level() {
        let mut t = UpTree::new(2).unwrap();
        let mut c = chunks(&[1.0, 2.0, 3.0, 4.0], 0);
        t.submit(&mut c, 0).unwrap();
        assert!(c.is_empty());
        assert_eq!(t.in_flight(), vec![Some(CompetitionTag { start_tick: 0 }), None]);
    }

    #[test]
    fn submit_rejects_wrong_count_and_double_submission() {
        let mut t = UpTree::new(2).unwrap();
        assert!(matches!(
            t.submit(&mut chunks(&[1.0; 3], 0), 0),
            Err(CtmError::Config(_))
        ));
        t.submit(&mut chunks(&[1.0; 4], 0), 0).unwrap();
        assert!(matches!(
            t.submit(&mut chunks(&[1.0; 4], 0), 0),
            Err(CtmError::Scheduler { .. })
        ));
    }

    #[test]
    fn two_submissions_occupy_consecutive_levels() {
        let mut t = UpTree::new(3).unwrap();
        let rng = CounterRng::new(1);
        t.submit(&mut chunks(&[1.0; 8], 0), 0).unwrap();
        assert!(t.advance(Disposition::NEUTRAL, &rng).is_none());
        t.submit(&mut chunks(&[1.0; 8], 1), 1).unwrap();
        let tags: Vec<_> = t.in_flight().into_iter().map(|x| x.map(|c| c.start_tick)).collect();
        assert_eq!(tags, vec![Some(1), Some(0), None]);
    }

    #[test]
    fn winner_emerges_after_height_ticks() {
        let h = 3;
        let mut t = UpTree::new(h).unwrap();
        let rng = CounterRng::new(9);
        let mut emitted = Vec::new();
        for tick in 0..20u64 {
            if let Some(w) = t.advance(Disposition::NEUTRAL, &rng) {
                emitted.push((tick, w.tag.start_tick));
            }
            t.submit(&mut chunks(&[1.0, 2.0, 0.0, 5.0, 1.0, 0.0, 0.0, 3.0], tick), tick)
                .unwrap();
        }
        assert_eq!(emitted.first(), Some(&(3, 0)));
        // exactly one winner per tick at steady state
        assert_eq!(emitted.len(), 20 - h as usize);
        for (tick, tag) in emitted {
            assert_eq!(tick, tag + h as u64);
        }
    }

    #[test]
    fn root_aux_is_sum_of_submissions() {
        let mut t = UpTree::new(3).unwrap();
        let rng = CounterRng::new(3);
        let w = [4.0, -2.0, 0.0, 7.5, -1.25, 3.0, 0.0, -8.0];
        t.submit(&mut chunks(&w, 0), 0).unwrap();
        let mut out = None;
        for _ in 0..3 {
            out = t.advance(Disposition::new(0.3).unwrap(), &rng);
        }
        let c = out.unwrap().chunk;
        assert_eq!(c.intensity(), w.iter().map(|x| x.abs()).sum::<f64>());
        assert_eq!(c.mood(), w.iter().sum::<f64>());
    }

    #[test]
    fn single_positive_leaf_always_wins() {
        let mut tour = Tournament::from_weights(&[0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let rng = CounterRng::new(11);
        for c in 0..1000 {
            assert_eq!(tour.play(Disposition::NEUTRAL, &rng, c).0, 5);
        }
    }

    #[test]
    fn local_winner_probabilities() {
        let a = make_chunk(ProcessorId(0), 0, Gist::empty(), 11.0).unwrap();
        let b = make_chunk(ProcessorId(1), 0, Gist::empty(), 9.0).unwrap();
        // draws below 11/20 pick the first contestant
        assert_eq!(local_winner(&a, &b, Disposition::NEUTRAL, 0.549).origin, ProcessorId(0));
        assert_eq!(local_winner(&a, &b, Disposition::NEUTRAL, 0.551).origin, ProcessorId(1));
        let z0 = make_chunk(ProcessorId(0), 0, Gist::empty(), 0.0).unwrap();
        let z1 = make_chunk(ProcessorId(1), 0, Gist::empty(), 0.0).unwrap();
        assert_eq!(local_winner(&z0, &z1, Disposition::NEUTRAL, 0.49).origin, ProcessorId(0));
        assert_eq!(local_winner(&z0, &z1, Disposition::NEUTRAL, 0.51).origin, ProcessorId(1));
        let m = local_winner(&a, &b, Disposition::NEUTRAL, 0.9);
        assert_eq!((m.intensity(), m.mood()), (20.0, 20.0));
    }

    #[test]
    fn all_zero_weights_flit_uniformly() {
        let mut tour = Tournament::from_weights(&[0.0; 8]).unwrap();
        let rng = CounterRng::new(5);
        let mut counts = [0u32; 8];
        let n = 80_000;
        for c in 0..n {
            counts[tour.play(Disposition::NEUTRAL, &rng, c).0] += 1;
        }
        for k in counts {
            let p = k as f64 / n as f64;
            assert!((p - 0.125).abs() < 0.006, "{counts:?}");
        }
    }

    #[test]
    fn cut_edge_replaces_subtree_with_zero() {
        let mut t = UpTree::new(2).unwrap();
        t.cut_edge(NodeAddr { level: 1, index: 0 }, 0).unwrap();
        assert!(t.cut_edge(NodeAddr { level: 2, index: 0 }, 0).is_err());
        let rng = CounterRng::new(1);
        for tick in 0..50 {
            if let Some(w) = t.advance(Disposition::NEUTRAL, &rng) {
                assert!(w.chunk.origin == ProcessorId(2) || w.chunk.origin == ProcessorId(3));
                assert_eq!(w.chunk.intensity(), 2.0);
            }
            t.submit(&mut chunks(&[100.0, 100.0, 1.0, 1.0], tick), tick).unwrap();
        }
        assert!(t.leaf_is_severed(1, 10) && !t.leaf_is_severed(2, 10));
    }
}
