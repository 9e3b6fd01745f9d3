//! Chunks, gists, disposition and the selection value `f`.
//!
//! A chunk carries the originating processor, its creation tick, a gist,
//! a signed weight and the auxiliary pair `(intensity, mood)`. The pair
//! starts as `(|weight|, weight)` and is summed componentwise every time a
//! chunk wins a local competition, so at the root it holds the totals over
//! all submissions of that competition.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CtmError, Result};

pub type Tick = u64;

/// Default upper bound on the serialized size of a gist, in bytes.
pub const DEFAULT_GIST_CAP: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessorId(pub u32);

impl ProcessorId {
    /// Origin of the placeholder chunk that replaces a severed subtree.
    pub const LESION: ProcessorId = ProcessorId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ProcessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::LESION {
            f.write_str("lesion")
        } else {
            write!(f, "p{}", self.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Number of leaves / processors. Always `2^height`.
    pub processors: usize,
    pub height: u32,
    pub lifetime: Tick,
    pub disposition: Disposition,
    pub seed: u64,
}

impl SimParams {
    pub fn new(height: u32, lifetime: Tick, disposition: f64, seed: u64) -> Result<Self> {
        if height == 0 || height > 30 {
            return Err(CtmError::Config(format!(
                "tree height must be in 1..=30, got {height}"
            )));
        }
        Ok(Self {
            processors: 1usize << height,
            height,
            lifetime,
            disposition: Disposition::new(disposition)?,
            seed,
        })
    }

    /// Builds parameters from a processor count, rejecting counts that are
    /// not a power of two.
    pub fn from_processors(n: usize, lifetime: Tick, disposition: f64, seed: u64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(CtmError::Config(format!(
                "processor count must be a power of two >= 2, got {n}"
            )));
        }
        Self::new(n.trailing_zeros(), lifetime, disposition, seed)
    }
}

/// Global bias in `[-1, 1]` toward positively (`d > 0`) or negatively
/// (`d < 0`) valenced chunks.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Disposition(f64);

impl Disposition {
    pub const NEUTRAL: Disposition = Disposition(0.0);
    pub const MANIC: Disposition = Disposition(1.0);
    pub const DEPRESSED: Disposition = Disposition(-1.0);

    pub fn new(d: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&d) {
            return Err(CtmError::InvalidInput(format!(
                "disposition must lie in [-1, 1], got {d}"
            )));
        }
        Ok(Self(d))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_manic(self) -> bool {
        self.0 == 1.0
    }

    pub fn is_depressed(self) -> bool {
        self.0 == -1.0
    }
}

impl TryFrom<f64> for Disposition {
    type Error = CtmError;
    fn try_from(d: f64) -> Result<Self> {
        Disposition::new(d)
    }
}

impl From<Disposition> for f64 {
    fn from(d: Disposition) -> f64 {
        d.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GistKind {
    Query,
    Answer,
    Info,
    #[serde(rename = "noop")]
    NoOp,
    Dream,
}

impl GistKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GistKind::Query => "query",
            GistKind::Answer => "answer",
            GistKind::Info => "info",
            GistKind::NoOp => "noop",
            GistKind::Dream => "dream",
        }
    }
}

/// A symbolic tag, optionally valenced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<f64>,
}

impl Label {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            valence: None,
        }
    }

    pub fn valenced(name: impl Into<String>, valence: f64) -> Self {
        Self {
            name: name.into(),
            valence: Some(valence),
        }
    }
}

/// Name of a referent in the world model (an actuator, a sensor, a world
/// object or the machine itself).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Referent(pub String);

impl Referent {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Referent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// What a gist points at: a sketch in the world model, or an earlier chunk
/// (an answer points at the query it answers).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Sketch(Referent),
    Chunk { origin: ProcessorId, time: Tick },
}

impl Reference {
    pub fn sketch(name: impl Into<String>) -> Self {
        Reference::Sketch(Referent::new(name))
    }

    pub fn as_sketch(&self) -> Option<&Referent> {
        match self {
            Reference::Sketch(r) => Some(r),
            Reference::Chunk { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gist {
    pub kind: GistKind,
    /// Sorted by name, no duplicates.
    labels: Vec<Label>,
    payload: Vec<u8>,
    refers_to: Option<Reference>,
}

impl Gist {
    pub fn new(
        kind: GistKind,
        labels: Vec<Label>,
        payload: Vec<u8>,
        refers_to: Option<Reference>,
    ) -> Result<Self> {
        Self::with_cap(kind, labels, payload, refers_to, DEFAULT_GIST_CAP)
    }

    pub fn with_cap(
        kind: GistKind,
        mut labels: Vec<Label>,
        payload: Vec<u8>,
        refers_to: Option<Reference>,
        cap: usize,
    ) -> Result<Self> {
        if kind == GistKind::NoOp && (!labels.is_empty() || refers_to.is_some()) {
            return Err(CtmError::InvalidInput(
                "noop gists carry no labels and no reference".into(),
            ));
        }
        labels.sort_by(|a, b| a.name.cmp(&b.name));
        labels.dedup_by(|a, b| a.name == b.name);
        let gist = Self {
            kind,
            labels,
            payload,
            refers_to,
        };
        let size = gist.serialized_size();
        if size > cap {
            return Err(CtmError::InvalidInput(format!(
                "gist of {size} bytes exceeds the {cap}-byte cap"
            )));
        }
        Ok(gist)
    }

    pub fn noop() -> Self {
        Self {
            kind: GistKind::NoOp,
            labels: Vec::new(),
            payload: Vec::new(),
            refers_to: None,
        }
    }

    /// An empty informational gist; does not allocate.
    pub fn empty() -> Self {
        Self {
            kind: GistKind::Info,
            labels: Vec::new(),
            payload: Vec::new(),
            refers_to: None,
        }
    }

    /// True for the gist [`Gist::empty`] builds.
    pub fn is_empty(&self) -> bool {
        self.kind == GistKind::Info && self.labels.is_empty() && self.payload.is_empty() && self.refers_to.is_none()
    }

    /// Convenience constructor for the common case of a handful of
    /// unvalenced labels. Panics if the result breaks the size cap, which
    /// only happens for programmer-supplied label lists.
    pub fn tagged(kind: GistKind, labels: &[&str], refers_to: Option<Reference>) -> Self {
        Self::new(
            kind,
            labels.iter().map(|l| Label::new(*l)).collect(),
            Vec::new(),
            refers_to,
        )
        .expect("built-in gist exceeds size cap")
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn has_label(&self, name: &str) -> bool {
        self.labels
            .binary_search_by(|l| l.name.as_str().cmp(name))
            .is_ok()
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn refers_to(&self) -> Option<&Reference> {
        self.refers_to.as_ref()
    }

    pub fn sketch_ref(&self) -> Option<&Referent> {
        self.refers_to.as_ref().and_then(Reference::as_sketch)
    }

    /// Compact binary size: one byte of kind, a length-prefixed payload,
    /// each label as length-prefixed name plus optional 8-byte valence, and
    /// the reference.
    pub fn serialized_size(&self) -> usize {
        let labels: usize = self
            .labels
            .iter()
            .map(|l| 2 + l.name.len() + if l.valence.is_some() { 8 } else { 0 })
            .sum();
        let reference = match &self.refers_to {
            None => 1,
            Some(Reference::Sketch(r)) => 3 + r.0.len(),
            Some(Reference::Chunk { .. }) => 13,
        };
        1 + 2 + self.payload.len() + 2 + labels + reference
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub origin: ProcessorId,
    pub time: Tick,
    pub gist: Gist,
    pub weight: f64,
    intensity: f64,
    mood: f64,
}

impl Chunk {
    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn mood(&self) -> f64 {
        self.mood
    }

    /// Overwrites the auxiliary pair. Used when the pair was accumulated
    /// outside the chunk (the up-tree keeps it in compact slots).
    pub(crate) fn with_aux(mut self, intensity: f64, mood: f64) -> Self {
        debug_assert!(intensity >= 0.0 && mood.abs() <= intensity);
        self.intensity = intensity;
        self.mood = mood;
        self
    }

    /// Fresh chunk from an already validated weight.
    pub(crate) fn fresh(origin: ProcessorId, time: Tick, gist: Gist, weight: f64) -> Self {
        Self {
            origin,
            time,
            gist,
            weight,
            intensity: weight.abs(),
            mood: weight,
        }
    }

    /// Weight-0 placeholder standing in for a severed subtree.
    pub fn lesion(time: Tick) -> Self {
        Self {
            origin: ProcessorId::LESION,
            time,
            gist: Gist::empty(),
            weight: 0.0,
            intensity: 0.0,
            mood: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.intensity >= 0.0 && self.mood.abs() <= self.intensity
    }
}

pub fn make_chunk(origin: ProcessorId, time: Tick, gist: Gist, weight: f64) -> Result<Chunk> {
    if !weight.is_finite() {
        return Err(CtmError::InvalidInput(format!(
            "chunk weight must be finite, got {weight}"
        )));
    }
    Ok(Chunk {
        origin,
        time,
        gist,
        weight,
        intensity: weight.abs(),
        mood: weight,
    })
}

/// `intensity + d * mood`. Non-negative whenever `|mood| <= intensity`.
#[inline]
pub fn f_value(chunk: &Chunk, d: Disposition) -> f64 {
    f_of(chunk.intensity, chunk.mood, d.0)
}

#[inline]
pub(crate) fn f_of(intensity: f64, mood: f64, d: f64) -> f64 {
    // |d * mood| <= intensity, so only rounding can push this below zero.
    (intensity + d * mood).max(0.0)
}

/// The chunk that moves up after `winner` beats `loser`: the winner's
/// origin, time, gist and weight with both auxiliary pairs summed.
pub fn merge_winner(winner: Chunk, loser: &Chunk) -> Chunk {
    Chunk {
        intensity: winner.intensity + loser.intensity,
        mood: winner.mood + loser.mood,
        ..winner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chunk(w: f64) -> Chunk {
        make_chunk(ProcessorId(0), 0, Gist::empty(), w).unwrap()
    }

    fn d(v: f64) -> Disposition {
        Disposition::new(v).unwrap()
    }

    #[test]
    fn make_chunk_sets_aux_from_weight() {
        let c = chunk(11.0);
        assert_eq!((c.intensity(), c.mood()), (11.0, 11.0));
        let c = chunk(0.0);
        assert_eq!((c.intensity(), c.mood()), (0.0, 0.0));
        let c = chunk(-7.0);
        assert_eq!((c.intensity(), c.mood()), (7.0, -7.0));
    }

    #[test]
    fn make_chunk_rejects_non_finite() {
        for w in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(matches!(
                make_chunk(ProcessorId(1), 0, Gist::empty(), w),
                Err(CtmError::InvalidInput(_))
            ));
        }
    }

    #[test]
    fn f_value_examples() {
        assert_eq!(f_value(&chunk(11.0), Disposition::NEUTRAL), 11.0);
        assert_eq!(f_value(&chunk(-3.0), Disposition::MANIC), 0.0);
        let c = chunk(5.0).with_aux(5.0, 1.0);
        assert_eq!(f_value(&c, d(-0.5)), 4.5);
    }

    #[test]
    fn merge_examples() {
        let m = merge_winner(chunk(11.0), &chunk(9.0));
        assert_eq!((m.intensity(), m.mood()), (20.0, 20.0));
        let m = merge_winner(chunk(0.0), &chunk(0.0));
        assert_eq!((m.intensity(), m.mood()), (0.0, 0.0));
        let m = merge_winner(chunk(-5.0), &chunk(3.0));
        assert_eq!((m.intensity(), m.mood()), (8.0, -2.0));
        assert_eq!(m.weight, -5.0);
    }

    #[test]
    fn merge_keeps_winner_identity() {
        let w = make_chunk(ProcessorId(3), 17, Gist::tagged(GistKind::Query, &["A"], None), 2.0)
            .unwrap();
        let l = make_chunk(ProcessorId(4), 17, Gist::empty(), 6.0).unwrap();
        let m = merge_winner(w.clone(), &l);
        assert_eq!(m.origin, w.origin);
        assert_eq!(m.time, w.time);
        assert_eq!(m.gist, w.gist);
        assert_eq!(m.weight, w.weight);
    }

    #[test]
    fn disposition_bounds() {
        assert!(Disposition::new(1.0).is_ok());
        assert!(Disposition::new(-1.0).is_ok());
        assert!(Disposition::new(1.0001).is_err());
        assert!(Disposition::new(f64::NAN).is_err());
    }

    #[test]
    fn sim_params_require_power_of_two() {
        assert!(SimParams::from_processors(16, 10, 0.0, 1).is_ok());
        assert!(SimParams::from_processors(12, 10, 0.0, 1).is_err());
        assert!(SimParams::from_processors(1, 10, 0.0, 1).is_err());
        assert!(SimParams::new(0, 10, 0.0, 1).is_err());
        assert_eq!(SimParams::new(10, 0, 0.0, 1).unwrap().processors, 1024);
    }

    #[test]
    fn gist_cap_and_noop_rules() {
        let big = vec![0u8; 300];
        assert!(Gist::new(GistKind::Info, vec![], big, None).is_err());
        assert!(Gist::new(GistKind::NoOp, vec![Label::new("X")], vec![], None).is_err());
        assert!(Gist::new(GistKind::NoOp, vec![], vec![], Some(Reference::sketch("s"))).is_err());
        let g = Gist::tagged(GistKind::Info, &["B", "A", "B"], None);
        assert_eq!(g.label_names(), vec!["A", "B"]);
        assert!(g.has_label("A") && !g.has_label("C"));
    }

    proptest! {
        #[test]
        fn f_additive_under_merge(
            wa in -1e6f64..1e6, wb in -1e6f64..1e6, wc in -1e6f64..1e6, dv in -1.0f64..=1.0
        ) {
            // Use integer-valued weights so sums are exact.
            let (wa, wb, wc) = (wa.round(), wb.round(), wc.round());
            let dd = d((dv * 4.0).round() / 4.0);
            let a = merge_winner(chunk(wa), &chunk(wc));
            let b = chunk(wb);
            let m = merge_winner(a.clone(), &b);
            prop_assert_eq!(f_value(&m, dd), f_value(&a, dd) + f_value(&b, dd));
        }

        #[test]
        fn merge_preserves_validity(ws in proptest::collection::vec(-1e9f64..1e9, 1..32)) {
            let mut acc = chunk(ws[0]);
            for w in &ws[1..] {
                acc = merge_winner(acc, &chunk(*w));
                prop_assert!(acc.is_valid());
            }
        }

        #[test]
        fn f_non_negative(w in -1e12f64..1e12, dv in -1.0f64..=1.0) {
            prop_assert!(f_value(&chunk(w), d(dv)) >= 0.0);
        }

        #[test]
        fn neutral_f_is_abs_weight(w in -1e12f64..1e12) {
            prop_assert_eq!(f_value(&chunk(w), Disposition::NEUTRAL), w.abs());
        }
    }
}
