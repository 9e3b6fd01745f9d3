//! Win-probability oracles for a single competition.
//!
//! [`win_distribution_analytic`] is the closed form `f_i / sum f`.
//! [`win_distribution_exhaustive`] makes no use of that law: it enumerates
//! every coin-toss outcome of every internal node, carrying its own
//! auxiliary sums, and accumulates exact branch probabilities. The rational
//! variants do the same in arbitrary-precision arithmetic.

use std::ops::{Add, Div, Mul};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::chunk::{Chunk, Disposition};
use crate::error::{CtmError, Result};

/// Largest tree height the exhaustive oracle accepts (2^15 paths at h = 4).
pub const EXHAUSTIVE_MAX_HEIGHT: u32 = 4;

trait Field:
    Clone + Zero + One + PartialOrd + Add<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn half() -> Self;
    fn from_f64(x: f64) -> Self;
    fn max_zero(self) -> Self {
        if self < Self::zero() {
            Self::zero()
        } else {
            self
        }
    }
}

impl Field for f64 {
    fn half() -> Self {
        0.5
    }
    fn from_f64(x: f64) -> Self {
        x
    }
}

impl Field for BigRational {
    fn half() -> Self {
        BigRational::new(BigInt::one(), BigInt::from(2))
    }
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite value")
    }
}

fn leaf_count_height(n: usize) -> Result<u32> {
    if n < 2 || !n.is_power_of_two() {
        return Err(CtmError::InvalidInput(format!(
            "leaf count must be a power of two >= 2, got {n}"
        )));
    }
    Ok(n.trailing_zeros())
}

struct Outcome<F> {
    prob: F,
    leaf: usize,
    intensity: F,
    mood: F,
}

fn enumerate<F: Field>(aux: &[(F, F)], offset: usize, d: &F) -> Vec<Outcome<F>> {
    if aux.len() == 1 {
        let (i, m) = aux[0].clone();
        return vec![Outcome {
            prob: F::one(),
            leaf: offset,
            intensity: i,
            mood: m,
        }];
    }
    let half = aux.len() / 2;
    let left = enumerate(&aux[..half], offset, d);
    let right = enumerate(&aux[half..], offset + half, d);
    let mut out = Vec::with_capacity(2 * left.len() * right.len());
    for l in &left {
        for r in &right {
            let fl = (l.intensity.clone() + d.clone() * l.mood.clone()).max_zero();
            let fr = (r.intensity.clone() + d.clone() * r.mood.clone()).max_zero();
            let total = fl.clone() + fr.clone();
            let (pl, pr) = if total > F::zero() {
                (fl / total.clone(), fr / total)
            } else {
                (F::half(), F::half())
            };
            let joint = l.prob.clone() * r.prob.clone();
            let intensity = l.intensity.clone() + r.intensity.clone();
            let mood = l.mood.clone() + r.mood.clone();
            out.push(Outcome {
                prob: joint.clone() * pl,
                leaf: l.leaf,
                intensity: intensity.clone(),
                mood: mood.clone(),
            });
            out.push(Outcome {
                prob: joint * pr,
                leaf: r.leaf,
                intensity,
                mood,
            });
        }
    }
    out
}

fn exhaustive<F: Field>(aux: Vec<(F, F)>, d: F) -> Result<Vec<F>> {
    let h = leaf_count_height(aux.len())?;
    if h > EXHAUSTIVE_MAX_HEIGHT {
        return Err(CtmError::TooLarge {
            height: h,
            limit: EXHAUSTIVE_MAX_HEIGHT,
        });
    }
    let mut dist = vec![F::zero(); aux.len()];
    for o in enumerate(&aux, 0, &d) {
        dist[o.leaf] = dist[o.leaf].clone() + o.prob;
    }
    Ok(dist)
}

fn analytic<F: Field>(f: Vec<F>) -> Vec<F> {
    let total = f.iter().fold(F::zero(), |acc, x| acc + x.clone());
    if total > F::zero() {
        f.into_iter().map(|x| x / total.clone()).collect()
    } else {
        let n = F::from_f64(f.len() as f64);
        vec![F::one() / n; f.len()]
    }
}

fn aux_f64(chunks: &[Chunk]) -> Vec<(f64, f64)> {
    chunks.iter().map(|c| (c.intensity(), c.mood())).collect()
}

fn aux_exact(chunks: &[Chunk]) -> Vec<(BigRational, BigRational)> {
    chunks
        .iter()
        .map(|c| (BigRational::from_f64(c.intensity()), BigRational::from_f64(c.mood())))
        .collect()
}

/// `f_i / sum f`, or uniform when every `f` is zero.
pub fn win_distribution_analytic(chunks: &[Chunk], d: Disposition) -> Vec<f64> {
    let dv = d.value();
    analytic(
        chunks
            .iter()
            .map(|c| (c.intensity() + dv * c.mood()).max(0.0))
            .collect(),
    )
}

pub fn win_distribution_analytic_exact(chunks: &[Chunk], d: Disposition) -> Vec<BigRational> {
    let dv = BigRational::from_f64(d.value());
    analytic(
        aux_exact(chunks)
            .into_iter()
            .map(|(i, m)| (i + dv.clone() * m).max_zero())
            .collect(),
    )
}

/// Brute-force win distribution by enumeration of every coin toss.
/// Refuses trees taller than [`EXHAUSTIVE_MAX_HEIGHT`].
pub fn win_distribution_exhaustive(chunks: &[Chunk], d: Disposition) -> Result<Vec<f64>> {
    exhaustive(aux_f64(chunks), d.value())
}

pub fn win_distribution_exhaustive_exact(
    chunks: &[Chunk],
    d: Disposition,
) -> Result<Vec<BigRational>> {
    exhaustive(aux_exact(chunks), BigRational::from_f64(d.value()))
}

/// Sum of `values` reduced pairwise in up-tree order: leaves `2j` and
/// `2j + 1` first, then their parents, up to the root.
pub fn pairwise_tree_sum(values: &[f64]) -> f64 {
    assert!(values.len().is_power_of_two(), "leaf count must be a power of two");
    let mut level = values.to_vec();
    while level.len() > 1 {
        level = level.chunks(2).map(|p| p[0] + p[1]).collect();
    }
    level[0]
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
