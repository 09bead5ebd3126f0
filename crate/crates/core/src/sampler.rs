//! Clip sampling for the speed-order pretext task.
//!
//! A training example is a tuple of `n` clips cut from one video at different
//! signed playback speeds, shuffled, plus the permutation label that restores
//! the canonical (ascending-speed) order.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest and largest supported tuple sizes. The order head predicts one of
/// n! classes, so this is kept small.
pub const MIN_TUPLE: usize = 2;
pub const MAX_TUPLE: usize = 6;

/// Which playback directions the speed set draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    /// Mixed fast-forward and rewind speeds.
    Both,
    /// Fast-forward only: +1, +3, +5, ...
    ForwardOnly,
    /// Rewind only: -1, -3, -5, ...
    RewindOnly,
}

/// How tuples are cut from a video.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Clips per tuple.
    pub n: usize,
    /// Frames per clip.
    pub m: usize,
    pub direction_mode: DirectionMode,
    /// Explicit speed override; empty means derive from `n` and
    /// `direction_mode`.
    pub speeds: Vec<i32>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { n: 3, m: 16, direction_mode: DirectionMode::Both, speeds: Vec::new() }
    }
}

impl SamplerConfig {
    /// The canonical (ascending) speed list this config samples from.
    pub fn speed_set(&self) -> Result<Vec<i32>> {
        if !self.speeds.is_empty() {
            let mut s = self.speeds.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != self.n {
                return Err(Error::Config(format!(
                    "speeds override has {} distinct entries but n = {}",
                    s.len(),
                    self.n
                )));
            }
            if s.iter().any(|&v| v == 0) {
                return Err(Error::InvalidClipSpec("speed 0 is not allowed".into()));
            }
            return Ok(s);
        }
        speed_set(self.n, self.direction_mode)
    }

    /// Number of order classes, n!.
    pub fn num_order_classes(&self) -> Result<usize> {
        check_tuple_size(self.n)?;
        Ok(factorial(self.n))
    }
}

fn check_tuple_size(n: usize) -> Result<()> {
    if !(MIN_TUPLE..=MAX_TUPLE).contains(&n) {
        return Err(Error::UnsupportedTupleSize(n));
    }
    Ok(())
}

/// n! for small n.
pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Signed playback speeds for a tuple of `n` clips, ascending.
///
/// In mixed mode the set grows symmetrically in odd steps: two clips use
/// {-3, +3}; each odd size adds +1 and the next +/-(2i+1) pair; each even
/// size above two adds -1 to the preceding odd set. Single-direction modes
/// use the first `n` odd magnitudes with one sign.
pub fn speed_set(n: usize, mode: DirectionMode) -> Result<Vec<i32>> {
    check_tuple_size(n)?;
    let mut s: Vec<i32> = match mode {
        DirectionMode::ForwardOnly => (0..n).map(|i| 2 * i as i32 + 1).collect(),
        DirectionMode::RewindOnly => (0..n).map(|i| -(2 * i as i32 + 1)).collect(),
        DirectionMode::Both => {
            if n == 2 {
                vec![-3, 3]
            } else if n % 2 == 1 {
                let mut s = vec![1];
                for i in 1..=(n - 1) / 2 {
                    let v = 2 * i as i32 + 1;
                    s.push(v);
                    s.push(-v);
                }
                s
            } else {
                let mut s = speed_set(n - 1, DirectionMode::Both)?;
                s.push(-1);
                s
            }
        }
    };
    s.sort_unstable();
    Ok(s)
}

/// Lexicographic rank of a permutation of 0..n (Lehmer code in factorial
/// base). The identity ranks 0 and the full reversal ranks n!-1.
pub fn permutation_rank(perm: &[usize]) -> Result<usize> {
    let n = perm.len();
    check_tuple_size(n)?;
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidPermutation(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        seen[p] = true;
    }
    let mut rank = 0;
    for i in 0..n {
        let smaller_right = perm[i + 1..].iter().filter(|&&q| q < perm[i]).count();
        rank += smaller_right * factorial(n - 1 - i);
    }
    Ok(rank)
}

/// Inverse of [`permutation_rank`]: the permutation of 0..n with the given
/// lexicographic rank.
pub fn permutation_unrank(rank: usize, n: usize) -> Result<Vec<usize>> {
    check_tuple_size(n)?;
    if rank >= factorial(n) {
        return Err(Error::InvalidPermutation(format!("rank {rank} out of range for n = {n}")));
    }
    let mut pool: Vec<usize> = (0..n).collect();
    let mut rest = rank;
    let mut perm = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let f = factorial(i);
        perm.push(pool.remove(rest / f));
        rest %= f;
    }
    Ok(perm)
}

/// One clip: a signed speed and the anchor frame it is cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub speed: i32,
    pub anchor: usize,
}

impl ClipSpec {
    /// Frame indices for `m` frames of this clip from a video of `len`
    /// frames. Positive speeds step forward from the anchor, negative speeds
    /// step backward; both wrap around the video end.
    pub fn indices(&self, len: usize, m: usize) -> Result<Vec<usize>> {
        sample_clip_indices(len, self.speed, m, self.anchor)
    }
}

/// Frame indices for an `m`-frame clip at signed `speed` from `anchor`.
pub fn sample_clip_indices(len: usize, speed: i32, m: usize, anchor: usize) -> Result<Vec<usize>> {
    if speed == 0 {
        return Err(Error::InvalidClipSpec("speed 0 is not allowed".into()));
    }
    if m == 0 {
        return Err(Error::InvalidClipSpec("clip length 0".into()));
    }
    if len == 0 {
        return Err(Error::InvalidClipSpec("empty video".into()));
    }
    if anchor >= len {
        return Err(Error::InvalidClipSpec(format!("anchor {anchor} out of range for {len} frames")));
    }
    let len_i = len as i64;
    let step = speed as i64;
    Ok((0..m as i64).map(|k| (anchor as i64 + k * step).rem_euclid(len_i) as usize).collect())
}

/// A shuffled tuple of clips plus its order label.
///
/// `clips[j]` is the clip shown at input slot `j`; `perm[j]` is the index of
/// that clip in the canonical ascending-speed order, and `label` is the
/// lexicographic rank of `perm`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleSample {
    pub clips: Vec<ClipSpec>,
    pub perm: Vec<usize>,
    pub label: usize,
}

/// Draw one training tuple from a video of `len` frames: one clip per speed
/// in the canonical set, each with its own uniform anchor, presented in a
/// uniformly random order.
pub fn sample_tuple<R: Rng>(len: usize, cfg: &SamplerConfig, rng: &mut R) -> Result<TupleSample> {
    let speeds = cfg.speed_set()?;
    if len == 0 {
        return Err(Error::InvalidClipSpec("empty video".into()));
    }
    let canonical: Vec<ClipSpec> =
        speeds.iter().map(|&s| ClipSpec { speed: s, anchor: rng.gen_range(0..len) }).collect();
    let mut perm: Vec<usize> = (0..cfg.n).collect();
    perm.shuffle(rng);
    let clips = perm.iter().map(|&c| canonical[c]).collect();
    let label = permutation_rank(&perm)?;
    Ok(TupleSample { clips, perm, label })
}
