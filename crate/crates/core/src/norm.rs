//! Temporal group normalization and the batch-norm baseline.
//!
//! Temporal group norm splits each layer's temporal axis into contiguous
//! groups of a fixed frame count `g` and normalizes per (channel, group)
//! over batch, the group's frames, height, and width. Deeper layers have
//! shorter temporal extents, so the group count falls with depth while the
//! temporal resolution of the statistics stays constant. Eval mode uses
//! EMA running statistics, like batch norm, since the batch axis is pooled.

use ndarray::{s, Array2, Array5, ArrayD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Param, Scalar, Slot, Tensors};

/// Which normalization the backbone uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Per-channel batch normalization.
    Bn,
    /// Per-(channel, temporal group) normalization.
    Tgn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    pub kind: NormKind,
    /// Frames per temporal group.
    pub g: usize,
    pub eps: f64,
    /// EMA coefficient for running statistics.
    pub momentum: f64,
    /// Learn a separate scale/shift per (channel, group) instead of per
    /// channel.
    pub per_group_affine: bool,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig { kind: NormKind::Tgn, g: 2, eps: 1e-5, momentum: 0.1, per_group_affine: false }
    }
}

/// How a temporal extent of `temporal_size` frames splits into
/// `group_count` contiguous groups of `element_size` frames each (the last
/// collapses to one group of all frames when `temporal_size <= element_size`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub temporal_size: usize,
    pub element_size: usize,
    pub group_count: usize,
}

impl GroupPlan {
    /// Frame range of group `i`.
    pub fn bounds(&self, i: usize) -> std::ops::Range<usize> {
        debug_assert!(i < self.group_count);
        if self.group_count == 1 {
            0..self.temporal_size
        } else {
            i * self.element_size..(i + 1) * self.element_size
        }
    }
}

/// Split `t` frames into groups of `g`. A layer whose temporal extent is no
/// larger than one group gets a single group; otherwise `g` must divide `t`.
pub fn plan_groups(t: usize, g: usize) -> Result<GroupPlan> {
    if t == 0 || g == 0 {
        return Err(Error::Config(format!("group plan needs t >= 1 and g >= 1, got t={t} g={g}")));
    }
    if t <= g {
        return Ok(GroupPlan { temporal_size: t, element_size: g, group_count: 1 });
    }
    if t % g != 0 {
        return Err(Error::Indivisible { t, g });
    }
    Ok(GroupPlan { temporal_size: t, element_size: g, group_count: t / g })
}

struct TgnCache<F: Scalar> {
    xhat: Array5<F>,
    inv_std: Array2<F>,
}

/// Temporal group normalization layer with learned per-channel (or
/// per-group, behind the config flag) scale and shift.
pub struct TgnLayer<F: Scalar> {
    pub plan: GroupPlan,
    channels: usize,
    eps: F,
    momentum: F,
    per_group_affine: bool,
    pub gamma: Param<F>,
    pub beta: Param<F>,
    running_mean: ArrayD<F>,
    running_var: ArrayD<F>,
    num_batches: ArrayD<F>,
    cache: Option<TgnCache<F>>,
}

impl<F: Scalar> TgnLayer<F> {
    pub fn new(channels: usize, t: usize, cfg: &NormConfig) -> Result<Self> {
        let plan = plan_groups(t, cfg.g)?;
        let p = plan.group_count;
        let affine_shape: Vec<usize> =
            if cfg.per_group_affine { vec![channels, p] } else { vec![channels] };
        Ok(TgnLayer {
            plan,
            channels,
            eps: F::from_f64(cfg.eps),
            momentum: F::from_f64(cfg.momentum),
            per_group_affine: cfg.per_group_affine,
            gamma: Param::new(ArrayD::ones(affine_shape.clone())),
            beta: Param::new(ArrayD::zeros(affine_shape)),
            running_mean: ArrayD::zeros(vec![channels, p]),
            running_var: ArrayD::ones(vec![channels, p]),
            num_batches: ArrayD::zeros(vec![1]),
            cache: None,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn gains(&self, c: usize, g: usize) -> (F, F) {
        if self.per_group_affine {
            (self.gamma.value[[c, g]], self.beta.value[[c, g]])
        } else {
            (self.gamma.value[[c]], self.beta.value[[c]])
        }
    }

    fn check(&self, x: &Array5<F>) -> Result<()> {
        let (_, c, t, _, _) = x.dim();
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "norm built for {} channels, got {c}",
                self.channels
            )));
        }
        if t != self.plan.temporal_size {
            return Err(Error::ShapeMismatch(format!(
                "norm built for temporal size {}, got {t}",
                self.plan.temporal_size
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        self.check(x)?;
        let (_, c, _, _, _) = x.dim();
        let p = self.plan.group_count;
        let mut y = Array5::zeros(x.dim());

        if train {
            let mut xhat = Array5::zeros(x.dim());
            let mut inv_std = Array2::zeros((c, p));
            let mom = self.momentum;
            for ci in 0..c {
                for gi in 0..p {
                    let r = self.plan.bounds(gi);
                    let xs = x.slice(s![.., ci, r.clone(), .., ..]);
                    let n = F::from_f64(xs.len() as f64);
                    let mean = xs.sum() / n;
                    let var = xs.fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                    let is = F::one() / (var + self.eps).sqrt();
                    inv_std[[ci, gi]] = is;
                    let (ga, be) = self.gains(ci, gi);
                    let mut xh = xhat.slice_mut(s![.., ci, r.clone(), .., ..]);
                    let mut ys = y.slice_mut(s![.., ci, r.clone(), .., ..]);
                    ndarray::Zip::from(&mut ys).and(&mut xh).and(&xs).for_each(|yo, ho, &v| {
                        let h = (v - mean) * is;
                        *ho = h;
                        *yo = ga * h + be;
                    });
                    let rm = &mut self.running_mean[[ci, gi]];
                    *rm = (F::one() - mom) * *rm + mom * mean;
                    let rv = &mut self.running_var[[ci, gi]];
                    *rv = (F::one() - mom) * *rv + mom * var;
                }
            }
            self.num_batches[[0]] = self.num_batches[[0]] + F::one();
            self.cache = Some(TgnCache { xhat, inv_std });
        } else {
            self.cache = None;
            for ci in 0..c {
                for gi in 0..p {
                    let r = self.plan.bounds(gi);
                    let mean = self.running_mean[[ci, gi]];
                    let is = F::one() / (self.running_var[[ci, gi]] + self.eps).sqrt();
                    let (ga, be) = self.gains(ci, gi);
                    let xs = x.slice(s![.., ci, r.clone(), .., ..]);
                    let mut ys = y.slice_mut(s![.., ci, r, .., ..]);
                    ndarray::Zip::from(&mut ys).and(&xs).for_each(|yo, &v| {
                        *yo = ga * (v - mean) * is + be;
                    });
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array5<F>) -> Result<Array5<F>> {
        let TgnCache { xhat, inv_std } = self.cache.take().ok_or_else(|| {
            Error::ShapeMismatch("norm backward without a training forward".into())
        })?;
        if dy.dim() != xhat.dim() {
            return Err(Error::ShapeMismatch("norm backward shape".into()));
        }
        let (_, c, _, _, _) = dy.dim();
        let p = self.plan.group_count;
        let mut dx = Array5::zeros(dy.dim());
        for ci in 0..c {
            for gi in 0..p {
                let r = self.plan.bounds(gi);
                let dys = dy.slice(s![.., ci, r.clone(), .., ..]);
                let xhs = xhat.slice(s![.., ci, r.clone(), .., ..]);
                let n = F::from_f64(dys.len() as f64);
                let s1 = dys.sum();
                let s2 = ndarray::Zip::from(&dys)
                    .and(&xhs)
                    .fold(F::zero(), |a, &d, &h| a + d * h);
                if self.per_group_affine {
                    self.gamma.grad[[ci, gi]] = self.gamma.grad[[ci, gi]] + s2;
                    self.beta.grad[[ci, gi]] = self.beta.grad[[ci, gi]] + s1;
                } else {
                    self.gamma.grad[[ci]] = self.gamma.grad[[ci]] + s2;
                    self.beta.grad[[ci]] = self.beta.grad[[ci]] + s1;
                }
                let (ga, _) = self.gains(ci, gi);
                let k = ga * inv_std[[ci, gi]];
                let (m1, m2) = (s1 / n, s2 / n);
                let mut dxs = dx.slice_mut(s![.., ci, r, .., ..]);
                ndarray::Zip::from(&mut dxs).and(&dys).and(&xhs).for_each(|o, &d, &h| {
                    *o = k * (d - m1 - h * m2);
                });
            }
        }
        Ok(dx)
    }
}

impl<F: Scalar> Tensors<F> for TgnLayer<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        f(join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
        f(join(prefix, "num_batches"), Slot::Buffer(&mut self.num_batches));
    }
}

struct BnCache<F: Scalar> {
    xhat: Array5<F>,
    inv_std: Vec<F>,
}

/// Plain batch normalization over (batch, t, h, w) per channel. Kept as an
/// independent implementation so the single-group degeneration of the group
/// variant can be checked against it.
pub struct BatchNorm3d<F: Scalar> {
    channels: usize,
    eps: F,
    momentum: F,
    pub gamma: Param<F>,
    pub beta: Param<F>,
    running_mean: ArrayD<F>,
    running_var: ArrayD<F>,
    num_batches: ArrayD<F>,
    cache: Option<BnCache<F>>,
}

impl<F: Scalar> BatchNorm3d<F> {
    pub fn new(channels: usize, cfg: &NormConfig) -> Self {
        BatchNorm3d {
            channels,
            eps: F::from_f64(cfg.eps),
            momentum: F::from_f64(cfg.momentum),
            gamma: Param::new(ArrayD::ones(vec![channels])),
            beta: Param::new(ArrayD::zeros(vec![channels])),
            running_mean: ArrayD::zeros(vec![channels]),
            running_var: ArrayD::ones(vec![channels]),
            num_batches: ArrayD::zeros(vec![1]),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let (_, c, _, _, _) = x.dim();
        if c != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "norm built for {} channels, got {c}",
                self.channels
            )));
        }
        let mut y = Array5::zeros(x.dim());
        if train {
            let mut xhat = Array5::zeros(x.dim());
            let mut inv_std = vec![F::zero(); c];
            let mom = self.momentum;
            for ci in 0..c {
                let xs = x.slice(s![.., ci, .., .., ..]);
                let n = F::from_f64(xs.len() as f64);
                let mean = xs.sum() / n;
                let var = xs.fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                let is = F::one() / (var + self.eps).sqrt();
                inv_std[ci] = is;
                let (ga, be) = (self.gamma.value[[ci]], self.beta.value[[ci]]);
                let mut xh = xhat.slice_mut(s![.., ci, .., .., ..]);
                let mut ys = y.slice_mut(s![.., ci, .., .., ..]);
                ndarray::Zip::from(&mut ys).and(&mut xh).and(&xs).for_each(|yo, ho, &v| {
                    let h = (v - mean) * is;
                    *ho = h;
                    *yo = ga * h + be;
                });
                let rm = &mut self.running_mean[[ci]];
                *rm = (F::one() - mom) * *rm + mom * mean;
                let rv = &mut self.running_var[[ci]];
                *rv = (F::one() - mom) * *rv + mom * var;
            }
            self.num_batches[[0]] = self.num_batches[[0]] + F::one();
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            self.cache = None;
            for ci in 0..c {
                let mean = self.running_mean[[ci]];
                let is = F::one() / (self.running_var[[ci]] + self.eps).sqrt();
                let (ga, be) = (self.gamma.value[[ci]], self.beta.value[[ci]]);
                let xs = x.slice(s![.., ci, .., .., ..]);
                let mut ys = y.slice_mut(s![.., ci, .., .., ..]);
                ndarray::Zip::from(&mut ys).and(&xs).for_each(|yo, &v| {
                    *yo = ga * (v - mean) * is + be;
                });
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array5<F>) -> Result<Array5<F>> {
        let BnCache { xhat, inv_std } = self.cache.take().ok_or_else(|| {
            Error::ShapeMismatch("norm backward without a training forward".into())
        })?;
        if dy.dim() != xhat.dim() {
            return Err(Error::ShapeMismatch("norm backward shape".into()));
        }
        let (_, c, _, _, _) = dy.dim();
        let mut dx = Array5::zeros(dy.dim());
        for ci in 0..c {
            let dys = dy.slice(s![.., ci, .., .., ..]);
            let xhs = xhat.slice(s![.., ci, .., .., ..]);
            let n = F::from_f64(dys.len() as f64);
            let s1 = dys.sum();
            let s2 = ndarray::Zip::from(&dys).and(&xhs).fold(F::zero(), |a, &d, &h| a + d * h);
            self.gamma.grad[[ci]] = self.gamma.grad[[ci]] + s2;
            self.beta.grad[[ci]] = self.beta.grad[[ci]] + s1;
            let k = self.gamma.value[[ci]] * inv_std[ci];
            let (m1, m2) = (s1 / n, s2 / n);
            let mut dxs = dx.slice_mut(s![.., ci, .., .., ..]);
            ndarray::Zip::from(&mut dxs).and(&dys).and(&xhs).for_each(|o, &d, &h| {
                *o = k * (d - m1 - h * m2);
            });
        }
        Ok(dx)
    }
}

impl<F: Scalar> Tensors<F> for BatchNorm3d<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        f(join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
        f(join(prefix, "num_batches"), Slot::Buffer(&mut self.num_batches));
    }
}

/// Either normalization behind one interface, so backbones are agnostic.
pub enum NormLayer<F: Scalar> {
    Tgn(TgnLayer<F>),
    Batch(BatchNorm3d<F>),
}

impl<F: Scalar> NormLayer<F> {
    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        match self {
            NormLayer::Tgn(l) => l.forward(x, train),
            NormLayer::Batch(l) => l.forward(x, train),
        }
    }

    pub fn backward(&mut self, dy: &Array5<F>) -> Result<Array5<F>> {
        match self {
            NormLayer::Tgn(l) => l.backward(dy),
            NormLayer::Batch(l) => l.backward(dy),
        }
    }

    /// The group plan, for layers that have one.
    pub fn plan(&self) -> Option<GroupPlan> {
        match self {
            NormLayer::Tgn(l) => Some(l.plan),
            NormLayer::Batch(_) => None,
        }
    }
}

impl<F: Scalar> Tensors<F> for NormLayer<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        match self {
            NormLayer::Tgn(l) => l.visit(prefix, f),
            NormLayer::Batch(l) => l.visit(prefix, f),
        }
    }
}

/// Build the configured normalization for a layer whose input has
/// `channels` channels and temporal extent `t`.
pub fn make_norm<F: Scalar>(channels: usize, t: usize, cfg: &NormConfig) -> Result<NormLayer<F>> {
    Ok(match cfg.kind {
        NormKind::Tgn => NormLayer::Tgn(TgnLayer::new(channels, t, cfg)?),
        NormKind::Bn => NormLayer::Batch(BatchNorm3d::new(channels, cfg)),
    })
}

/// Brute-force train-mode forward used only to verify the layer: explicit
/// summation loops per (channel, group), per-channel affine.
pub fn reference_forward<F: Scalar>(
    x: &Array5<F>,
    plan: &GroupPlan,
    gamma: &[F],
    beta: &[F],
    eps: F,
) -> Result<Array5<F>> {
    let (b, c, t, h, w) = x.dim();
    if t != plan.temporal_size || gamma.len() != c || beta.len() != c {
        return Err(Error::ShapeMismatch("reference norm: plan or affine size".into()));
    }
    let mut y = Array5::zeros((b, c, t, h, w));
    for ci in 0..c {
        for gi in 0..plan.group_count {
            let r = plan.bounds(gi);
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for bi in 0..b {
                for ti in r.clone() {
                    for hi in 0..h {
                        for wi in 0..w {
                            sum += x[[bi, ci, ti, hi, wi]].to_f64();
                            count += 1;
                        }
                    }
                }
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for bi in 0..b {
                for ti in r.clone() {
                    for hi in 0..h {
                        for wi in 0..w {
                            let d = x[[bi, ci, ti, hi, wi]].to_f64() - mean;
                            sq += d * d;
                        }
                    }
                }
            }
            let var = sq / count as f64;
            let denom = (var + eps.to_f64()).sqrt();
            for bi in 0..b {
                for ti in r.clone() {
                    for hi in 0..h {
                        for wi in 0..w {
                            let xh = (x[[bi, ci, ti, hi, wi]].to_f64() - mean) / denom;
                            y[[bi, ci, ti, hi, wi]] = F::from_f64(
                                gamma[ci].to_f64() * xh + beta[ci].to_f64(),
                            );
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}
