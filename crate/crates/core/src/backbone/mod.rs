//! 3D-CNN feature extractors with pluggable normalization.
//!
//! Three architectures share one interface: a plain stack of 3x3x3
//! convolutions (`c3d`), a residual net (`r3d`), and its spatio-temporally
//! factored variant (`r2plus1d`). Every convolution is followed by the
//! configured normalization and a ReLU; a global spatio-temporal average
//! pool yields the clip embedding, and a per-frame spatial max pool over the
//! final activations yields retrieval features.

mod c3d;
mod resnet;

use ndarray::{Array2, Array5, Ix5};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::{Conv3d, Conv3dCfg};
use crate::nn::pool::{spatial_max_pool, GlobalAvgPool};
use crate::nn::{join, Relu, Scalar, Slot, Tensors};
use crate::norm::{make_norm, GroupPlan, NormConfig, NormLayer};

pub use c3d::C3dNet;
pub use resnet::ResNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    C3d,
    R3d,
    R2plus1d,
}

/// Everything needed to rebuild a feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub arch: Arch,
    /// Multiplies every stage width; 1.0 is the full-size model.
    pub width_scale: f64,
    /// Frames per input clip.
    pub m: usize,
    /// Square input crop side length.
    pub input_size: usize,
    pub norm: NormConfig,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            arch: Arch::C3d,
            width_scale: 1.0,
            m: 16,
            input_size: 112,
            norm: NormConfig::default(),
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_scale > 0.0 && self.width_scale <= 1.0) {
            return Err(Error::Config(format!(
                "width_scale must be in (0, 1], got {}",
                self.width_scale
            )));
        }
        if self.m < 2 {
            return Err(Error::Config("clips need at least 2 frames".into()));
        }
        if self.input_size < 16 {
            return Err(Error::Config("input_size must be at least 16".into()));
        }
        Ok(())
    }

    /// Channel width of a stage after scaling (never below 1).
    pub fn scaled(&self, base: usize) -> usize {
        ((base as f64 * self.width_scale).round() as usize).max(1)
    }

    /// Embedding width after global pooling.
    pub fn embedding_dim(&self) -> usize {
        self.scaled(512)
    }
}

/// Parameter-balancing hidden width for a factored (spatial then temporal)
/// convolution with temporal kernel `t` and spatial kernel `d`.
pub(crate) fn midplanes(n_in: usize, n_out: usize, t: usize, d: usize) -> usize {
    let num = t * d * d * n_in * n_out;
    let den = d * d * n_in + t * n_out;
    (num / den).max(1)
}

/// One convolution, either a full 3-D kernel or factored into a spatial and
/// a temporal kernel with normalization + ReLU in between.
pub(crate) enum ConvBlock<F: Scalar> {
    Full(Conv3d<F>),
    Factored {
        spatial: Conv3d<F>,
        norm: NormLayer<F>,
        relu: Relu<F, Ix5>,
        temporal: Conv3d<F>,
    },
}

impl<F: Scalar> ConvBlock<F> {
    fn new_full<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        // Bias is redundant directly under normalization.
        let cfg = Conv3dCfg { in_ch, out_ch, kernel, stride, pad, bias: false };
        ConvBlock::Full(Conv3d::new(cfg, rng))
    }

    /// Spatial (1,d,d) then temporal (kt,1,1); the spatial part carries the
    /// spatial stride, the temporal part the temporal stride, and the inner
    /// normalization sees the pre-temporal-stride extent.
    fn new_factored<R: Rng>(
        in_ch: usize,
        out_ch: usize,
        d: usize,
        kt: usize,
        stride: (usize, usize, usize),
        t_in: usize,
        norm_cfg: &NormConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mid = midplanes(in_ch, out_ch, kt, d);
        let spatial = Conv3d::new(
            Conv3dCfg {
                in_ch,
                out_ch: mid,
                kernel: (1, d, d),
                stride: (1, stride.1, stride.2),
                pad: (0, d / 2, d / 2),
                bias: false,
            },
            rng,
        );
        let norm = make_norm(mid, t_in, norm_cfg)?;
        let temporal = Conv3d::new(
            Conv3dCfg {
                in_ch: mid,
                out_ch,
                kernel: (kt, 1, 1),
                stride: (stride.0, 1, 1),
                pad: (kt / 2, 0, 0),
                bias: false,
            },
            rng,
        );
        Ok(ConvBlock::Factored { spatial, norm, relu: Relu::new(), temporal })
    }

    pub(crate) fn out_dims(&self, dims: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match self {
            ConvBlock::Full(c) => c.out_shape(dims),
            ConvBlock::Factored { spatial, temporal, .. } => {
                temporal.out_shape(spatial.out_shape(dims)?)
            }
        }
    }

    pub(crate) fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        match self {
            ConvBlock::Full(c) => c.forward(x, train),
            ConvBlock::Factored { spatial, norm, relu, temporal } => {
                let h = spatial.forward(x, train)?;
                let h = norm.forward(&h, train)?;
                let h = relu.forward(h, train);
                temporal.forward(&h, train)
            }
        }
    }

    pub(crate) fn backward(&mut self, dy: &Array5<F>) -> Result<Array5<F>> {
        match self {
            ConvBlock::Full(c) => c.backward(dy),
            ConvBlock::Factored { spatial, norm, relu, temporal } => {
                let d = temporal.backward(dy)?;
                let d = relu.backward(d);
                let d = norm.backward(&d)?;
                spatial.backward(&d)
            }
        }
    }
}

impl<F: Scalar> Tensors<F> for ConvBlock<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        match self {
            ConvBlock::Full(c) => c.visit(prefix, f),
            ConvBlock::Factored { spatial, norm, temporal, .. } => {
                spatial.visit(&join(prefix, "spatial"), f);
                norm.visit(&join(prefix, "mid_norm"), f);
                temporal.visit(&join(prefix, "temporal"), f);
            }
        }
    }
}

/// Convolution followed by normalization and ReLU.
pub(crate) struct ConvBlockUnit<F: Scalar> {
    pub conv: ConvBlock<F>,
    pub norm: NormLayer<F>,
    pub relu: Relu<F, Ix5>,
}

impl<F: Scalar> ConvBlockUnit<F> {
    pub(crate) fn new(
        conv: ConvBlock<F>,
        out_ch: usize,
        dims: (usize, usize, usize),
        norm_cfg: &NormConfig,
    ) -> Result<(Self, (usize, usize, usize))> {
        let out_dims = conv.out_dims(dims)?;
        let norm = make_norm(out_ch, out_dims.0, norm_cfg)?;
        Ok((ConvBlockUnit { conv, norm, relu: Relu::new() }, out_dims))
    }

    pub(crate) fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let h = self.conv.forward(x, train)?;
        let h = self.norm.forward(&h, train)?;
        Ok(self.relu.forward(h, train))
    }

    pub(crate) fn backward(&mut self, dy: Array5<F>) -> Result<Array5<F>> {
        let d = self.relu.backward(dy);
        let d = self.norm.backward(&d)?;
        self.conv.backward(&d)
    }
}

impl<F: Scalar> Tensors<F> for ConvBlockUnit<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }
}

enum Net<F: Scalar> {
    C3d(C3dNet<F>),
    Res(ResNet<F>),
}

/// A built backbone: maps clip batches (B, 3, m, s, s) to embeddings
/// (B, embedding_dim).
pub struct FeatureExtractor<F: Scalar> {
    pub cfg: BackboneConfig,
    net: Net<F>,
    gap: GlobalAvgPool,
}

impl<F: Scalar> FeatureExtractor<F> {
    pub fn build<R: Rng>(cfg: &BackboneConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let net = match cfg.arch {
            Arch::C3d => Net::C3d(C3dNet::build(cfg, rng)?),
            Arch::R3d | Arch::R2plus1d => Net::Res(ResNet::build(cfg, rng)?),
        };
        Ok(FeatureExtractor { cfg: cfg.clone(), net, gap: GlobalAvgPool::new() })
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim()
    }

    /// The group plan of each stage's leading normalization layer
    /// (empty when the backbone uses batch norm).
    pub fn norm_plans(&self) -> Vec<GroupPlan> {
        match &self.net {
            Net::C3d(n) => n.stage_plans(),
            Net::Res(n) => n.stage_plans(),
        }
    }

    fn check_input(&self, x: &Array5<F>) -> Result<()> {
        let (_, c, t, h, w) = x.dim();
        let s = self.cfg.input_size;
        if c != 3 || t != self.cfg.m || h != s || w != s {
            return Err(Error::ShapeMismatch(format!(
                "backbone built for (3, {}, {s}, {s}) clips, got ({c}, {t}, {h}, {w})",
                self.cfg.m
            )));
        }
        Ok(())
    }

    /// Final convolutional activations (B, C_f, t_f, h_f, w_f).
    pub fn activations(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        self.check_input(x)?;
        match &mut self.net {
            Net::C3d(n) => n.forward(x, train),
            Net::Res(n) => n.forward(x, train),
        }
    }

    /// Clip embeddings via global spatio-temporal average pooling.
    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array2<F>> {
        let acts = self.activations(x, train)?;
        Ok(self.gap.forward(&acts, train))
    }

    /// Backpropagate from embedding gradients; parameter gradients
    /// accumulate, the input gradient is discarded.
    pub fn backward(&mut self, d_embed: &Array2<F>) -> Result<()> {
        let d_acts = self.gap.backward(d_embed)?;
        match &mut self.net {
            Net::C3d(n) => n.backward(d_acts)?,
            Net::Res(n) => n.backward(d_acts)?,
        };
        Ok(())
    }

    /// Retrieval features: max over the spatial extent of each temporal
    /// slice of the final activations, flattened to (B, C_f * t_f).
    /// Eval mode only.
    pub fn retrieval_features(&mut self, x: &Array5<F>) -> Result<Array2<F>> {
        let acts = self.activations(x, false)?;
        Ok(spatial_max_pool(&acts))
    }
}

impl<F: Scalar> Tensors<F> for FeatureExtractor<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        match &mut self.net {
            Net::C3d(n) => n.visit(prefix, f),
            Net::Res(n) => n.visit(prefix, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{param_count, zero_grads, Sgd};
    use crate::norm::NormKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk_cfg(arch: Arch) -> BackboneConfig {
        BackboneConfig {
            arch,
            width_scale: 0.25,
            m: 8,
            input_size: 16,
            norm: NormConfig::default(),
        }
    }

    #[test]
    fn c3d_temporal_schedule_matches_at_full_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        // Width scale keeps this cheap; the schedule depends only on m and g.
        let cfg = BackboneConfig {
            width_scale: 0.125,
            input_size: 32,
            ..BackboneConfig::default()
        };
        let fx = FeatureExtractor::<f32>::build(&cfg, &mut rng).unwrap();
        let plans = fx.norm_plans();
        let ts: Vec<usize> = plans.iter().map(|p| p.temporal_size).collect();
        let ps: Vec<usize> = plans.iter().map(|p| p.group_count).collect();
        assert_eq!(ts, vec![16, 8, 4, 2, 2]);
        assert_eq!(ps, vec![8, 4, 2, 1, 1]);
    }

    #[test]
    fn c3d_schedule_is_computed_for_shorter_clips() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let cfg = BackboneConfig {
            width_scale: 0.125,
            m: 8,
            input_size: 32,
            ..BackboneConfig::default()
        };
        let fx = FeatureExtractor::<f32>::build(&cfg, &mut rng).unwrap();
        let ts: Vec<usize> = fx.norm_plans().iter().map(|p| p.temporal_size).collect();
        let ps: Vec<usize> = fx.norm_plans().iter().map(|p| p.group_count).collect();
        assert_eq!(ts, vec![8, 4, 2, 1, 1]);
        assert_eq!(ps, vec![4, 2, 1, 1, 1]);
    }

    #[test]
    fn every_arch_produces_embedding_shaped_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for arch in [Arch::C3d, Arch::R3d, Arch::R2plus1d] {
            for kind in [NormKind::Tgn, NormKind::Bn] {
                let mut cfg = desk_cfg(arch);
                cfg.norm.kind = kind;
                let mut fx = FeatureExtractor::<f32>::build(&cfg, &mut rng).unwrap();
                let x = Array5::from_shape_simple_fn((2, 3, 8, 16, 16), || {
                    rng.gen_range(-1.0..1.0f32)
                });
                let e = fx.forward(&x, false).unwrap();
                assert_eq!(e.dim(), (2, cfg.embedding_dim()), "{arch:?} {kind:?}");
                assert_eq!(cfg.embedding_dim(), 128);
                assert!(e.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn width_scale_shrinks_parameter_count_superlinearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let full = BackboneConfig { arch: Arch::R3d, ..BackboneConfig::default() };
        let quarter = BackboneConfig { arch: Arch::R3d, width_scale: 0.25, ..full.clone() };
        let mut a = FeatureExtractor::<f32>::build(&full, &mut rng).unwrap();
        let mut b = FeatureExtractor::<f32>::build(&quarter, &mut rng).unwrap();
        let (na, nb) = (param_count(&mut a), param_count(&mut b));
        assert_eq!(b.embedding_dim(), 128);
        assert!(nb * 10 < na, "quarter width {nb} not <1/10 of full {na}");
    }

    #[test]
    fn zero_input_yields_finite_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut fx = FeatureExtractor::<f32>::build(&desk_cfg(Arch::R3d), &mut rng).unwrap();
        let x = Array5::zeros((1, 3, 8, 16, 16));
        let e = fx.forward(&x, false).unwrap();
        assert!(e.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_batches_match_single_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for arch in [Arch::C3d, Arch::R3d, Arch::R2plus1d] {
            let mut fx = FeatureExtractor::<f32>::build(&desk_cfg(arch), &mut rng).unwrap();
            let x = Array5::from_shape_simple_fn((3, 3, 8, 16, 16), || rng.gen_range(-1.0..1.0f32));
            let batched = fx.forward(&x, false).unwrap();
            for i in 0..3 {
                let single = x.slice(ndarray::s![i..i + 1, .., .., .., ..]).to_owned();
                let e = fx.forward(&single, false).unwrap();
                let diff = (&e.row(0) - &batched.row(i))
                    .iter()
                    .fold(0.0f32, |m, v| m.max(v.abs()));
                assert!(diff < 1e-5, "{arch:?} clip {i}: diff {diff}");
            }
        }
    }

    #[test]
    fn eval_extraction_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let mut fx = FeatureExtractor::<f32>::build(&desk_cfg(Arch::C3d), &mut rng).unwrap();
        let x = Array5::from_shape_simple_fn((1, 3, 8, 16, 16), || rng.gen_range(-1.0..1.0f32));
        let a = fx.forward(&x, false).unwrap();
        let b = fx.forward(&x, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retrieval_features_dominate_average_features() {
        // Post-ReLU activations are nonnegative, so a spatial max is >= the
        // spatial mean; with global pooling this still holds per channel
        // after averaging the temporal axis.
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut fx = FeatureExtractor::<f32>::build(&desk_cfg(Arch::C3d), &mut rng).unwrap();
        let x = Array5::from_shape_simple_fn((1, 3, 8, 16, 16), || rng.gen_range(-1.0..1.0f32));
        let acts = fx.activations(&x, false).unwrap();
        let (_, c, t, _, _) = acts.dim();
        let retr = fx.retrieval_features(&x).unwrap();
        assert_eq!(retr.dim(), (1, c * t));
        let embed = fx.forward(&x, false).unwrap();
        for ci in 0..c {
            let max_over_t =
                (0..t).map(|ti| retr[[0, ci * t + ti]]).fold(f32::NEG_INFINITY, f32::max);
            assert!(max_over_t >= embed[[0, ci]] - 1e-6);
        }
    }

    #[test]
    fn identical_clips_have_identical_retrieval_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let mut fx = FeatureExtractor::<f32>::build(&desk_cfg(Arch::R2plus1d), &mut rng).unwrap();
        let clip = Array5::from_shape_simple_fn((1, 3, 8, 16, 16), || rng.gen_range(-1.0..1.0f32));
        let mut two = Array5::zeros((2, 3, 8, 16, 16));
        two.slice_mut(ndarray::s![0..1, .., .., .., ..]).assign(&clip);
        two.slice_mut(ndarray::s![1..2, .., .., .., ..]).assign(&clip);
        let f = fx.retrieval_features(&two).unwrap();
        let diff = (&f.row(0) - &f.row(1)).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn one_sgd_step_reduces_a_regression_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        for arch in [Arch::C3d, Arch::R3d, Arch::R2plus1d] {
            let mut fx = FeatureExtractor::<f64>::build(&desk_cfg(arch), &mut rng).unwrap();
            let x = Array5::from_shape_simple_fn((2, 3, 8, 16, 16), || rng.gen_range(-0.5..0.5));
            let target = Array2::from_shape_simple_fn((2, 128), || rng.gen_range(-0.5..0.5));
            let loss_of = |e: &Array2<f64>| (e - &target).mapv(|v| v * v).sum();
            let e0 = fx.forward(&x, true).unwrap();
            let l0 = loss_of(&e0);
            let d = (&e0 - &target) * 2.0;
            fx.backward(&d).unwrap();
            Sgd { lr: 1e-5, momentum: 0.0, weight_decay: 0.0 }.step(&mut fx);
            zero_grads(&mut fx);
            let l1 = loss_of(&fx.forward(&x, true).unwrap());
            assert!(l1 < l0, "{arch:?}: loss {l0} -> {l1}");
        }
    }

    #[test]
    fn rejects_wrong_clip_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut fx = FeatureExtractor::<f32>::build(&desk_cfg(Arch::C3d), &mut rng).unwrap();
        let wrong_t = Array5::<f32>::zeros((1, 3, 6, 16, 16));
        assert!(matches!(fx.forward(&wrong_t, false), Err(Error::ShapeMismatch(_))));
        let wrong_s = Array5::<f32>::zeros((1, 3, 8, 16, 20));
        assert!(fx.forward(&wrong_s, false).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_scales() {
        assert!(BackboneConfig { width_scale: 0.0, ..BackboneConfig::default() }
            .validate()
            .is_err());
        assert!(BackboneConfig { width_scale: 1.5, ..BackboneConfig::default() }
            .validate()
            .is_err());
        assert!(BackboneConfig { m: 1, ..BackboneConfig::default() }.validate().is_err());
    }

    #[test]
    fn midplanes_balances_parameter_budget() {
        // Full 3x3x3 conv 64->64 has 110592 weights; the factored pair with
        // this hidden width should be close from below.
        let mid = midplanes(64, 64, 3, 3);
        let factored = 3 * 3 * 64 * mid + 3 * mid * 64;
        assert!(mid >= 1);
        let full = 27 * 64 * 64;
        assert!(factored <= full && factored * 10 >= full * 9, "mid {mid} factored {factored}");
    }
}
