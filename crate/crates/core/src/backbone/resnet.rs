//! Residual 3D net shared by the full-kernel and factored-kernel variants:
//! a strided stem followed by four stages of two basic blocks each.

use ndarray::{Array5, Ix5};
use rand::Rng;

use crate::error::Result;
use crate::nn::conv::{Conv3d, Conv3dCfg};
use crate::nn::{join, Relu, Scalar, Slot, Tensors};
use crate::norm::{make_norm, GroupPlan, NormConfig, NormLayer};

use super::{Arch, BackboneConfig, ConvBlock, ConvBlockUnit};

const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
const BLOCKS_PER_STAGE: usize = 2;

/// Two convolutions with a residual connection; the skip path gets a
/// projection (1x1x1 conv + norm) whenever shape or width changes.
struct BasicBlock<F: Scalar> {
    unit1: ConvBlockUnit<F>,
    conv2: ConvBlock<F>,
    norm2: NormLayer<F>,
    down: Option<(Conv3d<F>, NormLayer<F>)>,
    relu_out: Relu<F, Ix5>,
}

impl<F: Scalar> BasicBlock<F> {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng>(
        factored: bool,
        in_ch: usize,
        out_ch: usize,
        stride: (usize, usize, usize),
        dims: (usize, usize, usize),
        norm_cfg: &NormConfig,
        rng: &mut R,
    ) -> Result<(Self, (usize, usize, usize))> {
        let make_conv = |in_ch: usize,
                         stride: (usize, usize, usize),
                         t_in: usize,
                         rng: &mut R|
         -> Result<ConvBlock<F>> {
            if factored {
                ConvBlock::new_factored(in_ch, out_ch, 3, 3, stride, t_in, norm_cfg, rng)
            } else {
                Ok(ConvBlock::new_full(in_ch, out_ch, (3, 3, 3), stride, (1, 1, 1), rng))
            }
        };
        let conv1 = make_conv(in_ch, stride, dims.0, rng)?;
        let (unit1, mid_dims) = ConvBlockUnit::new(conv1, out_ch, dims, norm_cfg)?;
        let conv2 = make_conv(out_ch, (1, 1, 1), mid_dims.0, rng)?;
        let norm2 = make_norm(out_ch, mid_dims.0, norm_cfg)?;
        let down = if stride != (1, 1, 1) || in_ch != out_ch {
            let proj = Conv3d::new(
                Conv3dCfg {
                    in_ch,
                    out_ch,
                    kernel: (1, 1, 1),
                    stride,
                    pad: (0, 0, 0),
                    bias: false,
                },
                rng,
            );
            Some((proj, make_norm(out_ch, mid_dims.0, norm_cfg)?))
        } else {
            None
        };
        let block = BasicBlock { unit1, conv2, norm2, down, relu_out: Relu::new() };
        Ok((block, mid_dims))
    }

    fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let h = self.unit1.forward(x, train)?;
        let h = self.conv2.forward(&h, train)?;
        let mut h = self.norm2.forward(&h, train)?;
        match &mut self.down {
            Some((proj, norm)) => {
                let skip = proj.forward(x, train)?;
                h += &norm.forward(&skip, train)?;
            }
            None => h += x,
        }
        Ok(self.relu_out.forward(h, train))
    }

    fn backward(&mut self, dy: Array5<F>) -> Result<Array5<F>> {
        let d = self.relu_out.backward(dy);
        let d_main = self.norm2.backward(&d)?;
        let d_main = self.conv2.backward(&d_main)?;
        let mut dx = self.unit1.backward(d_main)?;
        match &mut self.down {
            Some((proj, norm)) => {
                let d_skip = norm.backward(&d)?;
                dx += &proj.backward(&d_skip)?;
            }
            None => dx += &d,
        }
        Ok(dx)
    }
}

impl<F: Scalar> Tensors<F> for BasicBlock<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        self.unit1.conv.visit(&join(prefix, "conv1"), f);
        self.unit1.norm.visit(&join(prefix, "norm1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        if let Some((proj, norm)) = &mut self.down {
            proj.visit(&join(prefix, "down.conv"), f);
            norm.visit(&join(prefix, "down.norm"), f);
        }
    }
}

pub struct ResNet<F: Scalar> {
    stem: ConvBlockUnit<F>,
    stages: Vec<Vec<BasicBlock<F>>>,
}

impl<F: Scalar> ResNet<F> {
    pub(crate) fn build<R: Rng>(cfg: &BackboneConfig, rng: &mut R) -> Result<Self> {
        let factored = cfg.arch == Arch::R2plus1d;
        let w0 = cfg.scaled(STAGE_WIDTHS[0]);
        let mut dims = (cfg.m, cfg.input_size, cfg.input_size);
        // Wide spatial stem, stride 2 in space only.
        let stem_conv = if factored {
            ConvBlock::new_factored(3, w0, 7, 3, (1, 2, 2), dims.0, &cfg.norm, rng)?
        } else {
            ConvBlock::new_full(3, w0, (3, 7, 7), (1, 2, 2), (1, 3, 3), rng)
        };
        let (stem, stem_dims) = ConvBlockUnit::new(stem_conv, w0, dims, &cfg.norm)?;
        dims = stem_dims;

        let mut in_ch = w0;
        let mut stages = Vec::with_capacity(STAGE_WIDTHS.len());
        for (si, &width) in STAGE_WIDTHS.iter().enumerate() {
            let out_ch = cfg.scaled(width);
            let mut blocks = Vec::with_capacity(BLOCKS_PER_STAGE);
            for bi in 0..BLOCKS_PER_STAGE {
                let stride = if si > 0 && bi == 0 { (2, 2, 2) } else { (1, 1, 1) };
                let (block, out_dims) =
                    BasicBlock::new(factored, in_ch, out_ch, stride, dims, &cfg.norm, rng)?;
                dims = out_dims;
                in_ch = out_ch;
                blocks.push(block);
            }
            stages.push(blocks);
        }
        Ok(ResNet { stem, stages })
    }

    pub(crate) fn stage_plans(&self) -> Vec<GroupPlan> {
        std::iter::once(self.stem.norm.plan())
            .chain(self.stages.iter().map(|s| s[0].unit1.norm.plan()))
            .flatten()
            .collect()
    }

    pub(crate) fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let mut h = self.stem.forward(x, train)?;
        for stage in &mut self.stages {
            for block in stage {
                h = block.forward(&h, train)?;
            }
        }
        Ok(h)
    }

    pub(crate) fn backward(&mut self, dy: Array5<F>) -> Result<Array5<F>> {
        let mut d = dy;
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                d = block.backward(d)?;
            }
        }
        self.stem.backward(d)
    }
}

impl<F: Scalar> Tensors<F> for ResNet<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (bi, block) in stage.iter_mut().enumerate() {
                block.visit(&join(prefix, &format!("stage{}.block{}", si + 1, bi + 1)), f);
            }
        }
    }
}
