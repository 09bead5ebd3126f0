//! Plain stack of 3x3x3 convolutions in five stages with interleaved
//! max pooling.

use ndarray::Array5;
use rand::Rng;

use crate::error::Result;
use crate::nn::pool::MaxPool3d;
use crate::nn::{join, Scalar, Slot, Tensors};
use crate::norm::GroupPlan;

use super::{BackboneConfig, ConvBlock, ConvBlockUnit};

const STAGE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
const STAGE_DEPTHS: [usize; 5] = [1, 2, 2, 2, 2];

struct Stage<F: Scalar> {
    units: Vec<ConvBlockUnit<F>>,
    pool: Option<MaxPool3d>,
}

pub struct C3dNet<F: Scalar> {
    stages: Vec<Stage<F>>,
}

impl<F: Scalar> C3dNet<F> {
    pub(crate) fn build<R: Rng>(cfg: &BackboneConfig, rng: &mut R) -> Result<Self> {
        let mut dims = (cfg.m, cfg.input_size, cfg.input_size);
        let mut in_ch = 3;
        let mut stages = Vec::with_capacity(STAGE_WIDTHS.len());
        for (si, (&width, &depth)) in STAGE_WIDTHS.iter().zip(&STAGE_DEPTHS).enumerate() {
            let out_ch = cfg.scaled(width);
            let mut units = Vec::with_capacity(depth);
            for _ in 0..depth {
                let conv =
                    ConvBlock::new_full(in_ch, out_ch, (3, 3, 3), (1, 1, 1), (1, 1, 1), rng);
                let (unit, out_dims) = ConvBlockUnit::new(conv, out_ch, dims, &cfg.norm)?;
                dims = out_dims;
                in_ch = out_ch;
                units.push(unit);
            }
            // Halve time and space after the first three stages and space
            // only after the fourth; clips already down to one frame stop
            // shrinking temporally.
            let pool = if si + 1 < STAGE_WIDTHS.len() {
                let kt = if si < 3 { dims.0.min(2) } else { 1 };
                let pool = MaxPool3d::new((kt, 2, 2));
                dims = pool.out_shape(dims)?;
                Some(pool)
            } else {
                None
            };
            stages.push(Stage { units, pool });
        }
        Ok(C3dNet { stages })
    }

    pub(crate) fn stage_plans(&self) -> Vec<GroupPlan> {
        self.stages
            .iter()
            .filter_map(|s| s.units[0].norm.plan())
            .collect()
    }

    pub(crate) fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let mut h = x.clone();
        for stage in &mut self.stages {
            for unit in &mut stage.units {
                h = unit.forward(&h, train)?;
            }
            if let Some(pool) = &mut stage.pool {
                h = pool.forward(&h, train)?;
            }
        }
        Ok(h)
    }

    pub(crate) fn backward(&mut self, dy: Array5<F>) -> Result<Array5<F>> {
        let mut d = dy;
        for stage in self.stages.iter_mut().rev() {
            if let Some(pool) = &mut stage.pool {
                d = pool.backward(&d)?;
            }
            for unit in stage.units.iter_mut().rev() {
                d = unit.backward(d)?;
            }
        }
        Ok(d)
    }
}

impl<F: Scalar> Tensors<F> for C3dNet<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        for (si, stage) in self.stages.iter_mut().enumerate() {
            for (ui, unit) in stage.units.iter_mut().enumerate() {
                unit.visit(&join(prefix, &format!("stage{}.unit{}", si + 1, ui + 1)), f);
            }
        }
    }
}
