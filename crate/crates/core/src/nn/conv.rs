//! 3-D convolution lowered to im2col plus one matrix product for the whole
//! batch, which keeps the GEMM shapes large enough to run well on one core.

use ndarray::{Array2, Array5, Ix2};
use rand::Rng;

use super::{he_normal, join, Param, Scalar, Slot, Tensors};
use crate::error::{Error, Result};

/// Static shape of a convolution. Order of tuple axes is always (t, h, w).
#[derive(Debug, Clone, Copy)]
pub struct Conv3dCfg {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub pad: (usize, usize, usize),
    pub bias: bool,
}

impl Conv3dCfg {
    /// The workhorse 3x3x3 / stride 1 / pad 1 shape-preserving convolution.
    pub fn k3(in_ch: usize, out_ch: usize) -> Self {
        Conv3dCfg {
            in_ch,
            out_ch,
            kernel: (3, 3, 3),
            stride: (1, 1, 1),
            pad: (1, 1, 1),
            bias: true,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel.0 * self.kernel.1 * self.kernel.2
    }
}

/// Learned 3-D convolution over (batch, channel, t, h, w) tensors.
#[derive(Debug, Clone)]
pub struct Conv3d<F: Scalar> {
    pub cfg: Conv3dCfg,
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    x: Option<Array5<F>>,
    col: Option<Array2<F>>,
}

impl<F: Scalar> Conv3d<F> {
    pub fn new<R: Rng>(cfg: Conv3dCfg, rng: &mut R) -> Self {
        let (kt, kh, kw) = cfg.kernel;
        let fan_in = cfg.patch_len();
        let weight = Param::new(he_normal(&[cfg.out_ch, cfg.in_ch, kt, kh, kw], fan_in, rng));
        let bias = cfg.bias.then(|| Param::new(ndarray::ArrayD::zeros(vec![cfg.out_ch])));
        Conv3d { cfg, weight, bias, x: None, col: None }
    }

    /// Output extent per axis: floor((in + 2 pad - kernel) / stride) + 1.
    pub fn out_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let axis = |i: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let padded = i + 2 * p;
            if padded < k {
                return Err(Error::ShapeMismatch(format!(
                    "input extent {i} (+2*{p} pad) smaller than kernel {k}"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            axis(input.0, self.cfg.kernel.0, self.cfg.stride.0, self.cfg.pad.0)?,
            axis(input.1, self.cfg.kernel.1, self.cfg.stride.1, self.cfg.pad.1)?,
            axis(input.2, self.cfg.kernel.2, self.cfg.stride.2, self.cfg.pad.2)?,
        ))
    }

    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let (b, c, t, h, w) = x.dim();
        if c != self.cfg.in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {c}",
                self.cfg.in_ch
            )));
        }
        let out = self.out_shape((t, h, w))?;
        let n = out.0 * out.1 * out.2;
        let (m, k) = (self.cfg.out_ch, self.cfg.patch_len());

        // The column buffer is reused across calls: cells that padding maps
        // outside the input keep their zero from allocation, so only valid
        // cells are rewritten.
        if self.col.as_ref().map(|cb| cb.dim()) != Some((k, b * n)) {
            self.col = Some(Array2::zeros((k, b * n)));
        }
        let col = self.col.as_mut().unwrap();
        im2col(x, &self.cfg, out, col);

        let w2 = self.weight.value.view().into_shape_with_order((m, k)).unwrap();
        let y2 = w2.dot(&col.view());

        let mut y = Array5::zeros((b, m, out.0, out.1, out.2));
        {
            let ys = y2.as_slice().unwrap();
            let os = y.as_slice_mut().unwrap();
            for bi in 0..b {
                for mi in 0..m {
                    let src = mi * (b * n) + bi * n;
                    let dst = (bi * m + mi) * n;
                    os[dst..dst + n].copy_from_slice(&ys[src..src + n]);
                    if let Some(bias) = &self.bias {
                        let bv = bias.value[[mi]];
                        for v in &mut os[dst..dst + n] {
                            *v = *v + bv;
                        }
                    }
                }
            }
        }
        self.x = if train { Some(x.clone()) } else { None };
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Array5<F>) -> Result<Array5<F>> {
        let x = self.x.take().ok_or_else(|| {
            Error::ShapeMismatch("conv backward without a training forward".into())
        })?;
        let (b, _, t, h, w) = x.dim();
        let out = self.out_shape((t, h, w))?;
        let n = out.0 * out.1 * out.2;
        let (m, k) = (self.cfg.out_ch, self.cfg.patch_len());
        if dy.dim() != (b, m, out.0, out.1, out.2) {
            return Err(Error::ShapeMismatch(format!(
                "conv backward: got {:?}, expected {:?}",
                dy.dim(),
                (b, m, out.0, out.1, out.2)
            )));
        }

        // Regroup dy as (out_ch, batch * positions), the transpose of the
        // forward scatter.
        let mut dy2 = Array2::zeros((m, b * n));
        {
            let ds = dy.as_slice().expect("dy must be contiguous");
            let out_s = dy2.as_slice_mut().unwrap();
            for bi in 0..b {
                for mi in 0..m {
                    let src = (bi * m + mi) * n;
                    let dst = mi * (b * n) + bi * n;
                    out_s[dst..dst + n].copy_from_slice(&ds[src..src + n]);
                }
            }
        }

        if let Some(bias) = &mut self.bias {
            for mi in 0..m {
                let s: F = dy2.row(mi).sum();
                bias.grad[[mi]] = bias.grad[[mi]] + s;
            }
        }

        let col = self.col.as_mut().unwrap();
        im2col(&x, &self.cfg, out, col);
        let dw2 = dy2.dot(&col.t());
        {
            let mut gw = self.weight.grad.view_mut().into_shape_with_order((m, k)).unwrap();
            gw += &dw2;
        }

        let w2 = self.weight.value.view().into_shape_with_order((m, k)).unwrap();
        let w2 = w2.into_dimensionality::<Ix2>().unwrap();
        let dcol = w2.t().dot(&dy2);
        let mut dx = Array5::zeros(x.dim());
        col2im(&dcol, &self.cfg, out, &mut dx);
        Ok(dx)
    }
}

impl<F: Scalar> Tensors<F> for Conv3d<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        f(join(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), Slot::Param(b));
        }
    }
}

/// Output positions whose input index o*stride + k - pad lands inside
/// [0, in_n). Everything outside is padding.
fn valid_range(out_n: usize, stride: usize, k: usize, pad: usize, in_n: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi_num = in_n as isize - 1 + pad as isize - k as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(out_n);
    (lo.min(hi), hi)
}

/// Unfold x into columns: col[(c,kt,kh,kw), (b, out position)] = x at the
/// corresponding input position, zero where the kernel overhangs the input.
/// Only in-bounds cells are written; the caller keeps `col` zeroed elsewhere.
fn im2col<F: Scalar>(
    x: &Array5<F>,
    cfg: &Conv3dCfg,
    out: (usize, usize, usize),
    col: &mut Array2<F>,
) {
    let (b, cin, t, h, w) = x.dim();
    let (kt, kh, kw) = cfg.kernel;
    let (st, sh, sw) = cfg.stride;
    let (pt, ph, pw) = cfg.pad;
    let (ot_n, oh_n, ow_n) = out;
    let n = ot_n * oh_n * ow_n;
    let bn = b * n;
    let xs = x.as_slice().expect("conv input must be contiguous");
    let cs = col.as_slice_mut().unwrap();

    for bi in 0..b {
        for c in 0..cin {
            for kti in 0..kt {
                let (ot_lo, ot_hi) = valid_range(ot_n, st, kti, pt, t);
                for khi in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(oh_n, sh, khi, ph, h);
                    for kwi in 0..kw {
                        let (ow_lo, ow_hi) = valid_range(ow_n, sw, kwi, pw, w);
                        let row = ((c * kt + kti) * kh + khi) * kw + kwi;
                        let row_base = row * bn + bi * n;
                        let iw0 = kwi as isize - pw as isize;
                        for ot in ot_lo..ot_hi {
                            let it = ot * st + kti - pt;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * sh + khi - ph;
                                let cbase = row_base + (ot * oh_n + oh) * ow_n;
                                let xrow = (((bi * cin + c) * t + it) * h + ih) * w;
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow * sw) as isize + iw0;
                                    cs[cbase + ow] = xs[(xrow as isize + iw) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fold columns back, accumulating where kernel windows overlap. Exact
/// adjoint of [`im2col`].
fn col2im<F: Scalar>(
    dcol: &Array2<F>,
    cfg: &Conv3dCfg,
    out: (usize, usize, usize),
    dx: &mut Array5<F>,
) {
    let (b, cin, t, h, w) = dx.dim();
    let (kt, kh, kw) = cfg.kernel;
    let (st, sh, sw) = cfg.stride;
    let (pt, ph, pw) = cfg.pad;
    let (ot_n, oh_n, ow_n) = out;
    let n = ot_n * oh_n * ow_n;
    let bn = b * n;
    let ds = dcol.as_slice().expect("dcol must be contiguous");
    let xs = dx.as_slice_mut().unwrap();

    for bi in 0..b {
        for c in 0..cin {
            for kti in 0..kt {
                let (ot_lo, ot_hi) = valid_range(ot_n, st, kti, pt, t);
                for khi in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(oh_n, sh, khi, ph, h);
                    for kwi in 0..kw {
                        let (ow_lo, ow_hi) = valid_range(ow_n, sw, kwi, pw, w);
                        let row = ((c * kt + kti) * kh + khi) * kw + kwi;
                        let row_base = row * bn + bi * n;
                        let iw0 = kwi as isize - pw as isize;
                        for ot in ot_lo..ot_hi {
                            let it = ot * st + kti - pt;
                            for oh in oh_lo..oh_hi {
                                let ih = oh * sh + khi - ph;
                                let cbase = row_base + (ot * oh_n + oh) * ow_n;
                                let xrow = (((bi * cin + c) * t + it) * h + ih) * w;
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow * sw) as isize + iw0;
                                    let xi = (xrow as isize + iw) as usize;
                                    xs[xi] = xs[xi] + ds[cbase + ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
