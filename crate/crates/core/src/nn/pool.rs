//! Pooling over (batch, channel, t, h, w) tensors.

use ndarray::{Array2, Array5};

use super::Scalar;
use crate::error::{Error, Result};

/// Max pooling with a rectangular window; windows never cross the input
/// boundary (floor output sizes, no padding).
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    pub kernel: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    /// Flat input index of each output's maximum, kept for the backward pass.
    argmax: Option<(Vec<usize>, (usize, usize, usize, usize, usize))>,
}

impl MaxPool3d {
    pub fn new(kernel: (usize, usize, usize)) -> Self {
        MaxPool3d { kernel, stride: kernel, argmax: None }
    }

    pub fn out_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let axis = |i: usize, k: usize, s: usize| -> Result<usize> {
            if i < k {
                return Err(Error::ShapeMismatch(format!("pool window {k} larger than input {i}")));
            }
            Ok((i - k) / s + 1)
        };
        Ok((
            axis(input.0, self.kernel.0, self.stride.0)?,
            axis(input.1, self.kernel.1, self.stride.1)?,
            axis(input.2, self.kernel.2, self.stride.2)?,
        ))
    }

    pub fn forward<F: Scalar>(&mut self, x: &Array5<F>, train: bool) -> Result<Array5<F>> {
        let (b, c, t, h, w) = x.dim();
        let (ot, oh, ow) = self.out_shape((t, h, w))?;
        let xs = x.as_slice().expect("pool input must be contiguous");
        let mut y = Array5::zeros((b, c, ot, oh, ow));
        let mut arg = vec![0usize; b * c * ot * oh * ow];
        {
            let ys = y.as_slice_mut().unwrap();
            let mut oi = 0;
            for bi in 0..b {
                for ci in 0..c {
                    let plane = (bi * c + ci) * t;
                    for oti in 0..ot {
                        for ohi in 0..oh {
                            for owi in 0..ow {
                                let (t0, h0, w0) =
                                    (oti * self.stride.0, ohi * self.stride.1, owi * self.stride.2);
                                let mut best = F::neg_infinity();
                                let mut best_i = 0;
                                for dt in 0..self.kernel.0 {
                                    for dh in 0..self.kernel.1 {
                                        let row = ((plane + t0 + dt) * h + h0 + dh) * w + w0;
                                        for dw in 0..self.kernel.2 {
                                            let v = xs[row + dw];
                                            if v > best {
                                                best = v;
                                                best_i = row + dw;
                                            }
                                        }
                                    }
                                }
                                ys[oi] = best;
                                arg[oi] = best_i;
                                oi += 1;
                            }
                        }
                    }
                }
            }
        }
        self.argmax = train.then_some((arg, (b, c, t, h, w)));
        Ok(y)
    }

    pub fn backward<F: Scalar>(&mut self, dy: &Array5<F>) -> Result<Array5<F>> {
        let (arg, in_dim) = self.argmax.take().ok_or_else(|| {
            Error::ShapeMismatch("pool backward without a training forward".into())
        })?;
        if dy.len() != arg.len() {
            return Err(Error::ShapeMismatch("pool backward shape".into()));
        }
        let mut dx = Array5::zeros(in_dim);
        {
            let dxs = dx.as_slice_mut().unwrap();
            for (&src, &g) in arg.iter().zip(dy.as_slice().expect("dy contiguous")) {
                dxs[src] = dxs[src] + g;
            }
        }
        Ok(dx)
    }
}

/// Mean over all of (t, h, w), leaving one feature per channel.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_dim: Option<(usize, usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { in_dim: None }
    }

    pub fn forward<F: Scalar>(&mut self, x: &Array5<F>, train: bool) -> Array2<F> {
        let (b, c, t, h, w) = x.dim();
        let inv = F::from_f64(1.0 / (t * h * w) as f64);
        let mut y = Array2::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                let s: F = x.slice(ndarray::s![bi, ci, .., .., ..]).sum();
                y[[bi, ci]] = s * inv;
            }
        }
        self.in_dim = train.then_some((b, c, t, h, w));
        y
    }

    pub fn backward<F: Scalar>(&mut self, dy: &Array2<F>) -> Result<Array5<F>> {
        let (b, c, t, h, w) = self.in_dim.take().ok_or_else(|| {
            Error::ShapeMismatch("avg pool backward without a training forward".into())
        })?;
        let inv = F::from_f64(1.0 / (t * h * w) as f64);
        let mut dx = Array5::zeros((b, c, t, h, w));
        for bi in 0..b {
            for ci in 0..c {
                dx.slice_mut(ndarray::s![bi, ci, .., .., ..]).fill(dy[[bi, ci]] * inv);
            }
        }
        Ok(dx)
    }
}

/// Max over the full spatial extent of each temporal slice, flattened
/// channel-major to (batch, channels * t). Used for retrieval features;
/// no backward pass.
pub fn spatial_max_pool<F: Scalar>(x: &Array5<F>) -> Array2<F> {
    let (b, c, t, _, _) = x.dim();
    let mut y = Array2::zeros((b, c * t));
    for bi in 0..b {
        for ci in 0..c {
            for ti in 0..t {
                let m = x
                    .slice(ndarray::s![bi, ci, ti, .., ..])
                    .iter()
                    .cloned()
                    .fold(F::neg_infinity(), F::max);
                y[[bi, ci * t + ti]] = m;
            }
        }
    }
    y
}

/// L2-normalize each row in place; rows with zero norm are an error.
pub fn unit_normalize_rows<F: Scalar>(x: &mut Array2<F>) -> Result<()> {
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<F>().sqrt();
        if norm == F::zero() {
            return Err(Error::ZeroVector(i));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(())
}
