//! Fully connected layer over (batch, features) matrices.

use ndarray::Array2;
use rand::Rng;

use super::{he_normal, join, Param, Scalar, Slot, Tensors};
use crate::error::{Error, Result};

/// y = x W^T + b with weight shape (out, in).
#[derive(Debug, Clone)]
pub struct Linear<F: Scalar> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    in_dim: usize,
    out_dim: usize,
    x: Option<Array2<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::new(he_normal(&[out_dim, in_dim], in_dim, rng)),
            bias: Param::new(ndarray::ArrayD::zeros(vec![out_dim])),
            in_dim,
            out_dim,
            x: None,
        }
    }

    /// Symmetric uniform fan-in init, U(-1/sqrt(in), 1/sqrt(in)) for both
    /// weight and bias; used for classifier heads.
    pub fn new_uniform<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || F::from_f64(rng.gen_range(-bound..bound));
        Linear {
            weight: Param::new(ndarray::ArrayD::from_shape_simple_fn(
                vec![out_dim, in_dim],
                &mut draw,
            )),
            bias: Param::new(ndarray::ArrayD::from_shape_simple_fn(vec![out_dim], &mut draw)),
            in_dim,
            out_dim,
            x: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Result<Array2<F>> {
        if x.ncols() != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "linear expects {} input features, got {}",
                self.in_dim,
                x.ncols()
            )));
        }
        let w = self.weight.value.view().into_shape_with_order((self.out_dim, self.in_dim)).unwrap();
        let mut y = x.dot(&w.t());
        let b = self.bias.value.view().into_shape_with_order(self.out_dim).unwrap();
        y += &b;
        self.x = if train { Some(x.clone()) } else { None };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array2<F>) -> Result<Array2<F>> {
        let x = self.x.take().ok_or_else(|| {
            Error::ShapeMismatch("linear backward without a training forward".into())
        })?;
        {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.out_dim, self.in_dim))
                .unwrap();
            gw += &dy.t().dot(&x);
            let mut gb = self.bias.grad.view_mut().into_shape_with_order(self.out_dim).unwrap();
            gb += &dy.sum_axis(ndarray::Axis(0));
        }
        let w = self.weight.value.view().into_shape_with_order((self.out_dim, self.in_dim)).unwrap();
        Ok(dy.dot(&w))
    }
}

impl<F: Scalar> Tensors<F> for Linear<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        f(join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{max_rel_err, numeric_grad, proj};
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::<f64>::new(2, 2, &mut rng);
        lin.weight.value.assign(&arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn());
        lin.bias.value.assign(&ndarray::arr1(&[10.0, 20.0]).into_dyn());
        let y = lin.forward(&arr2(&[[1.0, 1.0]]), false).unwrap();
        assert_eq!(y, arr2(&[[13.0, 27.0]]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lin = Linear::<f64>::new(4, 3, &mut rng);
        let x = Array2::from_shape_simple_fn((5, 4), || rng.gen_range(-1.0..1.0));
        let y = lin.forward(&x, true).unwrap();
        let r = proj(y.shape(), &mut rng);
        let dx = lin.backward(&r.clone().into_dimensionality().unwrap()).unwrap();

        let mut probe = lin.clone();
        let fx = numeric_grad(&x.clone().into_dyn(), 1e-6, |xv| {
            let xv = xv.clone().into_dimensionality().unwrap();
            (probe.forward(&xv, false).unwrap().into_dyn() * &r).sum()
        });
        assert!(max_rel_err(&dx.into_dyn(), &fx) < 1e-8);

        let mut probe = lin.clone();
        let fw = numeric_grad(&lin.weight.value.clone(), 1e-6, |wv| {
            probe.weight.value.assign(wv);
            (probe.forward(&x, false).unwrap().into_dyn() * &r).sum()
        });
        assert!(max_rel_err(&lin.weight.grad, &fw) < 1e-8);

        let mut probe = lin.clone();
        let fb = numeric_grad(&lin.bias.value.clone(), 1e-6, |bv| {
            probe.bias.value.assign(bv);
            (probe.forward(&x, false).unwrap().into_dyn() * &r).sum()
        });
        assert!(max_rel_err(&lin.bias.grad, &fb) < 1e-8);
    }

    #[test]
    fn rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::<f32>::new(4, 3, &mut rng);
        assert!(lin.forward(&Array2::zeros((2, 5)), false).is_err());
    }
}
