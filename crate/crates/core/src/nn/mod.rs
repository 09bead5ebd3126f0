//! Small CPU neural-net toolkit: layers with explicit forward/backward
//! passes, SGD with momentum, and a visitor for walking every tensor in a
//! model (for the optimizer, checkpoints, and parameter counts).
//!
//! Everything is generic over [`Scalar`] so training runs in `f32` while
//! gradient tests run the same code in `f64`.

pub mod conv;
pub mod linear;
pub mod loss;
pub mod pool;

use ndarray::{Array, ArrayD, Dimension};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element type for all tensors: `f32` or `f64`.
pub trait Scalar: ndarray::NdFloat + ndarray::LinalgScalar + std::iter::Sum {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// A trainable tensor: value, accumulated gradient, and momentum state.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    vel: ArrayD<F>,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        let vel = ArrayD::zeros(value.raw_dim());
        Param { value, grad, vel }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    /// One SGD step with classical momentum; weight decay enters the
    /// gradient as an L2 term.
    pub fn sgd_step(&mut self, lr: F, momentum: F, weight_decay: F) {
        ndarray::Zip::from(&mut self.vel)
            .and(&self.grad)
            .and(&self.value)
            .for_each(|v, &g, &w| *v = momentum * *v + g + weight_decay * w);
        ndarray::Zip::from(&mut self.value).and(&self.vel).for_each(|w, &v| *w = *w - lr * v);
    }

    /// Drop momentum state (used when restoring a checkpoint for eval).
    pub fn reset_velocity(&mut self) {
        self.vel.fill(F::zero());
    }
}

/// One tensor slot reported by [`Tensors::visit`].
pub enum Slot<'a, F: Scalar> {
    /// Trainable parameter.
    Param(&'a mut Param<F>),
    /// Non-trainable state that still belongs in a checkpoint (running
    /// statistics and the like).
    Buffer(&'a mut ArrayD<F>),
}

/// Walk every tensor in a module tree under dotted names.
pub trait Tensors<F: Scalar> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>));
}

/// `prefix.name`, or just `name` at the root.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// SGD with momentum over every parameter a module reports.
#[derive(Debug, Clone, Copy)]
pub struct Sgd<F: Scalar> {
    pub lr: F,
    pub momentum: F,
    pub weight_decay: F,
}

impl<F: Scalar> Sgd<F> {
    pub fn step(&self, model: &mut dyn Tensors<F>) {
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        model.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.sgd_step(lr, mu, wd);
            }
        });
    }
}

/// Clear accumulated gradients on every parameter.
pub fn zero_grads<F: Scalar>(model: &mut dyn Tensors<F>) {
    model.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            p.zero_grad();
        }
    });
}

/// Total number of trainable scalars.
pub fn param_count<F: Scalar>(model: &mut dyn Tensors<F>) -> usize {
    let mut total = 0;
    model.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            total += p.len();
        }
    });
    total
}

/// He-style normal init scaled by fan-in; standard for ReLU nets.
pub fn he_normal<F: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> ArrayD<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(shape.to_vec(), || {
        let z: f64 = StandardNormal.sample(rng);
        F::from_f64(z * std)
    })
}

/// Elementwise max(0, x) with cached activation for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Relu<F: Scalar, D: Dimension> {
    y: Option<Array<F, D>>,
}

impl<F: Scalar, D: Dimension> Relu<F, D> {
    pub fn new() -> Self {
        Relu { y: None }
    }

    pub fn forward(&mut self, mut x: Array<F, D>, train: bool) -> Array<F, D> {
        x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        if train {
            self.y = Some(x.clone());
        }
        x
    }

    pub fn backward(&mut self, mut dy: Array<F, D>) -> Array<F, D> {
        let y = self.y.take().expect("relu backward without forward");
        ndarray::Zip::from(&mut dy).and(&y).for_each(|d, &v| {
            if v <= F::zero() {
                *d = F::zero();
            }
        });
        dy
    }
}

/// Inverted dropout: scales kept units by 1/(1-p) so eval is a no-op.
#[derive(Debug, Clone)]
pub struct Dropout<F: Scalar, D: Dimension> {
    pub p: f64,
    mask: Option<Array<F, D>>,
}

impl<F: Scalar, D: Dimension> Dropout<F, D> {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Dropout { p, mask: None }
    }

    pub fn forward<R: Rng>(&mut self, mut x: Array<F, D>, train: bool, rng: &mut R) -> Array<F, D> {
        if !train || self.p == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.p;
        let scale = F::from_f64(1.0 / keep);
        let mask = Array::from_shape_simple_fn(x.raw_dim(), || {
            if rng.gen_bool(keep) {
                scale
            } else {
                F::zero()
            }
        });
        x *= &mask;
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut dy: Array<F, D>) -> Array<F, D> {
        if let Some(mask) = self.mask.take() {
            dy *= &mask;
        }
        dy
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Ix1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sgd_momentum_matches_hand_rollout() {
        // One parameter, constant gradient 1: v_k = mu v_{k-1} + 1,
        // w_k = w_{k-1} - lr v_k. Two steps from w=0, mu=0.5, lr=0.1:
        // v1=1, w1=-0.1; v2=1.5, w2=-0.25.
        let mut p = Param::new(arr1(&[0.0f64]).into_dyn());
        for _ in 0..2 {
            p.grad.fill(1.0);
            p.sgd_step(0.1, 0.5, 0.0);
        }
        assert!((p.value[[0]] - (-0.25)).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let mut p = Param::new(arr1(&[2.0f64]).into_dyn());
        p.sgd_step(0.1, 0.0, 0.5);
        // grad = 0 + wd*w = 1.0; w -= 0.1 * 1.0
        assert!((p.value[[0]] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn relu_gates_gradients() {
        let mut relu = Relu::<f64, Ix1>::new();
        let y = relu.forward(arr1(&[-1.0, 0.0, 2.0]), true);
        assert_eq!(y, arr1(&[0.0, 0.0, 2.0]));
        let dx = relu.backward(arr1(&[5.0, 5.0, 5.0]));
        assert_eq!(dx, arr1(&[0.0, 0.0, 5.0]));
    }

    #[test]
    fn dropout_eval_is_identity_and_train_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = Dropout::<f64, Ix1>::new(0.5);
        let x = ndarray::Array1::ones(20_000);
        let y_eval = d.forward(x.clone(), false, &mut rng);
        assert_eq!(y_eval, x);
        let y = d.forward(x.clone(), true, &mut rng);
        let mean = y.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.05, "inverted dropout mean {mean}");
        // Backward gates exactly where forward did.
        let dx = d.backward(ndarray::Array1::ones(20_000));
        for (a, b) in y.iter().zip(dx.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn visitor_counts_params() {
        struct Two<F: Scalar>(Param<F>, Param<F>);
        impl<F: Scalar> Tensors<F> for Two<F> {
            fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
                f(join(prefix, "a"), Slot::Param(&mut self.0));
                f(join(prefix, "b"), Slot::Param(&mut self.1));
            }
        }
        let mut m =
            Two::<f32>(Param::new(ArrayD::zeros(vec![2, 3])), Param::new(ArrayD::zeros(vec![4])));
        assert_eq!(param_count(&mut m), 10);
    }
}
