//! Pretext task classifiers.
//!
//! The order head turns the n clip embeddings of a tuple into n!-way
//! order logits: every input-position pair (i, j) with i < j is concatenated
//! and passed through one shared affine + ReLU encoder, the pair codes are
//! concatenated, and a final affine layer (behind dropout) scores the n!
//! candidate orderings. The speed head is a plain affine classifier over a
//! single clip embedding, used by the speed-prediction baseline and for
//! supervised fine-tuning.

use ndarray::{s, Array2, Array3, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::linear::Linear;
use crate::nn::{join, Dropout, Relu, Scalar, Slot, Tensors};
use crate::sampler::{factorial, MAX_TUPLE, MIN_TUPLE};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrderHeadConfig {
    /// Clips per tuple.
    pub n: usize,
    /// Width of the incoming clip embeddings.
    pub embedding_dim: usize,
    /// Width of each encoded pair.
    pub pair_hidden_dim: usize,
    /// Drop rate applied to the concatenated pair codes during training.
    pub dropout: f64,
}

impl Default for OrderHeadConfig {
    fn default() -> Self {
        OrderHeadConfig { n: 3, embedding_dim: 512, pair_hidden_dim: 512, dropout: 0.5 }
    }
}

impl OrderHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_TUPLE..=MAX_TUPLE).contains(&self.n) {
            return Err(Error::UnsupportedTupleSize(self.n));
        }
        if self.embedding_dim == 0 || self.pair_hidden_dim == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Input-position pairs (i, j) with i < j, in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_pairs());
        for i in 0..self.n {
            for j in i + 1..self.n {
                out.push((i, j));
            }
        }
        out
    }

    pub fn num_pairs(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    pub fn num_classes(&self) -> usize {
        factorial(self.n)
    }
}

pub struct OrderHead<F: Scalar> {
    pub cfg: OrderHeadConfig,
    pairs: Vec<(usize, usize)>,
    pair_fc: Linear<F>,
    pair_relu: Relu<F, Ix2>,
    dropout: Dropout<F, Ix2>,
    classify: Linear<F>,
}

impl<F: Scalar> OrderHead<F> {
    pub fn new<R: Rng>(cfg: &OrderHeadConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let pairs = cfg.pairs();
        let pair_fc = Linear::new_uniform(2 * cfg.embedding_dim, cfg.pair_hidden_dim, rng);
        let classify =
            Linear::new_uniform(pairs.len() * cfg.pair_hidden_dim, cfg.num_classes(), rng);
        Ok(OrderHead {
            cfg: cfg.clone(),
            pairs,
            pair_fc,
            pair_relu: Relu::new(),
            dropout: Dropout::new(cfg.dropout),
            classify,
        })
    }

    fn check_input(&self, e: &Array3<F>) -> Result<()> {
        let (_, n, d) = e.dim();
        if n != self.cfg.n || d != self.cfg.embedding_dim {
            return Err(Error::ShapeMismatch(format!(
                "order head expects {} embeddings of dim {}, got {n} of dim {d}",
                self.cfg.n, self.cfg.embedding_dim
            )));
        }
        Ok(())
    }

    /// Embeddings in shuffled input order, (B, n, E) -> logits (B, n!).
    pub fn forward<R: Rng>(
        &mut self,
        embeddings: &Array3<F>,
        train: bool,
        rng: &mut R,
    ) -> Result<Array2<F>> {
        self.check_input(embeddings)?;
        let (b, _, d) = embeddings.dim();
        let p = self.pairs.len();
        // All pairs of the whole batch go through the shared encoder as one
        // matrix, rows ordered batch-major so the codes reshape cleanly.
        let mut pair_in = Array2::zeros((b * p, 2 * d));
        for bi in 0..b {
            for (pi, &(i, j)) in self.pairs.iter().enumerate() {
                let mut row = pair_in.row_mut(bi * p + pi);
                row.slice_mut(s![0..d]).assign(&embeddings.slice(s![bi, i, ..]));
                row.slice_mut(s![d..2 * d]).assign(&embeddings.slice(s![bi, j, ..]));
            }
        }
        let codes = self.pair_fc.forward(&pair_in, train)?;
        let codes = self.pair_relu.forward(codes, train);
        let codes = codes
            .into_shape_with_order((b, p * self.cfg.pair_hidden_dim))
            .expect("pair codes are contiguous");
        let codes = self.dropout.forward(codes, train, rng);
        self.classify.forward(&codes, train)
    }

    /// Gradients of the loss w.r.t. the input embeddings, (B, n, E).
    pub fn backward(&mut self, dlogits: &Array2<F>) -> Result<Array3<F>> {
        let b = dlogits.nrows();
        let (p, h, d) = (self.pairs.len(), self.cfg.pair_hidden_dim, self.cfg.embedding_dim);
        let d_codes = self.classify.backward(dlogits)?;
        let d_codes = self.dropout.backward(d_codes);
        let d_codes = d_codes
            .into_shape_with_order((b * p, h))
            .expect("pair codes are contiguous");
        let d_codes = self.pair_relu.backward(d_codes);
        let d_pair = self.pair_fc.backward(&d_codes)?;
        let mut d_embed = Array3::zeros((b, self.cfg.n, d));
        for bi in 0..b {
            for (pi, &(i, j)) in self.pairs.iter().enumerate() {
                let row = d_pair.row(bi * p + pi);
                let mut left = d_embed.slice_mut(s![bi, i, ..]);
                left += &row.slice(s![0..d]);
                let mut right = d_embed.slice_mut(s![bi, j, ..]);
                right += &row.slice(s![d..2 * d]);
            }
        }
        Ok(d_embed)
    }
}

impl<F: Scalar> Tensors<F> for OrderHead<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        self.pair_fc.visit(&join(prefix, "pair_fc"), f);
        self.classify.visit(&join(prefix, "classify"), f);
    }
}

/// Affine classifier over one clip embedding: the speed-prediction baseline
/// head and the fine-tuning action classifier.
pub struct SpeedHead<F: Scalar> {
    fc: Linear<F>,
}

impl<F: Scalar> SpeedHead<F> {
    pub fn new<R: Rng>(embedding_dim: usize, num_classes: usize, rng: &mut R) -> Result<Self> {
        if embedding_dim == 0 || num_classes == 0 {
            return Err(Error::Config("classifier dims must be positive".into()));
        }
        Ok(SpeedHead { fc: Linear::new_uniform(embedding_dim, num_classes, rng) })
    }

    pub fn num_classes(&self) -> usize {
        self.fc.out_dim()
    }

    pub fn forward(&mut self, embeddings: &Array2<F>, train: bool) -> Result<Array2<F>> {
        self.fc.forward(embeddings, train)
    }

    pub fn backward(&mut self, dlogits: &Array2<F>) -> Result<Array2<F>> {
        self.fc.backward(dlogits)
    }
}

impl<F: Scalar> Tensors<F> for SpeedHead<F> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, F>)) {
        self.fc.visit(&join(prefix, "fc"), f);
    }
}
