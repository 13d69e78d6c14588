use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Real};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub wq: Array2<F>,
    pub bq: Array1<F>,
    pub wk: Array2<F>,
    pub bk: Array1<F>,
    pub wv: Array2<F>,
    pub bv: Array1<F>,
    pub wo: Array2<F>,
    pub bo: Array1<F>,
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    pub w1: Array2<F>,
    pub b1: Array1<F>,
    pub w2: Array2<F>,
    pub b2: Array1<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
}

/// Every trainable tensor. Matrices are stored `in x out` so a linear layer
/// is `x.dot(w) + b`. The output projection reuses `tok_emb`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub tok_emb: Array2<F>,
    pub pos_emb: Array2<F>,
    pub emb_ln_gain: Array1<F>,
    pub emb_ln_bias: Array1<F>,
    pub layers: Vec<LayerParams<F>>,
    pub head_w: Array2<F>,
    pub head_b: Array1<F>,
    pub head_ln_gain: Array1<F>,
    pub head_ln_bias: Array1<F>,
    pub out_bias: Array1<F>,
}

macro_rules! layer_tensors {
    ($layer:expr, $i:expr, $out:ident, $as_slice:ident, $shape:expr) => {{
        let l = $layer;
        $out!(format!("layers.{}.wq", $i), l.wq, $as_slice, $shape);
        $out!(format!("layers.{}.bq", $i), l.bq, $as_slice, $shape);
        $out!(format!("layers.{}.wk", $i), l.wk, $as_slice, $shape);
        $out!(format!("layers.{}.bk", $i), l.bk, $as_slice, $shape);
        $out!(format!("layers.{}.wv", $i), l.wv, $as_slice, $shape);
        $out!(format!("layers.{}.bv", $i), l.bv, $as_slice, $shape);
        $out!(format!("layers.{}.wo", $i), l.wo, $as_slice, $shape);
        $out!(format!("layers.{}.bo", $i), l.bo, $as_slice, $shape);
        $out!(format!("layers.{}.ln1_gain", $i), l.ln1_gain, $as_slice, $shape);
        $out!(format!("layers.{}.ln1_bias", $i), l.ln1_bias, $as_slice, $shape);
        $out!(format!("layers.{}.w1", $i), l.w1, $as_slice, $shape);
        $out!(format!("layers.{}.b1", $i), l.b1, $as_slice, $shape);
        $out!(format!("layers.{}.w2", $i), l.w2, $as_slice, $shape);
        $out!(format!("layers.{}.b2", $i), l.b2, $as_slice, $shape);
        $out!(format!("layers.{}.ln2_gain", $i), l.ln2_gain, $as_slice, $shape);
        $out!(format!("layers.{}.ln2_bias", $i), l.ln2_bias, $as_slice, $shape);
    }};
}

macro_rules! all_tensors {
    ($p:ident, $layers:ident, $out:ident, $as_slice:ident) => {{
        $out!("tok_emb".to_string(), $p.tok_emb, $as_slice, ());
        $out!("pos_emb".to_string(), $p.pos_emb, $as_slice, ());
        $out!("emb_ln_gain".to_string(), $p.emb_ln_gain, $as_slice, ());
        $out!("emb_ln_bias".to_string(), $p.emb_ln_bias, $as_slice, ());
        for (i, l) in $p.layers.$layers().enumerate() {
            layer_tensors!(l, i, $out, $as_slice, ());
        }
        $out!("head_w".to_string(), $p.head_w, $as_slice, ());
        $out!("head_b".to_string(), $p.head_b, $as_slice, ());
        $out!("head_ln_gain".to_string(), $p.head_ln_gain, $as_slice, ());
        $out!("head_ln_bias".to_string(), $p.head_ln_bias, $as_slice, ());
        $out!("out_bias".to_string(), $p.out_bias, $as_slice, ());
    }};
}

fn normal_matrix<F: Real, R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    let dist = Normal::new(0.0, 0.02).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || F::lit(dist.sample(rng)))
}

impl<F: Real> Params<F> {
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = rng::stream(cfg.seed, &[rng::TAG_INIT]);
        let (h, f) = (cfg.hidden, cfg.ffn);
        let zeros = |n| Array1::<F>::zeros(n);
        let ones = |n| Array1::<F>::ones(n);
        let tok_emb = normal_matrix(cfg.vocab_size, h, &mut rng);
        let pos_emb = normal_matrix(cfg.max_len, h, &mut rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                wq: normal_matrix(h, h, &mut rng),
                bq: zeros(h),
                wk: normal_matrix(h, h, &mut rng),
                bk: zeros(h),
                wv: normal_matrix(h, h, &mut rng),
                bv: zeros(h),
                wo: normal_matrix(h, h, &mut rng),
                bo: zeros(h),
                ln1_gain: ones(h),
                ln1_bias: zeros(h),
                w1: normal_matrix(h, f, &mut rng),
                b1: zeros(f),
                w2: normal_matrix(f, h, &mut rng),
                b2: zeros(h),
                ln2_gain: ones(h),
                ln2_bias: zeros(h),
            })
            .collect();
        let head_w = normal_matrix(h, h, &mut rng);
        Self {
            tok_emb,
            pos_emb,
            emb_ln_gain: ones(h),
            emb_ln_bias: zeros(h),
            layers,
            head_w,
            head_b: zeros(h),
            head_ln_gain: ones(h),
            head_ln_bias: zeros(h),
            out_bias: zeros(cfg.vocab_size),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, d) in z.tensors_mut() {
            d.iter_mut().for_each(|x| *x = F::zero());
        }
        z
    }

    /// `(name, shape, data)` for every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr, $as_slice:ident, $shape:expr) => {
                out.push(($name, $t.shape().to_vec(), $t.$as_slice().expect("contiguous")))
            };
        }
        all_tensors!(self, iter, push, as_slice);
        out
    }

    /// Mutable views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out = Vec::new();
        macro_rules! push {
            ($name:expr, $t:expr, $as_slice:ident, $shape:expr) => {
                out.push(($name, $t.$as_slice().expect("contiguous")))
            };
        }
        all_tensors!(self, iter_mut, push, as_slice_mut);
        out
    }

    pub fn scale(&mut self, factor: F) {
        for (_, d) in self.tensors_mut() {
            d.iter_mut().for_each(|x| *x *= factor);
        }
    }
}
