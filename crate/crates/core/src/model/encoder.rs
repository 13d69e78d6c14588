//! Post-LN transformer encoder with a tied MLM head.
//!
//! Each batch row is encoded over its attended (non-PAD) positions only,
//! which is exactly equivalent to masking PAD keys in attention. The vocab
//! projection is evaluated at masked positions only.

use ndarray::{linalg::general_mat_mul, s, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ops::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, log_softmax_f64,
    softmax_rows, LnCache,
};
use super::{MaskedBatch, ModelState, Params, Real};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No dropout.
    Eval,
    /// Dropout active, masks drawn from `(seed, step, row)`.
    Train { seed: u64, step: u64 },
}

/// Log-probabilities at every masked position, in row-major batch order.
#[derive(Debug, Clone)]
pub struct MlmOutput {
    pub log_probs: Array2<f64>,
    pub targets: Vec<u32>,
    /// `(row, column)` of each masked position.
    pub positions: Vec<(usize, usize)>,
}

impl MlmOutput {
    pub fn nll(&self) -> Vec<f64> {
        self.targets
            .iter()
            .enumerate()
            .map(|(k, &t)| -self.log_probs[[k, t as usize]])
            .collect()
    }
}

struct LayerCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
    attn_drop: Option<Array2<F>>,
    ln1: LnCache<F>,
    y1: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
    ffn_drop: Option<Array2<F>>,
    ln2: LnCache<F>,
}

struct RowCache<F> {
    ids: Vec<u32>,
    positions: Vec<usize>,
    emb_ln: LnCache<F>,
    emb_drop: Option<Array2<F>>,
    layers: Vec<LayerCache<F>>,
    masked: Vec<usize>,
    head_in: Array2<F>,
    head_pre: Array2<F>,
    head_ln: LnCache<F>,
    head_out: Array2<F>,
}

struct RowInput {
    row: usize,
    ids: Vec<u32>,
    positions: Vec<usize>,
    /// Indices into `ids` of the masked positions.
    masked: Vec<usize>,
    targets: Vec<u32>,
}

fn dropout_mask<F: Real>(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<F> {
    let keep = F::lit(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { F::zero() } else { keep })
}

impl<F: Real> ModelState<F> {
    fn rows(&self, batch: &MaskedBatch) -> Result<Vec<RowInput>> {
        let n = batch.batch * batch.seq_len;
        if [batch.input_ids.len(), batch.target_ids.len(), batch.mask_positions.len(), batch.attention_mask.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Shape("batch arrays disagree with batch x seq_len".into()));
        }
        let mut out = Vec::with_capacity(batch.batch);
        for row in 0..batch.batch {
            let mut input = RowInput {
                row,
                ids: vec![],
                positions: vec![],
                masked: vec![],
                targets: vec![],
            };
            for col in 0..batch.seq_len {
                let at = row * batch.seq_len + col;
                if !batch.attention_mask[at] {
                    continue;
                }
                let tok = batch.input_ids[at];
                if tok as usize >= self.config.vocab_size {
                    return Err(Error::Shape(format!(
                        "token id {tok} outside vocabulary of {}",
                        self.config.vocab_size
                    )));
                }
                if col >= self.config.max_len {
                    return Err(Error::Shape(format!(
                        "position {col} exceeds max_len {}",
                        self.config.max_len
                    )));
                }
                if batch.mask_positions[at] {
                    let t = batch.target_ids[at];
                    if t as usize >= self.config.vocab_size {
                        return Err(Error::Shape(format!("target id {t} outside vocabulary")));
                    }
                    input.masked.push(input.ids.len());
                    input.targets.push(t);
                }
                input.ids.push(tok);
                input.positions.push(col);
            }
            out.push(input);
        }
        Ok(out)
    }

    fn row_rng(&self, mode: Mode, row: usize) -> Option<ChaCha8Rng> {
        match mode {
            Mode::Train { seed, step } if self.config.dropout > 0.0 => {
                Some(rng::stream(seed, &[rng::TAG_DROPOUT, step, row as u64]))
            }
            _ => None,
        }
    }

    fn encode_row(&self, input: &RowInput, mut drop: Option<ChaCha8Rng>) -> (Array2<F>, RowCache<F>) {
        let p = &self.params;
        let cfg = &self.config;
        let n = input.ids.len();
        let h = cfg.hidden;
        let dh = cfg.head_dim();
        let rate = cfg.dropout;

        let mut emb = Array2::<F>::zeros((n, h));
        for (k, (&id, &pos)) in input.ids.iter().zip(&input.positions).enumerate() {
            let mut r = emb.row_mut(k);
            r += &p.tok_emb.row(id as usize);
            r += &p.pos_emb.row(pos);
        }
        let (mut x, emb_ln) = layer_norm(&emb, &p.emb_ln_gain, &p.emb_ln_bias);
        let emb_drop = drop.as_mut().map(|g| dropout_mask::<F>((n, h), rate, g));
        if let Some(m) = &emb_drop {
            x *= m;
        }

        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in &p.layers {
            let q = linear(x.view(), &l.wq, &l.bq);
            let k = linear(x.view(), &l.wk, &l.bk);
            let v = linear(x.view(), &l.wv, &l.bv);
            let mut ctx = Array2::<F>::zeros((n, h));
            let mut probs = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t());
                scores *= scale;
                softmax_rows(&mut scores);
                ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
            let mut a = linear(ctx.view(), &l.wo, &l.bo);
            let attn_drop = drop.as_mut().map(|g| dropout_mask::<F>((n, h), rate, g));
            if let Some(m) = &attn_drop {
                a *= m;
            }
            a += &x;
            let (y1, ln1) = layer_norm(&a, &l.ln1_gain, &l.ln1_bias);
            let pre = linear(y1.view(), &l.w1, &l.b1);
            let act = pre.mapv(gelu);
            let mut f = linear(act.view(), &l.w2, &l.b2);
            let ffn_drop = drop.as_mut().map(|g| dropout_mask::<F>((n, h), rate, g));
            if let Some(m) = &ffn_drop {
                f *= m;
            }
            f += &y1;
            let (y2, ln2) = layer_norm(&f, &l.ln2_gain, &l.ln2_bias);
            layers.push(LayerCache {
                x: std::mem::replace(&mut x, y2),
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                ln1,
                y1,
                pre,
                act,
                ffn_drop,
                ln2,
            });
        }

        let head_in = x.select(Axis(0), &input.masked);
        let head_pre = linear(head_in.view(), &p.head_w, &p.head_b);
        let (head_out, head_ln) = layer_norm(&head_pre.mapv(gelu), &p.head_ln_gain, &p.head_ln_bias);
        let mut logits = head_out.dot(&p.tok_emb.t());
        logits += &p.out_bias;
        let cache = RowCache {
            ids: input.ids.clone(),
            positions: input.positions.clone(),
            emb_ln,
            emb_drop,
            layers,
            masked: input.masked.clone(),
            head_in,
            head_pre,
            head_ln,
            head_out,
        };
        (logits, cache)
    }

    fn backward_row(&self, cache: &RowCache<F>, dlogits: &Array2<F>, g: &mut Params<F>) {
        let p = &self.params;
        let cfg = &self.config;
        let n = cache.ids.len();
        let h = cfg.hidden;
        let dh = cfg.head_dim();

        g.out_bias += &dlogits.sum_axis(Axis(0));
        general_mat_mul(F::one(), &dlogits.t(), &cache.head_out, F::one(), &mut g.tok_emb);
        let d_out = dlogits.dot(&p.tok_emb);
        let d_act = layer_norm_backward(&d_out, &cache.head_ln, &p.head_ln_gain, &mut g.head_ln_gain, &mut g.head_ln_bias);
        let d_pre = d_act * &cache.head_pre.mapv(gelu_grad);
        let d_in = linear_backward(cache.head_in.view(), &d_pre, &p.head_w, &mut g.head_w, &mut g.head_b);

        let mut d = Array2::<F>::zeros((n, h));
        for (k, &row) in cache.masked.iter().enumerate() {
            let mut r = d.row_mut(row);
            r += &d_in.row(k);
        }

        let scale = F::lit(1.0 / (dh as f64).sqrt());
        for (idx, lc) in cache.layers.iter().enumerate().rev() {
            let l = &p.layers[idx];
            let gl = &mut g.layers[idx];

            let ds2 = layer_norm_backward(&d, &lc.ln2, &l.ln2_gain, &mut gl.ln2_gain, &mut gl.ln2_bias);
            let mut d_y1 = ds2.clone();
            let mut d_f = ds2;
            if let Some(m) = &lc.ffn_drop {
                d_f *= m;
            }
            let d_act = linear_backward(lc.act.view(), &d_f, &l.w2, &mut gl.w2, &mut gl.b2);
            let d_pre = d_act * &lc.pre.mapv(gelu_grad);
            d_y1 += &linear_backward(lc.y1.view(), &d_pre, &l.w1, &mut gl.w1, &mut gl.b1);

            let ds1 = layer_norm_backward(&d_y1, &lc.ln1, &l.ln1_gain, &mut gl.ln1_gain, &mut gl.ln1_bias);
            let mut d_x = ds1.clone();
            let mut d_a = ds1;
            if let Some(m) = &lc.attn_drop {
                d_a *= m;
            }
            let d_ctx = linear_backward(lc.ctx.view(), &d_a, &l.wo, &mut gl.wo, &mut gl.bo);

            let mut dq = Array2::<F>::zeros((n, h));
            let mut dk = Array2::<F>::zeros((n, h));
            let mut dv = Array2::<F>::zeros((n, h));
            for head in 0..cfg.heads {
                let cols = s![.., head * dh..(head + 1) * dh];
                let probs = &lc.probs[head];
                let d_ctx_h = d_ctx.slice(cols);
                let mut ds = d_ctx_h.dot(&lc.v.slice(cols).t());
                general_mat_mul(F::one(), &probs.t(), &d_ctx_h, F::one(), &mut dv.slice_mut(cols));
                for (mut ds_row, p_row) in ds.outer_iter_mut().zip(probs.outer_iter()) {
                    let dot = ds_row.iter().zip(p_row).fold(F::zero(), |a, (&x, &y)| a + x * y);
                    ds_row.zip_mut_with(&p_row, |x, &y| *x = y * (*x - dot) * scale);
                }
                general_mat_mul(F::one(), &ds, &lc.k.slice(cols), F::one(), &mut dq.slice_mut(cols));
                general_mat_mul(F::one(), &ds.t(), &lc.q.slice(cols), F::one(), &mut dk.slice_mut(cols));
            }
            d_x += &linear_backward(lc.x.view(), &dq, &l.wq, &mut gl.wq, &mut gl.bq);
            d_x += &linear_backward(lc.x.view(), &dk, &l.wk, &mut gl.wk, &mut gl.bk);
            d_x += &linear_backward(lc.x.view(), &dv, &l.wv, &mut gl.wv, &mut gl.bv);
            d = d_x;
        }

        if let Some(m) = &cache.emb_drop {
            d *= m;
        }
        let d_e = layer_norm_backward(&d, &cache.emb_ln, &p.emb_ln_gain, &mut g.emb_ln_gain, &mut g.emb_ln_bias);
        for (k, (&id, &pos)) in cache.ids.iter().zip(&cache.positions).enumerate() {
            let mut t = g.tok_emb.row_mut(id as usize);
            t += &d_e.row(k);
            let mut q = g.pos_emb.row_mut(pos);
            q += &d_e.row(k);
        }
    }

    /// Log-probabilities over the vocabulary at every masked position.
    pub fn forward_mlm(&self, batch: &MaskedBatch, mode: Mode) -> Result<MlmOutput> {
        let rows = self.rows(batch)?;
        let total: usize = rows.iter().map(|r| r.masked.len()).sum();
        let mut log_probs = Array2::<f64>::zeros((total, self.config.vocab_size));
        let mut targets = Vec::with_capacity(total);
        let mut positions = Vec::with_capacity(total);
        let mut at = 0;
        for input in rows.iter().filter(|r| !r.masked.is_empty()) {
            let (logits, _) = self.encode_row(input, self.row_rng(mode, input.row));
            let lp = log_softmax_f64(&logits);
            let m = lp.nrows();
            log_probs.slice_mut(s![at..at + m, ..]).assign(&lp);
            at += m;
            targets.extend_from_slice(&input.targets);
            positions.extend(input.masked.iter().map(|&k| (input.row, input.positions[k])));
        }
        Ok(MlmOutput {
            log_probs,
            targets,
            positions,
        })
    }

    /// Negative log-likelihood of each masked target, dropout off.
    pub fn masked_nll(&self, batch: &MaskedBatch) -> Result<Vec<f64>> {
        let rows = self.rows(batch)?;
        let mut out = Vec::new();
        for input in rows.iter().filter(|r| !r.masked.is_empty()) {
            let (logits, _) = self.encode_row(input, None);
            let lp = log_softmax_f64(&logits);
            out.extend(input.targets.iter().enumerate().map(|(k, &t)| -lp[[k, t as usize]]));
        }
        Ok(out)
    }

    /// Mean NLL over masked positions and its gradient.
    pub fn loss_and_grads(&self, batch: &MaskedBatch, mode: Mode) -> Result<(f64, Params<F>)> {
        self.loss_and_grads_scaled(batch, mode, 1.0)
    }

    /// Same as [`ModelState::loss_and_grads`] with the loss multiplied by
    /// `scale` before differentiation.
    pub fn loss_and_grads_scaled(&self, batch: &MaskedBatch, mode: Mode, scale: f64) -> Result<(f64, Params<F>)> {
        let rows = self.rows(batch)?;
        let total: usize = rows.iter().map(|r| r.masked.len()).sum();
        if total == 0 {
            return Err(Error::NoMaskedPositions(" in training batch".into()));
        }
        let mut grads = self.params.zeros_like();
        let mut nll_sum = 0.0f64;
        let coef = scale / total as f64;
        for input in rows.iter().filter(|r| !r.masked.is_empty()) {
            let (logits, cache) = self.encode_row(input, self.row_rng(mode, input.row));
            let lp = log_softmax_f64(&logits);
            let mut dlogits = Array2::<F>::zeros(logits.raw_dim());
            for (k, &t) in input.targets.iter().enumerate() {
                nll_sum -= lp[[k, t as usize]];
                let row = lp.row(k);
                for (j, o) in dlogits.row_mut(k).iter_mut().enumerate() {
                    let onehot = if j == t as usize { 1.0 } else { 0.0 };
                    *o = F::lit((row[j].exp() - onehot) * coef);
                }
            }
            self.backward_row(&cache, &dlogits, &mut grads);
        }
        Ok((scale * nll_sum / total as f64, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{mask_batch, MaskedRow, ModelConfig};
    use super::*;

    fn micro(layers: usize, dropout: f64) -> ModelConfig {
        ModelConfig {
            layers,
            hidden: 8,
            heads: 2,
            ffn: 16,
            vocab_size: 20,
            max_len: 12,
            dropout,
            seed: 3,
        }
    }

    fn batch() -> MaskedBatch {
        MaskedBatch::from_rows(vec![
            MaskedRow { input: vec![5, 1, 7, 8, 1], target: vec![0, 6, 0, 0, 9], masked: vec![false, true, false, false, true] },
            MaskedRow { input: vec![10, 11, 1], target: vec![0, 0, 12], masked: vec![false, false, true] },
        ])
    }

    #[test]
    fn log_probs_are_normalized() {
        let m = ModelState::<f32>::init(micro(2, 0.1)).unwrap();
        let out = m.forward_mlm(&batch(), Mode::Eval).unwrap();
        assert_eq!(out.log_probs.nrows(), 3);
        for row in out.log_probs.outer_iter() {
            assert!((row.mapv(f64::exp).sum() - 1.0).abs() < 1e-6);
        }
        assert_eq!(out.positions, vec![(0, 1), (0, 4), (1, 2)]);
    }

    #[test]
    fn uniform_model_loss_is_log_vocab() {
        let m = ModelState::<f32>::uniform(micro(2, 0.0)).unwrap();
        let (loss, _) = m.loss_and_grads(&batch(), Mode::Eval).unwrap();
        assert!((loss - 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_layer_model_is_head_over_embeddings() {
        let m = ModelState::<f64>::init(micro(0, 0.0)).unwrap();
        let b = batch();
        let out = m.forward_mlm(&b, Mode::Eval).unwrap();
        let p = &m.params;
        // masked position (0, 1): token [MASK] at position 1
        let mut e = &p.tok_emb.row(1) + &p.pos_emb.row(1);
        let mean = e.sum() / 8.0;
        let var = e.mapv(|v| (v - mean).powi(2)).sum() / 8.0;
        e.mapv_inplace(|v| (v - mean) / (var + 1e-12).sqrt());
        let e = e.insert_axis(Axis(0));
        let t = linear(e.view(), &p.head_w, &p.head_b).mapv(gelu);
        let (t, _) = layer_norm(&t, &p.head_ln_gain, &p.head_ln_bias);
        let logits = t.dot(&p.tok_emb.t()) + &p.out_bias;
        let want = log_softmax_f64(&logits);
        for j in 0..20 {
            assert!((want[[0, j]] - out.log_probs[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn row_permutation_equivariance() {
        let m = ModelState::<f64>::init(micro(2, 0.0)).unwrap();
        let b = batch();
        let a = m.forward_mlm(&b, Mode::Eval).unwrap();
        let swapped = m.forward_mlm(&b.permute_rows(&[1, 0]), Mode::Eval).unwrap();
        // row 1's single masked position comes first after the swap
        for j in 0..20 {
            assert_eq!(swapped.log_probs[[0, j]], a.log_probs[[2, j]]);
            assert_eq!(swapped.log_probs[[1, j]], a.log_probs[[0, j]]);
            assert_eq!(swapped.log_probs[[2, j]], a.log_probs[[1, j]]);
        }
    }

    #[test]
    fn padding_invariance() {
        let m = ModelState::<f32>::init(micro(2, 0.0)).unwrap();
        let b = batch();
        let a = m.forward_mlm(&b, Mode::Eval).unwrap();
        let p = m.forward_mlm(&b.padded(4), Mode::Eval).unwrap();
        let diff = (&a.log_probs - &p.log_probs).mapv(f64::abs).fold(0.0f64, |x, &y| x.max(y));
        assert!(diff < 1e-6);
    }

    #[test]
    fn rejects_out_of_vocabulary_tokens() {
        let m = ModelState::<f32>::init(micro(1, 0.0)).unwrap();
        let b = MaskedBatch::from_rows(vec![MaskedRow { input: vec![25, 1], target: vec![0, 6], masked: vec![false, true] }]);
        assert!(matches!(m.forward_mlm(&b, Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_masked_positions_is_an_error() {
        let m = ModelState::<f32>::init(micro(1, 0.0)).unwrap();
        let b = MaskedBatch::from_rows(vec![MaskedRow { input: vec![5, 6], target: vec![0, 0], masked: vec![false, false] }]);
        assert!(matches!(m.loss_and_grads(&b, Mode::Eval), Err(Error::NoMaskedPositions(_))));
    }

    #[test]
    fn loss_scale_scales_gradients() {
        let m = ModelState::<f64>::init(micro(2, 0.1)).unwrap();
        let b = batch();
        let mode = Mode::Train { seed: 1, step: 4 };
        let (l1, g1) = m.loss_and_grads(&b, mode).unwrap();
        let (l2, g2) = m.loss_and_grads_scaled(&b, mode, 2.0).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for ((_, _, a), (_, _, b)) in g1.tensors().into_iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn dropout_is_train_only_and_seeded() {
        let m = ModelState::<f32>::init(micro(2, 0.3)).unwrap();
        let b = mask_batch(&vec![vec![5u32, 6, 7, 8, 9, 10, 11, 12, 13, 14]; 6], 20, 0, 0);
        let e1 = m.masked_nll(&b).unwrap();
        let e2 = m.forward_mlm(&b, Mode::Eval).unwrap().nll();
        assert_eq!(e1, e2);
        let t1 = m.forward_mlm(&b, Mode::Train { seed: 1, step: 0 }).unwrap().nll();
        let t2 = m.forward_mlm(&b, Mode::Train { seed: 1, step: 0 }).unwrap().nll();
        assert_eq!(t1, t2);
        assert_ne!(t1, e1);
    }
}
