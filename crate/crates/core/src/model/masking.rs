//! BERT-style masking: each non-special token is selected with
//! probability 0.15; a selected token becomes `[MASK]` 80% of the time, a
//! uniformly drawn non-special token 10% of the time, and stays unchanged
//! otherwise.

use rand::Rng;

use crate::corpus::{SpecialId, Vocabulary};
use crate::rng;

pub const MASK_PROB: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedRow {
    pub input: Vec<u32>,
    /// Original token where `masked`, PAD elsewhere.
    pub target: Vec<u32>,
    pub masked: Vec<bool>,
}

/// A padded `batch x seq_len` block stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub batch: usize,
    pub seq_len: usize,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub mask_positions: Vec<bool>,
    pub attention_mask: Vec<bool>,
}

impl MaskedBatch {
    pub fn from_rows(rows: Vec<MaskedRow>) -> Self {
        let seq_len = rows.iter().map(|r| r.input.len()).max().unwrap_or(0);
        let pad = SpecialId::Pad.id();
        let mut b = MaskedBatch {
            batch: rows.len(),
            seq_len,
            input_ids: Vec::with_capacity(rows.len() * seq_len),
            target_ids: Vec::with_capacity(rows.len() * seq_len),
            mask_positions: Vec::with_capacity(rows.len() * seq_len),
            attention_mask: Vec::with_capacity(rows.len() * seq_len),
        };
        for r in rows {
            let extra = seq_len - r.input.len();
            b.attention_mask.extend(r.input.iter().map(|&t| t != pad));
            b.attention_mask.extend(std::iter::repeat_n(false, extra));
            b.input_ids.extend(r.input);
            b.input_ids.extend(std::iter::repeat_n(pad, extra));
            b.target_ids.extend(r.target);
            b.target_ids.extend(std::iter::repeat_n(pad, extra));
            b.mask_positions.extend(r.masked);
            b.mask_positions.extend(std::iter::repeat_n(false, extra));
        }
        b
    }

    pub fn masked_count(&self) -> usize {
        self.mask_positions.iter().filter(|&&m| m).count()
    }

    pub(crate) fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i * self.seq_len..(i + 1) * self.seq_len
    }

    /// Reorder rows; `order[k]` is the source row of output row `k`.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        let mut out = MaskedBatch {
            batch: order.len(),
            seq_len: self.seq_len,
            input_ids: vec![],
            target_ids: vec![],
            mask_positions: vec![],
            attention_mask: vec![],
        };
        for &i in order {
            let r = self.row_range(i);
            out.input_ids.extend_from_slice(&self.input_ids[r.clone()]);
            out.target_ids.extend_from_slice(&self.target_ids[r.clone()]);
            out.mask_positions.extend_from_slice(&self.mask_positions[r.clone()]);
            out.attention_mask.extend_from_slice(&self.attention_mask[r]);
        }
        out
    }

    /// Append `extra` PAD columns to every row.
    pub fn padded(&self, extra: usize) -> Self {
        let rows = (0..self.batch)
            .map(|i| {
                let r = self.row_range(i);
                let mut row = MaskedRow {
                    input: self.input_ids[r.clone()].to_vec(),
                    target: self.target_ids[r.clone()].to_vec(),
                    masked: self.mask_positions[r].to_vec(),
                };
                row.input.extend(std::iter::repeat_n(SpecialId::Pad.id(), extra));
                row.target.extend(std::iter::repeat_n(SpecialId::Pad.id(), extra));
                row.masked.extend(std::iter::repeat_n(false, extra));
                row
            })
            .collect();
        MaskedBatch::from_rows(rows)
    }
}

pub fn mask_sentence<R: Rng>(ids: &[u32], vocab_size: usize, rng: &mut R) -> MaskedRow {
    let first_regular = SpecialId::COUNT;
    let mut row = MaskedRow {
        input: ids.to_vec(),
        target: vec![SpecialId::Pad.id(); ids.len()],
        masked: vec![false; ids.len()],
    };
    for (i, &tok) in ids.iter().enumerate() {
        if Vocabulary::is_special(tok) {
            continue;
        }
        if rng.gen::<f64>() >= MASK_PROB {
            continue;
        }
        row.masked[i] = true;
        row.target[i] = tok;
        let r: f64 = rng.gen();
        if r < 0.8 {
            row.input[i] = SpecialId::Mask.id();
        } else if r < 0.9 && (vocab_size as u32) > first_regular {
            row.input[i] = rng.gen_range(first_regular..vocab_size as u32);
        }
    }
    row
}

pub fn mask_rows<R: Rng, S: AsRef<[u32]>>(rows: &[S], vocab_size: usize, rng: &mut R) -> MaskedBatch {
    MaskedBatch::from_rows(
        rows.iter()
            .map(|r| mask_sentence(r.as_ref(), vocab_size, rng))
            .collect(),
    )
}

/// Mask a batch of token-id rows; deterministic in `(seed, step)`.
pub fn mask_batch<S: AsRef<[u32]>>(rows: &[S], vocab_size: usize, seed: u64, step: u64) -> MaskedBatch {
    let mut rng = rng::stream(seed, &[rng::TAG_MASK, step]);
    mask_rows(rows, vocab_size, &mut rng)
}
