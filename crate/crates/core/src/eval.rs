//! Held-out perplexity under a fixed evaluation mask, plus the corpus
//! analytics (vocabulary overlap, difficulty histograms).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, SentenceRecord};
use crate::error::{Error, Result};
use crate::model::{mask_sentence, MaskedBatch, MaskedRow, ModelState, Real};
use crate::rng;

/// Anything that can score masked targets. Implemented by the model and by
/// test doubles with hand-set probabilities.
pub trait MaskedScorer {
    fn vocab_size(&self) -> usize;
    fn masked_nll(&self, batch: &MaskedBatch) -> Result<Vec<f64>>;
}

impl<F: Real> MaskedScorer for ModelState<F> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn masked_nll(&self, batch: &MaskedBatch) -> Result<Vec<f64>> {
        ModelState::masked_nll(self, batch)
    }
}

const EVAL_STREAM: u64 = 0x6576616c;
const EVAL_BATCH: usize = 32;

/// Mask for one held-out sentence; depends only on `(seed, sentence_id)`,
/// never on batching or the order sentences are visited in.
pub fn eval_mask(token_ids: &[u32], vocab_size: usize, seed: u64, sentence_id: u32) -> MaskedRow {
    let mut r = rng::stream(seed, &[rng::TAG_MASK, EVAL_STREAM, u64::from(sentence_id)]);
    mask_sentence(token_ids, vocab_size, &mut r)
}

/// A held-out split with its evaluation masks drawn once.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub seed: u64,
    entries: Vec<(u32, Label, MaskedRow)>,
}

impl EvalSet {
    pub fn build<'a, I>(records: I, vocab_size: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = &'a SentenceRecord>,
    {
        let entries = records
            .into_iter()
            .map(|r| (r.id, r.label, eval_mask(&r.token_ids, vocab_size, seed, r.id)))
            .collect();
        Self { seed, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.entries.iter().map(|(_, _, r)| r.masked.iter().filter(|&&m| m).count()).sum()
    }

    /// Per-masked-position NLL tagged with the sentence label, in entry order.
    pub fn score<S: MaskedScorer + ?Sized>(&self, scorer: &S) -> Result<Vec<(Label, f64)>> {
        let mut out = Vec::with_capacity(self.masked_count());
        for chunk in self.entries.chunks(EVAL_BATCH) {
            let batch = MaskedBatch::from_rows(chunk.iter().map(|(_, _, r)| r.clone()).collect());
            let nll = scorer.masked_nll(&batch)?;
            let mut it = nll.into_iter();
            for (_, label, row) in chunk {
                for _ in row.masked.iter().filter(|&&m| m) {
                    let v = it.next().ok_or_else(|| Error::Shape("scorer returned too few values".into()))?;
                    out.push((*label, v));
                }
            }
            if it.next().is_some() {
                return Err(Error::Shape("scorer returned too many values".into()));
            }
        }
        Ok(out)
    }

    /// Mean NLL over every masked position.
    pub fn mean_nll<S: MaskedScorer + ?Sized>(&self, scorer: &S) -> Result<f64> {
        let scored = self.score(scorer)?;
        if scored.is_empty() {
            return Err(Error::NoMaskedPositions(" in evaluation set".into()));
        }
        Ok(scored.iter().map(|(_, v)| v).sum::<f64>() / scored.len() as f64)
    }
}

/// `exp(mean NLL)`.
pub fn perplexity_from_nll(nll: &[f64]) -> Result<f64> {
    if nll.is_empty() {
        return Err(Error::NoMaskedPositions(String::new()));
    }
    Ok((nll.iter().sum::<f64>() / nll.len() as f64).exp())
}

/// Perplexity of `sentences` under the fixed evaluation mask, with the
/// number of masked positions it was computed over.
pub fn perplexity<S: MaskedScorer + ?Sized>(
    scorer: &S,
    sentences: &[&SentenceRecord],
    eval_mask_seed: u64,
) -> Result<(f64, usize)> {
    let set = EvalSet::build(sentences.iter().copied(), scorer.vocab_size(), eval_mask_seed);
    let nll: Vec<f64> = set.score(scorer)?.into_iter().map(|(_, v)| v).collect();
    Ok((perplexity_from_nll(&nll)?, nll.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetNll {
    pub nll_sum: f64,
    pub count: usize,
}

impl SubsetNll {
    pub fn perplexity(&self) -> f64 {
        (self.nll_sum / self.count as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub overall: f64,
    pub sl: f64,
    pub el: f64,
    pub sl_nll: SubsetNll,
    pub el_nll: SubsetNll,
    pub eval_mask_seed: u64,
}

impl PerplexityReport {
    pub fn from_scored(scored: &[(Label, f64)], eval_mask_seed: u64) -> Result<Self> {
        let mut sub = BTreeMap::new();
        for label in Label::ALL {
            sub.insert(label, SubsetNll { nll_sum: 0.0, count: 0 });
        }
        for &(label, v) in scored {
            let s = sub.get_mut(&label).expect("both labels present");
            s.nll_sum += v;
            s.count += 1;
        }
        for (label, s) in &sub {
            if s.count == 0 {
                return Err(Error::NoMaskedPositions(format!(" in the {label} subset")));
            }
        }
        let (sl, el) = (sub[&Label::SL], sub[&Label::EL]);
        let overall = ((sl.nll_sum + el.nll_sum) / (sl.count + el.count) as f64).exp();
        Ok(Self {
            overall,
            sl: sl.perplexity(),
            el: el.perplexity(),
            sl_nll: sl,
            el_nll: el,
            eval_mask_seed,
        })
    }

    /// `n_SL ln ppl_SL + n_EL ln ppl_EL - (n_SL + n_EL) ln ppl`, which is
    /// zero up to rounding.
    pub fn pooling_residual(&self) -> f64 {
        let n_sl = self.sl_nll.count as f64;
        let n_el = self.el_nll.count as f64;
        n_sl * self.sl.ln() + n_el * self.el.ln() - (n_sl + n_el) * self.overall.ln()
    }

    pub fn get(&self, metric: crate::stats::PplMetric) -> f64 {
        use crate::stats::PplMetric;
        match metric {
            PplMetric::Ppl => self.overall,
            PplMetric::SlPpl => self.sl,
            PplMetric::ElPpl => self.el,
        }
    }
}

/// Overall, SL and EL perplexity over a held-out split with one shared mask.
pub fn subset_report<S: MaskedScorer + ?Sized>(
    scorer: &S,
    sentences: &[&SentenceRecord],
    eval_mask_seed: u64,
) -> Result<PerplexityReport> {
    let set = EvalSet::build(sentences.iter().copied(), scorer.vocab_size(), eval_mask_seed);
    PerplexityReport::from_scored(&set.score(scorer)?, eval_mask_seed)
}

/// Percentage overlap of word types: cell `[a][b]` is
/// `|types(a) ∩ types(b)| / |types(b)|`, rows and columns ordered SL, EL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub labels: [Label; 2],
    pub percent: [[f64; 2]; 2],
    pub types: [usize; 2],
}

pub fn vocab_overlap(records: &[SentenceRecord]) -> Result<OverlapMatrix> {
    let mut types: [BTreeSet<&str>; 2] = Default::default();
    for r in records {
        let slot = match r.label {
            Label::SL => 0,
            Label::EL => 1,
        };
        types[slot].extend(r.words.iter().map(String::as_str));
    }
    for (i, t) in types.iter().enumerate() {
        if t.is_empty() {
            return Err(Error::Stats(format!("class {} has no word types", Label::ALL[i])));
        }
    }
    let mut percent = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let shared = types[a].intersection(&types[b]).count();
            percent[a][b] = 100.0 * shared as f64 / types[b].len() as f64;
        }
    }
    Ok(OverlapMatrix {
        labels: Label::ALL,
        percent,
        types: [types[0].len(), types[1].len()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub metric: String,
    /// `bins + 1` shared edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: BTreeMap<Label, Vec<u64>>,
}

impl Histograms {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "metric,class,bin_lo,bin_hi,count")?;
        for (label, counts) in &self.counts {
            for (i, c) in counts.iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", self.metric, label, self.edges[i], self.edges[i + 1], c)?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Equal-width bins over `[lo, hi]`, shared by every class.
pub fn histograms_in_range(
    metric: &str,
    scores: &BTreeMap<Label, Vec<f64>>,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Histograms> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::config(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = BTreeMap::new();
    for (label, values) in scores {
        let mut c = vec![0u64; bins];
        for &v in values {
            if !(lo..=hi).contains(&v) {
                return Err(Error::config(format!("value {v} outside histogram range")));
            }
            let i = (((v - lo) / width).floor() as usize).min(bins - 1);
            c[i] += 1;
        }
        counts.insert(*label, c);
    }
    Ok(Histograms {
        metric: metric.to_string(),
        edges,
        counts,
    })
}

/// Histograms over the pooled min-max range. Degenerate input (fewer than
/// two distinct values) collapses to a single bin.
pub fn difficulty_histograms(metric: &str, scores: &BTreeMap<Label, Vec<f64>>, bins: usize) -> Result<Histograms> {
    let all = || scores.values().flatten().copied();
    let lo = all().fold(f64::INFINITY, f64::min);
    let hi = all().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        warn!("{metric}: fewer than two distinct values, using a single bin");
        let v = if lo.is_finite() { lo } else { 0.0 };
        let counts = scores.iter().map(|(l, vals)| (*l, vec![vals.len() as u64])).collect();
        return Ok(Histograms {
            metric: metric.to_string(),
            edges: vec![v, v],
            counts,
        });
    }
    histograms_in_range(metric, scores, bins, lo, hi)
}
