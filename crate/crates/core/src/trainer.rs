//! Phase-wise training with early stopping on validation loss.

use std::collections::{BTreeMap, HashMap};

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, SentenceRecord};
use crate::curriculum::{
    make_competence_plan, make_label_plan, CompetenceParams, CompetencePlan, CurriculumPlan, Strategy,
};
use crate::difficulty::{DifficultyScore, Metric};
use crate::error::{Error, Result};
use crate::eval::{subset_report, EvalSet, PerplexityReport};
use crate::model::{mask_batch, MaskedBatch, Mode, ModelConfig, ModelState, Real};
use crate::rng;
use crate::stats::ResultRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub eval_every: u64,
    pub patience: usize,
    pub min_delta: f64,
    /// Per-phase cap on optimizer updates.
    pub max_steps: u64,
    /// Set per run; not part of the serialized settings.
    #[serde(skip)]
    pub seed: u64,
    pub reset_moments_between_phases: bool,
    /// Record every sampled id (for containment checks).
    #[serde(skip)]
    pub audit: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr: 1e-4,
            eval_every: 2000,
            patience: 5,
            min_delta: 1e-3,
            max_steps: 1_000_000,
            seed: 0,
            reset_moments_between_phases: true,
            audit: false,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("invalid learning rate {}", self.lr)));
        }
        if self.eval_every == 0 || self.patience == 0 {
            return Err(Error::config("eval_every and patience must be positive"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::config("min_delta must be non-negative"));
        }
        if self.max_steps < self.eval_every {
            return Err(Error::Training(format!(
                "max_steps {} is below eval_every {}: no validation evaluation would run",
                self.max_steps, self.eval_every
            )));
        }
        Ok(())
    }
}

/// What a phase may sample from.
#[derive(Debug, Clone, Copy)]
pub enum Eligible<'a> {
    Ids(&'a [u32]),
    Competence(&'a CompetencePlan),
}

impl Eligible<'_> {
    fn window(&self, t: u64) -> &[u32] {
        match self {
            Eligible::Ids(ids) => ids,
            Eligible::Competence(plan) => {
                // The offset-free schedule starts at zero competence; keep at
                // least the easiest sentence available.
                let n = plan.window_len(t).max(1).min(plan.sorted_ids.len());
                &plan.sorted_ids[..n]
            }
        }
    }

    fn curriculum_active(&self, t: u64) -> bool {
        matches!(self, Eligible::Competence(p) if t < p.params.duration)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub phase: usize,
    /// Phase-local step.
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub phase: usize,
    pub step: u64,
    pub window_len: usize,
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub name: String,
    pub updates: u64,
    pub best_step: u64,
    pub best_loss: f64,
    pub initial_loss: f64,
    pub evaluations: usize,
    pub stopped_early: bool,
}

/// Token ids by sentence id.
pub struct TrainData<'a> {
    by_id: HashMap<u32, &'a [u32]>,
}

impl<'a> TrainData<'a> {
    pub fn new(records: &'a [SentenceRecord]) -> Self {
        Self {
            by_id: records.iter().map(|r| (r.id, r.token_ids.as_slice())).collect(),
        }
    }

    fn rows(&self, ids: &[u32]) -> Result<Vec<&'a [u32]>> {
        ids.iter()
            .map(|id| self.by_id.get(id).copied().ok_or_else(|| Error::Training(format!("unknown sentence id {id}"))))
            .collect()
    }
}

/// A batch with at least one masked position; re-masks under a fresh
/// attempt key when the draw selects nothing.
fn masked_batch(rows: &[&[u32]], vocab: usize, seed: u64, step: u64) -> Result<MaskedBatch> {
    if rows.iter().all(|r| r.iter().all(|&id| id < 5)) {
        return Err(Error::NoMaskedPositions(" (batch has no maskable tokens)".into()));
    }
    for attempt in 0u64.. {
        let b = mask_batch(rows, vocab, rng::derive_seed(seed, &[attempt]), step);
        if b.masked_count() > 0 {
            return Ok(b);
        }
    }
    unreachable!()
}

/// Train until early stopping (or `max_steps`) and leave `state` at the
/// best validation checkpoint. `step_count` keeps counting every update
/// applied, including those after the best checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn train_phase<F: Real>(
    state: &mut ModelState<F>,
    data: &TrainData<'_>,
    eligible: Eligible<'_>,
    validation: &EvalSet,
    cfg: &TrainRunConfig,
    phase: usize,
    name: &str,
    trace: &mut Vec<EvalPoint>,
    audit: &mut Vec<AuditEntry>,
) -> Result<PhaseStats> {
    cfg.validate()?;
    if eligible.window(u64::MAX).is_empty() {
        return Err(Error::Training(format!("phase {name} has no eligible sentences")));
    }
    let vocab = state.config.vocab_size;
    let phase_key = phase as u64;
    let mask_seed = rng::derive_seed(cfg.seed, &[rng::TAG_MASK, phase_key]);
    let dropout_seed = rng::derive_seed(cfg.seed, &[rng::TAG_DROPOUT, phase_key]);

    let initial_loss = validation.mean_nll(state)?;
    trace.push(EvalPoint { phase, step: 0, loss: initial_loss });
    let mut best = (initial_loss, 0u64, state.clone());
    let mut evaluations = 1usize;
    let mut bad = 0usize;
    let mut stopped_early = false;
    let mut t = 0u64;

    while t < cfg.max_steps {
        let window = eligible.window(t);
        let mut r = rng::stream(cfg.seed, &[rng::TAG_SAMPLE, phase_key, t]);
        let ids: Vec<u32> = (0..cfg.batch_size).map(|_| window[r.gen_range(0..window.len())]).collect();
        if cfg.audit {
            audit.push(AuditEntry { phase, step: t, window_len: window.len(), ids: ids.clone() });
        }
        let batch = masked_batch(&data.rows(&ids)?, vocab, mask_seed, t)?;
        let (_, grads) = state.loss_and_grads(&batch, Mode::Train { seed: dropout_seed, step: t })?;
        state.optimizer_step(&grads, cfg.lr)?;
        t += 1;

        if t % cfg.eval_every == 0 || t == cfg.max_steps {
            let loss = validation.mean_nll(state)?;
            evaluations += 1;
            trace.push(EvalPoint { phase, step: t, loss });
            debug!("phase {name} step {t}: validation loss {loss:.5}");
            if loss < best.0 - cfg.min_delta {
                best = (loss, t, state.clone());
                bad = 0;
            } else if !eligible.curriculum_active(t) {
                bad += 1;
                if bad >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let step_count = state.step_count;
    *state = best.2;
    state.step_count = step_count;
    info!(
        "phase {name}: {t} updates, best loss {:.5} at step {} ({} evaluations)",
        best.0, best.1, evaluations
    );
    Ok(PhaseStats {
        name: name.to_string(),
        updates: t,
        best_step: best.1,
        best_loss: best.0,
        initial_loss,
        evaluations,
        stopped_early,
    })
}

/// Everything a run needs besides its configuration.
pub struct RunInputs<'a> {
    pub records: &'a [SentenceRecord],
    pub split: &'a CorpusSplit,
    pub scores: &'a BTreeMap<Metric, Vec<DifficultyScore>>,
    pub competence: CompetenceParams,
}

impl RunInputs<'_> {
    /// Evaluation mask seed shared by every run over this split.
    pub fn eval_mask_seed(&self) -> u64 {
        rng::derive_seed(self.split.split_seed, &[rng::TAG_MASK])
    }

    fn subset(&self, ids: &[u32]) -> Vec<&SentenceRecord> {
        let by_id: HashMap<u32, &SentenceRecord> = self.records.iter().map(|r| (r.id, r)).collect();
        ids.iter().filter_map(|id| by_id.get(id).copied()).collect()
    }
}

pub fn build_plan(strategy: Strategy, inputs: &RunInputs<'_>) -> Result<CurriculumPlan> {
    match strategy {
        Strategy::Label(s) => Ok(CurriculumPlan::Label(make_label_plan(s, inputs.records, inputs.split)?)),
        Strategy::Competence(metric) => {
            let scores = inputs
                .scores
                .get(&metric)
                .ok_or_else(|| Error::config(format!("no {metric} scores supplied")))?;
            Ok(CurriculumPlan::Competence(make_competence_plan(
                scores,
                &inputs.split.train,
                inputs.competence,
            )?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: String,
    pub seed: u64,
    pub total_updates: u64,
    pub phases: Vec<PhaseStats>,
    pub validation_trace: Vec<EvalPoint>,
    pub test: PerplexityReport,
}

impl RunResult {
    pub fn final_phase_updates(&self) -> u64 {
        self.phases.last().map_or(0, |p| p.updates)
    }

    pub fn row(&self) -> ResultRow {
        ResultRow {
            strategy: self.strategy.clone(),
            seed: self.seed,
            ppl: self.test.overall,
            sl_ppl: self.test.sl,
            el_ppl: self.test.el,
            total_updates: self.total_updates,
        }
    }
}

pub struct RunOutput<F: Real> {
    pub result: RunResult,
    pub state: ModelState<F>,
    pub plan: CurriculumPlan,
    pub audit: Vec<AuditEntry>,
}

/// Train one strategy from a fresh model seeded with `cfg.seed` and score
/// it on the test split.
pub fn run_strategy<F: Real>(
    strategy: Strategy,
    inputs: &RunInputs<'_>,
    model: &ModelConfig,
    cfg: &TrainRunConfig,
) -> Result<RunOutput<F>> {
    cfg.validate()?;
    let plan = build_plan(strategy, inputs)?;
    let mut state = ModelState::<F>::init(ModelConfig { seed: cfg.seed, ..model.clone() })?;
    let start = state.step_count;
    let data = TrainData::new(inputs.records);
    let mask_seed = inputs.eval_mask_seed();
    let validation = EvalSet::build(inputs.subset(&inputs.split.validation), model.vocab_size, mask_seed);
    if validation.masked_count() == 0 {
        return Err(Error::NoMaskedPositions(" in the validation split".into()));
    }

    let mut trace = Vec::new();
    let mut audit = Vec::new();
    let mut phases = Vec::new();
    match &plan {
        CurriculumPlan::Label(lp) => {
            for (i, ph) in lp.phases.iter().enumerate() {
                if i > 0 && cfg.reset_moments_between_phases {
                    state.reset_optimizer();
                }
                phases.push(train_phase(
                    &mut state,
                    &data,
                    Eligible::Ids(&ph.ids),
                    &validation,
                    cfg,
                    i,
                    &ph.name,
                    &mut trace,
                    &mut audit,
                )?);
            }
        }
        CurriculumPlan::Competence(cp) => {
            phases.push(train_phase(
                &mut state,
                &data,
                Eligible::Competence(cp),
                &validation,
                cfg,
                0,
                cp.metric.name(),
                &mut trace,
                &mut audit,
            )?);
        }
    }

    let test = subset_report(&state, &inputs.subset(&inputs.split.test), mask_seed)?;
    let total_updates = phases.iter().map(|p| p.updates).sum();
    debug_assert_eq!(total_updates, state.step_count - start);
    Ok(RunOutput {
        result: RunResult {
            strategy: strategy.name().to_string(),
            seed: cfg.seed,
            total_updates,
            phases,
            validation_trace: trace,
            test,
        },
        state,
        plan,
        audit,
    })
}
