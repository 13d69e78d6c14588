//! End-to-end experiment driver: configuration, staged artifacts on disk,
//! cached per-run manifests, and the aggregated tables.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_vocab, corpus_stats, ingest, read_records_tsv, read_vocab_tsv, split, write_records_tsv,
    write_vocab_tsv, ClassSource, CorpusSplit, CorpusStats, IngestConfig, IngestIssue, Label, SentenceRecord,
    SplitRatios, Vocabulary,
};
use crate::curriculum::{CompetenceParams, CurriculumPlan, Strategy};
use crate::difficulty::{
    read_scores_tsv, score_corpus, write_scores_tsv, DifficultyScore, Metric, RarityNormalizer, ScoringContext,
};
use crate::error::{Error, Result};
use crate::eval::{difficulty_histograms, subset_report, vocab_overlap, OverlapMatrix, PerplexityReport};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelState};
use crate::stats::{
    compare_runs, default_comparisons, render_aligned, CompareConfig, Comparison, ResultRow,
    SignificanceReport,
};
use crate::synth::{generate, SynthConfig};
use crate::trainer::{build_plan, run_strategy, RunInputs, RunResult, TrainRunConfig};

pub const CONFIG_VERSION: u32 = 1;
const METRICS: [Metric; 4] = [Metric::Length, Metric::WordRarity, Metric::Fre, Metric::Random];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// One file or directory per class.
    Files { sl: PathBuf, el: PathBuf },
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabSettings {
    pub cutoff: u64,
    pub cap: usize,
}

impl Default for VocabSettings {
    fn default() -> Self {
        Self { cutoff: 2, cap: 16_384 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSettings {
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self { ratios: SplitRatios::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DifficultySettings {
    pub rarity_normalizer: RarityNormalizer,
    pub random_seed: u64,
}

impl Default for DifficultySettings {
    fn default() -> Self {
        Self { rarity_normalizer: RarityNormalizer::Tokens, random_seed: 0 }
    }
}

/// Model shape; the vocabulary size comes from the corpus and the seed from
/// the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            layers: d.layers,
            hidden: d.hidden,
            heads: d.heads,
            ffn: d.ffn,
            max_len: d.max_len,
            dropout: d.dropout,
        }
    }
}

impl ModelSettings {
    pub fn resolve(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn: self.ffn,
            vocab_size,
            max_len: self.max_len,
            dropout: self.dropout,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticsSettings {
    pub histogram_bins: usize,
}

impl Default for AnalyticsSettings {
    fn default() -> Self {
        Self { histogram_bins: 20 }
    }
}

fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    (0..15).collect()
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub vocab: VocabSettings,
    #[serde(default)]
    pub split: SplitSettings,
    #[serde(default)]
    pub difficulty: DifficultySettings,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub curriculum: CompetenceParams,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub training: TrainRunConfig,
    /// Defaults to every standard comparison whose strategies are all run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparisons: Option<Vec<Comparison>>,
    #[serde(default)]
    pub stats: CompareConfig,
    #[serde(default)]
    pub analytics: AnalyticsSettings,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parse and validate; relative paths resolve against the config file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let CorpusSource::Files { sl, el } = &mut cfg.corpus {
            resolve(sl);
            resolve(el);
        }
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::config(format!("seed {s} listed twice")));
        }
        if self.strategies.is_empty() {
            return Err(Error::config("strategy list is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.strategies.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::config(format!("strategy {s} listed twice")));
        }
        if let Some(cs) = &self.comparisons {
            for c in cs {
                for name in [&c.treatment, &c.control] {
                    let st: Strategy = name.parse()?;
                    if !self.strategies.contains(&st) {
                        return Err(Error::config(format!(
                            "comparison {} uses strategy {name}, which is not in the strategy list",
                            c.name
                        )));
                    }
                }
            }
        }
        if self.parallelism == 0 {
            return Err(Error::config("parallelism must be at least 1"));
        }
        if self.vocab.cap < crate::corpus::SpecialId::COUNT as usize {
            return Err(Error::config("vocabulary cap is smaller than the special tokens"));
        }
        if self.ingest.max_tokens > self.model.max_len {
            return Err(Error::config(format!(
                "ingest.max_tokens {} exceeds model.max_len {}",
                self.ingest.max_tokens, self.model.max_len
            )));
        }
        self.split.ratios.validate()?;
        self.curriculum.validate()?;
        self.training.validate()?;
        self.model.resolve(16, 0).validate()?;
        Ok(())
    }

    /// Restrict or replace the strategy and seed lists, then re-validate.
    pub fn with_overrides(mut self, strategies: Option<Vec<Strategy>>, seeds: Option<Vec<u64>>) -> Result<Self> {
        if let Some(s) = strategies {
            self.strategies = s;
        }
        if let Some(s) = seeds {
            self.seeds = s;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn comparisons(&self) -> Vec<Comparison> {
        match &self.comparisons {
            Some(c) => c.clone(),
            None => default_comparisons()
                .into_iter()
                .filter(|c| {
                    [&c.treatment, &c.control]
                        .iter()
                        .all(|n| self.strategies.iter().any(|s| s.name() == n.as_str()))
                })
                .collect(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn hash_inputs(path: &Path, hasher: &mut Sha256) -> Result<()> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for f in files {
            hasher.update(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            hasher.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
        }
    } else {
        hasher.update(fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CorpusFingerprint {
    input_key: String,
    corpus_hash: String,
}

/// Ingested, encoded and split corpus.
#[derive(Debug, Clone)]
pub struct CorpusArtifacts {
    pub records: Vec<SentenceRecord>,
    pub vocab: Vocabulary,
    pub split: CorpusSplit,
    pub stats: CorpusStats,
    /// Hash over the record table, vocabulary and split files.
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub key: String,
    pub strategy: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub training: TrainRunConfig,
    pub curriculum: CompetenceParams,
    pub difficulty: DifficultySettings,
    pub corpus_hash: String,
    pub plan: CurriculumPlan,
    pub result: RunResult,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainSummary {
    pub trained: Vec<(String, u64)>,
    pub cached: Vec<(String, u64)>,
    pub failed: Vec<(String, u64, String)>,
}

impl TrainSummary {
    pub fn complete(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: String,
    pub n: usize,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

pub const AGGREGATE_COLUMNS: [&str; 5] = ["PPL", "SL_PPL", "EL_PPL", "updates", "final_phase_updates"];

/// Sample mean and standard deviation (n - 1 denominator; zero for n = 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub struct Experiment {
    pub config: ExperimentConfig,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    pub fn manifest_path(&self, strategy: Strategy, seed: u64) -> PathBuf {
        self.path(&format!("runs/{}/seed-{seed}.json", strategy.name()))
    }

    pub fn checkpoint_path(&self, strategy: Strategy, seed: u64) -> PathBuf {
        self.path(&format!("runs/{}/seed-{seed}.ckpt", strategy.name()))
    }

    fn sources(&self) -> Result<Vec<ClassSource>> {
        let (sl, el) = match &self.config.corpus {
            CorpusSource::Files { sl, el } => (sl.clone(), el.clone()),
            CorpusSource::Synthetic(s) => {
                let c = generate(s)?;
                let sl = self.path("corpus/synthetic/sl.txt");
                let el = self.path("corpus/synthetic/el.txt");
                write_text(&sl, &c.sl)?;
                write_text(&el, &c.el)?;
                (sl, el)
            }
        };
        for p in [&sl, &el] {
            if !p.exists() {
                return Err(Error::config(format!("corpus input {} does not exist", p.display())));
            }
        }
        Ok(vec![
            ClassSource { label: Label::SL.to_string(), path: sl },
            ClassSource { label: Label::EL.to_string(), path: el },
        ])
    }

    fn input_key(&self, sources: &[ClassSource]) -> Result<String> {
        let mut h = Sha256::new();
        let c = &self.config;
        h.update(serde_json::to_vec(&(&c.ingest, &c.vocab, &c.split))?);
        for s in sources {
            h.update(s.label.as_bytes());
            hash_inputs(&s.path, &mut h)?;
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Ingest, build the vocabulary and split, unless the artifacts on disk
    /// already match the inputs.
    pub fn ingest(&self) -> Result<CorpusArtifacts> {
        let sources = self.sources()?;
        let key = self.input_key(&sources)?;
        let fp_path = self.path("corpus/fingerprint.json");
        if let Ok(fp) = read_json::<CorpusFingerprint>(&fp_path) {
            if fp.input_key == key {
                if let Ok(a) = self.load_corpus() {
                    if a.hash == fp.corpus_hash {
                        info!("corpus artifacts up to date");
                        return Ok(a);
                    }
                }
            }
        }
        let c = &self.config;
        let ingested = ingest(&sources, &c.ingest)?;
        for issue in &ingested.issues {
            warn!("{}:{}: {}", issue.source, issue.line, issue.message);
        }
        let mut records = ingested.records;
        for label in Label::ALL {
            if !records.iter().any(|r| r.label == label) {
                return Err(Error::config(format!("corpus has no {label} sentences")));
            }
        }
        let vocab = build_vocab(&records, c.vocab.cutoff, c.vocab.cap)?;
        vocab.assign_ids(&mut records);
        let split = split(&records, c.split.ratios, c.split.seed)?;
        let stats = corpus_stats(&records);

        fs::create_dir_all(self.path("corpus")).map_err(|e| Error::io(self.out(), e))?;
        write_records_tsv(&self.path("corpus/records.tsv"), &records)?;
        write_vocab_tsv(&self.path("corpus/vocab.tsv"), &vocab)?;
        write_json(&self.path("corpus/split.json"), &split)?;
        write_json(&self.path("corpus/stats.json"), &stats)?;
        write_json(&self.path("corpus/issues.json"), &ingested.issues as &Vec<IngestIssue>)?;
        let hash = self.corpus_hash()?;
        write_json(&fp_path, &CorpusFingerprint { input_key: key, corpus_hash: hash.clone() })?;
        info!(
            "ingested {} sentences ({} SL, {} EL), vocabulary {}",
            records.len(),
            stats.sl.sentences,
            stats.el.sentences,
            vocab.len()
        );
        Ok(CorpusArtifacts { records, vocab, split, stats, hash })
    }

    fn corpus_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for f in ["corpus/records.tsv", "corpus/vocab.tsv", "corpus/split.json"] {
            let p = self.path(f);
            h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn load_corpus(&self) -> Result<CorpusArtifacts> {
        let records = read_records_tsv(&self.path("corpus/records.tsv"))?;
        let vocab = read_vocab_tsv(&self.path("corpus/vocab.tsv"))?;
        let split: CorpusSplit = read_json(&self.path("corpus/split.json"))?;
        let stats = corpus_stats(&records);
        Ok(CorpusArtifacts { records, vocab, split, stats, hash: self.corpus_hash()? })
    }

    fn corpus(&self) -> Result<CorpusArtifacts> {
        if self.path("corpus/fingerprint.json").exists() {
            self.load_corpus()
        } else {
            self.ingest()
        }
    }

    /// Score every sentence under every metric.
    pub fn score(&self, corpus: &CorpusArtifacts) -> Result<BTreeMap<Metric, Vec<DifficultyScore>>> {
        let ctx = ScoringContext {
            vocab: &corpus.vocab,
            normalizer: self.config.difficulty.rarity_normalizer,
            seed: self.config.difficulty.random_seed,
        };
        let mut out = BTreeMap::new();
        for m in METRICS {
            let scores = score_corpus(&corpus.records, m, &ctx)?;
            fs::create_dir_all(self.path("scores")).map_err(|e| Error::io(self.out(), e))?;
            write_scores_tsv(&self.path(&format!("scores/{}.tsv", m.name())), &scores)?;
            out.insert(m, scores);
        }
        Ok(out)
    }

    pub fn load_scores(&self) -> Result<BTreeMap<Metric, Vec<DifficultyScore>>> {
        METRICS
            .iter()
            .map(|&m| Ok((m, read_scores_tsv(&self.path(&format!("scores/{}.tsv", m.name())))?)))
            .collect()
    }

    fn scores(&self, corpus: &CorpusArtifacts) -> Result<BTreeMap<Metric, Vec<DifficultyScore>>> {
        match self.load_scores() {
            Ok(s) if s.values().all(|v| v.len() == corpus.records.len()) => Ok(s),
            _ => self.score(corpus),
        }
    }

    fn inputs<'a>(&self, corpus: &'a CorpusArtifacts, scores: &'a BTreeMap<Metric, Vec<DifficultyScore>>) -> RunInputs<'a> {
        RunInputs {
            records: &corpus.records,
            split: &corpus.split,
            scores,
            competence: self.config.curriculum,
        }
    }

    /// Write every strategy's plan to `plans/`.
    pub fn plan(&self, corpus: &CorpusArtifacts, scores: &BTreeMap<Metric, Vec<DifficultyScore>>) -> Result<()> {
        let inputs = self.inputs(corpus, scores);
        for &s in &self.config.strategies {
            write_json(&self.path(&format!("plans/{}.json", s.name())), &build_plan(s, &inputs)?)?;
        }
        Ok(())
    }

    fn cell_key(&self, strategy: Strategy, seed: u64, corpus_hash: &str, vocab_size: usize) -> Result<String> {
        let c = &self.config;
        json_hash(&(
            CONFIG_VERSION,
            strategy.name(),
            seed,
            c.model.resolve(vocab_size, seed),
            &c.training,
            c.curriculum,
            &c.difficulty,
            corpus_hash,
        ))
    }

    fn cached(&self, strategy: Strategy, seed: u64, key: &str) -> bool {
        read_json::<RunManifest>(&self.manifest_path(strategy, seed)).is_ok_and(|m| m.key == key)
            && self.checkpoint_path(strategy, seed).exists()
    }

    fn train_cell(
        &self,
        strategy: Strategy,
        seed: u64,
        key: String,
        corpus: &CorpusArtifacts,
        scores: &BTreeMap<Metric, Vec<DifficultyScore>>,
    ) -> Result<()> {
        let inputs = self.inputs(corpus, scores);
        let model = self.config.model.resolve(corpus.vocab.len(), seed);
        let cfg = TrainRunConfig { seed, audit: false, ..self.config.training.clone() };
        let out = run_strategy::<f32>(strategy, &inputs, &model, &cfg)?;
        let ckpt = self.checkpoint_path(strategy, seed);
        if let Some(dir) = ckpt.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        save_checkpoint(&ckpt, &out.state)?;
        let manifest = RunManifest {
            key,
            strategy: strategy.name().to_string(),
            seed,
            model,
            training: self.config.training.clone(),
            curriculum: self.config.curriculum,
            difficulty: self.config.difficulty.clone(),
            corpus_hash: corpus.hash.clone(),
            plan: out.plan,
            result: out.result,
        };
        write_json(&self.manifest_path(strategy, seed), &manifest)
    }

    /// Train every (strategy, seed) cell not already cached, on up to
    /// `parallelism` worker threads. Failures are collected, not fatal.
    pub fn train(&self) -> Result<TrainSummary> {
        let corpus = self.corpus()?;
        let scores = self.scores(&corpus)?;
        let mut summary = TrainSummary::default();
        let mut todo = Vec::new();
        for &s in &self.config.strategies {
            for &seed in &self.config.seeds {
                let key = self.cell_key(s, seed, &corpus.hash, corpus.vocab.len())?;
                if self.cached(s, seed, &key) {
                    summary.cached.push((s.name().to_string(), seed));
                } else {
                    todo.push((s, seed, key));
                }
            }
        }
        info!("{} runs cached, {} to train", summary.cached.len(), todo.len());
        let queue = Mutex::new(todo.into_iter());
        let done = Mutex::new(Vec::new());
        let workers = self.config.parallelism.max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let Some((s, seed, key)) = queue.lock().expect("queue lock").next() else {
                        break;
                    };
                    info!("training {s} seed {seed}");
                    let r = self.train_cell(s, seed, key, &corpus, &scores);
                    if let Err(e) = &r {
                        warn!("{s} seed {seed} failed: {e}");
                    }
                    done.lock().expect("result lock").push((s, seed, r.err().map(|e| e.to_string())));
                });
            }
        });
        let mut done = done.into_inner().expect("result lock");
        done.sort_by_key(|(s, seed, _)| (*s, *seed));
        for (s, seed, err) in done {
            match err {
                None => summary.trained.push((s.name().to_string(), seed)),
                Some(e) => summary.failed.push((s.name().to_string(), seed, e)),
            }
        }
        Ok(summary)
    }

    /// Read every configured cell's manifest from disk.
    pub fn load_manifests(&self) -> Result<Vec<RunManifest>> {
        let mut out = Vec::new();
        let mut missing = Vec::new();
        for &s in &self.config.strategies {
            for &seed in &self.config.seeds {
                match read_json::<RunManifest>(&self.manifest_path(s, seed)) {
                    Ok(m) => out.push(m),
                    Err(_) => missing.push(format!("{s}/seed-{seed}")),
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::config(format!("missing run manifests: {}", missing.join(", "))));
        }
        Ok(out)
    }

    /// Re-score every checkpoint on the test split and write the reports
    /// next to the manifests, plus the corpus analytics.
    pub fn evaluate(&self) -> Result<Vec<(String, u64, PerplexityReport)>> {
        let corpus = self.corpus()?;
        let scores = self.scores(&corpus)?;
        self.analytics(&corpus, &scores)?;
        let inputs = self.inputs(&corpus, &scores);
        let by_id: BTreeMap<u32, &SentenceRecord> = corpus.records.iter().map(|r| (r.id, r)).collect();
        let test: Vec<&SentenceRecord> = corpus.split.test.iter().map(|id| by_id[id]).collect();
        let mut out = Vec::new();
        for &s in &self.config.strategies {
            for &seed in &self.config.seeds {
                let state: ModelState<f32> = load_checkpoint(&self.checkpoint_path(s, seed))?;
                let report = subset_report(&state, &test, inputs.eval_mask_seed())?;
                let manifest: RunManifest = read_json(&self.manifest_path(s, seed))?;
                if manifest.result.test != report {
                    warn!("{s} seed {seed}: re-evaluation differs from the manifest");
                }
                write_json(&self.path(&format!("runs/{}/seed-{seed}.eval.json", s.name())), &report)?;
                out.push((s.name().to_string(), seed, report));
            }
        }
        Ok(out)
    }

    /// Vocabulary overlap and per-metric difficulty histograms.
    pub fn analytics(&self, corpus: &CorpusArtifacts, scores: &BTreeMap<Metric, Vec<DifficultyScore>>) -> Result<OverlapMatrix> {
        let overlap = vocab_overlap(&corpus.records)?;
        write_json(&self.path("analytics/overlap.json"), &overlap)?;
        write_text(&self.path("analytics/overlap.txt"), &overlap_text(&overlap))?;
        write_json(&self.path("analytics/corpus_stats.json"), &corpus.stats)?;
        let label: BTreeMap<u32, Label> = corpus.records.iter().map(|r| (r.id, r.label)).collect();
        for (m, s) in scores {
            let mut by_class: BTreeMap<Label, Vec<f64>> = BTreeMap::new();
            for sc in s {
                by_class.entry(label[&sc.sentence_id]).or_default().push(sc.value);
            }
            let h = difficulty_histograms(m.name(), &by_class, self.config.analytics.histogram_bins)?;
            fs::create_dir_all(self.path("analytics/histograms")).map_err(|e| Error::io(self.out(), e))?;
            h.save_csv(&self.path(&format!("analytics/histograms/{}.csv", m.name())))?;
        }
        Ok(overlap)
    }

    pub fn rows(manifests: &[RunManifest]) -> Vec<ResultRow> {
        manifests.iter().map(|m| m.result.row()).collect()
    }

    pub fn aggregate(&self, manifests: &[RunManifest]) -> Vec<Aggregate> {
        self.config
            .strategies
            .iter()
            .map(|s| {
                let runs: Vec<&RunResult> = manifests.iter().filter(|m| m.strategy == s.name()).map(|m| &m.result).collect();
                let column = |c: &str| -> Vec<f64> {
                    runs.iter()
                        .map(|r| match c {
                            "PPL" => r.test.overall,
                            "SL_PPL" => r.test.sl,
                            "EL_PPL" => r.test.el,
                            "updates" => r.total_updates as f64,
                            _ => r.final_phase_updates() as f64,
                        })
                        .collect()
                };
                let (mut mean, mut std) = (BTreeMap::new(), BTreeMap::new());
                for c in AGGREGATE_COLUMNS {
                    let (m, sd) = mean_std(&column(c));
                    mean.insert(c.to_string(), m);
                    std.insert(c.to_string(), sd);
                }
                Aggregate { strategy: s.name().to_string(), n: runs.len(), mean, std }
            })
            .collect()
    }

    pub fn compare(&self, manifests: &[RunManifest]) -> Result<SignificanceReport> {
        compare_runs(&Self::rows(manifests), &self.config.comparisons(), &self.config.stats)
    }

    /// Emit the results and significance tables from the manifests on disk.
    pub fn report(&self) -> Result<(Vec<Aggregate>, SignificanceReport)> {
        let manifests = self.load_manifests()?;
        let agg = self.aggregate(&manifests);
        write_text(&self.path("results.csv"), &results_csv(&agg))?;
        write_text(&self.path("results.txt"), &results_text(&agg))?;
        write_json(&self.path("results.json"), &agg)?;
        let sig = self.compare(&manifests)?;
        write_json(&self.path("significance.json"), &sig)?;
        write_text(&self.path("significance.csv"), &sig.to_csv())?;
        write_text(&self.path("significance.txt"), &sig.to_text())?;
        Ok((agg, sig))
    }

    /// Every stage in order. Returns the training summary; tables are only
    /// written when every cell completed.
    pub fn run_all(&self) -> Result<TrainSummary> {
        write_json(&self.path("config.json"), &self.config)?;
        let corpus = self.ingest()?;
        let scores = self.score(&corpus)?;
        self.plan(&corpus, &scores)?;
        self.analytics(&corpus, &scores)?;
        let summary = self.train()?;
        if summary.complete() {
            self.report()?;
        }
        Ok(summary)
    }
}

pub fn results_csv(agg: &[Aggregate]) -> String {
    let mut out = String::from("strategy,column,n,mean,std\n");
    for a in agg {
        for c in AGGREGATE_COLUMNS {
            let _ = writeln!(out, "{},{},{},{:?},{:?}", a.strategy, c, a.n, a.mean[c], a.std[c]);
        }
    }
    out
}

pub fn results_text(agg: &[Aggregate]) -> String {
    let mut rows = vec![vec![
        "strategy".to_string(),
        "seeds".to_string(),
        "PPL".to_string(),
        "SL PPL".to_string(),
        "EL PPL".to_string(),
        "# updates".to_string(),
        "# final-phase updates".to_string(),
    ]];
    for a in agg {
        let mut r = vec![a.strategy.clone(), a.n.to_string()];
        for c in &AGGREGATE_COLUMNS[..3] {
            r.push(format!("{:.2} ± {:.2}", a.mean[*c], a.std[*c]));
        }
        for c in &AGGREGATE_COLUMNS[3..] {
            r.push(format!("{:.0} ± {:.0}", a.mean[*c], a.std[*c]));
        }
        rows.push(r);
    }
    render_aligned(&rows)
}

pub fn overlap_text(m: &OverlapMatrix) -> String {
    let mut rows = vec![vec![String::new(), String::new(), "SL".to_string(), "EL".to_string()]];
    for (i, l) in m.labels.iter().enumerate() {
        rows.push(vec![
            l.to_string(),
            format!("{} types", m.types[i]),
            format!("{:.2}%", m.percent[i][0]),
            format!("{:.2}%", m.percent[i][1]),
        ]);
    }
    render_aligned(&rows)
}

/// Parse a comma-separated strategy list.
pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

/// Parse `a,b,c` or a range `a..b` (exclusive) of seeds.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = list.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| Error::config(format!("bad seed range {list:?}")))?;
        let b: u64 = b.trim().parse().map_err(|_| Error::config(format!("bad seed range {list:?}")))?;
        return Ok((a..b).collect());
    }
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::config(format!("bad seed {s:?}"))))
        .collect()
}

