//! Training plans: competence schedules over difficulty-sorted data and
//! phase sequences over the SL/EL labels.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Label, SentenceRecord};
use crate::difficulty::{DifficultyScore, Metric};
use crate::error::{Error, Result};

/// Parameters of the square-root competence function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompetenceParams {
    pub c0: f64,
    /// Curriculum duration in optimizer steps.
    pub duration: u64,
    /// Steps between window updates.
    pub update_every: u64,
    /// Keep the `c0²` term inside the root so that `c(0) = c0`.
    pub use_c0_offset: bool,
}

impl Default for CompetenceParams {
    fn default() -> Self {
        Self {
            c0: 0.05,
            duration: 50_000,
            update_every: 5_000,
            use_c0_offset: true,
        }
    }
}

impl CompetenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0 < 1.0) {
            return Err(Error::config(format!("c0 must lie in (0, 1), got {}", self.c0)));
        }
        if self.duration == 0 {
            return Err(Error::config("competence duration must be positive"));
        }
        if self.update_every == 0 {
            return Err(Error::config("update_every must be positive"));
        }
        Ok(())
    }
}

/// `min(1, sqrt(t(1-c0²)/T [+ c0²]))`.
pub fn competence_at(t: u64, c0: f64, duration: u64, use_c0_offset: bool) -> Result<f64> {
    if !(c0 > 0.0 && c0 < 1.0) {
        return Err(Error::config(format!("c0 must lie in (0, 1), got {c0}")));
    }
    if duration == 0 {
        return Err(Error::config("competence duration must be positive"));
    }
    if t >= duration {
        return Ok(1.0);
    }
    let c0_sq = c0 * c0;
    let mut inner = t as f64 * (1.0 - c0_sq) / duration as f64;
    if use_c0_offset {
        inner += c0_sq;
    }
    Ok(inner.sqrt().min(1.0))
}

/// `ceil(c * n)`, ignoring floating noise below 1e-9 of a sentence so that
/// e.g. `c = 0.05000000000000001, n = 1000` gives 50.
pub fn window_len(competence: f64, n: usize) -> usize {
    let raw = competence * n as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetencePlan {
    pub metric: Metric,
    /// Train ids, easiest first.
    pub sorted_ids: Vec<u32>,
    pub params: CompetenceParams,
}

impl CompetencePlan {
    pub fn competence(&self, t: u64) -> f64 {
        let p = &self.params;
        competence_at(t, p.c0, p.duration, p.use_c0_offset).expect("params validated at construction")
    }

    /// Number of eligible ids at step `t`. The window only moves on
    /// multiples of `update_every`.
    pub fn window_len(&self, t: u64) -> usize {
        if t >= self.params.duration {
            return self.sorted_ids.len();
        }
        let anchored = t / self.params.update_every * self.params.update_every;
        window_len(self.competence(anchored), self.sorted_ids.len())
    }

    pub fn window_ids(&self, t: u64) -> &[u32] {
        &self.sorted_ids[..self.window_len(t)]
    }
}

/// Sort train ids by easy-first difficulty, breaking ties by sentence id.
pub fn make_competence_plan(
    scores: &[DifficultyScore],
    train_ids: &[u32],
    params: CompetenceParams,
) -> Result<CompetencePlan> {
    params.validate()?;
    let by_id: HashMap<u32, &DifficultyScore> = scores.iter().map(|s| (s.sentence_id, s)).collect();
    let missing: Vec<u32> = train_ids.iter().copied().filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    let metric = match train_ids.first() {
        Some(id) => by_id[id].metric,
        None => return Err(Error::config("competence plan over an empty train split")),
    };
    if let Some(s) = train_ids.iter().map(|id| by_id[id]).find(|s| s.metric != metric) {
        return Err(Error::config(format!(
            "mixed metrics in score set: {} and {}",
            metric, s.metric
        )));
    }
    let mut keyed: Vec<(f64, u32)> = train_ids
        .iter()
        .map(|id| (metric.easy_first_key(by_id[id].value), *id))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(CompetencePlan {
        metric,
        sorted_ids: keyed.into_iter().map(|(_, id)| id).collect(),
        params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelStrategy {
    Sequential,
    Incremental,
    AntiSequential,
    BaselineEL,
    BaselineSLEL,
}

impl LabelStrategy {
    pub const ALL: [LabelStrategy; 5] = [
        LabelStrategy::BaselineEL,
        LabelStrategy::BaselineSLEL,
        LabelStrategy::Incremental,
        LabelStrategy::Sequential,
        LabelStrategy::AntiSequential,
    ];
}

/// Every training strategy: the five label plans plus one competence plan
/// per difficulty metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Strategy {
    Label(LabelStrategy),
    Competence(Metric),
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::Label(LabelStrategy::BaselineEL),
        Strategy::Label(LabelStrategy::BaselineSLEL),
        Strategy::Label(LabelStrategy::Incremental),
        Strategy::Label(LabelStrategy::Sequential),
        Strategy::Label(LabelStrategy::AntiSequential),
        Strategy::Competence(Metric::Length),
        Strategy::Competence(Metric::WordRarity),
        Strategy::Competence(Metric::Fre),
        Strategy::Competence(Metric::Random),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Label(LabelStrategy::Sequential) => "Sequential",
            Strategy::Label(LabelStrategy::Incremental) => "Incremental",
            Strategy::Label(LabelStrategy::AntiSequential) => "AntiSequential",
            Strategy::Label(LabelStrategy::BaselineEL) => "BaselineEL",
            Strategy::Label(LabelStrategy::BaselineSLEL) => "BaselineSLEL",
            Strategy::Competence(m) => m.name(),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name().to_string()
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    /// Sorted ascending.
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPlan {
    pub strategy: LabelStrategy,
    pub phases: Vec<Phase>,
}

pub fn make_label_plan(
    strategy: LabelStrategy,
    records: &[SentenceRecord],
    split: &CorpusSplit,
) -> Result<LabelPlan> {
    let label_of: HashMap<u32, Label> = records.iter().map(|r| (r.id, r.label)).collect();
    let mut sl = Vec::new();
    let mut el = Vec::new();
    for id in &split.train {
        match label_of.get(id) {
            Some(Label::SL) => sl.push(*id),
            Some(Label::EL) => el.push(*id),
            None => return Err(Error::config(format!("train id {id} has no record"))),
        }
    }
    let all: Vec<u32> = sl.iter().chain(&el).copied().collect::<BTreeSet<_>>().into_iter().collect();
    let phase = |name: &str, ids: &[u32]| Phase {
        name: name.to_string(),
        ids: ids.to_vec(),
    };
    let phases = match strategy {
        LabelStrategy::Sequential => vec![phase("SL", &sl), phase("EL", &el)],
        LabelStrategy::Incremental => vec![phase("SL", &sl), phase("SL+EL", &all)],
        LabelStrategy::AntiSequential => vec![phase("EL", &el), phase("SL", &sl)],
        LabelStrategy::BaselineEL => vec![phase("EL", &el)],
        LabelStrategy::BaselineSLEL => vec![phase("ALL", &all)],
    };
    Ok(LabelPlan { strategy, phases })
}

/// A fully resolved plan, serializable into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurriculumPlan {
    Competence(CompetencePlan),
    Label(LabelPlan),
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use crate::corpus::fixtures;
    use proptest::prelude::*;

    fn plan(n: usize, params: CompetenceParams) -> CompetencePlan {
        CompetencePlan {
            metric: Metric::Length,
            sorted_ids: (0..n as u32).collect(),
            params,
        }
    }

    #[test]
    fn competence_examples() {
        let c = |t, off| competence_at(t, 0.05, 50_000, off).unwrap();
        assert!((c(0, true) - 0.05).abs() < 1e-15);
        assert_eq!(c(0, false), 0.0);
        assert_eq!(c(50_000, true), 1.0);
        assert_eq!(c(80_000, false), 1.0);
        assert!((c(25_000, true) - 0.50125f64.sqrt()).abs() < 1e-15);
        assert!((c(25_000, true) - 0.70799).abs() < 1e-5);
        assert!((c(25_000, false) - 0.49875f64.sqrt()).abs() < 1e-15);
        assert!((c(25_000, false) - 0.70623).abs() < 1e-5);
    }

    #[test]
    fn competence_rejects_bad_c0() {
        assert!(competence_at(0, 0.0, 10, true).is_err());
        assert!(competence_at(0, 1.0, 10, true).is_err());
        assert!(competence_at(0, 0.5, 0, true).is_err());
    }

    #[test]
    fn window_examples() {
        let p = plan(1000, CompetenceParams::default());
        assert_eq!(p.window_ids(0).len(), 50);
        assert_eq!(p.window_ids(4_999), p.window_ids(0));
        assert_eq!(p.window_ids(50_000).len(), 1000);
        assert_eq!(p.window_ids(123_456).len(), 1000);
    }

    #[test]
    fn offset_free_window_starts_empty() {
        let p = plan(1000, CompetenceParams { use_c0_offset: false, ..Default::default() });
        assert_eq!(p.window_len(0), 0);
        assert!(p.window_len(5_000) > 0);
    }

    #[test]
    fn competence_sort_with_ties() {
        let s = |id, v| DifficultyScore { sentence_id: id, metric: Metric::Length, value: v };
        let scores = [s(1, 3.0), s(2, 1.0), s(3, 3.0)];
        let p = make_competence_plan(&scores, &[1, 2, 3], CompetenceParams::default()).unwrap();
        assert_eq!(p.sorted_ids, vec![2, 1, 3]);

        let flat = [s(3, 1.0), s(1, 1.0), s(2, 1.0)];
        let p = make_competence_plan(&flat, &[3, 1, 2], CompetenceParams::default()).unwrap();
        assert_eq!(p.sorted_ids, vec![1, 2, 3]);
    }

    #[test]
    fn fre_sorts_descending() {
        let s = |id, v| DifficultyScore { sentence_id: id, metric: Metric::Fre, value: v };
        let scores = [s(1, 20.0), s(2, 90.0), s(3, -5.0)];
        let p = make_competence_plan(&scores, &[1, 2, 3], CompetenceParams::default()).unwrap();
        assert_eq!(p.sorted_ids, vec![2, 1, 3]);
    }

    #[test]
    fn missing_scores_are_listed() {
        let scores = [DifficultyScore { sentence_id: 1, metric: Metric::Length, value: 1.0 }];
        match make_competence_plan(&scores, &[1, 5, 9], CompetenceParams::default()) {
            Err(Error::MissingScores(ids)) => assert_eq!(ids, vec![5, 9]),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn fixture_split() -> (Vec<SentenceRecord>, CorpusSplit) {
        let recs = fixtures::five_records();
        let split = CorpusSplit { train: (0..5).collect(), validation: vec![], test: vec![], split_seed: 0 };
        (recs, split)
    }

    #[test]
    fn label_plans_on_fixture() {
        let (recs, split) = fixture_split();
        let seq = make_label_plan(LabelStrategy::Sequential, &recs, &split).unwrap();
        assert_eq!(seq.phases.len(), 2);
        assert_eq!(seq.phases[0].ids, vec![0, 1]);
        assert_eq!(seq.phases[1].ids, vec![2, 3, 4]);

        let anti = make_label_plan(LabelStrategy::AntiSequential, &recs, &split).unwrap();
        assert_eq!(anti.phases[0], seq.phases[1]);
        assert_eq!(anti.phases[1], seq.phases[0]);

        let inc = make_label_plan(LabelStrategy::Incremental, &recs, &split).unwrap();
        let union: BTreeSet<u32> = inc.phases[0].ids.iter().chain(&seq.phases[1].ids).copied().collect();
        assert_eq!(inc.phases[1].ids, union.into_iter().collect::<Vec<_>>());

        let el = make_label_plan(LabelStrategy::BaselineEL, &recs, &split).unwrap();
        assert_eq!(el.phases.len(), 1);
        assert_eq!(el.phases[0].ids, vec![2, 3, 4]);
        let all = make_label_plan(LabelStrategy::BaselineSLEL, &recs, &split).unwrap();
        assert_eq!(all.phases[0].ids, split.train);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Strategy>(&json).unwrap(), s);
        }
        assert!(matches!("Sequental".parse::<Strategy>(), Err(Error::UnknownStrategy(_))));
    }

    #[test]
    fn plan_json_round_trip() {
        let p = CurriculumPlan::Competence(plan(10, CompetenceParams::default()));
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<CurriculumPlan>(&json).unwrap(), p);
    }

    proptest! {
        #[test]
        fn competence_monotone(a in 0u64..80_000, b in 0u64..80_000, off: bool) {
            let (lo, hi) = (a.min(b), a.max(b));
            let c = |t| competence_at(t, 0.05, 50_000, off).unwrap();
            prop_assert!(c(lo) <= c(hi));
            prop_assert!(c(hi) <= 1.0);
        }

        #[test]
        fn windows_nest(n in 1usize..3000, t in 0u64..60_000, dt in 0u64..60_000, off: bool) {
            let p = plan(n, CompetenceParams { use_c0_offset: off, ..Default::default() });
            let a = p.window_ids(t);
            let b = p.window_ids(t + dt);
            prop_assert!(a.len() <= b.len());
            prop_assert_eq!(a, &b[..a.len()]);
        }
    }
}
