//! Paired multi-seed significance testing: one-sided Wilcoxon signed-rank,
//! one-sided bootstrap median test, Holm step-down adjustment, and the
//! symmetry gate that picks between the two tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BOOTSTRAP_B: usize = 10_000;
const EXACT_MAX_N: usize = 25;
const MIN_N: usize = 5;
/// Asymptotic variance of the MGG statistic under symmetry.
const MGG_VARIANCE: f64 = 0.5708;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PplMetric {
    #[serde(rename = "PPL")]
    Ppl,
    #[serde(rename = "SL_PPL")]
    SlPpl,
    #[serde(rename = "EL_PPL")]
    ElPpl,
}

impl PplMetric {
    pub const ALL: [PplMetric; 3] = [PplMetric::Ppl, PplMetric::SlPpl, PplMetric::ElPpl];

    pub fn name(self) -> &'static str {
        match self {
            PplMetric::Ppl => "PPL",
            PplMetric::SlPpl => "SL_PPL",
            PplMetric::ElPpl => "EL_PPL",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            PplMetric::Ppl => "PPL",
            PplMetric::SlPpl => "SL PPL",
            PplMetric::ElPpl => "EL PPL",
        }
    }
}

impl fmt::Display for PplMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Expected sign of `treatment - control`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Treatment lower than control.
    Improves,
    /// Treatment higher than control.
    Hurts,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Improves => Direction::Hurts,
            Direction::Hurts => Direction::Improves,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Baseline,
    LabelCl,
    CompetenceCl,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Baseline => "baseline",
            Family::LabelCl => "label_cl",
            Family::CompetenceCl => "competence_cl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Wilcoxon,
    Bootstrap,
}

impl TestKind {
    pub fn marker(self) -> char {
        match self {
            TestKind::Wilcoxon => 'w',
            TestKind::Bootstrap => 'b',
        }
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wilcoxon" | "w" => Ok(TestKind::Wilcoxon),
            "bootstrap" | "b" => Ok(TestKind::Bootstrap),
            other => Err(Error::config(format!("unknown test {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p: f64,
    pub n: usize,
    pub zeros_dropped: usize,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub exact: bool,
}

/// Midranks of `|d|`, doubled so ties stay integral.
fn doubled_midranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, times two
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

fn tie_sizes(abs: &[f64]) -> Vec<usize> {
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        sizes.push(j);
        i += j;
    }
    sizes
}

/// `P(W+ <= w)` under the null for the given doubled ranks.
fn exact_lower_tail(ranks2: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let hits: u64 = counts[..=(w2 as usize).min(total as usize)].iter().sum();
    hits as f64 / (1u64 << ranks2.len()) as f64
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// One-sided Wilcoxon signed-rank test on `treatment - control`
/// differences. Zero differences are dropped first.
pub fn wilcoxon_one_sided(differences: &[f64], direction: Direction) -> Result<WilcoxonResult> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::Stats("non-finite difference".into()));
    }
    let kept: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    let zeros_dropped = differences.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::Stats("all differences are zero".into()));
    }
    let n = kept.len();
    if n < MIN_N {
        return Err(Error::Stats(format!("{n} non-zero differences, need at least {MIN_N}")));
    }
    let abs: Vec<f64> = kept.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_midranks(&abs);
    let w2: u64 = kept.iter().zip(&ranks2).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total2: u64 = ranks2.iter().sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        // Improves: small W+ is evidence. Hurts: mirror onto W- = total - W+.
        let p = match direction {
            Direction::Improves => exact_lower_tail(&ranks2, w2),
            Direction::Hurts => exact_lower_tail(&ranks2, total2 - w2),
        };
        return Ok(WilcoxonResult { p: p.min(1.0), n, zeros_dropped, w_plus, exact: true });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let ties: f64 = tie_sizes(&abs).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let sd = var.sqrt();
    let norm = standard_normal();
    let p = match direction {
        Direction::Improves => norm.cdf((w_plus - mean + 0.5) / sd),
        Direction::Hurts => norm.cdf((mean - w_plus + 0.5) / sd),
    };
    Ok(WilcoxonResult { p, n, zeros_dropped, w_plus, exact: false })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One-sided bootstrap test on the median difference. Resample medians that
/// contradict the direction or are exactly zero count against it.
pub fn bootstrap_median_one_sided(differences: &[f64], direction: Direction, b: usize, seed: u64) -> Result<f64> {
    let n = differences.len();
    if n < MIN_N {
        return Err(Error::Stats(format!("{n} differences, need at least {MIN_N}")));
    }
    if b == 0 {
        return Err(Error::config("bootstrap needs at least one resample"));
    }
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::Stats("non-finite difference".into()));
    }
    let mut r = rng::stream(seed, &[rng::TAG_BOOTSTRAP]);
    let mut sample = vec![0.0; n];
    let mut against = 0usize;
    for _ in 0..b {
        for s in sample.iter_mut() {
            *s = differences[r.gen_range(0..n)];
        }
        let m = median(&sample);
        let contradicts = match direction {
            Direction::Improves => m >= 0.0,
            Direction::Hurts => m <= 0.0,
        };
        against += contradicts as usize;
    }
    Ok((1 + against) as f64 / (b + 1) as f64)
}

/// Holm step-down adjustment; output in input order.
pub fn holm_adjust(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Stats("empty family".into()));
    }
    if let Some(p) = raw.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Stats(format!("p-value {p} outside [0, 1]")));
    }
    let m = raw.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (j, &i) in order.iter().enumerate() {
        running = running.max(((m - j) as f64 * raw[i]).min(1.0));
        out[i] = running;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub statistic: f64,
    pub p: f64,
    pub symmetric: bool,
}

/// Miao-Gel-Gastwirth test of symmetry about the median.
pub fn symmetry_test(values: &[f64], alpha: f64) -> Result<SymmetryCheck> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Stats("symmetry test needs at least two values".into()));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m = median(values);
    let j = (std::f64::consts::PI / 2.0).sqrt() * values.iter().map(|v| (v - m).abs()).sum::<f64>() / nf;
    if j == 0.0 {
        return Ok(SymmetryCheck { statistic: 0.0, p: 1.0, symmetric: true });
    }
    let t = nf.sqrt() * (mean - m) / j;
    let z = t / MGG_VARIANCE.sqrt();
    let p = (2.0 * (1.0 - standard_normal().cdf(z.abs()))).min(1.0);
    Ok(SymmetryCheck { statistic: t, p, symmetric: p >= alpha })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub metric: PplMetric,
    pub treatment: String,
    pub control: String,
    pub direction: Direction,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_override: Option<TestKind>,
}

/// The hypothesis families of the study, for every perplexity metric.
pub fn default_comparisons() -> Vec<Comparison> {
    let table: [(&str, &str, Direction, Family); 8] = [
        ("BaselineSLEL", "BaselineEL", Direction::Improves, Family::Baseline),
        ("Incremental", "BaselineSLEL", Direction::Improves, Family::LabelCl),
        ("Sequential", "BaselineSLEL", Direction::Improves, Family::LabelCl),
        ("AntiSequential", "BaselineSLEL", Direction::Hurts, Family::LabelCl),
        ("Length", "BaselineSLEL", Direction::Improves, Family::CompetenceCl),
        ("WordRarity", "BaselineSLEL", Direction::Improves, Family::CompetenceCl),
        ("FRE", "BaselineSLEL", Direction::Improves, Family::CompetenceCl),
        ("Random", "BaselineSLEL", Direction::Improves, Family::CompetenceCl),
    ];
    PplMetric::ALL
        .iter()
        .flat_map(|&metric| {
            table.iter().map(move |&(t, c, direction, family)| Comparison {
                name: t.to_string(),
                metric,
                treatment: t.to_string(),
                control: c.to_string(),
                direction,
                family,
                test_override: None,
            })
        })
        .collect()
}

/// One seed's final numbers for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub seed: u64,
    pub ppl: f64,
    pub sl_ppl: f64,
    pub el_ppl: f64,
    pub total_updates: u64,
}

impl ResultRow {
    pub fn get(&self, metric: PplMetric) -> f64 {
        match metric {
            PplMetric::Ppl => self.ppl,
            PplMetric::SlPpl => self.sl_ppl,
            PplMetric::ElPpl => self.el_ppl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub alpha: f64,
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            bootstrap_b: DEFAULT_BOOTSTRAP_B,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub comparison: Comparison,
    pub n_pairs: usize,
    pub zeros_dropped: usize,
    pub median_difference: f64,
    pub symmetry: Option<SymmetryCheck>,
    pub test: Option<TestKind>,
    pub raw_p: Option<f64>,
    pub adjusted_p: Option<f64>,
    pub significant: bool,
    /// Set when no test could be run (e.g. every difference is zero).
    pub inconclusive: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub alpha: f64,
    pub bootstrap_b: usize,
    pub outcomes: Vec<ComparisonOutcome>,
}

/// Paired differences `treatment - control`, ordered by seed.
pub fn paired_differences(rows: &[ResultRow], c: &Comparison) -> Result<Vec<f64>> {
    let by_seed = |name: &str| -> BTreeMap<u64, f64> {
        rows.iter().filter(|r| r.strategy == name).map(|r| (r.seed, r.get(c.metric))).collect()
    };
    let t = by_seed(&c.treatment);
    let k = by_seed(&c.control);
    if t.is_empty() || k.is_empty() {
        let missing = if t.is_empty() { &c.treatment } else { &c.control };
        return Err(Error::Stats(format!("no results for strategy {missing}")));
    }
    let ts: BTreeSet<u64> = t.keys().copied().collect();
    let ks: BTreeSet<u64> = k.keys().copied().collect();
    if ts != ks {
        let unpaired: Vec<String> = ts.symmetric_difference(&ks).map(u64::to_string).collect();
        return Err(Error::Stats(format!(
            "{} vs {}: seeds without a pair: {}",
            c.treatment,
            c.control,
            unpaired.join(", ")
        )));
    }
    Ok(t.iter().map(|(s, v)| v - k[s]).collect())
}

fn run_test(diffs: &[f64], c: &Comparison, cfg: &CompareConfig, index: usize) -> Result<(TestKind, Option<SymmetryCheck>, f64, usize)> {
    let symmetry = symmetry_test(diffs, cfg.alpha).ok();
    let kind = c.test_override.unwrap_or(match symmetry {
        Some(s) if s.symmetric => TestKind::Wilcoxon,
        _ => TestKind::Bootstrap,
    });
    match kind {
        TestKind::Wilcoxon => {
            let w = wilcoxon_one_sided(diffs, c.direction)?;
            Ok((kind, symmetry, w.p, w.zeros_dropped))
        }
        TestKind::Bootstrap => {
            let seed = rng::derive_seed(cfg.seed, &[index as u64]);
            let p = bootstrap_median_one_sided(diffs, c.direction, cfg.bootstrap_b, seed)?;
            Ok((kind, symmetry, p, 0))
        }
    }
}

/// Run every comparison, then Holm-adjust within each (family, metric)
/// group. Inconclusive comparisons do not count towards a group's size.
pub fn compare_runs(rows: &[ResultRow], comparisons: &[Comparison], cfg: &CompareConfig) -> Result<SignificanceReport> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::config(format!("alpha {} outside (0, 1)", cfg.alpha)));
    }
    let mut outcomes = Vec::with_capacity(comparisons.len());
    for (i, c) in comparisons.iter().enumerate() {
        let diffs = paired_differences(rows, c)?;
        let mut o = ComparisonOutcome {
            comparison: c.clone(),
            n_pairs: diffs.len(),
            zeros_dropped: diffs.iter().filter(|&&d| d == 0.0).count(),
            median_difference: median(&diffs),
            symmetry: None,
            test: None,
            raw_p: None,
            adjusted_p: None,
            significant: false,
            inconclusive: None,
        };
        if diffs.iter().all(|&d| d == 0.0) {
            o.inconclusive = Some("all paired differences are zero".into());
        } else {
            match run_test(&diffs, c, cfg, i) {
                Ok((kind, sym, p, _)) => {
                    o.test = Some(kind);
                    o.symmetry = sym;
                    o.raw_p = Some(p);
                }
                Err(Error::Stats(msg)) => o.inconclusive = Some(msg),
                Err(e) => return Err(e),
            }
        }
        outcomes.push(o);
    }

    let mut groups: BTreeMap<(Family, PplMetric), Vec<usize>> = BTreeMap::new();
    for (i, o) in outcomes.iter().enumerate() {
        if o.raw_p.is_some() {
            groups.entry((o.comparison.family, o.comparison.metric)).or_default().push(i);
        }
    }
    for idx in groups.values() {
        let raw: Vec<f64> = idx.iter().map(|&i| outcomes[i].raw_p.unwrap()).collect();
        for (&i, adj) in idx.iter().zip(holm_adjust(&raw)?) {
            outcomes[i].adjusted_p = Some(adj);
            outcomes[i].significant = adj < cfg.alpha;
        }
    }
    Ok(SignificanceReport {
        alpha: cfg.alpha,
        bootstrap_b: cfg.bootstrap_b,
        outcomes,
    })
}

impl SignificanceReport {
    fn rows(&self) -> Vec<(Family, String)> {
        let mut seen = Vec::new();
        for o in &self.outcomes {
            let key = (o.comparison.family, o.comparison.name.clone());
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        seen
    }

    fn cell(&self, family: Family, name: &str, metric: PplMetric) -> String {
        let Some(o) = self
            .outcomes
            .iter()
            .find(|o| o.comparison.family == family && o.comparison.name == name && o.comparison.metric == metric)
        else {
            return "-".into();
        };
        match (o.adjusted_p, o.test) {
            (Some(p), Some(t)) => format!("{p:.4} ({}){}", t.marker(), if o.significant { "*" } else { "" }),
            _ => "inconclusive".into(),
        }
    }

    /// Aligned text: one row per comparison name, one column per metric,
    /// adjusted p with the test marker; `*` marks significance.
    pub fn to_text(&self) -> String {
        let mut table = vec![{
            let mut h = vec!["family".to_string(), "comparison".to_string()];
            h.extend(PplMetric::ALL.iter().map(|m| m.title().to_string()));
            h
        }];
        for (family, name) in self.rows() {
            let mut r = vec![family.name().to_string(), name.clone()];
            r.extend(PplMetric::ALL.iter().map(|&m| self.cell(family, &name, m)));
            table.push(r);
        }
        let mut out = render_aligned(&table);
        let _ = writeln!(out, "adjusted p (Holm within family and metric); w = Wilcoxon, b = bootstrap; * = significant at alpha = {}", self.alpha);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("family,comparison,metric,treatment,control,direction,test,n_pairs,zeros_dropped,median_difference,raw_p,adjusted_p,significant,note\n");
        let opt = |v: Option<f64>| v.map(|p| format!("{p:?}")).unwrap_or_default();
        for o in &self.outcomes {
            let c = &o.comparison;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{:?},{},{},{},{}",
                c.family.name(),
                c.name,
                c.metric,
                c.treatment,
                c.control,
                match c.direction {
                    Direction::Improves => "improves",
                    Direction::Hurts => "hurts",
                },
                o.test.map(|t| t.marker().to_string()).unwrap_or_default(),
                o.n_pairs,
                o.zeros_dropped,
                o.median_difference,
                opt(o.raw_p),
                opt(o.adjusted_p),
                o.significant,
                o.inconclusive.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        out
    }
}

/// Left-align the first two columns, right-align the rest.
pub fn render_aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c < 2 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Exhaustive one-sided p over all `2^n` sign assignments of the given
/// magnitudes. Reference implementation for small `n`.
pub fn wilcoxon_brute_force(differences: &[f64], direction: Direction) -> f64 {
    let kept: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    let abs: Vec<f64> = kept.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_midranks(&abs);
    let stat = |signs: &dyn Fn(usize) -> bool| -> u64 { (0..kept.len()).filter(|&i| signs(i)).map(|i| ranks2[i]).sum() };
    let observed = stat(&|i| kept[i] > 0.0);
    let n = kept.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w = stat(&|i| mask >> i & 1 == 1);
        let extreme = match direction {
            Direction::Improves => w <= observed,
            Direction::Hurts => w >= observed,
        };
        hits += extreme as u64;
    }
    hits as f64 / (1u64 << n) as f64
}
