use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use slcl::experiment::{
    overlap_text, parse_seeds, parse_strategies, results_text, CorpusSource, Experiment, ExperimentConfig,
    TrainSummary, CONFIG_VERSION,
};
use slcl::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "slcl", version, about = "Curriculum-learning workbench for masked language model pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seeds to run, e.g. `0,1,2` or `0..5`.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated strategy names.
    #[arg(long)]
    strategies: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the corpus, build the vocabulary and split.
    Ingest(Common),
    /// Compute difficulty scores for every metric.
    Score(Common),
    /// Write curriculum plans for the configured strategies.
    Plan(Common),
    /// Train every (strategy, seed) cell not already cached.
    Train(Common),
    /// Re-evaluate checkpoints on the test split and write corpus analytics.
    Eval(Common),
    /// Run the significance tests over the manifests.
    Compare(Common),
    /// Emit the results and significance tables.
    Report(Common),
    /// Every stage in order.
    All(Common),
    /// Write a synthetic SL/EL corpus and a matching configuration.
    Synth {
        /// Directory to write `sl.txt`, `el.txt` and `config.json` into.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 250)]
        articles: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn experiment(c: &Common) -> Result<Experiment> {
    let mut cfg = ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    let strategies = c.strategies.as_deref().map(parse_strategies).transpose()?;
    let seeds = c.seeds.as_deref().map(parse_seeds).transpose()?;
    let cfg = cfg.with_overrides(strategies, seeds)?;
    Ok(Experiment::new(cfg)?)
}

fn finish(summary: &TrainSummary) -> Result<()> {
    info!(
        "{} trained, {} cached, {} failed",
        summary.trained.len(),
        summary.cached.len(),
        summary.failed.len()
    );
    for (s, seed, e) in &summary.failed {
        warn!("{s} seed {seed}: {e}");
    }
    if !summary.complete() {
        bail!("{} of the requested runs failed", summary.failed.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => {
            let a = experiment(&c)?.ingest()?;
            println!("{}", serde_json::to_string_pretty(&a.stats)?);
        }
        Command::Score(c) => {
            let e = experiment(&c)?;
            let corpus = e.ingest()?;
            let scores = e.score(&corpus)?;
            for (m, s) in &scores {
                println!("{m}: {} scores", s.len());
            }
        }
        Command::Plan(c) => {
            let e = experiment(&c)?;
            let corpus = e.ingest()?;
            let scores = e.score(&corpus)?;
            e.plan(&corpus, &scores)?;
            println!("plans written to {}", e.out().join("plans").display());
        }
        Command::Train(c) => finish(&experiment(&c)?.train()?)?,
        Command::Eval(c) => {
            let reports = experiment(&c)?.evaluate()?;
            for (s, seed, r) in reports {
                println!("{s}\t{seed}\t{:.4}\t{:.4}\t{:.4}", r.overall, r.sl, r.el);
            }
        }
        Command::Compare(c) => {
            let e = experiment(&c)?;
            let report = e.compare(&e.load_manifests()?)?;
            print!("{}", report.to_text());
        }
        Command::Report(c) => {
            let e = experiment(&c)?;
            let (agg, sig) = e.report()?;
            print!("{}\n{}", results_text(&agg), sig.to_text());
        }
        Command::All(c) => {
            let e = experiment(&c)?;
            let summary = e.run_all()?;
            finish(&summary)?;
            let corpus = e.load_corpus()?;
            let overlap = slcl::eval::vocab_overlap(&corpus.records)?;
            let (agg, sig) = e.report()?;
            print!("{}\n{}\n{}", results_text(&agg), sig.to_text(), overlap_text(&overlap));
        }
        Command::Synth { out, articles, seed } => {
            let synth = SynthConfig { articles, seed, ..Default::default() };
            let corpus = generate(&synth)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("sl.txt"), &corpus.sl)?;
            std::fs::write(out.join("el.txt"), &corpus.el)?;
            let cfg = serde_json::json!({
                "version": CONFIG_VERSION,
                "corpus": CorpusSource::Files { sl: "sl.txt".into(), el: "el.txt".into() },
                "output_dir": "experiment",
            });
            std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
            println!("{} sentences written to {}", corpus.sentences, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
