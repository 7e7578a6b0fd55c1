//! Evaluation runs and their JSON / plain-text reports.

use std::fmt::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_ci, cohens_d, paired_bootstrap_p, Ci, DEFAULT_RESAMPLES, DEFAULT_SEED};
use super::{
    empty_match_rate, expected_random_l1, hallucination_rate, hit_at_1, match_outcomes, partial_match_analysis,
    predict, EvalCase, GeneratorChooser, Intent, MatchOutcomes, NegativeMode, PartialMatch, RandomBaseline,
};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::padr::DEFAULT_TAU;
use crate::pool::PrefixIndex;
use crate::sid::{Sid, SidPrefix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub delta: u32,
    pub seed: u64,
    pub resamples: usize,
    pub tau: usize,
    pub hit_modes: Vec<NegativeMode>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            delta: crate::matcher::DEFAULT_DELTA,
            seed: DEFAULT_SEED,
            resamples: DEFAULT_RESAMPLES,
            tau: DEFAULT_TAU,
            hit_modes: vec![NegativeMode::Rand, NegativeMode::Align],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCis {
    pub l1: Ci,
    pub l2: Ci,
    pub category: Ci,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub intent: Intent,
    pub n: usize,
    pub metrics: MetricCis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitSummary {
    pub mode: NegativeMode,
    /// Absent when no candidate-selection sample could be evaluated.
    pub ci: Option<Ci>,
    pub evaluated: usize,
    pub skipped: usize,
    pub align_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub generator: String,
    pub n: usize,
    pub overall: MetricCis,
    pub hit_at_1: Vec<HitSummary>,
    pub per_task: Vec<TaskRow>,
    pub partial_match: PartialMatch,
    /// Raw prefixes with no exact `(s1, s2, s3)` article in the pool.
    pub hallucination_rate: f64,
    /// Raw prefixes whose fuzzy match at `delta` is empty.
    pub post_match_empty_rate: f64,
    pub raw_prefixes: usize,
    pub random_baseline: RandomBaseline,
    #[serde(skip)]
    pub outcomes: MatchOutcomes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub diff: f64,
    pub p_value: f64,
    pub cohens_d: f64,
}

/// Headline numbers of a fine-tuned generator on production data, shown
/// for comparison with replayed model outputs. Not reproducible here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNumbers {
    pub l1: f64,
    pub hit_at_1_rand: f64,
    pub hit_at_1_align: f64,
    pub pure_coldstart_l1: f64,
    pub random_l1: f64,
    pub popular_l1: f64,
    pub histpop_l1: f64,
    pub hallucination_rate: f64,
}

pub const REFERENCE: ReferenceNumbers = ReferenceNumbers {
    l1: 0.124,
    hit_at_1_rand: 0.593,
    hit_at_1_align: 0.308,
    pure_coldstart_l1: 0.180,
    random_l1: 0.051,
    popular_l1: 0.077,
    histpop_l1: 0.116,
    hallucination_rate: 0.0,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub n_samples: usize,
    pub pool_version: u64,
    pub pool_size: usize,
    pub generators: Vec<GeneratorReport>,
    pub comparisons: Vec<Comparison>,
    pub reference: ReferenceNumbers,
}

fn cis(outcomes: &MatchOutcomes, config: &EvalConfig) -> Result<MetricCis> {
    Ok(MetricCis {
        l1: bootstrap_ci(&outcomes.l1, config.resamples, config.seed)?,
        l2: bootstrap_ci(&outcomes.l2, config.resamples, config.seed)?,
        category: bootstrap_ci(&outcomes.category, config.resamples, config.seed)?,
    })
}

fn targets(cases: &[EvalCase], index: &PrefixIndex) -> Result<Vec<(Sid, String)>> {
    cases
        .iter()
        .map(|c| {
            let t = &c.sample.target;
            let article = index.pool().get(&t.article_id).ok_or_else(|| {
                Error::Consistency(format!(
                    "sample `{}`: target `{}` is not in the pool",
                    c.sample.sample_id, t.article_id
                ))
            })?;
            Ok((t.sid, article.category.clone()))
        })
        .collect()
}

/// Evaluate one generator on every case.
pub fn evaluate(
    name: &str,
    cases: &[EvalCase],
    index: &PrefixIndex,
    generator: &dyn Generator,
    config: &EvalConfig,
) -> Result<GeneratorReport> {
    if cases.is_empty() {
        return Err(Error::InvalidInput("no evaluation samples".into()));
    }
    let targets = targets(cases, index)?;
    let raw = predict(cases, generator)?;
    let top: Vec<Option<SidPrefix>> = raw.iter().map(|p| p.first().copied()).collect();
    let outcomes = match_outcomes(&top, &targets, index, config.delta)?;

    let mut per_task = Vec::new();
    for intent in Intent::ALL {
        let idx: Vec<usize> = (0..cases.len()).filter(|&i| cases[i].sample.intent == intent).collect();
        if idx.is_empty() {
            continue;
        }
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let sub = MatchOutcomes {
            l1: pick(&outcomes.l1),
            l2: pick(&outcomes.l2),
            category: pick(&outcomes.category),
        };
        per_task.push(TaskRow {
            intent,
            n: idx.len(),
            metrics: cis(&sub, config)?,
        });
    }

    let chooser = GeneratorChooser {
        generator,
        delta: config.delta,
    };
    let hit_at_1 = config
        .hit_modes
        .iter()
        .map(|&mode| {
            let r = hit_at_1(cases, index.pool(), &chooser, mode, config.seed)?;
            Ok(HitSummary {
                mode,
                ci: if r.outcomes.is_empty() {
                    None
                } else {
                    Some(bootstrap_ci(&r.outcomes, config.resamples, config.seed)?)
                },
                evaluated: r.evaluated,
                skipped: r.skipped,
                align_fallbacks: r.align_fallbacks,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let flat: Vec<SidPrefix> = raw.iter().flatten().copied().collect();
    let target_sids: Vec<Sid> = targets.iter().map(|t| t.0).collect();
    Ok(GeneratorReport {
        generator: name.to_string(),
        n: cases.len(),
        overall: cis(&outcomes, config)?,
        hit_at_1,
        per_task,
        partial_match: partial_match_analysis(&top, &targets, index, config.delta)?,
        hallucination_rate: hallucination_rate(&flat, index),
        post_match_empty_rate: empty_match_rate(&flat, index, config.delta),
        raw_prefixes: flat.len(),
        random_baseline: expected_random_l1(&target_sids, outcomes.rates().l1)?,
        outcomes,
    })
}

/// Evaluate several generators on the same cases and compare their L1
/// outcomes pairwise.
pub fn run_eval(
    cases: &[EvalCase],
    index: &PrefixIndex,
    generators: &[(String, Arc<dyn Generator>)],
    config: &EvalConfig,
) -> Result<EvalReport> {
    let reports = generators
        .iter()
        .map(|(name, g)| evaluate(name, cases, index, &**g, config))
        .collect::<Result<Vec<_>>>()?;
    let mut comparisons = Vec::new();
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            comparisons.push(Comparison {
                a: a.generator.clone(),
                b: b.generator.clone(),
                metric: "l1".into(),
                diff: a.outcomes.rates().l1 - b.outcomes.rates().l1,
                p_value: paired_bootstrap_p(&a.outcomes.l1, &b.outcomes.l1, config.resamples, config.seed)?,
                cohens_d: if cases.len() >= 2 {
                    cohens_d(&a.outcomes.l1, &b.outcomes.l1)?
                } else {
                    0.0
                },
            });
        }
    }
    Ok(EvalReport {
        config: config.clone(),
        n_samples: cases.len(),
        pool_version: index.pool().version(),
        pool_size: index.pool().len(),
        generators: reports,
        comparisons,
        reference: REFERENCE,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn pct_ci(ci: &Ci) -> String {
    format!("{} [{}, {}]", pct(ci.point), pct(ci.lo), pct(ci.hi))
}

impl EvalReport {
    /// Plain-text tables: overall metrics per generator with the reference
    /// row, then per-task breakdown. Values are percentages.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let hit = |g: &GeneratorReport, mode: NegativeMode| {
            g.hit_at_1
                .iter()
                .find(|h| h.mode == mode)
                .and_then(|h| h.ci.as_ref())
                .map_or("-".to_string(), pct_ci)
        };
        let w = self.generators.iter().map(|g| g.generator.len() + 1).max().unwrap_or(0).max(24);
        let _ = writeln!(
            out,
            "Overall (N = {}, pool = {} articles, delta = {}, {} resamples, seed {})",
            self.n_samples, self.pool_size, self.config.delta, self.config.resamples, self.config.seed
        );
        let _ = writeln!(
            out,
            "{:<w$} {:<22} {:<22} {:<22} {:<22} {:<22} {:>8}",
            "method", "L1", "L2", "Cat.", "Hit@1 Rand", "Hit@1 Align", "Halluc."
        );
        for g in &self.generators {
            let _ = writeln!(
                out,
                "{:<w$} {:<22} {:<22} {:<22} {:<22} {:<22} {:>8}",
                g.generator,
                pct_ci(&g.overall.l1),
                pct_ci(&g.overall.l2),
                pct_ci(&g.overall.category),
                hit(g, NegativeMode::Rand),
                hit(g, NegativeMode::Align),
                pct(g.hallucination_rate)
            );
        }
        let r = &self.reference;
        let _ = writeln!(
            out,
            "{:<w$} {:<22} {:<22} {:<22} {:<22} {:<22} {:>8}",
            "reference (trained)",
            pct(r.l1),
            "-",
            "-",
            pct(r.hit_at_1_rand),
            pct(r.hit_at_1_align),
            pct(r.hallucination_rate)
        );
        let _ = writeln!(
            out,
            "reference baselines L1: random {} / popular {} / histpop {}; pure cold-start L1 {}",
            pct(r.random_l1),
            pct(r.popular_l1),
            pct(r.histpop_l1),
            pct(r.pure_coldstart_l1)
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "By task");
        let _ = writeln!(
            out,
            "{:<w$} {:<20} {:>7} {:<22} {:<22} {:<22}",
            "method", "task", "N", "L1", "L2", "Cat."
        );
        for g in &self.generators {
            for row in &g.per_task {
                let _ = writeln!(
                    out,
                    "{:<w$} {:<20} {:>7} {:<22} {:<22} {:<22}",
                    g.generator,
                    row.intent.as_str(),
                    row.n,
                    pct_ci(&row.metrics.l1),
                    pct_ci(&row.metrics.l2),
                    pct_ci(&row.metrics.category)
                );
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Diagnostics");
        for g in &self.generators {
            let b = &g.random_baseline;
            let p = &g.partial_match;
            let _ = writeln!(
                out,
                "{}: expected random L1 {} (lift {:.2}x, adjusted {:+.1}); post-match empty {}; \
                 L1-only {} (mean {:.1}, median {:.1} candidates, category overlap {})",
                g.generator,
                pct(b.expected),
                b.lift,
                100.0 * b.adjusted,
                pct(g.post_match_empty_rate),
                pct(p.l1_only_rate),
                p.mean_candidates,
                p.median_candidates,
                pct(p.category_overlap)
            );
        }
        for c in &self.comparisons {
            let _ = writeln!(
                out,
                "{} vs {} ({}): diff {:+.1} pts, p = {:.4}, d = {:.3}",
                c.a,
                c.b,
                c.metric,
                100.0 * c.diff,
                c.p_value,
                c.cohens_d
            );
        }
        out
    }
}
