//! Multi-label metrics, per-action macro averaging, the most-frequent-reason
//! baseline and threshold calibration.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::{AccuracyMode, Comparator, PipelineConfig};
use crate::corpus::{ClipRecord, GoldRecord, ReasonTaxonomy};
use crate::error::{Error, Result};
use crate::scoring::ReasonScore;
use crate::table;

/// Zero-division and accuracy conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub accuracy_mode: AccuracyMode,
    /// Precision when nothing is predicted and the gold set is empty.
    pub empty_gold_precision: f64,
    /// Recall when the gold set is empty.
    pub empty_gold_recall: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions::from(&PipelineConfig::default())
    }
}

impl From<&PipelineConfig> for MetricOptions {
    fn from(cfg: &PipelineConfig) -> Self {
        MetricOptions {
            accuracy_mode: cfg.accuracy_mode,
            empty_gold_precision: cfg.empty_gold_precision,
            empty_gold_recall: cfg.empty_gold_recall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceEval {
    pub clip_id: String,
    pub action: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion counts over the candidate universe and the derived metrics.
pub fn instance_metrics(
    gold: &[String],
    predicted: &[String],
    candidates: &[String],
    opts: &MetricOptions,
) -> Result<InstanceEval> {
    let cand: BTreeSet<&str> = candidates.iter().map(String::as_str).collect();
    let g: BTreeSet<&str> = gold.iter().map(String::as_str).collect();
    let p: BTreeSet<&str> = predicted.iter().map(String::as_str).collect();
    if let Some(x) = p.iter().find(|x| !cand.contains(*x)) {
        return Err(Error::invalid(format!("predicted reason {x:?} is not a candidate")));
    }
    if let Some(x) = g.iter().find(|x| !cand.contains(*x)) {
        return Err(Error::invalid(format!("gold reason {x:?} is not a candidate")));
    }
    let tp = g.intersection(&p).count();
    let fp = p.len() - tp;
    let fn_ = g.len() - tp;
    let tn = cand.len() - tp - fp - fn_;
    let precision = if tp + fp == 0 {
        if g.is_empty() {
            opts.empty_gold_precision
        } else {
            0.0
        }
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 { opts.empty_gold_recall } else { tp as f64 / (tp + fn_) as f64 };
    // Equal to the harmonic mean of P and R whenever any label is involved,
    // but with a single rounding.
    let f1 = if tp + fp + fn_ > 0 {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    } else if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let accuracy = match opts.accuracy_mode {
        AccuracyMode::PerLabel if cand.is_empty() => 1.0,
        AccuracyMode::PerLabel => (tp + tn) as f64 / cand.len() as f64,
        AccuracyMode::Subset => f64::from(u8::from(g == p)),
    };
    Ok(InstanceEval { clip_id: String::new(), action: String::new(), tp, fp, fn_, tn, accuracy, precision, recall, f1 })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricMeans {
    fn mean<'a>(items: impl ExactSizeIterator<Item = &'a MetricMeans>) -> MetricMeans {
        let n = items.len().max(1) as f64;
        let mut m = MetricMeans::default();
        for x in items {
            m.accuracy += x.accuracy;
            m.precision += x.precision;
            m.recall += x.recall;
            m.f1 += x.f1;
        }
        MetricMeans { accuracy: m.accuracy / n, precision: m.precision / n, recall: m.recall / n, f1: m.f1 / n }
    }
}

impl From<&InstanceEval> for MetricMeans {
    fn from(e: &InstanceEval) -> Self {
        MetricMeans { accuracy: e.accuracy, precision: e.precision, recall: e.recall, f1: e.f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMetrics {
    pub clips: usize,
    #[serde(flatten)]
    pub means: MetricMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub input: String,
    pub per_action: BTreeMap<String, ActionMetrics>,
    #[serde(rename = "macro")]
    pub macro_means: MetricMeans,
    pub warnings: Vec<String>,
}

/// Unweighted mean per action, then unweighted mean over actions. Actions
/// listed in `expected_actions` without instances are dropped with a warning.
pub fn macro_report(evals: &[InstanceEval], expected_actions: &[String], method: &str, input: &str) -> EvalReport {
    let mut grouped: BTreeMap<&str, Vec<MetricMeans>> = BTreeMap::new();
    for e in evals {
        grouped.entry(e.action.as_str()).or_default().push(MetricMeans::from(e));
    }
    let warnings = expected_actions
        .iter()
        .filter(|a| !grouped.contains_key(a.as_str()))
        .map(|a| format!("action {a:?} has no evaluated clips and is excluded"))
        .collect();
    let per_action: BTreeMap<String, ActionMetrics> = grouped
        .into_iter()
        .map(|(a, ms)| (a.to_string(), ActionMetrics { clips: ms.len(), means: MetricMeans::mean(ms.iter()) }))
        .collect();
    let macro_means = MetricMeans::mean(per_action.values().map(|a| &a.means));
    EvalReport { method: method.to_string(), input: input.to_string(), per_action, macro_means, warnings }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let m = &self.macro_means;
        let mut out = table::render(
            &["Method", "Input", "Accuracy", "Precision", "Recall", "F1"],
            &[vec![
                self.method.clone(),
                self.input.clone(),
                pct(m.accuracy),
                pct(m.precision),
                pct(m.recall),
                pct(m.f1),
            ]],
        );
        out.push('\n');
        let rows: Vec<Vec<String>> =
            self.per_action.iter().map(|(a, am)| vec![a.clone(), am.clips.to_string(), pct(am.means.f1)]).collect();
        out.push_str(&table::render(&["Action", "Clips", "F1"], &rows));
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// A line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub method: String,
    pub selected_reason_ids: Vec<String>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
}

impl Prediction {
    pub fn from_scores(s: &ReasonScore, threshold: f64, cmp: Comparator) -> Self {
        Prediction {
            clip_id: s.clip_id.clone(),
            method: s.method.clone(),
            selected_reason_ids: s.select(threshold, cmp),
            scores: s.score_map(),
        }
    }
}

/// Evaluates predictions for the given clips. Every clip needs a gold record
/// and a prediction.
pub fn evaluate(
    clips: &[&ClipRecord],
    gold: &HashMap<&str, &GoldRecord>,
    predictions: &HashMap<&str, &Prediction>,
    opts: &MetricOptions,
) -> Result<Vec<InstanceEval>> {
    clips
        .iter()
        .map(|c| {
            let g = gold
                .get(c.clip_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no gold record for clip {}", c.clip_id)))?;
            let p = predictions
                .get(c.clip_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no prediction for clip {}", c.clip_id)))?;
            let mut e = instance_metrics(&g.gold_reason_ids, &p.selected_reason_ids, &c.candidate_reason_ids, opts)
                .map_err(|e| Error::invalid(format!("clip {}: {e}", c.clip_id)))?;
            e.clip_id = c.clip_id.clone();
            e.action = c.action.clone();
            Ok(e)
        })
        .collect()
}

/// For each action, the reason most often in gold on `estimation` clips
/// (ties go to the lexicographically smallest label), predicted for every
/// `target` clip of that action.
pub fn most_frequent_baseline(
    taxonomy: &ReasonTaxonomy,
    estimation: &[(&ClipRecord, &GoldRecord)],
    targets: &[&ClipRecord],
) -> Result<(BTreeMap<String, String>, Vec<Prediction>)> {
    let mut counts: HashMap<&str, HashMap<&str, usize>> = HashMap::new();
    for (clip, g) in estimation {
        let e = counts.entry(clip.action.as_str()).or_default();
        for r in &g.gold_reason_ids {
            *e.entry(r.as_str()).or_default() += 1;
        }
    }
    let mut chosen: BTreeMap<String, String> = BTreeMap::new();
    for (action, entry) in &taxonomy.actions {
        let c = counts.get(action.as_str());
        let best = entry
            .reasons
            .iter()
            .map(|r| (c.and_then(|m| m.get(r.id.as_str())).copied().unwrap_or(0), r))
            .max_by(|(ca, ra), (cb, rb)| ca.cmp(cb).then_with(|| rb.label.cmp(&ra.label)));
        if let Some((_, r)) = best {
            chosen.insert(action.clone(), r.id.clone());
        }
    }
    let preds = targets
        .iter()
        .map(|c| {
            let r =
                chosen.get(&c.action).ok_or_else(|| Error::invalid(format!("action {:?} has no reasons", c.action)))?;
            Ok(Prediction {
                clip_id: c.clip_id.clone(),
                method: "most-frequent".into(),
                selected_reason_ids: vec![r.clone()],
                scores: BTreeMap::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((chosen, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub method: String,
    pub threshold: f64,
    pub macro_f1: f64,
    /// (threshold, dev macro F1) for every grid point.
    pub sweep: Vec<(f64, f64)>,
}

/// Dev macro F1 at one threshold.
pub fn macro_f1_at(
    scores: &[ReasonScore],
    gold: &HashMap<&str, &GoldRecord>,
    threshold: f64,
    cmp: Comparator,
    opts: &MetricOptions,
) -> Result<f64> {
    let mut evals = Vec::with_capacity(scores.len());
    for s in scores {
        let g = gold
            .get(s.clip_id.as_str())
            .ok_or_else(|| Error::invalid(format!("no gold record for clip {}", s.clip_id)))?;
        let mut e = instance_metrics(&g.gold_reason_ids, &s.select(threshold, cmp), &s.reason_ids, opts)?;
        e.action = s.action.clone();
        evals.push(e);
    }
    Ok(macro_report(&evals, &[], "", "").macro_means.f1)
}

/// The grid threshold with the best dev macro F1; ties go to the smallest.
pub fn calibrate_threshold(
    scores: &[ReasonScore],
    gold: &HashMap<&str, &GoldRecord>,
    grid: &[f64],
    cmp: Comparator,
    opts: &MetricOptions,
) -> Result<Calibration> {
    if grid.is_empty() {
        return Err(Error::invalid("calibration grid is empty"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let sweep =
        sorted.iter().map(|&t| macro_f1_at(scores, gold, t, cmp, opts).map(|f| (t, f))).collect::<Result<Vec<_>>>()?;
    let mut best = sweep[0];
    for &(t, f) in &sweep[1..] {
        if f > best.1 {
            best = (t, f);
        }
    }
    Ok(Calibration {
        method: scores.first().map(|s| s.method.clone()).unwrap_or_default(),
        threshold: best.0,
        macro_f1: best.1,
        sweep,
    })
}

impl Calibration {
    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .sweep
            .iter()
            .map(|(t, f)| {
                let mark = if *t == self.threshold { "*" } else { "" };
                vec![format!("{t:.2}"), pct(*f), mark.to_string()]
            })
            .collect();
        let mut out =
            format!("method: {}\nthreshold: {}\ndev macro F1: {}\n\n", self.method, self.threshold, pct(self.macro_f1));
        out.push_str(&table::render(&["threshold", "dev F1", ""], &rows));
        out
    }
}
