//! Gold-label aggregation, Fleiss' kappa, agreement reports and dataset
//! statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotationRecord, ClipRecord, ConfidenceMajority, Corpus, GoldRecord, ModalityMajority};
use crate::error::{Error, Result};
use crate::table;
use crate::textmine::word_count;

/// Unique plurality value, or `None` when the top count is shared.
fn plurality<T: Copy + Eq + Hash + Ord>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let max = *counts.values().max()?;
    let mut top = counts.into_iter().filter(|(_, c)| *c == max);
    let first = top.next()?.0;
    if top.next().is_some() {
        None
    } else {
        Some(first)
    }
}

/// Combines one clip's worker records into its gold record. A reason is gold
/// when at least `quorum` workers selected it.
pub fn aggregate_gold(clip: &ClipRecord, records: &[&AnnotationRecord], quorum: usize) -> Result<GoldRecord> {
    if records.len() < quorum {
        return Err(Error::invalid(format!(
            "clip {} has {} annotation records, quorum is {quorum}",
            clip.clip_id,
            records.len()
        )));
    }
    let mut per_reason_votes: BTreeMap<String, usize> =
        clip.candidate_reason_ids.iter().map(|r| (r.clone(), 0)).collect();
    for rec in records {
        let picked: BTreeSet<&String> = rec.selected_reason_ids.iter().collect();
        for r in picked {
            match per_reason_votes.get_mut(r) {
                Some(v) => *v += 1,
                None => {
                    return Err(Error::invalid(format!(
                        "worker {} selected {r:?}, not a candidate of clip {}",
                        rec.worker_id, clip.clip_id
                    )))
                }
            }
        }
    }
    let gold_reason_ids =
        clip.candidate_reason_ids.iter().filter(|r| per_reason_votes[*r] >= quorum).cloned().collect();
    let majority_confidence = plurality(records.iter().map(|r| r.confidence))
        .map(ConfidenceMajority::from)
        .unwrap_or(ConfidenceMajority::NoAgreement);
    let majority_modality = plurality(records.iter().map(|r| r.modality))
        .map(ModalityMajority::from)
        .unwrap_or(ModalityMajority::NoAgreement);
    Ok(GoldRecord {
        clip_id: clip.clip_id.clone(),
        gold_reason_ids,
        majority_confidence,
        majority_modality,
        per_reason_votes,
    })
}

/// Gold records for every annotated clip, in clip order.
pub fn aggregate_corpus(corpus: &Corpus, quorum: usize) -> Result<Vec<GoldRecord>> {
    let by_clip = corpus.annotations_by_clip();
    corpus
        .clips
        .iter()
        .filter_map(|c| by_clip.get(c.clip_id.as_str()).map(|recs| aggregate_gold(c, recs, quorum)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub kappa: f64,
    /// Chance agreement is 1: every rating fell into one category.
    pub degenerate: bool,
}

/// Fleiss' kappa for items given as per-category rating counts.
pub fn fleiss_kappa(items: &[Vec<usize>]) -> Result<Kappa> {
    let first = items.first().ok_or_else(|| Error::invalid("fleiss kappa needs at least one item"))?;
    let k = first.len();
    if k < 2 {
        return Err(Error::invalid("fleiss kappa needs at least two categories"));
    }
    let n: usize = first.iter().sum();
    if n < 2 {
        return Err(Error::invalid("fleiss kappa needs at least two raters per item"));
    }
    for (i, it) in items.iter().enumerate() {
        if it.len() != k || it.iter().sum::<usize>() != n {
            return Err(Error::invalid(format!("item {i} must have {n} ratings over {k} categories")));
        }
    }
    let nf = n as f64;
    let big_n = items.len() as f64;
    let p_bar = items
        .iter()
        .map(|it| {
            let sq: usize = it.iter().map(|c| c * c).sum();
            (sq as f64 - nf) / (nf * (nf - 1.0))
        })
        .sum::<f64>()
        / big_n;
    let p_e: f64 = (0..k)
        .map(|j| {
            let pj = items.iter().map(|it| it[j]).sum::<usize>() as f64 / (big_n * nf);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Ok(Kappa { kappa: 1.0, degenerate: true });
    }
    Ok(Kappa { kappa: (p_bar - p_e) / (1.0 - p_e), degenerate: false })
}

/// Binary worker votes for one action: `votes[clip][reason][worker]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteMatrix {
    pub action: String,
    pub raters: usize,
    pub reasons: Vec<String>,
    pub clips: Vec<String>,
    pub votes: Vec<Vec<Vec<u8>>>,
}

impl VoteMatrix {
    pub fn validate(&self) -> Result<()> {
        for (ci, clip) in self.votes.iter().enumerate() {
            if clip.len() != self.reasons.len() {
                return Err(Error::invalid(format!("clip {} has wrong reason count", self.clips[ci])));
            }
            for v in clip {
                if v.len() != self.raters || v.iter().any(|&x| x > 1) {
                    return Err(Error::invalid(format!(
                        "clip {} needs exactly {} binary votes per reason",
                        self.clips[ci], self.raters
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fleiss items (selected, not selected) for one reason, pooled over clips.
    pub fn reason_items(&self, reason_index: usize) -> Vec<Vec<usize>> {
        self.votes
            .iter()
            .map(|clip| {
                let yes: usize = clip[reason_index].iter().map(|&v| v as usize).sum();
                vec![yes, self.raters - yes]
            })
            .collect()
    }
}

/// Builds one vote matrix per action from clips annotated by exactly
/// `raters` workers. Returns the matrices and the ids of skipped clips.
pub fn vote_matrices(corpus: &Corpus, raters: usize) -> (Vec<VoteMatrix>, Vec<String>) {
    let by_clip = corpus.annotations_by_clip();
    let mut by_action: BTreeMap<&str, VoteMatrix> = BTreeMap::new();
    let mut skipped = Vec::new();
    for clip in &corpus.clips {
        let Some(recs) = by_clip.get(clip.clip_id.as_str()) else {
            continue;
        };
        if recs.len() != raters {
            skipped.push(clip.clip_id.clone());
            continue;
        }
        let m = by_action.entry(clip.action.as_str()).or_insert_with(|| VoteMatrix {
            action: clip.action.clone(),
            raters,
            reasons: corpus.taxonomy.reason_ids(&clip.action).unwrap_or_else(|| clip.candidate_reason_ids.clone()),
            clips: Vec::new(),
            votes: Vec::new(),
        });
        let row =
            m.reasons.iter().map(|r| recs.iter().map(|a| a.selected_reason_ids.contains(r) as u8).collect()).collect();
        m.clips.push(clip.clip_id.clone());
        m.votes.push(row);
    }
    (by_action.into_values().collect(), skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonKappa {
    pub action: String,
    pub reason_id: String,
    pub kappa: f64,
    pub degenerate: bool,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub per_reason: Vec<ReasonKappa>,
    /// Mean non-degenerate kappa per action; `None` if all were degenerate.
    pub per_action: BTreeMap<String, Option<f64>>,
    pub overall: Option<f64>,
    pub degenerate_reasons: usize,
    pub confidence_tally: BTreeMap<ConfidenceMajority, usize>,
    pub modality_tally: BTreeMap<ModalityMajority, usize>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Kappa per reason, unweighted mean per action, unweighted mean over actions.
/// Degenerate reasons are reported but left out of the means.
pub fn agreement_report(matrices: &[VoteMatrix], gold: &[GoldRecord]) -> Result<AgreementReport> {
    let mut per_reason = Vec::new();
    let mut per_action = BTreeMap::new();
    let mut degenerate_reasons = 0;
    for m in matrices {
        m.validate()?;
        let mut ks = Vec::new();
        if !m.clips.is_empty() {
            for (ri, rid) in m.reasons.iter().enumerate() {
                let k = fleiss_kappa(&m.reason_items(ri))?;
                if k.degenerate {
                    degenerate_reasons += 1;
                } else {
                    ks.push(k.kappa);
                }
                per_reason.push(ReasonKappa {
                    action: m.action.clone(),
                    reason_id: rid.clone(),
                    kappa: k.kappa,
                    degenerate: k.degenerate,
                    items: m.clips.len(),
                });
            }
        }
        per_action.insert(m.action.clone(), mean(&ks));
    }
    let action_means: Vec<f64> = per_action.values().flatten().copied().collect();
    let (confidence_tally, modality_tally) = tallies(gold);
    Ok(AgreementReport {
        per_reason,
        per_action,
        overall: mean(&action_means),
        degenerate_reasons,
        confidence_tally,
        modality_tally,
    })
}

fn tallies(gold: &[GoldRecord]) -> (BTreeMap<ConfidenceMajority, usize>, BTreeMap<ModalityMajority, usize>) {
    let mut conf: BTreeMap<ConfidenceMajority, usize> = [
        ConfidenceMajority::High,
        ConfidenceMajority::Medium,
        ConfidenceMajority::Low,
        ConfidenceMajority::NoAgreement,
    ]
    .into_iter()
    .map(|c| (c, 0))
    .collect();
    let mut modal: BTreeMap<ModalityMajority, usize> =
        [ModalityMajority::Verbal, ModalityMajority::Visual, ModalityMajority::Both, ModalityMajority::NoAgreement]
            .into_iter()
            .map(|m| (m, 0))
            .collect();
    for g in gold {
        *conf.entry(g.majority_confidence).or_default() += 1;
        *modal.entry(g.majority_modality).or_default() += 1;
    }
    (conf, modal)
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|j| j.as_str().map(str::to_string)).unwrap_or_default()
}

impl AgreementReport {
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = self
            .per_action
            .iter()
            .map(|(a, k)| vec![a.clone(), k.map_or("n/a".into(), |k| format!("{k:.3}"))])
            .collect();
        rows.push(vec!["overall".into(), self.overall.map_or("n/a".into(), |k| format!("{k:.3}"))]);
        let mut out = table::render(&["action", "fleiss kappa"], &rows);
        out.push_str(&format!("degenerate reasons excluded: {}\n\n", self.degenerate_reasons));
        let conf: Vec<Vec<String>> = self.confidence_tally.iter().map(|(k, v)| vec![label(k), v.to_string()]).collect();
        out.push_str(&table::render(&["majority confidence", "clips"], &conf));
        out.push('\n');
        let modal: Vec<Vec<String>> = self.modality_tally.iter().map(|(k, v)| vec![label(k), v.to_string()]).collect();
        out.push_str(&table::render(&["majority modality", "clips"], &modal));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub clips: usize,
    pub video_hours: f64,
    pub transcript_words: usize,
    pub actions: usize,
    pub reasons: usize,
    pub confidence_tally: BTreeMap<ConfidenceMajority, usize>,
    pub modality_tally: BTreeMap<ModalityMajority, usize>,
    pub clips_per_action: BTreeMap<String, usize>,
}

/// Clip count, hours from clip durations, excerpt word count, taxonomy
/// sizes and majority tallies.
pub fn dataset_stats(corpus: &Corpus, gold: &[GoldRecord]) -> DatasetStats {
    let (confidence_tally, modality_tally) = tallies(gold);
    let mut clips_per_action: BTreeMap<String, usize> = BTreeMap::new();
    for c in &corpus.clips {
        *clips_per_action.entry(c.action.clone()).or_default() += 1;
    }
    DatasetStats {
        clips: corpus.clips.len(),
        video_hours: corpus.clips.iter().map(|c| c.duration_s()).sum::<f64>() / 3600.0,
        transcript_words: corpus.clips.iter().map(|c| word_count(&c.excerpt)).sum(),
        actions: corpus.taxonomy.actions.len(),
        reasons: corpus.taxonomy.reason_count(),
        confidence_tally,
        modality_tally,
        clips_per_action,
    }
}

impl DatasetStats {
    pub fn to_text(&self) -> String {
        let rows = vec![
            vec!["Video-clips".to_string(), self.clips.to_string()],
            vec!["Video hours".to_string(), format!("{:.1}", self.video_hours)],
            vec!["Transcript words".to_string(), self.transcript_words.to_string()],
            vec!["Actions".to_string(), self.actions.to_string()],
            vec!["Reasons".to_string(), self.reasons.to_string()],
        ];
        let mut out = table::render(&["statistic", "value"], &rows);
        out.push('\n');
        let modal: Vec<Vec<String>> = self.modality_tally.iter().map(|(k, v)| vec![label(k), v.to_string()]).collect();
        out.push_str(&table::render(&["majority modality", "clips"], &modal));
        out
    }
}

/// Per-action reason frequency among gold labels, for distribution plots.
pub fn reason_distribution(corpus: &Corpus, gold: &[GoldRecord]) -> BTreeMap<String, BTreeMap<String, usize>> {
    let action_of: HashMap<&str, &str> = corpus.clips.iter().map(|c| (c.clip_id.as_str(), c.action.as_str())).collect();
    let mut out: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for g in gold {
        if let Some(a) = action_of.get(g.clip_id.as_str()) {
            let e = out.entry(a.to_string()).or_default();
            for r in &g.gold_reason_ids {
                *e.entry(r.clone()).or_default() += 1;
            }
        }
    }
    out
}
