//! Corpus data model, line-oriented JSON I/O, validation and dataset splitting.
//!
//! A corpus directory holds `transcripts.jsonl`, `clips.jsonl`, `taxonomy.json`,
//! `annotations.jsonl` and an optional `split.json`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result, ValidationIssue};

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const CLIPS_FILE: &str = "clips.jsonl";
pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptDoc {
    pub video_id: String,
    pub channel_id: String,
    pub segments: Vec<CaptionSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub action: String,
    pub candidate_reason_ids: Vec<String>,
    pub excerpt: String,
}

impl ClipRecord {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonSource {
    KnowledgeGraph,
    Crowd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonEntry {
    pub id: String,
    pub label: String,
    pub source: ReasonSource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub reasons: Vec<ReasonEntry>,
    pub clip_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonTaxonomy {
    pub actions: BTreeMap<String, ActionEntry>,
}

impl ReasonTaxonomy {
    pub fn reason_count(&self) -> usize {
        self.actions.values().map(|a| a.reasons.len()).sum()
    }

    /// Reason id → label across all actions.
    pub fn labels(&self) -> HashMap<&str, &str> {
        self.actions.values().flat_map(|a| a.reasons.iter()).map(|r| (r.id.as_str(), r.label.as_str())).collect()
    }

    pub fn reason_ids(&self, action: &str) -> Option<Vec<String>> {
        self.actions.get(action).map(|a| a.reasons.iter().map(|r| r.id.clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Verbal,
    Visual,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub clip_id: String,
    pub worker_id: String,
    pub selected_reason_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other_reason_text: Option<String>,
    pub modality: Modality,
    pub confidence: Confidence,
}

/// Majority modality of a clip, or no agreement when the plurality is tied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalityMajority {
    Verbal,
    Visual,
    Both,
    NoAgreement,
}

impl From<Modality> for ModalityMajority {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Verbal => ModalityMajority::Verbal,
            Modality::Visual => ModalityMajority::Visual,
            Modality::Both => ModalityMajority::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceMajority {
    High,
    Medium,
    Low,
    NoAgreement,
}

impl From<Confidence> for ConfidenceMajority {
    fn from(c: Confidence) -> Self {
        match c {
            Confidence::High => ConfidenceMajority::High,
            Confidence::Medium => ConfidenceMajority::Medium,
            Confidence::Low => ConfidenceMajority::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub clip_id: String,
    pub gold_reason_ids: Vec<String>,
    pub majority_confidence: ConfidenceMajority,
    pub majority_modality: ModalityMajority,
    pub per_reason_votes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub transcripts: Vec<TranscriptDoc>,
    pub clips: Vec<ClipRecord>,
    pub taxonomy: ReasonTaxonomy,
    pub annotations: Vec<AnnotationRecord>,
    pub split: Option<Split>,
}

/// Source line numbers of each loaded record, used to locate validation issues.
#[derive(Debug, Clone, Default)]
struct LineIndex {
    transcripts: Vec<usize>,
    clips: Vec<usize>,
    annotations: Vec<usize>,
}

/// Reads a JSON-lines file, skipping blank lines. Returns records with their
/// 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, file: &str) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    let mut offset = 0usize;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let rec = serde_json::from_str(body).map_err(|e| Error::Parse {
                file: file.to_string(),
                line: i + 1,
                byte_offset: offset + e.column().saturating_sub(1),
                message: e.to_string(),
            })?;
            out.push((i + 1, rec));
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        // serde_json reports line/column; convert to a byte offset.
        let line_start: usize = text.split_inclusive('\n').take(e.line().saturating_sub(1)).map(str::len).sum();
        Error::Parse {
            file: path.display().to_string(),
            line: e.line(),
            byte_offset: line_start + e.column().saturating_sub(1),
            message: e.to_string(),
        }
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn issue(file: &str, line: usize, record: impl Into<String>, message: impl Into<String>) -> ValidationIssue {
    ValidationIssue { file: file.to_string(), line, record: record.into(), message: message.into() }
}

impl Corpus {
    /// Loads and validates a corpus directory.
    ///
    /// With `strict_validation` on, any invariant violation fails the load.
    /// Otherwise the corpus is returned together with the list of violations.
    pub fn load(dir: &Path, cfg: &PipelineConfig) -> Result<(Corpus, Vec<ValidationIssue>)> {
        let transcripts: Vec<(usize, TranscriptDoc)> = read_jsonl(&dir.join(TRANSCRIPTS_FILE))?;
        let clips: Vec<(usize, ClipRecord)> = read_jsonl(&dir.join(CLIPS_FILE))?;
        let taxonomy: ReasonTaxonomy = read_json(&dir.join(TAXONOMY_FILE))?;
        let ann_path = dir.join(ANNOTATIONS_FILE);
        let annotations: Vec<(usize, AnnotationRecord)> =
            if ann_path.exists() { read_jsonl(&ann_path)? } else { Vec::new() };
        let split_path = dir.join(SPLIT_FILE);
        let split = if split_path.exists() { Some(read_json::<Split>(&split_path)?) } else { None };

        let lines = LineIndex {
            transcripts: transcripts.iter().map(|(l, _)| *l).collect(),
            clips: clips.iter().map(|(l, _)| *l).collect(),
            annotations: annotations.iter().map(|(l, _)| *l).collect(),
        };
        let corpus = Corpus {
            transcripts: transcripts.into_iter().map(|(_, t)| t).collect(),
            clips: clips.into_iter().map(|(_, c)| c).collect(),
            taxonomy,
            annotations: annotations.into_iter().map(|(_, a)| a).collect(),
            split,
        };
        let issues = corpus.validate_lines(cfg, &lines);
        if cfg.strict_validation && !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok((corpus, issues))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(TRANSCRIPTS_FILE), &self.transcripts)?;
        write_jsonl(&dir.join(CLIPS_FILE), &self.clips)?;
        write_json(&dir.join(TAXONOMY_FILE), &self.taxonomy)?;
        write_jsonl(&dir.join(ANNOTATIONS_FILE), &self.annotations)?;
        if let Some(split) = &self.split {
            write_json(&dir.join(SPLIT_FILE), split)?;
        }
        Ok(())
    }

    /// Checks every invariant, returning all violations found.
    pub fn validate(&self, cfg: &PipelineConfig) -> Vec<ValidationIssue> {
        let lines = LineIndex {
            transcripts: (1..=self.transcripts.len()).collect(),
            clips: (1..=self.clips.len()).collect(),
            annotations: (1..=self.annotations.len()).collect(),
        };
        self.validate_lines(cfg, &lines)
    }

    fn validate_lines(&self, cfg: &PipelineConfig, lines: &LineIndex) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();

        let mut videos = BTreeSet::new();
        for (doc, &line) in self.transcripts.iter().zip(&lines.transcripts) {
            let f = TRANSCRIPTS_FILE;
            if !videos.insert(doc.video_id.as_str()) {
                issues.push(issue(f, line, &doc.video_id, "duplicate video_id"));
            }
            if doc.segments.is_empty() {
                issues.push(issue(f, line, &doc.video_id, "segment list is empty"));
            }
            for (k, seg) in doc.segments.iter().enumerate() {
                let rec = format!("{}#segment{}", doc.video_id, k);
                if !(seg.start_s >= 0.0 && seg.start_s.is_finite() && seg.end_s.is_finite()) {
                    issues.push(issue(f, line, &rec, "segment times must be finite and start_s >= 0"));
                }
                if seg.start_s.is_nan() || seg.end_s.is_nan() || seg.start_s >= seg.end_s {
                    issues.push(issue(
                        f,
                        line,
                        &rec,
                        format!("segment start_s {} is not before end_s {}", seg.start_s, seg.end_s),
                    ));
                }
                if k > 0 && seg.start_s < doc.segments[k - 1].start_s {
                    issues.push(issue(f, line, &rec, "segments not ordered by start_s"));
                }
            }
        }

        for (action, entry) in &self.taxonomy.actions {
            let f = TAXONOMY_FILE;
            let mut labels = BTreeSet::new();
            for r in &entry.reasons {
                if !labels.insert(r.label.as_str()) {
                    issues.push(issue(f, 0, action, format!("duplicate reason label {:?}", r.label)));
                }
            }
            if entry.reasons.len() < cfg.min_reasons {
                issues.push(issue(
                    f,
                    0,
                    action,
                    format!("{} reasons, need at least {}", entry.reasons.len(), cfg.min_reasons),
                ));
            }
            if entry.clip_count < cfg.min_clips {
                issues.push(issue(
                    f,
                    0,
                    action,
                    format!("{} clips, need at least {}", entry.clip_count, cfg.min_clips),
                ));
            }
        }
        let mut reason_ids = BTreeSet::new();
        for r in self.taxonomy.actions.values().flat_map(|a| &a.reasons) {
            if !reason_ids.insert(r.id.as_str()) {
                issues.push(issue(TAXONOMY_FILE, 0, &r.id, "reason id used more than once"));
            }
        }

        let mut clip_index: HashMap<&str, &ClipRecord> = HashMap::new();
        for (clip, &line) in self.clips.iter().zip(&lines.clips) {
            let f = CLIPS_FILE;
            if clip_index.insert(clip.clip_id.as_str(), clip).is_some() {
                issues.push(issue(f, line, &clip.clip_id, "duplicate clip_id"));
            }
            if !self.transcripts.is_empty() && !videos.contains(clip.video_id.as_str()) {
                issues.push(issue(f, line, &clip.clip_id, format!("unknown video_id {:?}", clip.video_id)));
            }
            let d = clip.duration_s();
            if !(d >= cfg.min_clip_s && d <= cfg.max_clip_s) {
                issues.push(issue(
                    f,
                    line,
                    &clip.clip_id,
                    format!("duration {d:.3}s outside [{}, {}]", cfg.min_clip_s, cfg.max_clip_s),
                ));
            }
            match self.taxonomy.actions.get(&clip.action) {
                None => issues.push(issue(f, line, &clip.clip_id, format!("action {:?} not in taxonomy", clip.action))),
                Some(entry) => {
                    let expected: BTreeSet<&str> = entry.reasons.iter().map(|r| r.id.as_str()).collect();
                    let got: BTreeSet<&str> = clip.candidate_reason_ids.iter().map(String::as_str).collect();
                    if expected != got || got.len() != clip.candidate_reason_ids.len() {
                        issues.push(issue(
                            f,
                            line,
                            &clip.clip_id,
                            "candidate_reason_ids differ from the taxonomy reasons of the action",
                        ));
                    }
                }
            }
        }

        let mut per_clip: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (ann, &line) in self.annotations.iter().zip(&lines.annotations) {
            let f = ANNOTATIONS_FILE;
            let rec = format!("{}/{}", ann.clip_id, ann.worker_id);
            match clip_index.get(ann.clip_id.as_str()) {
                None => issues.push(issue(f, line, &rec, "annotation for unknown clip")),
                Some(clip) => {
                    for r in &ann.selected_reason_ids {
                        if !clip.candidate_reason_ids.contains(r) {
                            issues.push(issue(f, line, &rec, format!("selected reason {r:?} is not a candidate")));
                        }
                    }
                }
            }
            if !per_clip.entry(ann.clip_id.as_str()).or_default().insert(ann.worker_id.as_str()) {
                issues.push(issue(f, line, &rec, "worker annotated the clip twice"));
            }
        }
        for (clip_id, workers) in &per_clip {
            if workers.len() != cfg.raters_per_clip {
                issues.push(issue(
                    ANNOTATIONS_FILE,
                    0,
                    *clip_id,
                    format!("{} annotation records, expected {}", workers.len(), cfg.raters_per_clip),
                ));
            }
        }

        if let Some(split) = &self.split {
            let ids: Vec<String> = self.clips.iter().map(|c| c.clip_id.clone()).collect();
            if let Err(e) = check_split(split, &ids) {
                issues.push(issue(SPLIT_FILE, 0, "split", e.to_string()));
            }
        }

        issues
    }

    pub fn clip(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    /// Annotation records grouped by clip id, in file order.
    pub fn annotations_by_clip(&self) -> BTreeMap<&str, Vec<&AnnotationRecord>> {
        let mut m: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
        for a in &self.annotations {
            m.entry(a.clip_id.as_str()).or_default().push(a);
        }
        m
    }
}

/// Checks that a split is an exact partition of `clip_ids`.
pub fn check_split(split: &Split, clip_ids: &[String]) -> Result<()> {
    let all: BTreeSet<&str> = clip_ids.iter().map(String::as_str).collect();
    let dev: BTreeSet<&str> = split.dev.iter().map(String::as_str).collect();
    let test: BTreeSet<&str> = split.test.iter().map(String::as_str).collect();
    if dev.len() != split.dev.len() || test.len() != split.test.len() {
        return Err(Error::invalid("split lists contain duplicates"));
    }
    if let Some(id) = dev.intersection(&test).next() {
        return Err(Error::invalid(format!("clip {id:?} is in both dev and test")));
    }
    let union: BTreeSet<&str> = dev.union(&test).copied().collect();
    if let Some(id) = union.difference(&all).next() {
        return Err(Error::invalid(format!("split names unknown clip {id:?}")));
    }
    if let Some(id) = all.difference(&union).next() {
        return Err(Error::invalid(format!("clip {id:?} missing from split")));
    }
    Ok(())
}

/// Splits clips into development and test sets.
///
/// An explicit manifest, when given, is validated and returned as-is.
/// Otherwise the ids are sorted, shuffled with a seeded ChaCha8 generator and
/// the first `round(dev_fraction * N)` (clamped so both sides are non-empty)
/// become the development set. Both output lists are sorted.
pub fn split_dataset(clip_ids: &[String], dev_fraction: f64, seed: u64, manifest: Option<&Split>) -> Result<Split> {
    if clip_ids.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 clips to split, got {}", clip_ids.len())));
    }
    if let Some(m) = manifest {
        check_split(m, clip_ids)?;
        let mut s = m.clone();
        s.dev.sort();
        s.test.sort();
        return Ok(s);
    }
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::invalid(format!("dev_fraction {dev_fraction} outside (0, 1)")));
    }
    let mut ids: Vec<String> = clip_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != clip_ids.len() {
        return Err(Error::invalid("duplicate clip ids"));
    }
    let n = ids.len();
    let n_dev = ((dev_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut dev = ids[..n_dev].to_vec();
    let mut test = ids[n_dev..].to_vec();
    dev.sort();
    test.sort();
    Ok(Split { dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("clip{i:03}")).collect()
    }

    #[test]
    fn ten_clips_give_two_dev() {
        let s = split_dataset(&ids(10), 0.2, 7, None).unwrap();
        assert_eq!((s.dev.len(), s.test.len()), (2, 8));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset(&ids(50), 0.2, 3, None).unwrap();
        let b = split_dataset(&ids(50), 0.2, 3, None).unwrap();
        assert_eq!(a, b);
        let mut rev = ids(50);
        rev.reverse();
        assert_eq!(split_dataset(&rev, 0.2, 3, None).unwrap(), a);
    }

    #[test]
    fn manifest_overrides_fraction() {
        let all = ids(5);
        let m = Split {
            dev: vec!["clip004".into(), "clip000".into(), "clip001".into()],
            test: vec!["clip002".into(), "clip003".into()],
        };
        let s = split_dataset(&all, 0.2, 0, Some(&m)).unwrap();
        assert_eq!(s.dev, vec!["clip000", "clip001", "clip004"]);
        let bad = Split {
            dev: vec!["clip000".into()],
            test: vec!["clip000".into(), "clip001".into(), "clip002".into(), "clip003".into(), "clip004".into()],
        };
        assert!(split_dataset(&all, 0.2, 0, Some(&bad)).is_err());
    }

    #[test]
    fn too_few_clips() {
        assert!(split_dataset(&ids(1), 0.2, 0, None).is_err());
        assert!(split_dataset(&ids(4), 0.0, 0, None).is_err());
    }

    #[test]
    fn parse_error_reports_byte_offset() {
        let text = "{\"a\":1}\n{\"a\":}\n";
        let err = parse_jsonl::<serde_json::Value>(text, "x.jsonl").unwrap_err();
        match err {
            Error::Parse { line, byte_offset, .. } => {
                assert_eq!(line, 2);
                assert_eq!(byte_offset, 8 + 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn split_partitions_exactly(n in 2usize..200, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let all = ids(n);
            let s = split_dataset(&all, frac, seed, None).unwrap();
            let dev: BTreeSet<_> = s.dev.iter().collect();
            let test: BTreeSet<_> = s.test.iter().collect();
            prop_assert!(dev.is_disjoint(&test));
            prop_assert_eq!(dev.len() + test.len(), n);
            let target = (frac * n as f64).round() as i64;
            prop_assert!((s.dev.len() as i64 - target).abs() <= 1);
        }
    }
}
