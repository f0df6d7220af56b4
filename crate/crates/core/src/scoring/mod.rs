//! Scorer contract, premise and prompt construction, caption dedup and
//! threshold selection.

pub mod remote;
pub mod stub;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{Comparator, FitbPooling, PipelineConfig};
use crate::corpus::{read_json, ClipRecord, ReasonTaxonomy};
use crate::error::{Error, Result};
use crate::taxonomy::{cosine, ReasonVector, VectorStore};
use crate::textmine::{clause_end, context_window, find_action_mentions, tokenize, ActionLexicon, CausalCandidate};

pub const BLANK: &str = "_____";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Embed,
    Nli,
    Fitb,
}

/// One wire request. Which optional fields are present depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerRequest {
    pub id: u64,
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_dim: Option<usize>,
}

impl ScorerRequest {
    fn bare(kind: RequestKind) -> Self {
        ScorerRequest {
            id: 0,
            kind,
            texts: None,
            premise: None,
            hypotheses: None,
            prompt: None,
            candidates: None,
            visual_features: None,
            visual_dim: None,
        }
    }

    pub fn embed(texts: Vec<String>) -> Self {
        ScorerRequest { texts: Some(texts), ..Self::bare(RequestKind::Embed) }
    }

    pub fn nli(premise: String, hypotheses: Vec<String>) -> Self {
        ScorerRequest { premise: Some(premise), hypotheses: Some(hypotheses), ..Self::bare(RequestKind::Nli) }
    }

    pub fn fitb(prompt: String, candidates: Vec<String>, visual: Option<&VisualFeatures>) -> Self {
        ScorerRequest {
            prompt: Some(prompt),
            candidates: Some(candidates),
            visual_features: visual.map(VisualFeatures::rows),
            visual_dim: visual.map(|v| v.dim),
            ..Self::bare(RequestKind::Fitb)
        }
    }

    /// Number of outputs the response must carry.
    pub fn expected_len(&self) -> usize {
        match self.kind {
            RequestKind::Embed => self.texts.as_ref().map_or(0, Vec::len),
            RequestKind::Nli => self.hypotheses.as_ref().map_or(0, Vec::len),
            RequestKind::Fitb => self.candidates.as_ref().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            RequestKind::Embed => self.texts.as_ref().is_some_and(|t| !t.is_empty()),
            RequestKind::Nli => {
                self.premise.as_ref().is_some_and(|p| !p.is_empty())
                    && self.hypotheses.as_ref().is_some_and(|h| !h.is_empty())
            }
            RequestKind::Fitb => {
                self.prompt.as_ref().is_some_and(|p| p.contains(BLANK))
                    && self.candidates.as_ref().is_some_and(|c| !c.is_empty())
            }
        };
        if !ok {
            return Err(Error::invalid(format!("request {} is missing fields for {:?}", self.id, self.kind)));
        }
        if let (Some(rows), Some(dim)) = (&self.visual_features, self.visual_dim) {
            if rows.iter().any(|r| r.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: rows.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerOutput {
    Scores(Vec<f64>),
    Vectors(Vec<Vec<f64>>),
}

impl ScorerOutput {
    pub fn scores(self) -> Result<Vec<f64>> {
        match self {
            ScorerOutput::Scores(s) => Ok(s),
            ScorerOutput::Vectors(_) => Err(Error::Protocol("expected scores, got vectors".into())),
        }
    }

    pub fn vectors(self) -> Result<Vec<Vec<f64>>> {
        match self {
            ScorerOutput::Vectors(v) => Ok(v),
            ScorerOutput::Scores(_) => Err(Error::Protocol("expected vectors, got scores".into())),
        }
    }
}

/// Checks a response against its request and extracts the payload.
pub fn check_response(req: &ScorerRequest, resp: ScorerResponse) -> Result<ScorerOutput> {
    if resp.id != req.id {
        return Err(Error::Protocol(format!("response id {} for request {}", resp.id, req.id)));
    }
    if let Some(e) = resp.error {
        return Err(Error::Server(e));
    }
    let n = req.expected_len();
    match (req.kind, resp.scores, resp.vectors) {
        (RequestKind::Embed, None, Some(v)) => {
            let dim = v.first().map_or(0, Vec::len);
            if v.len() != n || dim == 0 || v.iter().any(|r| r.len() != dim || r.iter().any(|x| !x.is_finite())) {
                return Err(Error::Protocol(format!("request {}: bad embedding shape", req.id)));
            }
            Ok(ScorerOutput::Vectors(v))
        }
        (RequestKind::Nli, Some(s), None) => {
            if s.len() != n || s.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Protocol(format!("request {}: want {n} probabilities", req.id)));
            }
            Ok(ScorerOutput::Scores(s))
        }
        (RequestKind::Fitb, Some(s), None) => {
            if s.len() != n || s.iter().any(|x| !x.is_finite()) {
                return Err(Error::Protocol(format!("request {}: want {n} finite log-likelihoods", req.id)));
            }
            Ok(ScorerOutput::Scores(s))
        }
        _ => Err(Error::Protocol(format!("request {}: payload does not match kind {:?}", req.id, req.kind))),
    }
}

pub trait Scorer: Sync {
    /// Answers requests in order. Implementations assign wire ids themselves.
    fn call_many(&self, requests: &[ScorerRequest]) -> Result<Vec<ScorerOutput>>;

    fn call(&self, request: &ScorerRequest) -> Result<ScorerOutput> {
        let mut out = self.call_many(std::slice::from_ref(request))?;
        out.pop().ok_or_else(|| Error::Protocol("empty response batch".into()))
    }
}

/// Local embeddings from a vector file. Only embed requests are supported.
impl Scorer for VectorStore {
    fn call_many(&self, requests: &[ScorerRequest]) -> Result<Vec<ScorerOutput>> {
        requests
            .iter()
            .map(|r| match (r.kind, &r.texts) {
                (RequestKind::Embed, Some(texts)) => Ok(ScorerOutput::Vectors(
                    texts.iter().map(|t| self.get(t).map(<[f64]>::to_vec)).collect::<Result<_>>()?,
                )),
                _ => Err(Error::Unscorable(format!("vector store cannot answer {:?} requests", r.kind))),
            })
            .collect()
    }
}

/// Cosine of the document against each reason; selected iff strictly greater
/// than the threshold.
pub fn cosine_select(doc: &[f64], reasons: &[ReasonVector], threshold: f64) -> Result<(Vec<String>, Vec<f64>)> {
    let scores = reasons.iter().map(|r| cosine(doc, &r.vector)).collect::<Result<Vec<_>>>()?;
    let selected =
        threshold_select(&scores, threshold, Comparator::Greater).into_iter().map(|i| reasons[i].id.clone()).collect();
    Ok((selected, scores))
}

/// `cosine_select` on the embedding of the text around the causal marker.
pub fn vicinity_select(
    candidate: &CausalCandidate,
    window: Option<usize>,
    reasons: &[ReasonVector],
    store: &VectorStore,
    threshold: f64,
) -> Result<(Vec<String>, Vec<f64>)> {
    let text = context_window(candidate, window)?;
    cosine_select(store.get(&text)?, reasons, threshold)
}

pub fn nli_hypothesis(action: &str, reason: &str) -> Result<String> {
    if action.trim().is_empty() || reason.trim().is_empty() {
        return Err(Error::invalid("hypothesis needs a non-empty action and reason"));
    }
    Ok(format!("The reason for {action} is {reason}."))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSlotCaption {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

impl TimeSlotCaption {
    fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    fn overlap(&self, other: &TimeSlotCaption) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }
}

/// Drops a slot when a strictly longer slot covers at least
/// `overlap_fraction` of it. Survivors are ordered by start time.
pub fn dedup_captions(slots: &[TimeSlotCaption], overlap_fraction: f64) -> Vec<TimeSlotCaption> {
    let mut kept: Vec<TimeSlotCaption> = slots
        .iter()
        .filter(|a| {
            !slots.iter().any(|b| b.duration() > a.duration() && b.overlap(a) >= overlap_fraction * a.duration())
        })
        .cloned()
        .collect();
    kept.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
}

/// A line of `objects.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub clip_id: String,
    pub detections: Vec<Detection>,
}

/// A line of `captions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub clip_id: String,
    pub captions: Vec<TimeSlotCaption>,
}

/// Per-clip visual features, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualFeatures {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl VisualFeatures {
    pub fn from_file(path: &Path) -> Result<Self> {
        let v: VisualFeatures = read_json(path)?;
        if v.dim == 0 || !v.data.len().is_multiple_of(v.dim) {
            return Err(Error::invalid(format!(
                "{}: {} values do not split into rows of {}",
                path.display(),
                v.data.len(),
                v.dim
            )));
        }
        Ok(v)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim.max(1)).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PremiseSource {
    #[serde(rename = "transcript")]
    Transcript,
    #[serde(rename = "objects")]
    Objects,
    #[serde(rename = "captions")]
    Captions,
    #[serde(rename = "objects+captions")]
    ObjectsCaptions,
}

impl FromStr for PremiseSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transcript" => Ok(PremiseSource::Transcript),
            "objects" => Ok(PremiseSource::Objects),
            "captions" => Ok(PremiseSource::Captions),
            "objects+captions" => Ok(PremiseSource::ObjectsCaptions),
            _ => Err(Error::invalid(format!("unknown premise source {s:?}"))),
        }
    }
}

impl fmt::Display for PremiseSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PremiseSource::Transcript => "transcript",
            PremiseSource::Objects => "objects",
            PremiseSource::Captions => "captions",
            PremiseSource::ObjectsCaptions => "objects+captions",
        })
    }
}

/// The artifacts available for one clip.
#[derive(Debug, Clone, Copy)]
pub struct ClipArtifacts<'a> {
    pub clip_id: &'a str,
    pub excerpt: &'a str,
    pub objects: Option<&'a [Detection]>,
    pub captions: Option<&'a [TimeSlotCaption]>,
}

fn object_text(dets: &[Detection], min_confidence: f64) -> String {
    let mut seen = Vec::<&str>::new();
    for d in dets {
        if d.confidence >= min_confidence && !seen.contains(&d.label.as_str()) {
            seen.push(&d.label);
        }
    }
    seen.join(", ")
}

fn caption_text(caps: &[TimeSlotCaption], overlap_fraction: f64) -> String {
    let mut seen = Vec::<String>::new();
    for c in dedup_captions(caps, overlap_fraction) {
        let t = c.text.trim().trim_end_matches('.').to_string();
        if !t.is_empty() && !seen.contains(&t) {
            seen.push(t);
        }
    }
    seen.join(". ")
}

pub fn build_premise(
    source: PremiseSource,
    art: &ClipArtifacts<'_>,
    object_confidence: f64,
    overlap_fraction: f64,
) -> Result<String> {
    let missing = |kind: &str| Error::MissingArtifact { kind: kind.to_string(), clip_id: art.clip_id.to_string() };
    let objects = || art.objects.map(|o| object_text(o, object_confidence)).ok_or_else(|| missing("objects"));
    let captions = || art.captions.map(|c| caption_text(c, overlap_fraction)).ok_or_else(|| missing("captions"));
    Ok(match source {
        PremiseSource::Transcript => art.excerpt.to_string(),
        PremiseSource::Objects => objects()?,
        PremiseSource::Captions => captions()?,
        PremiseSource::ObjectsCaptions => {
            let parts = [objects()?, captions()?];
            parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join(". ")
        }
    })
}

fn insert_blank(excerpt: &str, at: usize) -> String {
    let mut s = String::with_capacity(excerpt.len() + 16);
    s.push_str(&excerpt[..at]);
    s.push_str(" because ");
    s.push_str(BLANK);
    s.push_str(&excerpt[at..]);
    s
}

/// Cloze prompts for every mention of `action`, one blank each, in mention
/// order. Mentions that share a clause yield one prompt.
pub fn fitb_prompts(excerpt: &str, action: &str, lexicon: &ActionLexicon) -> Result<Vec<String>> {
    let tokens = tokenize(excerpt);
    let mut ends: Vec<usize> = find_action_mentions(&tokens, lexicon)
        .into_iter()
        .filter(|m| m.lemma == action)
        .map(|m| clause_end(excerpt, tokens[m.token_index].start))
        .collect();
    ends.dedup();
    if ends.is_empty() {
        return Err(Error::MentionNotFound(format!("{action:?} in {excerpt:?}")));
    }
    Ok(ends.into_iter().map(|at| insert_blank(excerpt, at)).collect())
}

/// Cloze prompt with the blank after the clause of the first mention.
pub fn fitb_prompt(excerpt: &str, action: &str, lexicon: &ActionLexicon) -> Result<String> {
    Ok(fitb_prompts(excerpt, action, lexicon)?.swap_remove(0))
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Indices whose score passes the threshold under `cmp`.
pub fn threshold_select(scores: &[f64], threshold: f64, cmp: Comparator) -> Vec<usize> {
    scores.iter().enumerate().filter(|(_, s)| cmp.passes(**s, threshold)).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cosine,
    Vicinity,
    Nli,
    Fitb,
}

impl Method {
    pub fn comparator(self, cfg: &PipelineConfig) -> Comparator {
        match self {
            Method::Cosine | Method::Vicinity => cfg.cosine_comparator,
            Method::Nli => cfg.nli_comparator,
            Method::Fitb => cfg.fitb_comparator,
        }
    }

    pub fn default_threshold(self, cfg: &PipelineConfig) -> f64 {
        match self {
            Method::Cosine | Method::Vicinity => cfg.cosine_threshold,
            Method::Nli => cfg.nli_threshold,
            Method::Fitb => cfg.fitb_threshold,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Method::Cosine),
            "vicinity" => Ok(Method::Vicinity),
            "nli" => Ok(Method::Nli),
            "fitb" => Ok(Method::Fitb),
            _ => Err(Error::invalid(format!("unknown scoring method {s:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cosine => "cosine",
            Method::Vicinity => "vicinity",
            Method::Nli => "nli",
            Method::Fitb => "fitb",
        })
    }
}

/// Scores for one clip, one per candidate reason in taxonomy order. Cloze
/// scores are already softmax-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonScore {
    pub clip_id: String,
    pub action: String,
    pub method: String,
    pub reason_ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl ReasonScore {
    pub fn select(&self, threshold: f64, cmp: Comparator) -> Vec<String> {
        threshold_select(&self.scores, threshold, cmp).into_iter().map(|i| self.reason_ids[i].clone()).collect()
    }

    pub fn score_map(&self) -> BTreeMap<String, f64> {
        self.reason_ids.iter().cloned().zip(self.scores.iter().copied()).collect()
    }
}

/// Everything the scoring pipeline may need besides the clips themselves.
pub struct ScoringInputs<'a> {
    pub taxonomy: &'a ReasonTaxonomy,
    pub lexicon: &'a ActionLexicon,
    pub cfg: &'a PipelineConfig,
    pub premise_source: PremiseSource,
    pub objects: HashMap<String, Vec<Detection>>,
    pub captions: HashMap<String, Vec<TimeSlotCaption>>,
    /// Causal candidates keyed by clip id, for the vicinity method.
    pub candidates: HashMap<String, CausalCandidate>,
    pub visual: HashMap<String, VisualFeatures>,
}

impl<'a> ScoringInputs<'a> {
    pub fn new(taxonomy: &'a ReasonTaxonomy, lexicon: &'a ActionLexicon, cfg: &'a PipelineConfig) -> Self {
        ScoringInputs {
            taxonomy,
            lexicon,
            cfg,
            premise_source: PremiseSource::Transcript,
            objects: HashMap::new(),
            captions: HashMap::new(),
            candidates: HashMap::new(),
            visual: HashMap::new(),
        }
    }

    fn reasons(&self, clip: &ClipRecord) -> Result<(Vec<String>, Vec<String>)> {
        let entry = self.taxonomy.actions.get(&clip.action).ok_or_else(|| {
            Error::invalid(format!("clip {}: action {:?} not in taxonomy", clip.clip_id, clip.action))
        })?;
        Ok(entry.reasons.iter().map(|r| (r.id.clone(), r.label.clone())).unzip())
    }

    /// Requests needed to score one clip.
    pub fn requests(&self, method: Method, clip: &ClipRecord) -> Result<Vec<ScorerRequest>> {
        let (_, labels) = self.reasons(clip)?;
        match method {
            Method::Cosine | Method::Vicinity => {
                let doc = if method == Method::Cosine {
                    clip.excerpt.clone()
                } else {
                    let cand = self.candidates.get(&clip.clip_id).ok_or_else(|| Error::MissingArtifact {
                        kind: "candidate".into(),
                        clip_id: clip.clip_id.clone(),
                    })?;
                    context_window(cand, Some(self.cfg.vicinity_window))?
                };
                let mut texts = vec![doc];
                texts.extend(labels);
                Ok(vec![ScorerRequest::embed(texts)])
            }
            Method::Nli => {
                let art = ClipArtifacts {
                    clip_id: &clip.clip_id,
                    excerpt: &clip.excerpt,
                    objects: self.objects.get(&clip.clip_id).map(Vec::as_slice),
                    captions: self.captions.get(&clip.clip_id).map(Vec::as_slice),
                };
                let premise = build_premise(
                    self.premise_source,
                    &art,
                    self.cfg.object_confidence,
                    self.cfg.dedup_overlap_fraction,
                )?;
                let gerund = self.lexicon.gerund(&clip.action);
                let hyps = labels.iter().map(|l| nli_hypothesis(&gerund, l)).collect::<Result<_>>()?;
                Ok(vec![ScorerRequest::nli(premise, hyps)])
            }
            Method::Fitb => {
                let prompts = match self.cfg.fitb_pooling {
                    FitbPooling::First => vec![fitb_prompt(&clip.excerpt, &clip.action, self.lexicon)?],
                    FitbPooling::Max => fitb_prompts(&clip.excerpt, &clip.action, self.lexicon)?,
                };
                let visual = self.visual.get(&clip.clip_id);
                Ok(prompts.into_iter().map(|p| ScorerRequest::fitb(p, labels.clone(), visual)).collect())
            }
        }
    }

    /// Turns scorer outputs for one clip into a `ReasonScore`.
    pub fn assemble(&self, method: Method, clip: &ClipRecord, outputs: Vec<ScorerOutput>) -> Result<ReasonScore> {
        let (reason_ids, _) = self.reasons(clip)?;
        let scores = match method {
            Method::Cosine | Method::Vicinity => {
                let vecs =
                    outputs.into_iter().next().ok_or_else(|| Error::Protocol("missing output".into()))?.vectors()?;
                let (doc, labels) = vecs.split_first().ok_or_else(|| Error::Protocol("no vectors".into()))?;
                labels.iter().map(|v| cosine(doc, v)).collect::<Result<Vec<_>>>()?
            }
            Method::Nli => {
                outputs.into_iter().next().ok_or_else(|| Error::Protocol("missing output".into()))?.scores()?
            }
            Method::Fitb => {
                let mut pooled: Option<Vec<f64>> = None;
                for o in outputs {
                    let p = softmax(&o.scores()?);
                    pooled = Some(match pooled {
                        None => p,
                        Some(acc) => acc.iter().zip(&p).map(|(a, b)| a.max(*b)).collect(),
                    });
                }
                pooled.ok_or_else(|| Error::Protocol("missing output".into()))?
            }
        };
        if scores.len() != reason_ids.len() {
            return Err(Error::Protocol(format!(
                "clip {}: {} scores for {} reasons",
                clip.clip_id,
                scores.len(),
                reason_ids.len()
            )));
        }
        Ok(ReasonScore {
            clip_id: clip.clip_id.clone(),
            action: clip.action.clone(),
            method: method.to_string(),
            reason_ids,
            scores,
        })
    }
}

/// Scores every clip with one batched scorer call.
pub fn score_clips(
    method: Method,
    clips: &[ClipRecord],
    inputs: &ScoringInputs<'_>,
    scorer: &dyn Scorer,
) -> Result<Vec<ReasonScore>> {
    let mut requests = Vec::new();
    let mut spans = Vec::with_capacity(clips.len());
    for clip in clips {
        let reqs = inputs.requests(method, clip)?;
        spans.push(requests.len()..requests.len() + reqs.len());
        requests.extend(reqs);
    }
    let mut outputs = scorer.call_many(&requests)?.into_iter();
    clips
        .iter()
        .zip(spans)
        .map(|(clip, span)| inputs.assemble(method, clip, outputs.by_ref().take(span.len()).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::normalized;
    use proptest::prelude::*;

    fn rv(id: &str, v: Vec<f64>) -> ReasonVector {
        ReasonVector { id: id.into(), vector: v }
    }

    fn lex() -> ActionLexicon {
        ActionLexicon::new([("clean", vec!["cleaning", "cleaned", "cleans"])]).unwrap()
    }

    #[test]
    fn cosine_select_examples() {
        let doc = vec![1.0, 0.0];
        let (sel, s) = cosine_select(&doc, &[rv("same", vec![1.0, 0.0]), rv("orth", vec![0.0, 1.0])], 0.1).unwrap();
        assert_eq!(sel, vec!["same"]);
        assert_eq!(s, vec![1.0, 0.0]);
        // dot product exactly 0.1 with unit vectors; 0.1 and sqrt(0.99) are exact enough that cosine == 0.1.
        let b = vec![0.1, 0.99f64.sqrt()];
        let c = cosine(&doc, &b).unwrap();
        let (sel, _) = cosine_select(&doc, &[rv("edge", b)], c).unwrap();
        assert!(sel.is_empty());
        assert!((c - 0.1).abs() < 1e-12);
        assert!(cosine_select(&doc, &[rv("bad", vec![1.0])], 0.1).is_err());
    }

    #[test]
    fn nli_template() {
        assert_eq!(nli_hypothesis("cleaning", "declutter").unwrap(), "The reason for cleaning is declutter.");
        assert_eq!(nli_hypothesis("writing", "take notes").unwrap(), "The reason for writing is take notes.");
        assert!(nli_hypothesis("writing", "").is_err());
    }

    fn slot(a: f64, b: f64, t: &str) -> TimeSlotCaption {
        TimeSlotCaption { start_s: a, end_s: b, text: t.into() }
    }

    #[test]
    fn caption_dedup_examples() {
        let k = dedup_captions(&[slot(10.0, 20.0, "a"), slot(0.0, 60.0, "b")], 0.8);
        assert_eq!(k, vec![slot(0.0, 60.0, "b")]);
        let k = dedup_captions(&[slot(30.0, 40.0, "b"), slot(0.0, 10.0, "a")], 0.8);
        assert_eq!(k.len(), 2);
        assert_eq!(k[0].text, "a");
        let k = dedup_captions(&[slot(0.0, 10.0, "a"), slot(9.0, 30.0, "b")], 0.8);
        assert_eq!(k.len(), 2);
    }

    #[test]
    fn premise_modes() {
        let dets = vec![
            Detection { label: "sink".into(), confidence: 0.9 },
            Detection { label: "sponge".into(), confidence: 0.65 },
            Detection { label: "sink".into(), confidence: 0.8 },
        ];
        let caps = vec![slot(0.0, 5.0, "a person washes dishes")];
        let art = ClipArtifacts { clip_id: "c", excerpt: "I wash.", objects: Some(&dets), captions: Some(&caps) };
        assert_eq!(build_premise(PremiseSource::Objects, &art, 0.7, 0.8).unwrap(), "sink");
        assert_eq!(build_premise(PremiseSource::Transcript, &art, 0.7, 0.8).unwrap(), "I wash.");
        assert_eq!(
            build_premise(PremiseSource::ObjectsCaptions, &art, 0.7, 0.8).unwrap(),
            "sink. a person washes dishes"
        );
        let bare = ClipArtifacts { objects: None, ..art };
        assert!(matches!(build_premise(PremiseSource::Objects, &bare, 0.7, 0.8), Err(Error::MissingArtifact { .. })));
    }

    #[test]
    fn fitb_examples() {
        let l = lex();
        assert_eq!(fitb_prompt("I clean the windows.", "clean", &l).unwrap(), "I clean the windows because _____.");
        assert_eq!(fitb_prompt("i clean the windows", "clean", &l).unwrap(), "i clean the windows because _____");
        assert_eq!(
            fitb_prompt("I clean the sink. Then I cleaned the floor!", "clean", &l).unwrap(),
            "I clean the sink because _____. Then I cleaned the floor!"
        );
        assert_eq!(fitb_prompts("I clean the sink. Then I cleaned the floor!", "clean", &l).unwrap().len(), 2);
        assert!(matches!(fitb_prompt("nothing here", "clean", &l), Err(Error::MentionNotFound(_))));
    }

    #[test]
    fn softmax_threshold_by_hand() {
        // log-likelihoods (0, ln 2, ln 5): exp = 1, 2, 5 -> 1/8, 2/8, 5/8.
        let p = softmax(&[0.0, 2f64.ln(), 5f64.ln()]);
        assert!((p[0] - 0.125).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12 && (p[2] - 0.625).abs() < 1e-12);
        assert_eq!(threshold_select(&p, 0.25, Comparator::GreaterEq), vec![1, 2]);
        assert_eq!(threshold_select(&[0.81, 0.79], 0.8, Comparator::GreaterEq), vec![0]);
        assert!(threshold_select(&[0.0, 0.0], 0.1, Comparator::Greater).is_empty());
    }

    #[test]
    fn response_checks() {
        let mut req = ScorerRequest::nli("p".into(), vec!["a".into(), "b".into()]);
        req.id = 4;
        let ok = ScorerResponse { id: 4, scores: Some(vec![0.2, 0.9]), vectors: None, error: None };
        assert_eq!(check_response(&req, ok.clone()).unwrap(), ScorerOutput::Scores(vec![0.2, 0.9]));
        let short = ScorerResponse { scores: Some(vec![0.2]), ..ok.clone() };
        assert!(matches!(check_response(&req, short), Err(Error::Protocol(_))));
        let out_of_range = ScorerResponse { scores: Some(vec![0.2, 1.5]), ..ok.clone() };
        assert!(matches!(check_response(&req, out_of_range), Err(Error::Protocol(_))));
        let err = ScorerResponse { scores: None, error: Some("model exploded".into()), ..ok };
        assert!(matches!(check_response(&req, err), Err(Error::Server(m)) if m == "model exploded"));
    }

    proptest! {
        #[test]
        fn dedup_is_antichain(raw in proptest::collection::vec((0.0f64..100.0, 0.1f64..50.0), 1..12), frac in 0.1f64..1.0) {
            let slots: Vec<TimeSlotCaption> = raw.iter().enumerate().map(|(i, (s, d))| slot(*s, s + d, &i.to_string())).collect();
            let kept = dedup_captions(&slots, frac);
            for a in &kept {
                for b in &kept {
                    prop_assert!(!(b.duration() > a.duration() && b.overlap(a) >= frac * a.duration()));
                }
            }
            for w in kept.windows(2) { prop_assert!(w[0].start_s <= w[1].start_s); }
        }

        #[test]
        fn fitb_preserves_excerpt(words in proptest::collection::vec("[a-z]{1,6}", 0..8), tail in "[.!?]?") {
            let excerpt = format!("{} clean {}{}", words.join(" "), words.join(" "), tail);
            let p = fitb_prompt(&excerpt, "clean", &lex()).unwrap();
            prop_assert_eq!(p.matches(BLANK).count(), 1);
            prop_assert_eq!(p.replacen(&format!(" because {BLANK}"), "", 1), excerpt);
        }

        #[test]
        fn selection_monotone(scores in proptest::collection::vec(-1.0f64..1.0, 1..8), t1 in -1.0f64..1.0, t2 in -1.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            for cmp in [Comparator::Greater, Comparator::GreaterEq] {
                let a = threshold_select(&scores, hi, cmp);
                let b = threshold_select(&scores, lo, cmp);
                prop_assert!(a.iter().all(|i| b.contains(i)));
            }
        }

        #[test]
        fn cosine_rotation_invariant(doc in proptest::collection::vec(-1.0f64..1.0, 2), rs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 2), 1..5), theta in 0.0f64..std::f64::consts::TAU) {
            prop_assume!(doc.iter().any(|x| x.abs() > 1e-3));
            let rot = |v: &[f64]| vec![v[0] * theta.cos() - v[1] * theta.sin(), v[0] * theta.sin() + v[1] * theta.cos()];
            let reasons: Vec<ReasonVector> = rs.iter().enumerate().map(|(i, v)| rv(&i.to_string(), normalized(v))).collect();
            let rotated: Vec<ReasonVector> = reasons.iter().map(|r| rv(&r.id, rot(&r.vector))).collect();
            let (_, s1) = cosine_select(&normalized(&doc), &reasons, 0.1).unwrap();
            let (_, s2) = cosine_select(&rot(&normalized(&doc)), &rotated, 0.1).unwrap();
            for (a, b) in s1.iter().zip(&s2) { prop_assert!((a - b).abs() < 1e-9); }
        }
    }
}
