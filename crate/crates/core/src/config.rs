//! Pipeline configuration.
//!
//! Every threshold used by the pipeline lives in [`PipelineConfig`]. The on-disk
//! form is a flat `key = value` text file whose keys are the field names below;
//! blank lines and `#` comments are ignored. List values are comma-separated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold comparison used by a selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    GreaterEq,
}

impl Comparator {
    pub fn passes(self, score: f64, threshold: f64) -> bool {
        match self {
            Comparator::Greater => score > threshold,
            Comparator::GreaterEq => score >= threshold,
        }
    }
}

impl FromStr for Comparator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            ">" | "gt" => Ok(Comparator::Greater),
            ">=" | "ge" => Ok(Comparator::GreaterEq),
            other => Err(Error::Config(format!("unknown comparator {other:?}"))),
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Greater => ">",
            Comparator::GreaterEq => ">=",
        })
    }
}

/// How per-instance accuracy is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracyMode {
    /// Fraction of candidate reasons labelled correctly.
    PerLabel,
    /// 1 if the predicted set equals the gold set, else 0.
    Subset,
}

/// Which split the most-frequent baseline counts reason frequencies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencySplit {
    Test,
    Dev,
}

/// Which blanks are scored when an action is mentioned more than once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitbPooling {
    First,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub marker_max_distance: usize,
    pub markers: Vec<String>,
    pub max_sentence_tokens: usize,
    pub vicinity_window: usize,

    pub cosine_threshold: f64,
    pub cosine_comparator: Comparator,
    pub nli_threshold: f64,
    pub nli_comparator: Comparator,
    pub fitb_threshold: f64,
    pub fitb_comparator: Comparator,
    pub fitb_pooling: FitbPooling,
    pub object_confidence: f64,
    pub dedup_overlap_fraction: f64,

    pub motion_corr_threshold: f64,
    pub frame_sample_stride: usize,
    pub min_clip_s: f64,
    pub max_clip_s: f64,
    pub keep_unscorable: bool,

    pub min_reasons: usize,
    pub min_clips: usize,
    pub cluster_cut: f64,
    pub crowd_reason_min_count: usize,
    pub crowd_dup_threshold: f64,

    pub quorum: usize,
    pub raters_per_clip: usize,

    pub dev_fraction: f64,
    pub split_seed: u64,

    pub calibration_grid: Vec<f64>,
    pub accuracy_mode: AccuracyMode,
    pub empty_gold_precision: f64,
    pub empty_gold_recall: f64,
    pub baseline_frequency_split: FrequencySplit,

    pub strict_validation: bool,

    pub scorer_timeout_ms: u64,
    pub scorer_retries: u32,
    pub scorer_backoff_ms: u64,
    pub scorer_max_in_flight: usize,
}

pub const DEFAULT_MARKERS: [&str; 5] = ["because", "since", "so that is why", "thus", "therefore"];

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            marker_max_distance: 15,
            markers: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
            max_sentence_tokens: 60,
            vicinity_window: 10,

            cosine_threshold: 0.1,
            cosine_comparator: Comparator::Greater,
            nli_threshold: 0.8,
            nli_comparator: Comparator::GreaterEq,
            fitb_threshold: 0.2,
            fitb_comparator: Comparator::GreaterEq,
            fitb_pooling: FitbPooling::First,
            object_confidence: 0.7,
            dedup_overlap_fraction: 0.8,

            motion_corr_threshold: 0.8,
            frame_sample_stride: 100,
            min_clip_s: 10.0,
            max_clip_s: 180.0,
            keep_unscorable: true,

            min_reasons: 3,
            min_clips: 25,
            cluster_cut: 1.0,
            crowd_reason_min_count: 3,
            crowd_dup_threshold: 0.9,

            quorum: 2,
            raters_per_clip: 3,

            dev_fraction: 0.2,
            split_seed: 0,

            calibration_grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
            accuracy_mode: AccuracyMode::PerLabel,
            empty_gold_precision: 1.0,
            empty_gold_recall: 1.0,
            baseline_frequency_split: FrequencySplit::Test,

            strict_validation: true,

            scorer_timeout_ms: 30_000,
            scorer_retries: 3,
            scorer_backoff_ms: 200,
            scorer_max_in_flight: 8,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    /// Reads a config file on top of the defaults and validates the result.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Sets one field by name. Used by the config reader and CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "marker_max_distance" => self.marker_max_distance = parse_num(key, value)?,
            "markers" => self.markers = parse_list(&value.to_lowercase()),
            "max_sentence_tokens" => self.max_sentence_tokens = parse_num(key, value)?,
            "vicinity_window" => self.vicinity_window = parse_num(key, value)?,
            "cosine_threshold" => self.cosine_threshold = parse_num(key, value)?,
            "cosine_comparator" => self.cosine_comparator = value.parse()?,
            "nli_threshold" => self.nli_threshold = parse_num(key, value)?,
            "nli_comparator" => self.nli_comparator = value.parse()?,
            "fitb_threshold" => self.fitb_threshold = parse_num(key, value)?,
            "fitb_comparator" => self.fitb_comparator = value.parse()?,
            "fitb_pooling" => {
                self.fitb_pooling = match value {
                    "first" => FitbPooling::First,
                    "max" => FitbPooling::Max,
                    _ => return Err(Error::Config(format!("{key}: expected first|max"))),
                }
            }
            "object_confidence" => self.object_confidence = parse_num(key, value)?,
            "dedup_overlap_fraction" => self.dedup_overlap_fraction = parse_num(key, value)?,
            "motion_corr_threshold" => self.motion_corr_threshold = parse_num(key, value)?,
            "frame_sample_stride" => self.frame_sample_stride = parse_num(key, value)?,
            "min_clip_s" => self.min_clip_s = parse_num(key, value)?,
            "max_clip_s" => self.max_clip_s = parse_num(key, value)?,
            "keep_unscorable" => self.keep_unscorable = parse_bool(key, value)?,
            "min_reasons" => self.min_reasons = parse_num(key, value)?,
            "min_clips" => self.min_clips = parse_num(key, value)?,
            "cluster_cut" => self.cluster_cut = parse_num(key, value)?,
            "crowd_reason_min_count" => self.crowd_reason_min_count = parse_num(key, value)?,
            "crowd_dup_threshold" => self.crowd_dup_threshold = parse_num(key, value)?,
            "quorum" => self.quorum = parse_num(key, value)?,
            "raters_per_clip" => self.raters_per_clip = parse_num(key, value)?,
            "dev_fraction" => self.dev_fraction = parse_num(key, value)?,
            "split_seed" => self.split_seed = parse_num(key, value)?,
            "calibration_grid" => {
                self.calibration_grid = parse_list(value).iter().map(|v| parse_num(key, v)).collect::<Result<_>>()?
            }
            "accuracy_mode" => {
                self.accuracy_mode = match value {
                    "per-label" => AccuracyMode::PerLabel,
                    "subset" => AccuracyMode::Subset,
                    _ => return Err(Error::Config(format!("{key}: expected per-label|subset"))),
                }
            }
            "empty_gold_precision" => self.empty_gold_precision = parse_num(key, value)?,
            "empty_gold_recall" => self.empty_gold_recall = parse_num(key, value)?,
            "baseline_frequency_split" => {
                self.baseline_frequency_split = match value {
                    "test" => FrequencySplit::Test,
                    "dev" => FrequencySplit::Dev,
                    _ => return Err(Error::Config(format!("{key}: expected test|dev"))),
                }
            }
            "strict_validation" => self.strict_validation = parse_bool(key, value)?,
            "scorer_timeout_ms" => self.scorer_timeout_ms = parse_num(key, value)?,
            "scorer_retries" => self.scorer_retries = parse_num(key, value)?,
            "scorer_backoff_ms" => self.scorer_backoff_ms = parse_num(key, value)?,
            "scorer_max_in_flight" => self.scorer_max_in_flight = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.marker_max_distance == 0 {
            bad.push("marker_max_distance must be > 0");
        }
        if self.markers.is_empty() {
            bad.push("markers must be non-empty");
        }
        if self.max_sentence_tokens == 0 {
            bad.push("max_sentence_tokens must be > 0");
        }
        if self.vicinity_window == 0 {
            bad.push("vicinity_window must be > 0");
        }
        if !(-1.0..=1.0).contains(&self.cosine_threshold) {
            bad.push("cosine_threshold must lie in [-1, 1]");
        }
        if !unit(self.nli_threshold) || !unit(self.fitb_threshold) {
            bad.push("nli_threshold and fitb_threshold must lie in [0, 1]");
        }
        if !unit(self.object_confidence) || !unit(self.dedup_overlap_fraction) {
            bad.push("object_confidence and dedup_overlap_fraction must lie in [0, 1]");
        }
        if !(-1.0..=1.0).contains(&self.motion_corr_threshold) {
            bad.push("motion_corr_threshold must lie in [-1, 1]");
        }
        if self.frame_sample_stride == 0 {
            bad.push("frame_sample_stride must be > 0");
        }
        if !(self.min_clip_s >= 0.0 && self.min_clip_s <= self.max_clip_s) {
            bad.push("need 0 <= min_clip_s <= max_clip_s");
        }
        if self.cluster_cut < 0.0 || !self.cluster_cut.is_finite() {
            bad.push("cluster_cut must be finite and >= 0");
        }
        if !unit(self.crowd_dup_threshold) {
            bad.push("crowd_dup_threshold must lie in [0, 1]");
        }
        if self.quorum == 0 || self.quorum > self.raters_per_clip {
            bad.push("need 1 <= quorum <= raters_per_clip");
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            bad.push("dev_fraction must lie in (0, 1)");
        }
        if self.calibration_grid.is_empty() || self.calibration_grid.iter().any(|v| !v.is_finite()) {
            bad.push("calibration_grid must be a non-empty list of finite values");
        }
        if !unit(self.empty_gold_precision) || !unit(self.empty_gold_recall) {
            bad.push("empty_gold_precision and empty_gold_recall must lie in [0, 1]");
        }
        if self.scorer_max_in_flight == 0 {
            bad.push("scorer_max_in_flight must be > 0");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Flat key/value snapshot in the same syntax `apply_text` reads.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("marker_max_distance", self.marker_max_distance.to_string());
        put("markers", self.markers.join(","));
        put("max_sentence_tokens", self.max_sentence_tokens.to_string());
        put("vicinity_window", self.vicinity_window.to_string());
        put("cosine_threshold", self.cosine_threshold.to_string());
        put("cosine_comparator", self.cosine_comparator.to_string());
        put("nli_threshold", self.nli_threshold.to_string());
        put("nli_comparator", self.nli_comparator.to_string());
        put("fitb_threshold", self.fitb_threshold.to_string());
        put("fitb_comparator", self.fitb_comparator.to_string());
        put(
            "fitb_pooling",
            match self.fitb_pooling {
                FitbPooling::First => "first",
                FitbPooling::Max => "max",
            }
            .into(),
        );
        put("object_confidence", self.object_confidence.to_string());
        put("dedup_overlap_fraction", self.dedup_overlap_fraction.to_string());
        put("motion_corr_threshold", self.motion_corr_threshold.to_string());
        put("frame_sample_stride", self.frame_sample_stride.to_string());
        put("min_clip_s", self.min_clip_s.to_string());
        put("max_clip_s", self.max_clip_s.to_string());
        put("keep_unscorable", self.keep_unscorable.to_string());
        put("min_reasons", self.min_reasons.to_string());
        put("min_clips", self.min_clips.to_string());
        put("cluster_cut", self.cluster_cut.to_string());
        put("crowd_reason_min_count", self.crowd_reason_min_count.to_string());
        put("crowd_dup_threshold", self.crowd_dup_threshold.to_string());
        put("quorum", self.quorum.to_string());
        put("raters_per_clip", self.raters_per_clip.to_string());
        put("dev_fraction", self.dev_fraction.to_string());
        put("split_seed", self.split_seed.to_string());
        put("calibration_grid", join(&self.calibration_grid));
        put(
            "accuracy_mode",
            match self.accuracy_mode {
                AccuracyMode::PerLabel => "per-label",
                AccuracyMode::Subset => "subset",
            }
            .into(),
        );
        put("empty_gold_precision", self.empty_gold_precision.to_string());
        put("empty_gold_recall", self.empty_gold_recall.to_string());
        put(
            "baseline_frequency_split",
            match self.baseline_frequency_split {
                FrequencySplit::Test => "test",
                FrequencySplit::Dev => "dev",
            }
            .into(),
        );
        put("strict_validation", self.strict_validation.to_string());
        put("scorer_timeout_ms", self.scorer_timeout_ms.to_string());
        put("scorer_retries", self.scorer_retries.to_string());
        put("scorer_backoff_ms", self.scorer_backoff_ms.to_string());
        put("scorer_max_in_flight", self.scorer_max_in_flight.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_thresholds() {
        let c = PipelineConfig::default();
        assert_eq!(c.marker_max_distance, 15);
        assert_eq!(c.cosine_threshold, 0.1);
        assert_eq!(c.nli_threshold, 0.8);
        assert_eq!(c.object_confidence, 0.7);
        assert_eq!(c.motion_corr_threshold, 0.8);
        assert_eq!(c.frame_sample_stride, 100);
        assert_eq!((c.min_clip_s, c.max_clip_s), (10.0, 180.0));
        assert_eq!((c.min_reasons, c.min_clips), (3, 25));
        assert_eq!(c.crowd_reason_min_count, 3);
        assert_eq!(c.dev_fraction, 0.2);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.set("cluster_cut", "0.75").unwrap();
        c.set("markers", "Because, thus").unwrap();
        c.set("nli_comparator", ">").unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.markers, vec!["because", "thus"]);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let mut c = PipelineConfig::default();
        c.apply_text("# comment\n\nmin_clips = 1\n").unwrap();
        assert_eq!(c.min_clips, 1);
        let err = c.apply_text("bogus = 3").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn validate_rejects_out_of_range() {
        let c = PipelineConfig { dev_fraction: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { quorum: 4, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
