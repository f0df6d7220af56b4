//! Motion and duration filtering of clips, and clip boundaries from transcript
//! alignment.
//!
//! Frames arrive as grayscale PGM images, either from `frames/<clip_id>/<n>.pgm`
//! or from a subprocess that writes concatenated PGM images to stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{ClipRecord, TranscriptDoc};
use crate::error::{Error, Result};
use crate::textmine::{DocText, Sentence};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::invalid(format!(
                "frame {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("frame values must be finite"));
        }
        Ok(FrameMatrix { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Pearson correlation over all pixels. A constant frame carries no motion
/// information, so the result is 1.0 when either frame has zero variance.
pub fn corr2d(a: &FrameMatrix, b: &FrameMatrix) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch { expected: a.values.len(), got: b.values.len() });
    }
    let n = a.values.len() as f64;
    if n == 0.0 {
        return Ok(1.0);
    }
    let ma = a.values.iter().sum::<f64>() / n;
    let mb = b.values.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(1.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionReport {
    pub clip_id: String,
    pub frame_count: usize,
    pub sampled_frames: usize,
    pub correlations: Vec<f64>,
    pub median: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

/// Scores frames that have already been sampled.
pub fn motion_from_samples(clip_id: &str, frame_count: usize, samples: &[FrameMatrix]) -> Result<MotionReport> {
    if samples.len() < 2 {
        return Err(Error::Unscorable(format!("clip {clip_id}: {} sampled frame(s), need 2", samples.len())));
    }
    let correlations = samples.windows(2).map(|w| corr2d(&w[0], &w[1])).collect::<Result<Vec<_>>>()?;
    let median = median(&correlations).expect("non-empty");
    Ok(MotionReport { clip_id: clip_id.to_string(), frame_count, sampled_frames: samples.len(), correlations, median })
}

/// Samples every `stride`-th frame (starting at the first) and correlates
/// consecutive samples.
pub fn motion_score(clip_id: &str, frames: &[FrameMatrix], stride: usize) -> Result<MotionReport> {
    if stride == 0 {
        return Err(Error::invalid("frame stride must be > 0"));
    }
    let samples: Vec<FrameMatrix> = frames.iter().step_by(stride).cloned().collect();
    motion_from_samples(clip_id, frames.len(), &samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    LowMotion,
    TooShort,
    TooLong,
    Unscorable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeepDecision {
    pub keep: bool,
    pub reasons: Vec<RejectReason>,
}

/// Rejects clips whose median correlation exceeds the motion threshold or
/// whose duration is outside `[min_clip_s, max_clip_s]`. A missing report
/// means the clip was unscorable.
pub fn keep_clip(clip: &ClipRecord, report: Option<&MotionReport>, cfg: &PipelineConfig) -> KeepDecision {
    let mut reasons = Vec::new();
    match report {
        Some(r) if r.median > cfg.motion_corr_threshold => reasons.push(RejectReason::LowMotion),
        Some(_) => {}
        None if cfg.keep_unscorable => {}
        None => reasons.push(RejectReason::Unscorable),
    }
    let d = clip.duration_s();
    if d < cfg.min_clip_s {
        reasons.push(RejectReason::TooShort);
    }
    if d > cfg.max_clip_s {
        reasons.push(RejectReason::TooLong);
    }
    KeepDecision { keep: reasons.is_empty(), reasons }
}

/// Time hull of the caption segments that carry the given sentences' tokens.
pub fn align_clip(sentences: &[&Sentence], doc: &TranscriptDoc, text: &DocText) -> Result<(f64, f64)> {
    let mut hull: Option<(f64, f64)> = None;
    for s in sentences {
        for t in &s.tokens {
            if let Some(k) = text.segment_of(t.start) {
                let seg = &doc.segments[k];
                hull = Some(match hull {
                    None => (seg.start_s, seg.end_s),
                    Some((a, b)) => (a.min(seg.start_s), b.max(seg.end_s)),
                });
            }
        }
    }
    hull.ok_or_else(|| Error::invalid(format!("sentence cannot be mapped to any caption segment of {}", doc.video_id)))
}

fn pgm_err(msg: impl Into<String>) -> Error {
    Error::invalid(format!("PGM: {}", msg.into()))
}

/// Parses one PGM image (P2 or P5) from the start of `data`; returns the frame
/// and the number of bytes consumed.
pub fn parse_pgm(data: &[u8]) -> Result<(FrameMatrix, usize)> {
    let mut pos = 0usize;
    let header_token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < data.len() && data[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < data.len() && data[*pos] == b'#' {
                while *pos < data.len() && data[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < data.len() && !data[*pos].is_ascii_whitespace() && data[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err(pgm_err("truncated header"));
        }
        Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
    };
    let magic = header_token(&mut pos)?;
    let num = |s: String| s.parse::<usize>().map_err(|_| pgm_err(format!("bad header number {s:?}")));
    let width = num(header_token(&mut pos)?)?;
    let height = num(header_token(&mut pos)?)?;
    let maxval = num(header_token(&mut pos)?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(pgm_err(format!("maxval {maxval} out of range")));
    }
    let n = width * height;
    let values: Vec<f64> = match magic.as_str() {
        "P5" => {
            pos += 1; // single whitespace after maxval
            let bpp = if maxval < 256 { 1 } else { 2 };
            let end = pos + n * bpp;
            if end > data.len() {
                return Err(pgm_err("truncated pixel data"));
            }
            let px = &data[pos..end];
            pos = end;
            if bpp == 1 {
                px.iter().map(|&b| b as f64).collect()
            } else {
                px.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
            }
        }
        "P2" => {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(num(header_token(&mut pos)?)? as f64);
            }
            v
        }
        other => return Err(pgm_err(format!("unsupported magic {other:?}"))),
    };
    Ok((FrameMatrix::new(width, height, values)?, pos))
}

/// Parses a stream of concatenated PGM images.
pub fn parse_pgm_stream(data: &[u8]) -> Result<Vec<FrameMatrix>> {
    let mut frames = Vec::new();
    let mut rest = data;
    loop {
        let skip = rest.iter().take_while(|b| b.is_ascii_whitespace()).count();
        rest = &rest[skip..];
        if rest.is_empty() {
            break;
        }
        let (f, used) = parse_pgm(rest)?;
        frames.push(f);
        rest = &rest[used..];
    }
    Ok(frames)
}

pub fn encode_pgm(frame: &FrameMatrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(frame.values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    out
}

/// Source of decoded grayscale frames for a clip.
pub trait FrameSource: Sync {
    /// Every `stride`-th frame of the clip, plus the total frame count.
    fn sampled_frames(&self, clip_id: &str, stride: usize) -> Result<(usize, Vec<FrameMatrix>)>;
}

/// Reads `<root>/<clip_id>/<index>.pgm`, ordered by numeric index.
#[derive(Debug, Clone)]
pub struct DirFrameSource {
    pub root: PathBuf,
}

impl DirFrameSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirFrameSource { root: root.into() }
    }

    fn frame_paths(&self, clip_id: &str) -> Result<Vec<PathBuf>> {
        let dir = self.root.join(clip_id);
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut frames: Vec<(u64, PathBuf)> = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
                continue;
            }
            let index = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| pgm_err(format!("frame file {} has no numeric index", path.display())))?;
            frames.push((index, path));
        }
        frames.sort();
        Ok(frames.into_iter().map(|(_, p)| p).collect())
    }
}

fn read_frame(path: &Path) -> Result<FrameMatrix> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_pgm(&data)?.0)
}

impl FrameSource for DirFrameSource {
    fn sampled_frames(&self, clip_id: &str, stride: usize) -> Result<(usize, Vec<FrameMatrix>)> {
        let paths = self.frame_paths(clip_id)?;
        let samples = paths.iter().step_by(stride.max(1)).map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
        Ok((paths.len(), samples))
    }
}

/// Runs `program args... <clip_id>` and parses its stdout as a PGM stream.
#[derive(Debug, Clone)]
pub struct CommandFrameSource {
    pub program: String,
    pub args: Vec<String>,
}

impl FrameSource for CommandFrameSource {
    fn sampled_frames(&self, clip_id: &str, stride: usize) -> Result<(usize, Vec<FrameMatrix>)> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(clip_id)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            return Err(Error::Unscorable(format!("frame decoder exited with {} for clip {clip_id}", out.status)));
        }
        let frames = parse_pgm_stream(&out.stdout)?;
        let total = frames.len();
        Ok((total, frames.into_iter().step_by(stride.max(1)).collect()))
    }
}

pub fn score_clip(source: &dyn FrameSource, clip_id: &str, stride: usize) -> Result<MotionReport> {
    let (total, samples) = source.sampled_frames(clip_id, stride)?;
    motion_from_samples(clip_id, total, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CaptionSegment;
    use crate::textmine::{segment_doc_text, Token};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, w: usize, h: usize) -> FrameMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FrameMatrix::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    /// Direct two-pass evaluation of the Pearson formula.
    fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let da: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let db: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        num / (da * db).sqrt()
    }

    #[test]
    fn identity_and_negation() {
        let a = noise(1, 16, 16);
        assert!((corr2d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let mean = a.values().iter().sum::<f64>() / 256.0;
        let neg = FrameMatrix::new(16, 16, a.values().iter().map(|v| 2.0 * mean - v).collect()).unwrap();
        assert!((corr2d(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_is_uncorrelated() {
        let a = noise(10, 64, 64);
        let b = noise(11, 64, 64);
        let r = corr2d(&a, &b).unwrap();
        assert!((r - pearson_oracle(a.values(), b.values())).abs() < 1e-12);
        assert!(r.abs() < 0.1);
    }

    #[test]
    fn constant_frame_counts_as_static() {
        let a = FrameMatrix::new(2, 2, vec![5.0; 4]).unwrap();
        let b = noise(3, 2, 2);
        assert_eq!(corr2d(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_dimensions() {
        assert!(corr2d(&noise(1, 4, 4), &noise(1, 4, 5)).is_err());
    }

    #[test]
    fn static_clip_median_one() {
        let f = noise(5, 8, 8);
        let frames = vec![f; 300];
        let r = motion_score("c", &frames, 100).unwrap();
        assert_eq!(r.sampled_frames, 3);
        assert_eq!(r.median, 1.0);
    }

    #[test]
    fn alternating_noise_median_near_zero() {
        let (a, b) = (noise(20, 32, 32), noise(21, 32, 32));
        let frames: Vec<FrameMatrix> =
            (0..600).map(|i| if (i / 100) % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let r = motion_score("c", &frames, 100).unwrap();
        let oracle = pearson_oracle(a.values(), b.values());
        assert_eq!(r.correlations.len(), 5);
        assert!((r.median - oracle).abs() < 1e-12);
        assert!(r.median.abs() < 0.1);
    }

    #[test]
    fn minimal_two_samples() {
        let frames: Vec<FrameMatrix> = (0..150).map(|i| noise(i as u64, 4, 4)).collect();
        let r = motion_score("c", &frames, 100).unwrap();
        assert_eq!((r.sampled_frames, r.correlations.len()), (2, 1));
        assert_eq!(r.median, r.correlations[0]);
        assert!(matches!(motion_score("c", &frames[..100], 100), Err(Error::Unscorable(_))));
    }

    #[test]
    fn even_median_is_mean_of_middle() {
        assert_eq!(median(&[0.1, 0.9, 0.3, 0.5]), Some(0.4));
    }

    fn clip(d: f64) -> ClipRecord {
        ClipRecord {
            clip_id: "c".into(),
            video_id: "v".into(),
            start_s: 5.0,
            end_s: 5.0 + d,
            action: "clean".into(),
            candidate_reason_ids: vec![],
            excerpt: String::new(),
        }
    }

    fn report(m: f64) -> MotionReport {
        MotionReport { clip_id: "c".into(), frame_count: 0, sampled_frames: 2, correlations: vec![m], median: m }
    }

    #[test]
    fn keep_rules() {
        let cfg = PipelineConfig::default();
        let d = keep_clip(&clip(60.0), Some(&report(1.0)), &cfg);
        assert_eq!(d.reasons, vec![RejectReason::LowMotion]);
        let d = keep_clip(&clip(9.9), Some(&report(0.3)), &cfg);
        assert_eq!(d.reasons, vec![RejectReason::TooShort]);
        assert!(keep_clip(&clip(180.0), Some(&report(0.3)), &cfg).keep);
        assert!(keep_clip(&clip(10.0), Some(&report(0.3)), &cfg).keep);
        assert!(!keep_clip(&clip(180.5), Some(&report(0.3)), &cfg).keep);
        assert!(keep_clip(&clip(30.0), None, &cfg).keep);
        let strict = PipelineConfig { keep_unscorable: false, ..PipelineConfig::default() };
        assert_eq!(keep_clip(&clip(30.0), None, &strict).reasons, vec![RejectReason::Unscorable]);
    }

    fn doc(segs: &[(f64, f64, &str)]) -> TranscriptDoc {
        TranscriptDoc {
            video_id: "v".into(),
            channel_id: "c".into(),
            segments: segs.iter().map(|&(a, b, t)| CaptionSegment { start_s: a, end_s: b, text: t.into() }).collect(),
        }
    }

    #[test]
    fn align_single_segment() {
        let d = doc(&[(0.0, 12.0, "hello there."), (12.0, 18.5, "i clean the sink."), (18.5, 20.0, "bye.")]);
        let dt = DocText::new(&d);
        let s = segment_doc_text(&d, &dt, 60);
        assert_eq!(align_clip(&[&s[1]], &d, &dt).unwrap(), (12.0, 18.5));
    }

    #[test]
    fn align_context_hull() {
        let d = doc(&[(10.0, 15.0, "a b."), (15.0, 22.0, "i clean."), (22.0, 30.0, "c d.")]);
        let dt = DocText::new(&d);
        let s = segment_doc_text(&d, &dt, 60);
        let refs: Vec<&Sentence> = s.iter().collect();
        assert_eq!(align_clip(&refs, &d, &dt).unwrap(), (10.0, 30.0));
    }

    #[test]
    fn align_non_adjacent_segments() {
        let d = doc(&[(0.0, 4.0, "i clean"), (4.0, 9.0, "unrelated"), (9.0, 14.0, "the sink")]);
        let dt = DocText::new(&d);
        let toks: Vec<Token> =
            crate::textmine::tokenize(&dt.text).into_iter().filter(|t| t.text != "unrelated").collect();
        let s = Sentence {
            video_id: "v".into(),
            index: 0,
            tokens: toks,
            start: 0,
            end: dt.text.len(),
            start_s: 0.0,
            end_s: 14.0,
        };
        // Interval hull of [0,4] and [9,14].
        assert_eq!(align_clip(&[&s], &d, &dt).unwrap(), (0.0, 14.0));
        let empty = Sentence { tokens: vec![], ..s };
        assert!(align_clip(&[&empty], &d, &dt).is_err());
    }

    #[test]
    fn pgm_formats() {
        let f = FrameMatrix::new(3, 2, vec![0.0, 10.0, 20.0, 30.0, 40.0, 255.0]).unwrap();
        let bin = encode_pgm(&f);
        assert_eq!(parse_pgm(&bin).unwrap().0, f);
        let ascii = b"P2\n# comment\n3 2\n255\n0 10 20\n30 40 255\n";
        assert_eq!(parse_pgm(ascii).unwrap().0, f);
        let mut stream = bin.clone();
        stream.extend_from_slice(ascii);
        stream.extend_from_slice(&bin);
        assert_eq!(parse_pgm_stream(&stream).unwrap().len(), 3);
        assert!(parse_pgm(b"P5\n3 2\n255\n\x00").is_err());
    }

    #[test]
    fn dir_source_samples_by_index() {
        let tmp = tempfile::tempdir().unwrap();
        let clip_dir = tmp.path().join("clip1");
        fs::create_dir_all(&clip_dir).unwrap();
        for i in 0..25 {
            let f = FrameMatrix::new(2, 2, vec![i as f64, 0.0, 0.0, 0.0]).unwrap();
            fs::write(clip_dir.join(format!("{i}.pgm")), encode_pgm(&f)).unwrap();
        }
        let src = DirFrameSource::new(tmp.path());
        let (total, frames) = src.sampled_frames("clip1", 10).unwrap();
        assert_eq!(total, 25);
        let firsts: Vec<f64> = frames.iter().map(|f| f.values()[0]).collect();
        assert_eq!(firsts, vec![0.0, 10.0, 20.0]);
    }

    proptest! {
        #[test]
        fn symmetry_and_affine_invariance(seed in any::<u64>(), alpha in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], beta in -10.0f64..10.0) {
            let a = noise(seed, 8, 8);
            let b = noise(seed.wrapping_add(1), 8, 8);
            let r = corr2d(&a, &b).unwrap();
            prop_assert!((r - corr2d(&b, &a).unwrap()).abs() < 1e-12);
            let scaled = FrameMatrix::new(8, 8, a.values().iter().map(|v| alpha * v + beta).collect()).unwrap();
            prop_assert!((corr2d(&scaled, &b).unwrap() - alpha.signum() * r).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }
}
