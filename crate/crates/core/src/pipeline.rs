//! Whole-corpus mining: transcripts in, causal candidates and proposed clips out.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{ClipRecord, ReasonTaxonomy, TranscriptDoc};
use crate::textmine::{extract_causal_candidates, segment_doc_text, ActionLexicon, CausalCandidate, DocText};

/// A line of `candidates.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedCandidate {
    pub clip_id: String,
    #[serde(flatten)]
    pub candidate: CausalCandidate,
}

/// Clip id for a sentence; a second action in the same sentence gets the
/// action appended.
pub fn clip_id_for(video_id: &str, sentence_index: usize, action: &str, first_action: bool) -> String {
    if first_action {
        format!("{video_id}_{sentence_index}")
    } else {
        format!("{video_id}_{sentence_index}_{action}")
    }
}

/// Mines every transcript. Candidates keep extraction order; each
/// (sentence, action) pair proposes one clip spanning its context sentences.
pub fn mine_transcripts(
    docs: &[TranscriptDoc],
    lexicon: &ActionLexicon,
    cfg: &PipelineConfig,
    taxonomy: Option<&ReasonTaxonomy>,
) -> (Vec<MinedCandidate>, Vec<ClipRecord>) {
    let mut mined = Vec::new();
    let mut clips = Vec::new();
    for doc in docs {
        let dt = DocText::new(doc);
        let sentences = segment_doc_text(doc, &dt, cfg.max_sentence_tokens);
        let cands = extract_causal_candidates(&sentences, &dt, lexicon, &cfg.markers, cfg.marker_max_distance);
        let mut seen: BTreeSet<(usize, String)> = BTreeSet::new();
        let mut first_action: Vec<(usize, String)> = Vec::new();
        for c in cands {
            let first = match first_action.iter().find(|(s, _)| *s == c.sentence_index) {
                Some((_, a)) => *a == c.action,
                None => {
                    first_action.push((c.sentence_index, c.action.clone()));
                    true
                }
            };
            let clip_id = clip_id_for(&c.video_id, c.sentence_index, &c.action, first);
            if seen.insert((c.sentence_index, c.action.clone())) {
                clips.push(ClipRecord {
                    clip_id: clip_id.clone(),
                    video_id: c.video_id.clone(),
                    start_s: c.start_s,
                    end_s: c.end_s,
                    action: c.action.clone(),
                    candidate_reason_ids: taxonomy.and_then(|t| t.reason_ids(&c.action)).unwrap_or_default(),
                    excerpt: c.context.clone(),
                });
            }
            mined.push(MinedCandidate { clip_id, candidate: c });
        }
    }
    (mined, clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CaptionSegment;

    #[test]
    fn proposes_one_clip_per_sentence_action() {
        let doc = TranscriptDoc {
            video_id: "v".into(),
            channel_id: "c".into(),
            segments: vec![
                CaptionSegment { start_s: 0.0, end_s: 5.0, text: "Hello there.".into() },
                CaptionSegment {
                    start_s: 5.0,
                    end_s: 9.0,
                    text: "I clean the sink because it is dirty, thus clean.".into(),
                },
                CaptionSegment { start_s: 9.0, end_s: 20.0, text: "Bye now.".into() },
            ],
        };
        let lex = ActionLexicon::new([("clean", vec!["cleaning"])]).unwrap();
        let (mined, clips) = mine_transcripts(&[doc], &lex, &PipelineConfig::default(), None);
        assert!(mined.len() >= 2);
        assert!(mined.iter().all(|m| m.clip_id == "v_1"));
        assert_eq!(clips.len(), 1);
        assert_eq!((clips[0].start_s, clips[0].end_s), (0.0, 20.0));
    }
}
