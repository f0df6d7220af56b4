//! Sentence segmentation, action mentions and causal-candidate extraction.
//!
//! Tokens are lowercased whitespace-delimited words with leading and trailing
//! punctuation stripped. Token distance is the number of token steps between
//! two positions, so adjacent tokens are at distance 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, TranscriptDoc};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Byte span of the stripped token in the source text.
    pub start: usize,
    pub end: usize,
}

/// A raw whitespace chunk together with its stripped token.
struct Chunk {
    token: Option<Token>,
    ends_sentence: bool,
}

fn chunks(text: &str) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut pos = 0;
    for piece in text.split_whitespace() {
        // split_whitespace yields subslices; recover their offsets.
        let start = pos + text[pos..].find(piece).unwrap_or(0);
        pos = start + piece.len();
        let trimmed_front = piece.trim_start_matches(|c: char| !c.is_alphanumeric());
        let lead = piece.len() - trimmed_front.len();
        let core = trimmed_front.trim_end_matches(|c: char| !c.is_alphanumeric());
        let tail = &trimmed_front[core.len()..];
        let ends_sentence = tail.contains(['.', '!', '?']);
        let token = (!core.is_empty()).then(|| Token {
            text: core.to_lowercase(),
            start: start + lead,
            end: start + lead + core.len(),
        });
        out.push(Chunk { token, ends_sentence });
    }
    out
}

/// Lowercased word tokens with byte spans.
pub fn tokenize(text: &str) -> Vec<Token> {
    chunks(text).into_iter().filter_map(|c| c.token).collect()
}

pub fn word_count(text: &str) -> usize {
    tokenize(text).len()
}

/// Byte offset just past the last word of the sentence containing the word
/// that starts at `pos`, i.e. before any sentence-final punctuation. Falls
/// back to the end of the last word when the sentence is unterminated.
pub fn clause_end(text: &str, pos: usize) -> usize {
    let mut last_end = 0;
    let mut reached = false;
    for c in chunks(text) {
        if let Some(t) = &c.token {
            last_end = t.end;
            reached |= t.end > pos;
        }
        if reached && c.ends_sentence {
            return last_end;
        }
    }
    last_end
}

/// Transcript text with segments joined by single spaces.
#[derive(Debug, Clone)]
pub struct DocText {
    pub text: String,
    pub segment_spans: Vec<(usize, usize)>,
}

impl DocText {
    pub fn new(doc: &TranscriptDoc) -> Self {
        let mut text = String::new();
        let mut segment_spans = Vec::with_capacity(doc.segments.len());
        for (i, seg) in doc.segments.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            let start = text.len();
            text.push_str(&seg.text);
            segment_spans.push((start, text.len()));
        }
        DocText { text, segment_spans }
    }

    /// Index of the segment containing byte `pos`.
    pub fn segment_of(&self, pos: usize) -> Option<usize> {
        let i = self.segment_spans.partition_point(|&(_, end)| end <= pos);
        match self.segment_spans.get(i) {
            Some(&(start, end)) if start <= pos && pos < end => Some(i),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub video_id: String,
    pub index: usize,
    pub tokens: Vec<Token>,
    /// Byte span in the joined document text; consecutive sentences tile it.
    pub start: usize,
    pub end: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl Sentence {
    pub fn text<'a>(&self, doc: &'a DocText) -> &'a str {
        &doc.text[self.start..self.end]
    }
}

/// Splits a transcript into sentences.
///
/// A sentence ends at a word followed by `.`, `!` or `?`. Independently, when
/// the next caption segment would push the running sentence past
/// `max_tokens`, the sentence is closed at the segment boundary; a single
/// segment longer than `max_tokens` is cut every `max_tokens` tokens.
pub fn segment_sentences(doc: &TranscriptDoc, max_tokens: usize) -> Vec<Sentence> {
    let dt = DocText::new(doc);
    segment_doc_text(doc, &dt, max_tokens)
}

pub fn segment_doc_text(doc: &TranscriptDoc, dt: &DocText, max_tokens: usize) -> Vec<Sentence> {
    let max_tokens = max_tokens.max(1);
    let items: Vec<(Token, bool, usize)> = chunks(&dt.text)
        .into_iter()
        .filter_map(|c| {
            let t = c.token?;
            let seg = dt.segment_of(t.start)?;
            Some((t, c.ends_sentence, seg))
        })
        .collect();

    // Groups of token indices, one per sentence.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in 0..items.len() {
        let seg = items[i].2;
        let at_boundary = i > 0 && items[i - 1].2 != seg;
        if at_boundary && !current.is_empty() {
            // Tokens of this segment up to (and including) the next sentence end.
            let mut run = 0;
            for item in &items[i..] {
                if item.2 != seg {
                    break;
                }
                run += 1;
                if item.1 {
                    break;
                }
            }
            if current.len() + run > max_tokens {
                groups.push(std::mem::take(&mut current));
            }
        }
        if current.len() == max_tokens {
            groups.push(std::mem::take(&mut current));
        }
        current.push(i);
        if items[i].1 {
            groups.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        groups.push(current);
    }

    let n = groups.len();
    let mut out = Vec::with_capacity(n);
    for (k, g) in groups.iter().enumerate() {
        let start = if k == 0 { 0 } else { items[g[0]].0.start };
        let end = if k + 1 == n { dt.text.len() } else { items[groups[k + 1][0]].0.start };
        let first_seg = items[g[0]].2;
        let last_seg = items[*g.last().unwrap()].2;
        let (start_s, end_s) = doc.segments[first_seg..=last_seg]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.start_s), b.max(s.end_s)));
        out.push(Sentence {
            video_id: doc.video_id.clone(),
            index: k,
            tokens: g.iter().map(|&i| items[i].0.clone()).collect(),
            start,
            end,
            start_s,
            end_s,
        });
    }
    out
}

/// Verb lemma → surface forms. Each lemma's set always contains the lemma.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLexicon {
    pub inflections: BTreeMap<String, BTreeSet<String>>,
}

impl ActionLexicon {
    pub fn new<I, L, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (L, Vec<S>)>,
        L: Into<String>,
        S: Into<String>,
    {
        let mut inflections = BTreeMap::new();
        for (lemma, forms) in entries {
            let lemma: String = lemma.into();
            let mut set: BTreeSet<String> = forms.into_iter().map(|s| s.into().to_lowercase()).collect();
            set.insert(lemma.to_lowercase());
            inflections.insert(lemma, set);
        }
        let lex = ActionLexicon { inflections };
        lex.validate()?;
        Ok(lex)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> = read_json(path)?;
        Self::new(raw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inflections.is_empty() {
            return Err(Error::invalid("lexicon is empty"));
        }
        for (lemma, forms) in &self.inflections {
            if lemma.is_empty() || *lemma != lemma.to_lowercase() {
                return Err(Error::invalid(format!("lemma {lemma:?} must be non-empty lowercase")));
            }
            if forms.is_empty() {
                return Err(Error::invalid(format!("lemma {lemma:?} has no inflections")));
            }
        }
        Ok(())
    }

    /// Surface form → lemma. Ambiguous forms resolve to the smallest lemma.
    pub fn surface_index(&self) -> HashMap<&str, &str> {
        let mut m: HashMap<&str, &str> = HashMap::new();
        for (lemma, forms) in &self.inflections {
            for f in forms {
                m.entry(f.as_str()).or_insert(lemma.as_str());
            }
        }
        m
    }

    /// The `-ing` form used in templated hypotheses.
    pub fn gerund(&self, lemma: &str) -> String {
        self.inflections
            .get(lemma)
            .and_then(|forms| forms.iter().find(|f| f.ends_with("ing")).cloned())
            .unwrap_or_else(|| format!("{lemma}ing"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub lemma: String,
    pub token_index: usize,
}

pub fn find_action_mentions(tokens: &[Token], lexicon: &ActionLexicon) -> Vec<Mention> {
    let index = lexicon.surface_index();
    tokens
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            index.get(t.text.as_str()).map(|lemma| Mention { lemma: lemma.to_string(), token_index: i })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalCandidate {
    pub video_id: String,
    pub sentence_index: usize,
    pub action: String,
    /// Token index of the action within its sentence.
    pub mention_token: usize,
    pub marker: String,
    /// Positions within `context_tokens`.
    pub mention_pos: usize,
    pub marker_pos: usize,
    pub marker_len: usize,
    pub distance: usize,
    /// Index of the first and last sentence of the context.
    pub context_first: usize,
    pub context_last: usize,
    /// Previous sentence + sentence + next sentence, verbatim.
    pub context: String,
    /// Context tokens with spans relative to `context`.
    pub context_tokens: Vec<Token>,
    pub start_s: f64,
    pub end_s: f64,
}

fn marker_tokens(markers: &[String]) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = markers
        .iter()
        .map(|m| (m.to_lowercase(), tokenize(m).into_iter().map(|t| t.text).collect::<Vec<_>>()))
        .filter(|(_, toks)| !toks.is_empty())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Finds (action mention, causal marker) pairs closer than `max_distance` tokens.
///
/// Mentions are taken from each sentence; markers are searched in the sentence
/// and its neighbours, with distance counted over the concatenated token stream
/// of the three. Multi-word markers match as contiguous token sequences and are
/// positioned at their first token. Output order is deterministic.
pub fn extract_causal_candidates(
    sentences: &[Sentence],
    doc: &DocText,
    lexicon: &ActionLexicon,
    markers: &[String],
    max_distance: usize,
) -> Vec<CausalCandidate> {
    let markers = marker_tokens(markers);
    let mut out = Vec::new();
    for (i, sent) in sentences.iter().enumerate() {
        let mentions = find_action_mentions(&sent.tokens, lexicon);
        if mentions.is_empty() {
            continue;
        }
        let first = i.saturating_sub(1);
        let last = (i + 1).min(sentences.len() - 1);
        let ctx_start = sentences[first].start;
        let ctx_end = sentences[last].end;
        let stream: Vec<Token> = sentences[first..=last]
            .iter()
            .flat_map(|s| s.tokens.iter())
            .map(|t| Token { text: t.text.clone(), start: t.start - ctx_start, end: t.end - ctx_start })
            .collect();
        let offset: usize = sentences[first..i].iter().map(|s| s.tokens.len()).sum();

        let mut found = Vec::new();
        for (name, toks) in &markers {
            if toks.len() > stream.len() {
                continue;
            }
            for b in 0..=stream.len() - toks.len() {
                if stream[b..b + toks.len()].iter().zip(toks).all(|(s, m)| s.text == *m) {
                    found.push((b, name, toks.len()));
                }
            }
        }
        for m in &mentions {
            let a = offset + m.token_index;
            for &(b, name, len) in &found {
                if (b..b + len).contains(&a) {
                    continue;
                }
                let distance = a.abs_diff(b);
                if distance < max_distance {
                    out.push(CausalCandidate {
                        video_id: sent.video_id.clone(),
                        sentence_index: sent.index,
                        action: m.lemma.clone(),
                        mention_token: m.token_index,
                        marker: name.clone(),
                        mention_pos: a,
                        marker_pos: b,
                        marker_len: len,
                        distance,
                        context_first: first,
                        context_last: last,
                        context: doc.text[ctx_start..ctx_end].to_string(),
                        context_tokens: stream.clone(),
                        start_s: sentences[first..=last].iter().map(|s| s.start_s).fold(f64::INFINITY, f64::min),
                        end_s: sentences[first..=last].iter().map(|s| s.end_s).fold(f64::NEG_INFINITY, f64::max),
                    });
                }
            }
        }
    }
    out.sort_by(|x, y| {
        (x.sentence_index, x.mention_pos, x.marker_pos, &x.marker).cmp(&(
            y.sentence_index,
            y.mention_pos,
            y.marker_pos,
            &y.marker,
        ))
    });
    out
}

/// Text spanning `window` tokens before and after the marker, clamped to the
/// context. `None` means unbounded (the whole context).
pub fn context_window(candidate: &CausalCandidate, window: Option<usize>) -> Result<String> {
    let toks = &candidate.context_tokens;
    if toks.is_empty() {
        return Ok(String::new());
    }
    let (lo, hi) = match window {
        Some(0) => return Err(Error::invalid("context window must be > 0")),
        Some(w) => (
            candidate.marker_pos.saturating_sub(w),
            (candidate.marker_pos + candidate.marker_len - 1 + w).min(toks.len() - 1),
        ),
        None => (0, toks.len() - 1),
    };
    Ok(candidate.context[toks[lo].start..toks[hi].end].to_string())
}

const OBJECT_SKIP: &[&str] = &[
    "the", "a", "an", "my", "your", "his", "her", "its", "our", "their", "this", "that", "these", "those", "some",
    "all", "up", "out", "off", "down", "it", "them", "me", "you", "him", "us",
];

/// Heuristic direct object: the first token after the verb that is not a
/// determiner, particle or pronoun.
pub fn direct_object(tokens: &[Token], verb_index: usize) -> Option<&str> {
    tokens.iter().skip(verb_index + 1).take(4).map(|t| t.text.as_str()).find(|t| !OBJECT_SKIP.contains(t))
}

/// Counts (verb lemma, object) pairs over the given texts and keeps the
/// `top_k` most frequent objects per verb (ties by object string).
pub fn verb_objects<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    lexicon: &ActionLexicon,
    top_k: usize,
) -> BTreeMap<String, Vec<(String, usize)>> {
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for text in texts {
        let toks = tokenize(text);
        for m in find_action_mentions(&toks, lexicon) {
            if let Some(obj) = direct_object(&toks, m.token_index) {
                *counts.entry(m.lemma).or_default().entry(obj.to_string()).or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(verb, objs)| {
            let mut v: Vec<(String, usize)> = objs.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.truncate(top_k);
            (verb, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CaptionSegment;
    use proptest::prelude::*;

    fn doc(segs: &[&str]) -> TranscriptDoc {
        TranscriptDoc {
            video_id: "v".into(),
            channel_id: "c".into(),
            segments: segs
                .iter()
                .enumerate()
                .map(|(i, t)| CaptionSegment {
                    start_s: i as f64 * 5.0,
                    end_s: i as f64 * 5.0 + 5.0,
                    text: t.to_string(),
                })
                .collect(),
        }
    }

    fn lex(lemmas: &[(&str, &[&str])]) -> ActionLexicon {
        ActionLexicon::new(lemmas.iter().map(|(l, f)| (l.to_string(), f.to_vec()))).unwrap()
    }

    fn texts(d: &TranscriptDoc, s: &[Sentence]) -> Vec<String> {
        let dt = DocText::new(d);
        s.iter().map(|x| x.text(&dt).to_string()).collect()
    }

    #[test]
    fn tokenizer_strips_and_lowercases() {
        let t = tokenize("  \"Hello,\" she's  (Cleaning)! ...");
        let words: Vec<_> = t.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(words, vec!["hello", "she's", "cleaning"]);
        assert_eq!(t[0].start, 3);
        assert_eq!(t[0].end, 8);
    }

    #[test]
    fn punctuation_split() {
        let d = doc(&["I clean. It is dirty."]);
        let s = segment_sentences(&d, 60);
        assert_eq!(texts(&d, &s), vec!["I clean. ", "It is dirty."]);
    }

    #[test]
    fn empty_doc_gives_no_sentences() {
        assert!(segment_sentences(&doc(&[""]), 60).is_empty());
    }

    #[test]
    fn unpunctuated_text_splits_at_segment_boundaries() {
        // 12 segments of 10 tokens = 120 tokens, no punctuation.
        let seg: String = (0..10).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let segs: Vec<&str> = std::iter::repeat_n(seg.as_str(), 12).collect();
        let d = doc(&segs);
        let s = segment_sentences(&d, 60);
        // By hand: segments are added while the chunk stays within 60 tokens.
        assert_eq!(s.iter().map(|x| x.tokens.len()).collect::<Vec<_>>(), vec![60, 60]);
        assert_eq!((s[0].start_s, s[0].end_s), (0.0, 30.0));
        assert_eq!((s[1].start_s, s[1].end_s), (30.0, 60.0));

        // Uneven segments: 25 + 25 + 25 tokens -> [50], [25].
        let s25: String = (0..25).map(|i| format!("x{i}")).collect::<Vec<_>>().join(" ");
        let d = doc(&[&s25, &s25, &s25]);
        let s = segment_sentences(&d, 60);
        assert_eq!(s.iter().map(|x| x.tokens.len()).collect::<Vec<_>>(), vec![50, 25]);
    }

    #[test]
    fn overlong_segment_is_hard_cut() {
        let long: String = (0..130).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let s = segment_sentences(&doc(&[&long]), 60);
        assert_eq!(s.iter().map(|x| x.tokens.len()).collect::<Vec<_>>(), vec![60, 60, 10]);
    }

    #[test]
    fn punctuated_sentence_spanning_segments_stays_whole() {
        let d = doc(&["so today i am going to", "clean the kitchen. then relax"]);
        let s = segment_sentences(&d, 60);
        assert_eq!(texts(&d, &s), vec!["so today i am going to clean the kitchen. ", "then relax"]);
        assert_eq!((s[0].start_s, s[0].end_s), (0.0, 10.0));
        assert_eq!((s[1].start_s, s[1].end_s), (5.0, 10.0));
    }

    #[test]
    fn mention_by_inflection() {
        let l = lex(&[("clean", &["cleans", "cleaning", "cleaned"])]);
        let m = find_action_mentions(&tokenize("she is cleaning now"), &l);
        assert_eq!(m, vec![Mention { lemma: "clean".into(), token_index: 2 }]);
        assert!(find_action_mentions(&tokenize("the cleaner arrived"), &l).is_empty());
    }

    #[test]
    fn two_lemmas_two_mentions() {
        let l = lex(&[("clean", &["cleaning"]), ("cook", &["cooking"])]);
        let toks = tokenize("clean and cook daily");
        let m = find_action_mentions(&toks, &l);
        // Exhaustive scan oracle.
        let oracle: Vec<usize> = toks
            .iter()
            .enumerate()
            .filter(|(_, t)| l.inflections.values().any(|f| f.contains(&t.text)))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(m.iter().map(|m| m.token_index).collect::<Vec<_>>(), oracle);
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].lemma, "cook");
    }

    fn candidates(text_segs: &[&str], max: usize) -> Vec<CausalCandidate> {
        let d = doc(text_segs);
        let dt = DocText::new(&d);
        let s = segment_doc_text(&d, &dt, 60);
        let l = lex(&[("clean", &["cleaning", "cleans", "cleaned"])]);
        let markers: Vec<String> = crate::config::DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect();
        extract_causal_candidates(&s, &dt, &l, &markers, max)
    }

    #[test]
    fn adjacent_marker() {
        let c = candidates(&["I clean because it is dirty"], 15);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].action.as_str(), c[0].marker.as_str(), c[0].distance), ("clean", "because", 1));
    }

    fn filler(n: usize) -> String {
        (0..n).map(|i| format!("f{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn distance_fifteen_is_excluded() {
        // clean at 0, marker at 15: 14 fillers in between.
        let text = format!("clean {} because", filler(14));
        assert!(candidates(&[&text], 15).is_empty());
        let text = format!("clean {} because", filler(13));
        let c = candidates(&[&text], 15);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].distance, 14);
        // Independent recount on the stored stream.
        let toks = &c[0].context_tokens;
        let a = toks.iter().position(|t| t.text == "clean").unwrap();
        let b = toks.iter().position(|t| t.text == "because").unwrap();
        assert_eq!(b - a, 14);
    }

    #[test]
    fn marker_in_next_sentence() {
        // "I clean the room." is 4 tokens; clean at stream index 1.
        // Next sentence "a b c d e because ..." puts because at stream 4 + 5 = 9: distance 8.
        let c = candidates(&["I clean the room. a b c d e because it was dirty."], 15);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].distance, 8);
        assert_eq!(c[0].context, "I clean the room. a b c d e because it was dirty.");
    }

    #[test]
    fn multiword_marker_anchored_at_first_token() {
        let c = candidates(&["it was dirty so that is why i clean"], 15);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].marker, "so that is why");
        // so at 3, clean at 8.
        assert_eq!(c[0].distance, 5);
    }

    #[test]
    fn window_arithmetic() {
        let c = candidates(&["it is dirty so because guests come tonight and i clean"], 15);
        assert_eq!(c.len(), 1);
        assert_eq!(context_window(&c[0], Some(2)).unwrap(), "dirty so because guests come");
        assert_eq!(context_window(&c[0], Some(100)).unwrap(), c[0].context);
        assert_eq!(context_window(&c[0], None).unwrap(), c[0].context);
        assert!(context_window(&c[0], Some(0)).is_err());
    }

    #[test]
    fn gerund_from_lexicon() {
        let l = lex(&[("clean", &["cleaning"]), ("write", &["writes"])]);
        assert_eq!(l.gerund("clean"), "cleaning");
        assert_eq!(l.gerund("write"), "writeing");
    }

    #[test]
    fn objects_heuristic() {
        let l = lex(&[("clean", &["cleaning"])]);
        let v = verb_objects(["I clean the shower", "cleaning my shower", "clean dishes"], &l, 5);
        assert_eq!(v["clean"], vec![("shower".to_string(), 2), ("dishes".to_string(), 1)]);
    }

    proptest! {
        #[test]
        fn sentences_tile_the_text(words in proptest::collection::vec("[a-z]{1,6}[.!?]?", 1..80),
                                   cuts in proptest::collection::vec(1usize..10, 1..20),
                                   max in 3usize..30) {
            let mut segs = Vec::new();
            let mut i = 0;
            for c in cuts {
                if i >= words.len() { break; }
                let j = (i + c).min(words.len());
                segs.push(words[i..j].join(" "));
                i = j;
            }
            if i < words.len() { segs.push(words[i..].join(" ")); }
            let refs: Vec<&str> = segs.iter().map(String::as_str).collect();
            let d = doc(&refs);
            let dt = DocText::new(&d);
            let s = segment_doc_text(&d, &dt, max);
            let joined: String = s.iter().map(|x| x.text(&dt)).collect();
            prop_assert_eq!(joined, dt.text.clone());
            for x in &s {
                prop_assert!(!x.tokens.is_empty());
                prop_assert!(x.tokens.len() <= max);
            }
        }

        #[test]
        fn extraction_monotone_and_order_free(n_fill in 0usize..40, pos in 0usize..40, d1 in 1usize..30, d2 in 1usize..30) {
            let mut words: Vec<String> = (0..n_fill).map(|i| format!("f{i}")).collect();
            let p = pos.min(words.len());
            words.insert(p, "clean".into());
            let q = (p * 7 + 3) % (words.len() + 1);
            words.insert(q, "because".into());
            words.push("thus".into());
            let text = words.join(" ");
            let (lo, hi) = (d1.min(d2), d1.max(d2));
            let small = candidates(&[&text], lo);
            let big = candidates(&[&text], hi);
            for c in &small {
                prop_assert!(big.contains(c));
                prop_assert!(c.distance < lo);
            }
            let d = doc(&[&text]);
            let dt = DocText::new(&d);
            let s = segment_doc_text(&d, &dt, 60);
            let l = lex(&[("clean", &["cleaning"])]);
            let mut rev: Vec<String> = crate::config::DEFAULT_MARKERS.iter().rev().map(|s| s.to_string()).collect();
            rev.push("because".into());
            let shuffled = extract_causal_candidates(&s, &dt, &l, &rev, hi);
            prop_assert_eq!(shuffled, big);
        }
    }
}
