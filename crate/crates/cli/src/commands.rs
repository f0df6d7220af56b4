use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use whymine_core::annotations::{
    aggregate_corpus, agreement_report, dataset_stats, reason_distribution, vote_matrices,
};
use whymine_core::config::FrequencySplit;
use whymine_core::corpus::{
    read_json, read_jsonl, write_json, write_jsonl, AnnotationRecord, ClipRecord, GoldRecord, ReasonTaxonomy, Split,
    TranscriptDoc,
};
use whymine_core::eval::{
    calibrate_threshold, evaluate, macro_report, most_frequent_baseline, Calibration, EvalReport, MetricOptions,
    Prediction,
};
use whymine_core::pipeline::{mine_transcripts, MinedCandidate};
use whymine_core::scoring::remote::{RemoteScorer, ENDPOINT_ENV};
use whymine_core::scoring::stub::{StubOptions, StubServer};
use whymine_core::scoring::{
    score_clips, CaptionRecord, Method, ObjectRecord, PremiseSource, ReasonScore, Scorer, ScoringInputs, VisualFeatures,
};
use whymine_core::table;
use whymine_core::taxonomy::{admit_crowd_reasons, cluster_action_reasons, filter_funnel, ReviewFile, VectorStore};
use whymine_core::textmine::{tokenize, verb_objects, ActionLexicon};
use whymine_core::videofilter::{
    keep_clip, score_clip, CommandFrameSource, DirFrameSource, FrameSource, KeepDecision, MotionReport,
};
use whymine_core::{Corpus, Error};

use crate::ctx::{Ctx, UsageError};
use crate::{CalibrateArgs, EvalArgs, FilterArgs, MineArgs, ReportArgs, ScoreArgs, StatsArgs, TaxonomyArgs};

fn rows<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn load_corpus(ctx: &Ctx, dir: &Path) -> anyhow::Result<Corpus> {
    let (corpus, issues) = match Corpus::load(dir, &ctx.cfg) {
        Ok(x) => x,
        Err(Error::Validation(issues)) => {
            for i in &issues {
                tracing::error!(issue = %i, "validation");
            }
            return Err(Error::Validation(issues).into());
        }
        Err(e) => return Err(e.into()),
    };
    for i in &issues {
        tracing::warn!(issue = %i, "validation");
    }
    Ok(corpus)
}

#[derive(Serialize)]
struct IngestSummary {
    transcripts: usize,
    clips: usize,
    actions: usize,
    reasons: usize,
    annotations: usize,
    dev: usize,
    test: usize,
    issues: Vec<String>,
}

pub fn ingest(ctx: &Ctx, corpus: &Path, split_manifest: Option<&Path>) -> anyhow::Result<()> {
    let dir = ctx.path(corpus);
    let mut inputs = vec![("corpus", dir.clone())];
    if let Some(m) = split_manifest {
        inputs.push(("split_manifest", ctx.path(m)));
    }
    let out_split = ctx.path(Path::new("split.json"));
    let out_summary = ctx.path(Path::new("ingest.json"));
    let Some(man) = ctx.begin("ingest", &inputs, &[out_split.clone(), out_summary.clone()])? else {
        return Ok(());
    };
    let (corpus, issues) = match Corpus::load(&dir, &ctx.cfg) {
        Ok(x) => x,
        Err(Error::Validation(issues)) => {
            for i in &issues {
                tracing::error!(issue = %i, "validation");
            }
            return Err(Error::Validation(issues).into());
        }
        Err(e) => return Err(e.into()),
    };
    let fixed: Option<Split> = match split_manifest {
        Some(m) => Some(read_json(&ctx.path(m))?),
        None => corpus.split.clone(),
    };
    let ids: Vec<String> = corpus.clips.iter().map(|c| c.clip_id.clone()).collect();
    let split = whymine_core::corpus::split_dataset(&ids, ctx.cfg.dev_fraction, ctx.cfg.split_seed, fixed.as_ref())?;
    write_json(&out_split, &split)?;
    let summary = IngestSummary {
        transcripts: corpus.transcripts.len(),
        clips: corpus.clips.len(),
        actions: corpus.taxonomy.actions.len(),
        reasons: corpus.taxonomy.reason_count(),
        annotations: corpus.annotations.len(),
        dev: split.dev.len(),
        test: split.test.len(),
        issues: issues.iter().map(ToString::to_string).collect(),
    };
    write_json(&out_summary, &summary)?;
    ctx.finish(man)
}

pub fn mine(ctx: &Ctx, a: &MineArgs) -> anyhow::Result<()> {
    let transcripts = ctx.path(&a.transcripts);
    let lexicon = ctx.path(&a.lexicon);
    let mut inputs = vec![("transcripts", transcripts.clone()), ("lexicon", lexicon.clone())];
    if let Some(t) = &a.taxonomy {
        inputs.push(("taxonomy", ctx.path(t)));
    }
    let out_c = ctx.path(Path::new("candidates.jsonl"));
    let out_m = ctx.path(Path::new("mined_clips.jsonl"));
    let out_v = ctx.path(Path::new("verb_objects.json"));
    let mut outputs = vec![out_c.clone(), out_m.clone()];
    if a.export_verb_objects {
        outputs.push(out_v.clone());
    }
    let Some(man) = ctx.begin("mine", &inputs, &outputs)? else {
        return Ok(());
    };
    let docs: Vec<TranscriptDoc> = rows(&transcripts)?;
    let lex = ActionLexicon::from_file(&lexicon)?;
    let tax: Option<ReasonTaxonomy> = a.taxonomy.as_ref().map(|t| read_json(&ctx.path(t))).transpose()?;
    let (mined, clips) = mine_transcripts(&docs, &lex, &ctx.cfg, tax.as_ref());
    tracing::info!(candidates = mined.len(), clips = clips.len(), "mined");
    write_jsonl(&out_c, &mined)?;
    write_jsonl(&out_m, &clips)?;
    if a.export_verb_objects {
        let texts: Vec<String> =
            docs.iter().map(|d| d.segments.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")).collect();
        write_json(&out_v, &verb_objects(texts.iter().map(String::as_str), &lex, a.top_k))?;
    }
    ctx.finish(man)
}

pub fn taxonomy(ctx: &Ctx, a: &TaxonomyArgs) -> anyhow::Result<()> {
    let reasons_p = ctx.path(&a.reasons);
    let vectors_p = ctx.path(&a.vectors);
    let clips_p = ctx.path(&a.clips);
    let mut inputs = vec![("reasons", reasons_p.clone()), ("vectors", vectors_p.clone()), ("clips", clips_p.clone())];
    if let Some(r) = &a.review {
        inputs.push(("review", ctx.path(r)));
    }
    if let Some(an) = &a.annotations {
        inputs.push(("annotations", ctx.path(an)));
    }
    let out_tax = ctx.path(Path::new("taxonomy.json"));
    let out_prop = ctx.path(Path::new("review_proposal.json"));
    let out_funnel = ctx.path(Path::new("funnel.json"));
    let out_funnel_txt = ctx.path(Path::new("funnel.txt"));
    let Some(man) = ctx.begin(
        "taxonomy",
        &inputs,
        &[out_tax.clone(), out_prop.clone(), out_funnel.clone(), out_funnel_txt.clone()],
    )?
    else {
        return Ok(());
    };
    let kg: BTreeMap<String, Vec<String>> = read_json(&reasons_p)?;
    let store = VectorStore::from_file(&vectors_p)?;
    let review: Option<ReviewFile> = a.review.as_ref().map(|r| read_json(&ctx.path(r))).transpose()?;
    let clips: Vec<ClipRecord> = rows(&clips_p)?;
    let mut clip_counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in &clips {
        *clip_counts.entry(c.action.clone()).or_default() += 1;
    }
    let mut freetext: HashMap<String, Vec<String>> = HashMap::new();
    if let Some(an) = &a.annotations {
        let action_of: HashMap<&str, &str> = clips.iter().map(|c| (c.clip_id.as_str(), c.action.as_str())).collect();
        for r in rows::<AnnotationRecord>(&ctx.path(an))? {
            if let (Some(t), Some(act)) = (r.other_reason_text, action_of.get(r.clip_id.as_str())) {
                freetext.entry(act.to_string()).or_default().push(t);
            }
        }
    }
    let mut full = ReasonTaxonomy::default();
    let mut proposal = ReviewFile::new();
    for (action, labels) in &kg {
        let (mut reasons, prop) = cluster_action_reasons(action, labels, &store, ctx.cfg.cluster_cut, review.as_ref())?;
        proposal.extend(prop);
        if let Some(texts) = freetext.get(action) {
            let crowd = admit_crowd_reasons(
                action,
                texts,
                &reasons,
                ctx.cfg.crowd_reason_min_count,
                ctx.cfg.crowd_dup_threshold,
                &store,
            )?;
            reasons.extend(crowd);
        }
        full.actions.insert(
            action.clone(),
            whymine_core::corpus::ActionEntry { reasons, clip_count: clip_counts.get(action).copied().unwrap_or(0) },
        );
    }
    let (retained, funnel) = filter_funnel(&full, &clip_counts, ctx.cfg.min_reasons, ctx.cfg.min_clips);
    write_json(&out_tax, &retained)?;
    write_json(&out_prop, &proposal)?;
    write_json(&out_funnel, &funnel)?;
    let rows: Vec<Vec<String>> = funnel.stages.iter().map(|s| vec![s.name.clone(), s.count.to_string()]).collect();
    write_text(&out_funnel_txt, &table::render(&["stage", "actions"], &rows))?;
    ctx.finish(man)
}

#[derive(Serialize, Deserialize)]
struct FilterRecord {
    clip_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    motion: Option<MotionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(flatten)]
    decision: KeepDecision,
}

pub fn filter_videos(ctx: &Ctx, a: &FilterArgs) -> anyhow::Result<()> {
    let clips_p = ctx.path(&a.clips);
    let mut inputs = vec![("clips", clips_p.clone())];
    let source: Box<dyn FrameSource> = match &a.frame_command {
        Some(cmd) => {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| UsageError("--frame-command is empty".into()))?;
            Box::new(CommandFrameSource { program, args: parts.collect() })
        }
        None => {
            let frames = ctx.path(&a.frames);
            inputs.push(("frames", frames.clone()));
            Box::new(DirFrameSource::new(frames))
        }
    };
    let out_f = ctx.path(Path::new("clip_filter.jsonl"));
    let out_k = ctx.path(Path::new("kept_clips.jsonl"));
    let Some(man) = ctx.begin("filter-videos", &inputs, &[out_f.clone(), out_k.clone()])? else {
        return Ok(());
    };
    let clips: Vec<ClipRecord> = rows(&clips_p)?;
    let stride = ctx.cfg.frame_sample_stride;
    let records: Vec<FilterRecord> = clips
        .par_iter()
        .map(|c| {
            let (motion, error) = match score_clip(source.as_ref(), &c.clip_id, stride) {
                Ok(r) => (Some(r), None),
                Err(e) => {
                    tracing::warn!(clip = %c.clip_id, error = %e, "clip unscorable");
                    (None, Some(e.to_string()))
                }
            };
            let decision = keep_clip(c, motion.as_ref(), &ctx.cfg);
            FilterRecord { clip_id: c.clip_id.clone(), motion, error, decision }
        })
        .collect();
    let kept: Vec<&ClipRecord> = clips.iter().zip(&records).filter(|(_, r)| r.decision.keep).map(|(c, _)| c).collect();
    tracing::info!(clips = clips.len(), kept = kept.len(), "filtered");
    write_jsonl(&out_f, &records)?;
    write_jsonl(&out_k, &kept)?;
    ctx.finish(man)
}

pub fn aggregate(ctx: &Ctx, corpus: &Path) -> anyhow::Result<()> {
    let dir = ctx.path(corpus);
    let out_g = ctx.path(Path::new("gold.jsonl"));
    let out_a = ctx.path(Path::new("agreement.json"));
    let out_t = ctx.path(Path::new("agreement.txt"));
    let Some(man) =
        ctx.begin("aggregate", &[("corpus", dir.clone())], &[out_g.clone(), out_a.clone(), out_t.clone()])?
    else {
        return Ok(());
    };
    let corpus = load_corpus(ctx, &dir)?;
    let gold = aggregate_corpus(&corpus, ctx.cfg.quorum)?;
    let (matrices, skipped) = vote_matrices(&corpus, ctx.cfg.raters_per_clip);
    for s in &skipped {
        tracing::warn!(clip = %s, raters = ctx.cfg.raters_per_clip, "clip left out of agreement: wrong rater count");
    }
    let report = agreement_report(&matrices, &gold)?;
    write_jsonl(&out_g, &gold)?;
    write_json(&out_a, &report)?;
    write_text(&out_t, &report.to_text())?;
    ctx.finish(man)
}

fn resolve_scorer(ctx: &Ctx, a: &ScoreArgs, method: Method) -> anyhow::Result<Box<dyn Scorer>> {
    if let Some(v) = &a.vectors {
        if !matches!(method, Method::Cosine | Method::Vicinity) {
            return Err(UsageError(format!("--vectors only serves cosine and vicinity, not {method}")).into());
        }
        return Ok(Box::new(VectorStore::from_file(&ctx.path(v))?));
    }
    let remote = match &a.endpoint {
        Some(e) => Some(RemoteScorer::new(e)?),
        None => RemoteScorer::from_env()?,
    };
    match remote {
        Some(r) => Ok(Box::new(r.with_config(&ctx.cfg))),
        None => Err(UsageError(format!("{method} needs --vectors, --endpoint or {ENDPOINT_ENV}")).into()),
    }
}

pub fn score(ctx: &Ctx, a: &ScoreArgs) -> anyhow::Result<()> {
    let method: Method = a.method.parse().map_err(|e: Error| UsageError(e.to_string()))?;
    let source: PremiseSource = a.premise.parse().map_err(|e: Error| UsageError(e.to_string()))?;
    let dir = ctx.path(&a.corpus);
    let lex_p = ctx.path(&a.lexicon);
    let mut inputs = vec![("corpus", dir.clone()), ("lexicon", lex_p.clone())];
    if let Some(v) = &a.vectors {
        inputs.push(("vectors", ctx.path(v)));
    }
    let uses_objects =
        method == Method::Nli && matches!(source, PremiseSource::Objects | PremiseSource::ObjectsCaptions);
    let uses_captions =
        method == Method::Nli && matches!(source, PremiseSource::Captions | PremiseSource::ObjectsCaptions);
    if uses_objects {
        inputs.push(("objects", ctx.path(&a.objects)));
    }
    if uses_captions {
        inputs.push(("captions", ctx.path(&a.captions)));
    }
    if method == Method::Vicinity {
        inputs.push(("candidates", ctx.path(&a.candidates)));
    }
    if let (Method::Fitb, Some(f)) = (method, &a.features) {
        inputs.push(("features", ctx.path(f)));
    }
    let out = ctx.path(&a.output);
    let Some(man) = ctx.begin("score", &inputs, std::slice::from_ref(&out))? else {
        return Ok(());
    };
    let corpus = load_corpus(ctx, &dir)?;
    let lex = ActionLexicon::from_file(&lex_p)?;
    let mut si = ScoringInputs::new(&corpus.taxonomy, &lex, &ctx.cfg);
    si.premise_source = source;
    if uses_objects {
        si.objects =
            rows::<ObjectRecord>(&ctx.path(&a.objects))?.into_iter().map(|r| (r.clip_id, r.detections)).collect();
    }
    if uses_captions {
        si.captions =
            rows::<CaptionRecord>(&ctx.path(&a.captions))?.into_iter().map(|r| (r.clip_id, r.captions)).collect();
    }
    if method == Method::Vicinity {
        for m in rows::<MinedCandidate>(&ctx.path(&a.candidates))? {
            si.candidates.entry(m.clip_id).or_insert(m.candidate);
        }
    }
    if let (Method::Fitb, Some(f)) = (method, &a.features) {
        let fdir = ctx.path(f);
        for c in &corpus.clips {
            let p = fdir.join(format!("{}.json", c.clip_id));
            if p.exists() {
                si.visual.insert(c.clip_id.clone(), VisualFeatures::from_file(&p)?);
            }
        }
    }
    let scorer = resolve_scorer(ctx, a, method)?;
    let scores = score_clips(method, &corpus.clips, &si, scorer.as_ref())?;
    tracing::info!(clips = scores.len(), method = %method, "scored");
    write_jsonl(&out, &scores)?;
    ctx.finish(man)
}

fn gold_map(gold: &[GoldRecord]) -> HashMap<&str, &GoldRecord> {
    gold.iter().map(|g| (g.clip_id.as_str(), g)).collect()
}

pub fn calibrate(ctx: &Ctx, a: &CalibrateArgs) -> anyhow::Result<()> {
    let (sp, gp, splp) = (ctx.path(&a.scores), ctx.path(&a.gold), ctx.path(&a.split));
    let out = ctx.path(&a.output);
    let out_txt = out.with_extension("txt");
    let Some(man) = ctx.begin(
        "calibrate",
        &[("scores", sp.clone()), ("gold", gp.clone()), ("split", splp.clone())],
        &[out.clone(), out_txt.clone()],
    )?
    else {
        return Ok(());
    };
    let scores: Vec<ReasonScore> = rows(&sp)?;
    let gold: Vec<GoldRecord> = rows(&gp)?;
    let split: Split = read_json(&splp)?;
    let dev: std::collections::HashSet<&str> = split.dev.iter().map(String::as_str).collect();
    let gm = gold_map(&gold);
    let dev_scores: Vec<ReasonScore> = scores
        .into_iter()
        .filter(|s| dev.contains(s.clip_id.as_str()) && gm.contains_key(s.clip_id.as_str()))
        .collect();
    if dev_scores.is_empty() {
        bail!(Error::invalid("no scored dev clips with gold labels"));
    }
    let method: Method = dev_scores[0].method.parse()?;
    let cal = calibrate_threshold(
        &dev_scores,
        &gm,
        &ctx.cfg.calibration_grid,
        method.comparator(&ctx.cfg),
        &MetricOptions::from(&ctx.cfg),
    )?;
    tracing::info!(threshold = cal.threshold, dev_f1 = cal.macro_f1, "calibrated");
    write_json(&out, &cal)?;
    write_text(&out_txt, &cal.to_text())?;
    ctx.finish(man)
}

fn split_ids<'a>(split: &'a Split, which: &str) -> anyhow::Result<Vec<&'a String>> {
    Ok(match which {
        "test" => split.test.iter().collect(),
        "dev" => split.dev.iter().collect(),
        "all" => split.dev.iter().chain(&split.test).collect(),
        other => return Err(UsageError(format!("--on must be test, dev or all, not {other:?}")).into()),
    })
}

pub fn eval(ctx: &Ctx, a: &EvalArgs) -> anyhow::Result<()> {
    let dir = ctx.path(&a.corpus);
    let (gp, splp) = (ctx.path(&a.gold), ctx.path(&a.split));
    let mut inputs = vec![("corpus", dir.clone()), ("gold", gp.clone()), ("split", splp.clone())];
    let baseline = a.method == "most-frequent";
    if !baseline {
        let s = a.scores.as_ref().ok_or_else(|| UsageError(format!("method {:?} needs --scores", a.method)))?;
        inputs.push(("scores", ctx.path(s)));
        if let Some(c) = &a.calibration {
            inputs.push(("calibration", ctx.path(c)));
        }
    }
    let out_p = ctx.path(Path::new(&format!("{}predictions.jsonl", a.prefix)));
    let out_r = ctx.path(Path::new(&format!("{}report.json", a.prefix)));
    let out_t = ctx.path(Path::new(&format!("{}report.txt", a.prefix)));
    let Some(man) = ctx.begin("eval", &inputs, &[out_p.clone(), out_r.clone(), out_t.clone()])? else {
        return Ok(());
    };
    let corpus = load_corpus(ctx, &dir)?;
    let gold: Vec<GoldRecord> = rows(&gp)?;
    let split: Split = read_json(&splp)?;
    let gm = gold_map(&gold);
    let clip_of: HashMap<&str, &ClipRecord> = corpus.clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let pick = |ids: Vec<&String>| -> Vec<&ClipRecord> {
        ids.into_iter()
            .filter_map(|id| match (clip_of.get(id.as_str()), gm.contains_key(id.as_str())) {
                (Some(c), true) => Some(*c),
                _ => {
                    tracing::warn!(clip = %id, "clip without gold or clip record left out");
                    None
                }
            })
            .collect()
    };
    let targets = pick(split_ids(&split, &a.on)?);
    let predictions: Vec<Prediction> = if baseline {
        let freq = match a.frequency_split.as_deref() {
            Some("dev") => FrequencySplit::Dev,
            Some("test") => FrequencySplit::Test,
            Some(o) => return Err(UsageError(format!("--frequency-split must be test or dev, not {o:?}")).into()),
            None => ctx.cfg.baseline_frequency_split,
        };
        let est_ids = match freq {
            FrequencySplit::Test => split_ids(&split, "test")?,
            FrequencySplit::Dev => split_ids(&split, "dev")?,
        };
        let est: Vec<(&ClipRecord, &GoldRecord)> =
            pick(est_ids).into_iter().map(|c| (c, gm[c.clip_id.as_str()])).collect();
        let (chosen, preds) = most_frequent_baseline(&corpus.taxonomy, &est, &targets)?;
        for (action, r) in &chosen {
            tracing::debug!(action = %action, reason = %r, "most frequent reason");
        }
        preds
    } else {
        let scores: Vec<ReasonScore> = rows(&ctx.path(a.scores.as_ref().expect("checked above")))?;
        let method: Method = scores
            .first()
            .map(|s| s.method.parse())
            .transpose()?
            .ok_or_else(|| Error::invalid("scores file is empty"))?;
        let threshold = match (a.threshold, &a.calibration) {
            (Some(t), _) => t,
            (None, Some(c)) => read_json::<Calibration>(&ctx.path(c))?.threshold,
            (None, None) => method.default_threshold(&ctx.cfg),
        };
        tracing::info!(threshold, method = %method, "thresholding scores");
        let by_clip: HashMap<&str, &ReasonScore> = scores.iter().map(|s| (s.clip_id.as_str(), s)).collect();
        targets
            .iter()
            .filter_map(|c| by_clip.get(c.clip_id.as_str()))
            .map(|s| Prediction::from_scores(s, threshold, method.comparator(&ctx.cfg)))
            .collect()
    };
    let pm: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.clip_id.as_str(), p)).collect();
    let evals = evaluate(&targets, &gm, &pm, &MetricOptions::from(&ctx.cfg))?;
    let actions: Vec<String> = corpus.taxonomy.actions.keys().cloned().collect();
    let report = macro_report(&evals, &actions, &a.method, &a.input);
    for w in &report.warnings {
        tracing::warn!(warning = %w, "eval");
    }
    write_jsonl(&out_p, &predictions)?;
    write_json(&out_r, &report)?;
    let text = report.to_text();
    write_text(&out_t, &text)?;
    print!("{text}");
    ctx.finish(man)
}

pub fn stats(ctx: &Ctx, a: &StatsArgs) -> anyhow::Result<()> {
    let dir = ctx.path(&a.corpus);
    let gp = ctx.path(&a.gold);
    let mut inputs = vec![("corpus", dir.clone())];
    let has_gold = gp.exists();
    if has_gold {
        inputs.push(("gold", gp.clone()));
    }
    let out_j = ctx.path(Path::new("stats.json"));
    let out_t = ctx.path(Path::new("stats.txt"));
    let out_d = ctx.path(Path::new("reason_distribution.json"));
    let Some(man) = ctx.begin("stats", &inputs, &[out_j.clone(), out_t.clone(), out_d.clone()])? else {
        return Ok(());
    };
    let corpus = load_corpus(ctx, &dir)?;
    let gold: Vec<GoldRecord> = if has_gold { rows(&gp)? } else { aggregate_corpus(&corpus, ctx.cfg.quorum)? };
    let st = dataset_stats(&corpus, &gold);
    write_json(&out_j, &st)?;
    let text = st.to_text();
    write_text(&out_t, &text)?;
    write_json(&out_d, &reason_distribution(&corpus, &gold))?;
    print!("{text}");
    tracing::debug!(words = corpus.clips.iter().map(|c| tokenize(&c.excerpt).len()).sum::<usize>(), "excerpt words");
    ctx.finish(man)
}

pub fn report(ctx: &Ctx, a: &ReportArgs) -> anyhow::Result<()> {
    let paths: Vec<PathBuf> = a.reports.iter().map(|p| ctx.path(p)).collect();
    let inputs: Vec<(&str, PathBuf)> = paths.iter().map(|p| ("report", p.clone())).collect();
    let out = ctx.path(&a.output);
    let Some(man) = ctx.begin("report", &inputs, std::slice::from_ref(&out))? else {
        return Ok(());
    };
    let reports: Vec<EvalReport> = paths.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let pct = |x: f64| format!("{:.2}", 100.0 * x);
    let main_rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let m = &r.macro_means;
            vec![r.method.clone(), r.input.clone(), pct(m.accuracy), pct(m.precision), pct(m.recall), pct(m.f1)]
        })
        .collect();
    let mut text = table::render(&["Method", "Input", "Accuracy", "Precision", "Recall", "F1"], &main_rows);
    let mut actions: Vec<&String> = reports.iter().flat_map(|r| r.per_action.keys()).collect();
    actions.sort();
    actions.dedup();
    let headers: Vec<String> =
        std::iter::once("Action".to_string()).chain(reports.iter().map(|r| format!("{} F1", r.method))).collect();
    let action_rows: Vec<Vec<String>> = actions
        .iter()
        .map(|act| {
            std::iter::once(act.to_string())
                .chain(reports.iter().map(|r| r.per_action.get(*act).map_or("-".into(), |m| pct(m.means.f1))))
                .collect()
        })
        .collect();
    text.push('\n');
    text.push_str(&table::render(&headers.iter().map(String::as_str).collect::<Vec<_>>(), &action_rows));
    write_text(&out, &text)?;
    print!("{text}");
    ctx.finish(man)
}

pub fn stub_scorer(bind: &str) -> anyhow::Result<()> {
    let srv = StubServer::bind(bind, StubOptions::default()).context("starting stub scorer")?;
    println!("{}", srv.endpoint());
    tracing::info!(endpoint = %srv.endpoint(), "stub scorer listening");
    srv.join();
    Ok(())
}
