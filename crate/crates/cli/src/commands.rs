use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use lngprobe::align::{
    self, align_corpus, center_word_pairs, em_projection_align, evaluate_corpus, evaluate_f1,
    pharaoh, tune_distortion_weight, AlignmentLinkSet, GoldAlignment, PenaltyKind, WordPair,
};
use lngprobe::classify::{
    load_langid, load_qe_samples, predict_lang, qe_cosine_score, save_langid, save_regressor,
    train_langid, train_qe, LabeledVector, QeAux, QeInputMode, QeVariant, TrainConfig,
};
use lngprobe::cluster::{agglomerate, project_2d, random_baseline, v_measure, FamilyLabeling};
use lngprobe::embstore::{read_dump, write_dump, EmbeddingSet, Pooling, SentenceVector};
use lngprobe::geometry::{
    center as center_side, centroids_by_language, fit_projection as fit, load_centroids,
    load_projection, save_centroids, save_projection, FitOptions, LanguageCentroid,
    LinearProjection,
};
use lngprobe::retrieval::{run_retrieval_suite, LanguageSide, RetrievalMode, SuiteInputs};
use lngprobe::synth::{generate, SynthConfig};
use lngprobe::{Error, Result};
use log::info;
use serde_json::json;

use crate::report::{emit, emit_stdout, kv_tsv, require_output};
use crate::Common;

fn sentences(path: &Path) -> Result<(EmbeddingSet, Vec<SentenceVector>)> {
    let set = read_dump(path)?;
    let records = set
        .sentence_records()
        .map_err(|_| {
            Error::Validation(format!(
                "{}: expected sentence vectors (run `pool` on token dumps first)",
                path.display()
            ))
        })?
        .to_vec();
    Ok((set, records))
}

/// Groups vectors by language, in order of first appearance.
fn by_language(vectors: Vec<SentenceVector>) -> Vec<LanguageSide> {
    let mut sides: Vec<LanguageSide> = Vec::new();
    for v in vectors {
        match sides.iter_mut().find(|s| s.language == v.language) {
            Some(s) => s.vectors.push(v),
            None => sides.push(LanguageSide {
                language: v.language.clone(),
                vectors: vec![v],
            }),
        }
    }
    sides
}

fn centroid_map(centroids: Vec<LanguageCentroid>) -> HashMap<String, LanguageCentroid> {
    centroids
        .into_iter()
        .map(|c| (c.language.clone(), c))
        .collect()
}

fn center_all(
    vectors: &[SentenceVector],
    centroids: &HashMap<String, LanguageCentroid>,
) -> Result<Vec<SentenceVector>> {
    let mut out = Vec::with_capacity(vectors.len());
    for side in by_language(vectors.to_vec()) {
        let c = centroids.get(&side.language).ok_or_else(|| {
            Error::Validation(format!("no centroid for language `{}`", side.language))
        })?;
        out.extend(center_side(&side.vectors, c)?);
    }
    // restore input order
    let pos: HashMap<(&str, &str), usize> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| ((v.language.as_str(), v.sentence_id.as_str()), i))
        .collect();
    let mut indexed: Vec<(usize, SentenceVector)> = out
        .into_iter()
        .map(|v| (pos[&(v.language.as_str(), v.sentence_id.as_str())], v))
        .collect();
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, v)| v).collect())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))
}

fn write_text(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io_at(path, e))
}

fn parse_list<T: std::str::FromStr<Err = Error>>(text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|w| w.is_finite() && *w >= 0.0)
                .ok_or_else(|| Error::Config(format!("bad grid weight `{s}`")))
        })
        .collect()
}

// ---------------------------------------------------------------- pooling

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Token-level dump.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "mean")]
    pub pooling: Pooling,
    /// Keep special tokens in mean pooling.
    #[arg(long)]
    pub include_special: bool,
}

pub fn pool(c: &Common, a: PoolArgs) -> Result<()> {
    let out = require_output(c)?;
    let set = read_dump(&a.input)?;
    let pooled = set.pooled(a.pooling, !a.include_special)?;
    info!("pooled {} records", pooled.len());
    write_dump(&pooled, out)
}

#[derive(Debug, Args)]
pub struct CentroidsArgs {
    /// Sentence-vector dumps; may be repeated.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
}

pub fn centroids(c: &Common, a: CentroidsArgs) -> Result<()> {
    let out = require_output(c)?;
    let mut all = Vec::new();
    let mut meta = None;
    for p in &a.input {
        let (set, v) = sentences(p)?;
        meta.get_or_insert((set.model_id.clone(), set.layer));
        all.extend(v);
    }
    let (model_id, layer) = meta.expect("at least one input");
    let cs = centroids_by_language(&all)?;
    save_centroids(&cs, &model_id, layer, out)
}

#[derive(Debug, Args)]
pub struct CenterArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Centroid file from `centroids`.
    #[arg(long)]
    pub centroids: PathBuf,
}

pub fn center(c: &Common, a: CenterArgs) -> Result<()> {
    let out = require_output(c)?;
    let (set, v) = sentences(&a.input)?;
    let cs = centroid_map(load_centroids(&a.centroids)?);
    let centered = center_all(&v, &cs)?;
    write_dump(
        &EmbeddingSet::sentences(set.model_id, set.layer, set.dim, centered),
        out,
    )
}

#[derive(Debug, Args)]
pub struct FitProjectionArgs {
    /// Source-language sentence vectors.
    #[arg(long)]
    pub source: PathBuf,
    /// Parallel target-language sentence vectors, same order.
    #[arg(long)]
    pub target: PathBuf,
    /// Fit an intercept as well.
    #[arg(long)]
    pub bias: bool,
}

fn single_language(v: &[SentenceVector], path: &Path) -> Result<String> {
    let lang = v
        .first()
        .map(|r| r.language.clone())
        .ok_or_else(|| Error::Validation(format!("{}: no records", path.display())))?;
    if let Some(r) = v.iter().find(|r| r.language != lang) {
        return Err(Error::Validation(format!(
            "{}: mixes languages `{lang}` and `{}`",
            path.display(),
            r.language
        )));
    }
    Ok(lang)
}

pub fn fit_projection(c: &Common, a: FitProjectionArgs) -> Result<()> {
    let out = require_output(c)?;
    let (set, src) = sentences(&a.source)?;
    let (_, tgt) = sentences(&a.target)?;
    let sl = single_language(&src, &a.source)?;
    let tl = single_language(&tgt, &a.target)?;
    let vecs = |v: &[SentenceVector]| v.iter().map(|r| r.vector.clone()).collect::<Vec<_>>();
    let mut p = fit(&vecs(&src), &vecs(&tgt), FitOptions { bias: a.bias })?;
    p.source_language = sl;
    p.target_language = tl;
    save_projection(&p, &set.model_id, set.layer, out)?;
    let j = json!({
        "source_language": p.source_language,
        "target_language": p.target_language,
        "samples": src.len(),
        "residual_mse": p.residual_mse,
        "regularized": p.regularized,
        "bias": a.bias,
    });
    emit_stdout(c, &j, || {
        kv_tsv(&[
            ("source_language", p.source_language.clone()),
            ("target_language", p.target_language.clone()),
            ("samples", src.len().to_string()),
            ("residual_mse", format!("{:e}", p.residual_mse)),
            ("regularized", p.regularized.to_string()),
        ])
    })
}

// -------------------------------------------------------------- retrieval

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Sentence-vector dumps, parallel across languages; may be repeated.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Comma-separated modes: plain, centered, projected.
    #[arg(long, default_value = "plain")]
    pub modes: String,
    /// Centroid file for centered mode.
    #[arg(long, conflicts_with = "estimate_centroids")]
    pub centroids: Option<PathBuf>,
    /// Estimate centroids from the inputs themselves.
    #[arg(long)]
    pub estimate_centroids: bool,
    /// Projection files into a shared pivot language; may be repeated.
    #[arg(long)]
    pub projection: Vec<PathBuf>,
}

pub fn retrieve(c: &Common, a: RetrieveArgs) -> Result<()> {
    let modes: Vec<RetrievalMode> = parse_list(&a.modes)?;
    if modes.is_empty() {
        return Err(Error::Config("no retrieval modes given".into()));
    }
    let mut all = Vec::new();
    for p in &a.input {
        all.extend(sentences(p)?.1);
    }
    let centroids = match (&a.centroids, a.estimate_centroids) {
        (Some(p), _) => Some(centroid_map(load_centroids(p)?)),
        (None, true) => Some(centroid_map(centroids_by_language(&all)?)),
        (None, false) => None,
    };
    let projections: Option<HashMap<String, LinearProjection>> = if a.projection.is_empty() {
        None
    } else {
        let mut m = HashMap::new();
        for p in &a.projection {
            let proj = load_projection(p)?;
            m.insert(proj.source_language.clone(), proj);
        }
        Some(m)
    };
    let sides = by_language(all);
    let suite = run_retrieval_suite(
        &sides,
        &modes,
        &SuiteInputs {
            centroids: centroids.as_ref(),
            projections: projections.as_ref(),
        },
    )?;
    let pairs: Vec<_> = suite
        .results
        .iter()
        .map(|r| {
            json!({
                "mode": r.mode.as_str(),
                "query": r.query_language,
                "candidate": r.candidate_language,
                "accuracy": r.accuracy,
            })
        })
        .collect();
    let averages: BTreeMap<&str, f64> = suite
        .mode_averages
        .iter()
        .map(|(m, v)| (m.as_str(), *v))
        .collect();
    let j = json!({
        "languages": suite.languages,
        "sentences": sides[0].vectors.len(),
        "averages": averages,
        "pairs": pairs,
    });
    emit(c, &j, || {
        modes
            .iter()
            .map(|m| suite.to_tsv(*m))
            .collect::<Vec<_>>()
            .join("\n")
    })
}

// -------------------------------------------------------------- alignment

#[derive(Debug, Args)]
pub struct PairInputs {
    /// Source-side token dump.
    #[arg(long)]
    pub source: PathBuf,
    /// Target-side token dump, parallel to the source.
    #[arg(long)]
    pub target: PathBuf,
    /// Distortion penalty: none, inverse or linear.
    #[arg(long, default_value = "inverse")]
    pub penalty: PenaltyKind,
    /// Subtract each side's mean word vector first.
    #[arg(long)]
    pub center: bool,
}

fn word_pairs(a: &PairInputs) -> Result<Vec<WordPair>> {
    let src = read_dump(&a.source)?;
    let tgt = read_dump(&a.target)?;
    let (src, tgt) = (src.token_records()?, tgt.token_records()?);
    if src.len() != tgt.len() {
        return Err(Error::Validation(format!(
            "{} source sentences but {} target sentences",
            src.len(),
            tgt.len()
        )));
    }
    let pairs = src
        .iter()
        .zip(tgt)
        .enumerate()
        .map(|(k, (s, t))| {
            WordPair::from_matrices(s, t).map_err(|e| Error::Validation(format!("pair {k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if a.center {
        center_word_pairs(&pairs)
    } else {
        Ok(pairs)
    }
}

fn read_gold(path: &Path, one_based: bool) -> Result<Vec<GoldAlignment>> {
    pharaoh::parse_gold(&read_text(path)?, one_based)
}

fn shift_links(l: &AlignmentLinkSet, one_based: bool) -> AlignmentLinkSet {
    if !one_based {
        return l.clone();
    }
    AlignmentLinkSet {
        links: l.links.iter().map(|&(i, j)| (i + 1, j + 1)).collect(),
    }
}

fn links_text(all: &[AlignmentLinkSet], one_based: bool) -> String {
    all.iter()
        .map(|l| pharaoh::format_links(&shift_links(l, one_based)) + "\n")
        .collect()
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub pairs: PairInputs,
    /// Distortion weight.
    #[arg(long, default_value_t = 0.0)]
    pub weight: f64,
    /// Rounds of projection refinement; 1 aligns in the raw space.
    #[arg(long, default_value_t = 1)]
    pub em_rounds: usize,
    /// Pharaoh indices are 1-based, for both gold and output links.
    #[arg(long)]
    pub one_based: bool,
    /// Gold links to score the prediction against.
    #[arg(long, requires = "eval_output")]
    pub gold: Option<PathBuf>,
    /// Where the evaluation report goes.
    #[arg(long, requires = "gold")]
    pub eval_output: Option<PathBuf>,
}

fn f1_json(s: &align::F1Score) -> serde_json::Value {
    json!({ "precision": s.precision, "recall": s.recall, "f1": s.f1 })
}

fn f1_tsv(rows: &[(String, Option<align::F1Score>)]) -> String {
    let mut out = String::from("pair\tprecision\trecall\tf1\n");
    for (name, s) in rows {
        match s {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{name}\t{:.4}\t{:.4}\t{:.4}",
                    s.precision, s.recall, s.f1
                );
            }
            None => {
                let _ = writeln!(out, "{name}\t-\t-\t-");
            }
        }
    }
    out
}

fn evaluation(c: &Common, preds: &[AlignmentLinkSet], gold: &[GoldAlignment]) -> Result<String> {
    if preds.len() != gold.len() {
        return Err(Error::Validation(format!(
            "{} predicted lines for {} gold lines",
            preds.len(),
            gold.len()
        )));
    }
    let per_pair: Vec<Option<align::F1Score>> = preds
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            if g.sure.is_empty() {
                Ok(None)
            } else {
                evaluate_f1(p, g).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    let corpus = evaluate_corpus(preds, gold)?;
    let j = json!({
        "pairs": per_pair.iter().map(|s| s.as_ref().map(f1_json)).collect::<Vec<_>>(),
        "corpus": f1_json(&corpus),
    });
    crate::report::render(c.format, &j, || {
        let mut rows: Vec<(String, Option<align::F1Score>)> = per_pair
            .iter()
            .enumerate()
            .map(|(k, s)| (k.to_string(), *s))
            .collect();
        rows.push(("corpus".into(), Some(corpus)));
        f1_tsv(&rows)
    })
}

pub fn align(c: &Common, a: AlignArgs) -> Result<()> {
    if !(a.weight.is_finite() && a.weight >= 0.0) {
        return Err(Error::Config(format!("bad distortion weight {}", a.weight)));
    }
    let gold = a
        .gold
        .as_deref()
        .map(|p| read_gold(p, a.one_based))
        .transpose()?;
    let pairs = word_pairs(&a.pairs)?;
    let (preds, costs) = if a.em_rounds <= 1 {
        (align_corpus(&pairs, a.weight, a.pairs.penalty)?, None)
    } else {
        let em = em_projection_align(&pairs, a.em_rounds, a.weight, a.pairs.penalty)?;
        if let Some(why) = &em.stopped_early {
            info!("refinement stopped early: {why}");
        }
        (em.alignments, Some(em.round_costs))
    };
    if let Some(costs) = &costs {
        info!("round costs: {costs:?}");
    }
    let report = gold
        .as_deref()
        .map(|g| evaluation(c, &preds, g))
        .transpose()?;
    let text = links_text(&preds, a.one_based);
    match &c.output {
        Some(p) => write_text(p, text)?,
        None => print!("{text}"),
    }
    if let (Some(r), Some(p)) = (report, &a.eval_output) {
        write_text(p, r)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AlignEvalArgs {
    /// Predicted links, one Pharaoh line per sentence pair.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold links; `i-j` is sure, `i?j` possible.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub one_based: bool,
}

pub fn align_eval(c: &Common, a: AlignEvalArgs) -> Result<()> {
    let gold = read_gold(&a.gold, a.one_based)?;
    let text = read_text(&a.pred)?;
    let preds = text
        .lines()
        .enumerate()
        .map(|(k, l)| pharaoh::parse_links_line(l, a.one_based, k + 1))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluation(c, &preds, &gold)?;
    match &c.output {
        Some(p) => write_text(p, report)?,
        None => print!("{report}"),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub pairs: PairInputs,
    /// Development gold links.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub one_based: bool,
    /// Comma-separated candidate weights.
    #[arg(long, default_value = "0,0.01,0.02,0.05,0.1,0.2,0.5,1")]
    pub grid: String,
}

pub fn tune_distortion(c: &Common, a: TuneArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    if grid.is_empty() {
        return Err(Error::Config("empty distortion weight grid".into()));
    }
    let gold = read_gold(&a.gold, a.one_based)?;
    let pairs = word_pairs(&a.pairs)?;
    let r = tune_distortion_weight(&pairs, &gold, &grid, a.pairs.penalty)?;
    let j = json!({
        "best_weight": r.best_weight,
        "scores": r.scores.iter().map(|(w, f)| json!({"weight": w, "f1": f})).collect::<Vec<_>>(),
    });
    emit(c, &j, || {
        let mut out = String::from("weight\tf1\n");
        for (w, f) in &r.scores {
            let _ = writeln!(out, "{w}\t{f:.4}");
        }
        let _ = writeln!(out, "best\t{}", r.best_weight);
        out
    })
}

// ---------------------------------------------------------------- probes

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size and epoch limit must be positive".into(),
            ));
        }
        Ok(TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            patience: self.patience,
            max_epochs: self.max_epochs,
            momentum: self.momentum,
            seed,
        })
    }
}

fn labeled(
    paths: &[PathBuf],
    centroids: Option<&HashMap<String, LanguageCentroid>>,
) -> Result<Vec<LabeledVector>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(sentences(p)?.1);
    }
    if let Some(cs) = centroids {
        all = center_all(&all, cs)?;
    }
    Ok(all.iter().map(LabeledVector::from).collect())
}

#[derive(Debug, Args)]
pub struct LangidTrainArgs {
    /// Training sentence vectors; may be repeated.
    #[arg(long, required = true)]
    pub train: Vec<PathBuf>,
    /// Validation sentence vectors; may be repeated.
    #[arg(long, required = true)]
    pub valid: Vec<PathBuf>,
    /// Center each language with these centroids before training.
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

pub fn langid_train(c: &Common, a: LangidTrainArgs) -> Result<()> {
    let out = require_output(c)?;
    let cfg = a.train_args.config(c.seed)?;
    let cs = a
        .centroids
        .as_deref()
        .map(load_centroids)
        .transpose()?
        .map(centroid_map);
    let train = labeled(&a.train, cs.as_ref())?;
    let valid = labeled(&a.valid, cs.as_ref())?;
    let (model, rep) = train_langid(&train, &valid, &cfg)?;
    let train_acc = model.accuracy(&train)?;
    let valid_acc = model.accuracy(&valid)?;
    save_langid(&model, Some(&cfg), out)?;
    let j = json!({
        "labels": model.labels,
        "epochs_run": rep.epochs_run,
        "best_epoch": rep.best_epoch,
        "train_accuracy": train_acc,
        "valid_accuracy": valid_acc,
        "train_loss": rep.train_loss,
    });
    emit_stdout(c, &j, || {
        kv_tsv(&[
            ("epochs_run", rep.epochs_run.to_string()),
            ("best_epoch", rep.best_epoch.to_string()),
            ("train_accuracy", format!("{train_acc:.4}")),
            ("valid_accuracy", format!("{valid_acc:.4}")),
        ])
    })
}

#[derive(Debug, Args)]
pub struct LangidEvalArgs {
    /// Model file from `langid-train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Test sentence vectors; may be repeated.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub centroids: Option<PathBuf>,
}

pub fn langid_eval(c: &Common, a: LangidEvalArgs) -> Result<()> {
    let model = load_langid(&a.model)?;
    let cs = a
        .centroids
        .as_deref()
        .map(load_centroids)
        .transpose()?
        .map(centroid_map);
    let data = labeled(&a.input, cs.as_ref())?;
    if data.is_empty() {
        return Err(Error::Validation("no test vectors".into()));
    }
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for d in &data {
        let hit = predict_lang(&model, &d.vector)? == d.label;
        let e = per.entry(d.label.as_str()).or_default();
        e.0 += usize::from(hit);
        e.1 += 1;
    }
    let correct: usize = per.values().map(|v| v.0).sum();
    let overall = correct as f64 / data.len() as f64;
    let per_acc: BTreeMap<&str, f64> = per
        .iter()
        .map(|(k, v)| (*k, v.0 as f64 / v.1 as f64))
        .collect();
    let j = json!({ "accuracy": overall, "samples": data.len(), "per_language": per_acc });
    emit(c, &j, || {
        let mut out = String::from("language\taccuracy\n");
        for (k, v) in &per_acc {
            let _ = writeln!(out, "{k}\t{v:.4}");
        }
        let _ = writeln!(out, "all\t{overall:.4}");
        out
    })
}

// ------------------------------------------------------------- clustering

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Centroid file from `centroids`.
    #[arg(long)]
    pub centroids: PathBuf,
    /// `language<TAB>family` table; the bundled table when omitted.
    #[arg(long)]
    pub families: Option<PathBuf>,
    /// Drop languages whose family has fewer members than this.
    #[arg(long, default_value_t = 0)]
    pub min_family_size: usize,
    /// Number of clusters; defaults to the number of families present.
    #[arg(long)]
    pub k: Option<usize>,
    /// Random-assignment runs for the baseline.
    #[arg(long, default_value_t = 100)]
    pub baseline_runs: u64,
}

pub fn cluster(c: &Common, a: ClusterArgs) -> Result<()> {
    let outdir = require_output(c)?;
    let families = match &a.families {
        Some(p) => FamilyLabeling::parse_tsv(&read_text(p)?)?,
        None => FamilyLabeling::default_families(),
    };
    let all = load_centroids(&a.centroids)?;
    let names: Vec<&str> = all.iter().map(|c| c.language.as_str()).collect();
    let kept: Vec<&str> = if a.min_family_size > 0 {
        families.filter_min_family_size(&names, a.min_family_size)
    } else {
        if let Some(l) = names.iter().find(|l| families.family(l).is_none()) {
            return Err(Error::Validation(format!("language `{l}` has no family")));
        }
        names.clone()
    };
    let centroids: Vec<LanguageCentroid> = all
        .iter()
        .filter(|c| kept.contains(&c.language.as_str()))
        .cloned()
        .collect();
    let classes: Vec<&str> = kept
        .iter()
        .map(|l| families.family(l).unwrap_or("?"))
        .collect();
    let n_families = classes
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let k = a.k.unwrap_or(n_families);
    if k == 0 || k > centroids.len() {
        return Err(Error::Config(format!(
            "k must be in 1..={}, got {k}",
            centroids.len()
        )));
    }
    let labels = agglomerate(&centroids, k)?;
    let score = v_measure(&kept, &labels, &families)?;
    let baseline = random_baseline(&classes, k, c.seed, a.baseline_runs)?;
    let coords = project_2d(&centroids)?;

    let mut assignments = String::from("language\tfamily\tcluster\n");
    let mut coords_tsv = String::from("language\tx\ty\n");
    for ((l, f), (cl, (x, y))) in kept.iter().zip(&classes).zip(labels.iter().zip(&coords)) {
        let _ = writeln!(assignments, "{l}\t{f}\t{cl}");
        let _ = writeln!(coords_tsv, "{l}\t{x:.6}\t{y:.6}");
    }
    let scores = json!({
        "languages": kept.len(),
        "families": n_families,
        "k": k,
        "score": score,
        "random_baseline": baseline,
        "baseline_runs": a.baseline_runs,
    });
    let scores_text = serde_json::to_string_pretty(&scores)? + "\n";
    std::fs::create_dir_all(outdir).map_err(|e| Error::io_at(outdir, e))?;
    write_text(&outdir.join("assignments.tsv"), assignments)?;
    write_text(&outdir.join("coords.tsv"), coords_tsv)?;
    write_text(&outdir.join("scores.json"), scores_text)?;
    Ok(())
}

// --------------------------------------------------------------------- QE

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum QeMethod {
    Plain,
    Centered,
    Projected,
    Regression,
}

#[derive(Debug, Args)]
pub struct QeArgs {
    /// Source sentence vectors, looked up by id.
    #[arg(long)]
    pub source: PathBuf,
    /// Hypothesis sentence vectors, looked up by id.
    #[arg(long)]
    pub target: PathBuf,
    /// `source_id<TAB>target_id<TAB>hter` rows to score.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = QeMethod::Plain)]
    pub variant: QeMethod,
    /// Centroids for the centered variant.
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// Source-to-target projection for the projected variant.
    #[arg(long)]
    pub projection: Option<PathBuf>,
    /// Training rows for the regression variant.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation rows for the regression variant.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Regressor input: src_only, tgt_only or full.
    #[arg(long, default_value = "full")]
    pub mode: QeInputMode,
    /// Save the trained regressor here.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    #[command(flatten)]
    pub train_args: TrainArgs,
}

pub fn qe(c: &Common, a: QeArgs) -> Result<()> {
    let missing =
        |variant: &str, flags: &str| Error::Config(format!("the {variant} variant needs {flags}"));
    let cfg = match a.variant {
        QeMethod::Regression if a.train.is_none() || a.valid.is_none() => {
            return Err(missing("regression", "--train and --valid"))
        }
        QeMethod::Regression => Some(a.train_args.config(c.seed)?),
        QeMethod::Centered if a.centroids.is_none() => {
            return Err(missing("centered", "--centroids"))
        }
        QeMethod::Projected if a.projection.is_none() => {
            return Err(missing("projected", "--projection"))
        }
        _ => None,
    };
    let (_, src) = sentences(&a.source)?;
    let (_, tgt) = sentences(&a.target)?;
    let rows = |p: &Path| -> Result<_> { load_qe_samples(&read_text(p)?, &src, &tgt) };
    let test = rows(&a.test)?;
    let mut j =
        json!({ "variant": format!("{:?}", a.variant).to_lowercase(), "samples": test.len() });
    let r = match (a.variant, &cfg) {
        (QeMethod::Regression, Some(cfg)) => {
            let (tp, vp) = (a.train.as_deref().unwrap(), a.valid.as_deref().unwrap());
            let (model, rep) = train_qe(&rows(tp)?, &rows(vp)?, a.mode, cfg)?;
            let pred = test
                .iter()
                .map(|s| model.predict(s))
                .collect::<Result<Vec<_>>>()?;
            let hter: Vec<f64> = test.iter().map(|s| s.hter).collect();
            let r = lngprobe::classify::pearson(&pred, &hter)?;
            if let Some(p) = &a.save_model {
                save_regressor(&model, Some(cfg), p)?;
            }
            j["epochs_run"] = json!(rep.epochs_run);
            j["best_epoch"] = json!(rep.best_epoch);
            r
        }
        (v, _) => {
            let variant = match v {
                QeMethod::Centered => QeVariant::Centered,
                QeMethod::Projected => QeVariant::Projected,
                _ => QeVariant::Plain,
            };
            let cs = a
                .centroids
                .as_deref()
                .map(load_centroids)
                .transpose()?
                .map(centroid_map);
            let proj = a.projection.as_deref().map(load_projection).transpose()?;
            let sl = single_language(&src, &a.source)?;
            let tl = single_language(&tgt, &a.target)?;
            let lookup = |l: &str| -> Result<Option<&LanguageCentroid>> {
                match &cs {
                    None => Ok(None),
                    Some(m) => m
                        .get(l)
                        .map(Some)
                        .ok_or_else(|| Error::Validation(format!("no centroid for `{l}`"))),
                }
            };
            let aux = QeAux {
                source_centroid: lookup(&sl)?,
                target_centroid: lookup(&tl)?,
                projection: proj.as_ref(),
            };
            qe_cosine_score(&test, variant, &aux)?
        }
    };
    j["pearson"] = json!(r);
    emit(c, &j, || {
        kv_tsv(&[
            ("samples", test.len().to_string()),
            ("pearson", format!("{r:.4}")),
        ])
    })
}

// -------------------------------------------------------------- synthetic

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    pub languages: usize,
    #[arg(long, default_value_t = 500)]
    pub sentences: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub tokens: usize,
    /// Standard deviation of each language-offset coordinate.
    #[arg(long, default_value_t = 3.0)]
    pub offset_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

pub fn synth(c: &Common, a: SynthArgs) -> Result<()> {
    let outdir = require_output(c)?;
    let cfg = SynthConfig {
        languages: a.languages,
        sentences: a.sentences,
        dim: a.dim,
        tokens_per_sentence: a.tokens,
        offset_scale: a.offset_scale,
        noise: a.noise,
        seed: c.seed,
    };
    let corpus = generate(&cfg)?;
    std::fs::create_dir_all(outdir).map_err(|e| Error::io_at(outdir, e))?;
    for (lang, set) in corpus.languages.iter().zip(&corpus.sets) {
        write_dump(set, &outdir.join(format!("{lang}.memb")))?;
    }
    let offsets: BTreeMap<&str, &Vec<f64>> = corpus
        .languages
        .iter()
        .map(String::as_str)
        .zip(&corpus.offsets)
        .collect();
    let text = serde_json::to_string_pretty(&json!({ "config": cfg, "offsets": offsets }))?;
    write_text(&outdir.join("offsets.json"), text + "\n")?;
    Ok(())
}
