//! The `visualness` command-line tool.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::corpus::{bank_to_jsonl, read_bank, read_corpus, read_jsonl, to_jsonl, Label, LabeledExample};
use crate::error::{Error, Result};
use crate::eval::{classification_metrics, krippendorff_alpha_ordinal, retrieval_eval, AnnotationMatrix};
use crate::labeler::{
    aggregate_annotations, auto_label, max_similarities, percentile_thresholds, AnnotationOutcome, AnnotationRecord,
    PageRecord, DEFAULT_T_NEG, DEFAULT_T_POS,
};
use crate::lexicon::{
    normalize_lexicon, propagate, random_baseline, read_object_vocabulary, read_raw_lexicon, read_word2vec_text,
    sentence_score_lexicon, sentence_score_vg,
};
use crate::model::{classify, ModelCheckpoint, DEFAULT_SCORE_THRESHOLD};
use crate::trainer::{build_vocab, calibrate_threshold, generate_synthetic, two_stage_train, SyntheticSpec, TrainConfig};

/// Directory searched for baseline resources when no explicit path is given.
pub const RESOURCES_ENV: &str = "VISUALNESS_RESOURCES";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const OBJECTS_FILE: &str = "objects.txt";

pub const MRC_THRESHOLD: f64 = 0.17;
pub const VG_THRESHOLD: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(name = "visualness", version, about = "Sentence visualness scoring")]
pub struct Cli {
    /// Seed for commands with randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config for `train` (training settings) or `gen-synthetic` (corpus spec).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label page sentences from sentence-image similarities.
    Label(LabelArgs),
    /// Train a model (stage 1 and/or stage 2).
    Train(TrainArgs),
    /// Score sentences with a trained model.
    Score(ScoreArgs),
    /// Score sentences with a lexicon or random baseline.
    Baseline(BaselineArgs),
    /// Macro precision/recall/F1 of predictions against gold labels.
    Eval(EvalArgs),
    /// Text-to-image retrieval MRR.
    Retrieve(RetrieveArgs),
    /// Krippendorff's ordinal alpha of an annotation matrix.
    Agree(AgreeArgs),
    /// Pick the score threshold maximizing macro-F1.
    Calibrate(CalibrateArgs),
    /// Majority-vote Likert annotations into labels.
    Aggregate(AggregateArgs),
    /// Write a synthetic corpus.
    GenSynthetic(GenSyntheticArgs),
    /// Export text, image and NULL embeddings as TSV.
    ExportEmbeddings(ExportArgs),
    /// Regenerate golden fixtures and compare.
    VerifyFixtures(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub pages: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_T_POS, conflicts_with_all = ["top_frac", "bottom_frac"])]
    pub t_pos: f64,
    #[arg(long, default_value_t = DEFAULT_T_NEG, conflicts_with_all = ["top_frac", "bottom_frac"])]
    pub t_neg: f64,
    #[arg(long, requires = "bottom_frac")]
    pub top_frac: Option<f64>,
    #[arg(long, requires = "top_frac")]
    pub bottom_frac: Option<f64>,
    /// Model used for pages that carry features but no similarity matrix.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Automatically labeled corpus.
    #[arg(long, required_unless_present = "stage2")]
    pub stage1: Option<PathBuf>,
    /// Human labeled corpus.
    #[arg(long)]
    pub stage2: Option<PathBuf>,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log, defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    NullAnchored,
    ClassificationOnly,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Plain text (one sentence per line) or JSONL with a "text" field.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mrc,
    MrcProp,
    Vg,
    Random,
}

impl Method {
    pub fn default_threshold(self) -> f64 {
        match self {
            Method::Mrc | Method::MrcProp => MRC_THRESHOLD,
            Method::Vg => VG_THRESHOLD,
            Method::Random => 0.5,
        }
    }
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to 0.17 for mrc/mrc-prop and 0.5 for vg.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub objects: Option<PathBuf>,
    /// Labeled corpus whose class frequencies drive the random baseline.
    #[arg(long)]
    pub train: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub levels: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Adds image rows for the corpus' visual examples.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "fixtures")]
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub input_paths: Vec<PathBuf>,
    pub output_path: PathBuf,
    pub seed: u64,
    pub timestamp: String,
}

/// One line of scorer output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub text: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalPair {
    pub text: String,
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub text: String,
    pub label: AnnotationOutcome,
}

/// `{"text":...,"score":0.123456,"label":...}` per line.
pub fn render_scores(rows: &[ScoreRow]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        if !r.score.is_finite() {
            return Err(Error::NonFinite("score"));
        }
        out.push_str(&format!(
            "{{\"text\":{},\"score\":{:.6},\"label\":\"{}\"}}\n",
            serde_json::to_string(&r.text)?,
            r.score,
            r.label
        ));
    }
    Ok(out)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Sentences from plain text or JSONL (`.jsonl` extension), skipping empty
/// lines. Returns the sentences and the number of skipped lines.
pub fn read_sentences(path: &Path) -> Result<(Vec<String>, usize)> {
    #[derive(Deserialize)]
    struct Line {
        text: String,
    }
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let name = path.display().to_string();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut sentences = Vec::new();
    let mut skipped = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            skipped += 1;
            continue;
        }
        if jsonl {
            let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::parse(&name, i + 1, e))?;
            if parsed.text.trim().is_empty() {
                skipped += 1;
                continue;
            }
            sentences.push(parsed.text);
        } else {
            sentences.push(line);
        }
    }
    if sentences.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok((sentences, skipped))
}

fn skipped_warning(skipped: usize) -> Vec<String> {
    if skipped > 0 {
        vec![format!("skipped {skipped} empty line(s)")]
    } else {
        vec![]
    }
}

fn resource(explicit: &Option<PathBuf>, file: &str) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    match std::env::var_os(RESOURCES_ENV) {
        Some(dir) => Ok(Path::new(&dir).join(file)),
        None => Err(Error::MissingResource(format!(
            "{file} (pass a path or set {RESOURCES_ENV})"
        ))),
    }
}

fn require_file(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingResource(path.display().to_string()))
    }
}

/// Result of one command: files to write and a short stdout summary.
struct Output {
    files: Vec<(PathBuf, String)>,
    inputs: Vec<PathBuf>,
    /// Path recorded in the manifest; the manifest sits beside it.
    primary: PathBuf,
    summary: String,
    warnings: Vec<String>,
    seed: u64,
}

impl Output {
    fn single(path: &Path, contents: String, inputs: Vec<PathBuf>) -> Self {
        Self {
            primary: path.to_path_buf(),
            files: vec![(path.to_path_buf(), contents)],
            inputs,
            summary: String::new(),
            warnings: vec![],
            seed: 0,
        }
    }
}

fn load_train_config(cli: &Cli, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::from_json(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.stage1_epochs {
        cfg.stage1_epochs = e;
    }
    if let Some(e) = args.stage2_epochs {
        cfg.stage2_epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(o) = args.objective {
        cfg.objective = match o {
            ObjectiveArg::NullAnchored => crate::objective::ObjectiveKind::NullAnchored,
            ObjectiveArg::ClassificationOnly => crate::objective::ObjectiveKind::ClassificationOnly,
        };
    }
    if args.stage1.is_none() {
        cfg.stage1_epochs = 0;
    }
    if args.stage2.is_none() {
        cfg.stage2_epochs = 0;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_label(args: &LabelArgs) -> Result<Output> {
    let mut pages: Vec<PageRecord> = read_jsonl(&args.pages)?;
    if pages.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut inputs = vec![args.pages.clone()];
    if let Some(ck) = &args.checkpoint {
        let model = ModelCheckpoint::load(ck)?;
        for p in &mut pages {
            p.fill_similarity(&model)?;
        }
        inputs.push(ck.clone());
    }
    let (t_pos, t_neg) = match (args.top_frac, args.bottom_frac) {
        (Some(top), Some(bottom)) => percentile_thresholds(&max_similarities(&pages)?, top, bottom)?,
        _ => (args.t_pos, args.t_neg),
    };
    let out = auto_label(&pages, t_pos, t_neg)?;
    let mut examples = out.positives.clone();
    examples.extend(out.negatives.iter().cloned());
    let mut o = Output::single(&args.out, to_jsonl(&examples)?, inputs);
    o.summary = format!(
        "positives={} negatives={} discarded={}",
        out.positives.len(),
        out.negatives.len(),
        out.discarded
    );
    Ok(o)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<Output> {
    let cfg = load_train_config(cli, args)?;
    let read = |p: &Option<PathBuf>| p.as_deref().map(read_corpus).transpose().map(Option::unwrap_or_default);
    let stage1 = read(&args.stage1)?;
    let stage2 = read(&args.stage2)?;
    let bank = read_bank(&args.bank)?;
    let d_img = match bank.values().next() {
        Some(v) => v.dim(),
        None => return Err(Error::EmptyInput),
    };
    let vocab = build_vocab([stage1.as_slice(), stage2.as_slice()]);
    if vocab.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m0 = ModelCheckpoint::init(cfg.model.config(vocab, d_img), cfg.seed)?;
    let outcome = two_stage_train(&m0, &stage1, &stage2, &bank, &cfg)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let mut inputs: Vec<PathBuf> = args.stage1.iter().chain(&args.stage2).cloned().collect();
    inputs.push(args.bank.clone());
    let last = outcome.log.last().map(|l| l.mean_loss);
    Ok(Output {
        files: vec![
            (args.out.clone(), outcome.model.to_json()?),
            (log_path, to_jsonl(&outcome.log)?),
        ],
        inputs,
        primary: args.out.clone(),
        warnings: vec![],
        summary: match last {
            Some(l) => format!("epochs={} final_mean_loss={l:.6}", outcome.log.len()),
            None => "epochs=0".into(),
        },
        seed: cfg.seed,
    })
}

fn cmd_score(args: &ScoreArgs) -> Result<Output> {
    let model = ModelCheckpoint::load(&args.checkpoint)?;
    let (sentences, skipped) = read_sentences(&args.input)?;
    let rows = sentences
        .into_iter()
        .map(|text| {
            let score = model.visualness_score(&text)?;
            Ok(ScoreRow {
                label: classify(score, args.threshold)?,
                score: score.value(),
                text,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut o = Output::single(
        &args.out,
        render_scores(&rows)?,
        vec![args.checkpoint.clone(), args.input.clone()],
    );
    o.warnings = skipped_warning(skipped);
    Ok(o)
}

fn cmd_baseline(cli: &Cli, args: &BaselineArgs) -> Result<Output> {
    let threshold = args.threshold.unwrap_or(args.method.default_threshold());
    let (sentences, skipped) = read_sentences(&args.input)?;
    let mut inputs = vec![args.input.clone()];
    let seed = cli.seed.unwrap_or(0);
    let scores: Vec<f64> = match args.method {
        Method::Mrc | Method::MrcProp => {
            let lex_path = require_file(resource(&args.lexicon, LEXICON_FILE)?)?;
            let mut lex = normalize_lexicon(&read_raw_lexicon(&lex_path)?)?;
            inputs.push(lex_path);
            if args.method == Method::MrcProp {
                let emb_path = require_file(resource(&args.embeddings, EMBEDDINGS_FILE)?)?;
                lex = propagate(&lex, &read_word2vec_text(&emb_path)?)?;
                inputs.push(emb_path);
            }
            sentences
                .iter()
                .map(|s| sentence_score_lexicon(s, &lex))
                .collect::<Result<_>>()?
        }
        Method::Vg => {
            let path = require_file(resource(&args.objects, OBJECTS_FILE)?)?;
            let vocab = read_object_vocabulary(&path)?;
            inputs.push(path);
            sentences
                .iter()
                .map(|s| sentence_score_vg(s, &vocab))
                .collect::<Result<_>>()?
        }
        Method::Random => {
            let path = args
                .train
                .clone()
                .ok_or_else(|| Error::MissingResource("--train corpus for the random baseline".into()))?;
            let labels: Vec<Label> = read_corpus(&require_file(path.clone())?)?.iter().map(|e| e.label).collect();
            inputs.push(path);
            random_baseline(&labels, sentences.len(), seed)?
                .into_iter()
                .map(|l| if l == Label::Visual { 1.0 } else { 0.0 })
                .collect()
        }
    };
    let rows = sentences
        .into_iter()
        .zip(scores)
        .map(|(text, score)| {
            let label = if score >= threshold { Label::Visual } else { Label::NonVisual };
            ScoreRow { text, score, label }
        })
        .collect::<Vec<_>>();
    let mut o = Output::single(&args.out, render_scores(&rows)?, inputs);
    o.seed = seed;
    o.warnings = skipped_warning(skipped);
    Ok(o)
}

fn paired(pred: &[ScoreRow], gold: &[LabeledExample], gold_name: &Path) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.text != g.text {
            return Err(Error::parse(
                gold_name.display().to_string(),
                i + 1,
                format!("text {:?} does not match prediction {:?}", g.text, p.text),
            ));
        }
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<Output> {
    let pred: Vec<ScoreRow> = read_jsonl(&args.pred)?;
    let gold = read_corpus(&args.gold)?;
    paired(&pred, &gold, &args.gold)?;
    let g: Vec<Label> = gold.iter().map(|e| e.label).collect();
    let p: Vec<Label> = pred.iter().map(|r| r.label).collect();
    let json = classification_metrics(&g, &p)?.to_json();
    let mut o = Output::single(&args.out, format!("{json}\n"), vec![args.pred.clone(), args.gold.clone()]);
    o.summary = json;
    Ok(o)
}

fn cmd_retrieve(args: &RetrieveArgs) -> Result<Output> {
    let model = ModelCheckpoint::load(&args.checkpoint)?;
    let pairs: Vec<RetrievalPair> = read_jsonl(&args.pairs)?;
    let bank = read_bank(&args.bank)?;
    let pairs: Vec<(String, String)> = pairs.into_iter().map(|p| (p.text, p.image_id)).collect();
    let mrr = retrieval_eval(&model, &pairs, &bank)?;
    let json = serde_json::json!({ "mrr": mrr }).to_string();
    let mut o = Output::single(
        &args.out,
        format!("{json}\n"),
        vec![args.checkpoint.clone(), args.pairs.clone(), args.bank.clone()],
    );
    o.summary = json;
    Ok(o)
}

fn cmd_agree(args: &AgreeArgs) -> Result<Output> {
    let m = AnnotationMatrix::from_csv(fs::File::open(&args.matrix)?, args.levels)?;
    let alpha = krippendorff_alpha_ordinal(&m)?;
    let json = serde_json::json!({ "alpha": alpha }).to_string();
    let mut o = Output::single(&args.out, format!("{json}\n"), vec![args.matrix.clone()]);
    o.summary = json;
    Ok(o)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<Output> {
    let pred: Vec<ScoreRow> = read_jsonl(&args.scores)?;
    let gold = read_corpus(&args.gold)?;
    paired(&pred, &gold, &args.gold)?;
    let scores: Vec<f64> = pred.iter().map(|r| r.score).collect();
    let labels: Vec<Label> = gold.iter().map(|e| e.label).collect();
    let c = calibrate_threshold(&scores, &labels)?;
    // Scores live in [0, 2]; the sentinels map onto its ends.
    let threshold = c.threshold.clamp(0.0, 2.0);
    let json = serde_json::json!({ "threshold": threshold, "macro_f1": c.macro_f1 }).to_string();
    let mut o = Output::single(&args.out, format!("{json}\n"), vec![args.scores.clone(), args.gold.clone()]);
    o.summary = json;
    Ok(o)
}

fn cmd_aggregate(args: &AggregateArgs) -> Result<Output> {
    let records: Vec<AnnotationRecord> = read_jsonl(&args.annotations)?;
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let labels = records
        .iter()
        .map(|r| {
            Ok(AggregatedLabel {
                text: r.text.clone(),
                label: aggregate_annotations(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Output::single(&args.out, to_jsonl(&labels)?, vec![args.annotations.clone()]))
}

fn cmd_gen_synthetic(cli: &Cli, args: &GenSyntheticArgs) -> Result<Output> {
    let mut spec = match &cli.config {
        Some(p) => {
            let spec: SyntheticSpec = serde_json::from_str(&fs::read_to_string(p)?)?;
            spec
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    let pairs: Vec<RetrievalPair> = data
        .retrieval_pairs(&data.held_out)
        .into_iter()
        .map(|(text, image_id)| RetrievalPair { text, image_id })
        .collect();
    let d = &args.out_dir;
    Ok(Output {
        files: vec![
            (d.join("train.jsonl"), to_jsonl(&data.corpus)?),
            (d.join("held_out.jsonl"), to_jsonl(&data.held_out)?),
            (d.join("bank.jsonl"), bank_to_jsonl(&data.bank)?),
            (d.join("prototypes.jsonl"), bank_to_jsonl(&data.prototypes)?),
            (d.join("pairs.jsonl"), to_jsonl(&pairs)?),
        ],
        inputs: vec![],
        primary: d.join("run"),
        summary: format!("train={} held_out={}", data.corpus.len(), data.held_out.len()),
        warnings: vec![],
        seed: spec.seed,
    })
}

fn tsv_row(out: &mut String, id: &str, kind: &str, v: &[f64]) {
    out.push_str(id);
    out.push('\t');
    out.push_str(kind);
    for x in v {
        out.push_str(&format!("\t{x:.6}"));
    }
    out.push('\n');
}

fn cmd_export(args: &ExportArgs) -> Result<Output> {
    let model = ModelCheckpoint::load(&args.checkpoint)?;
    let corpus = read_corpus(&args.corpus)?;
    let mut inputs = vec![args.checkpoint.clone(), args.corpus.clone()];
    let bank = match &args.bank {
        Some(p) => {
            inputs.push(p.clone());
            Some(read_bank(p)?)
        }
        None => None,
    };
    let d = model.config().d_out;
    let mut out = String::from("id\tkind");
    for i in 1..=d {
        out.push_str(&format!("\tv{i}"));
    }
    out.push('\n');
    for (i, ex) in corpus.iter().enumerate() {
        tsv_row(&mut out, &format!("text{i}"), "text", model.encode_text(&ex.text)?.as_slice());
    }
    if let Some(bank) = &bank {
        let mut seen = BTreeSet::new();
        for id in corpus.iter().filter_map(|e| e.image_id.as_ref()) {
            if !seen.insert(id) {
                continue;
            }
            let f = bank.get(id).ok_or_else(|| Error::MissingImage(id.clone()))?;
            tsv_row(&mut out, id, "image", model.encode_image(f)?.as_slice());
        }
    }
    tsv_row(&mut out, "NULL", "null", model.null_embedding()?.as_slice());
    Ok(Output::single(&args.out, out, inputs))
}

fn execute(cli: &Cli) -> Result<Option<Output>> {
    Ok(Some(match &cli.command {
        Command::Label(a) => cmd_label(a)?,
        Command::Train(a) => cmd_train(cli, a)?,
        Command::Score(a) => cmd_score(a)?,
        Command::Baseline(a) => cmd_baseline(cli, a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Retrieve(a) => cmd_retrieve(a)?,
        Command::Agree(a) => cmd_agree(a)?,
        Command::Calibrate(a) => cmd_calibrate(a)?,
        Command::Aggregate(a) => cmd_aggregate(a)?,
        Command::GenSynthetic(a) => cmd_gen_synthetic(cli, a)?,
        Command::ExportEmbeddings(a) => cmd_export(a)?,
        Command::VerifyFixtures(a) => {
            let report = crate::fixtures::verify_fixtures(&a.dir)?;
            print!("{}", report.render());
            if report.failures() > 0 {
                return Err(Error::FixturesFailed(report.failures()));
            }
            return Ok(None);
        }
    }))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Label(_) => "label",
        Command::Train(_) => "train",
        Command::Score(_) => "score",
        Command::Baseline(_) => "baseline",
        Command::Eval(_) => "eval",
        Command::Retrieve(_) => "retrieve",
        Command::Agree(_) => "agree",
        Command::Calibrate(_) => "calibrate",
        Command::Aggregate(_) => "aggregate",
        Command::GenSynthetic(_) => "gen-synthetic",
        Command::ExportEmbeddings(_) => "export-embeddings",
        Command::VerifyFixtures(_) => "verify-fixtures",
    }
}

/// What a command reports besides its files.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub summary: String,
    pub warnings: Vec<String>,
}

/// Runs a parsed command, writing its outputs and manifest.
pub fn run(cli: &Cli) -> Result<RunReport> {
    let Some(out) = execute(cli)? else {
        return Ok(RunReport::default());
    };
    for (path, contents) in &out.files {
        write_atomic(path, contents.as_bytes())?;
    }
    let manifest = RunManifest {
        command: command_name(&cli.command).into(),
        config_path: cli.config.clone(),
        input_paths: out.inputs,
        output_path: out.primary.clone(),
        seed: cli.seed.unwrap_or(out.seed),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    write_atomic(
        &manifest_path(&out.primary),
        format!("{}\n", serde_json::to_string_pretty(&manifest)?).as_bytes(),
    )?;
    Ok(RunReport {
        summary: out.summary,
        warnings: out.warnings,
    })
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<RunReport>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::parse("command line", 0, e.to_string().trim_end()))?;
    run(&cli)
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if !report.summary.is_empty() {
                println!("{}", report.summary);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
