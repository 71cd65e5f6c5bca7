//! Adam training over the contrastive objective, the two-stage schedule,
//! threshold calibration and a synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{ImageBank, Label, LabeledExample};
use crate::error::{Error, Result};
use crate::eval::classification_metrics;
use crate::model::{ModelCheckpoint, ModelConfig, Params, MAX_LOG_INV_TAU, MIN_LOG_INV_TAU};
use crate::objective::{objective_grad, Batch, Objective, ObjectiveKind, ObjectiveOptions};
use crate::text::tokenize;
use crate::vector::{seeded_rng, uniform_pm1, RawVector};

/// Encoder sizes for a freshly initialized model. The image input size is
/// taken from the image bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub d_tok: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub null_seed: u64,
    pub max_tokens: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::new(vec![]);
        Self {
            d_tok: c.d_tok,
            d_hidden: c.d_hidden,
            d_out: c.d_out,
            null_seed: c.null_seed,
            max_tokens: c.max_tokens,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab: Vec<String>, d_img: usize) -> ModelConfig {
        ModelConfig {
            vocab,
            d_tok: self.d_tok,
            d_hidden: self.d_hidden,
            d_out: self.d_out,
            d_img,
            null_seed: self.null_seed,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub objective: ObjectiveKind,
    pub mask_shared_anchors: bool,
    pub model: ModelShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_epochs: 5,
            stage2_epochs: 2,
            learning_rate: 5e-5,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            objective: ObjectiveKind::NullAnchored,
            mask_shared_anchors: false,
            model: ModelShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: u32,
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelCheckpoint,
    pub log: Vec<EpochLog>,
}

/// Adam with bias correction, first and second moments kept per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    pub fn new(config: &ModelConfig, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: Params::zeros(config),
            v: Params::zeros(config),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .buffers_mut()
            .into_iter()
            .zip(grads.buffers())
            .zip(self.m.buffers_mut())
            .zip(self.v.buffers_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

fn check_classes(corpus: &[LabeledExample]) -> Result<()> {
    let has = |l: Label| corpus.iter().any(|e| e.label == l);
    if has(Label::Visual) && has(Label::NonVisual) {
        Ok(())
    } else {
        Err(Error::DegenerateCorpus)
    }
}

fn run_stage(
    model: &mut ModelCheckpoint,
    corpus: &[LabeledExample],
    bank: &ImageBank,
    epochs: usize,
    stage: u32,
    cfg: &TrainConfig,
    log: &mut Vec<EpochLog>,
) -> Result<()> {
    if epochs == 0 {
        return Ok(());
    }
    check_classes(corpus)?;
    let full = Batch::from_examples(corpus, bank)?;
    let objective = Objective::from_kind(cfg.objective, model.config().d_img)?;
    let opts = ObjectiveOptions {
        mask_shared_anchors: cfg.mask_shared_anchors,
    };
    let mut adam = Adam::new(model.config(), cfg);
    let mut rng = seeded_rng(cfg.seed ^ u64::from(stage));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = full.permuted(chunk);
            let g = objective_grad(model, &batch, &objective, opts)?;
            if !g.report.loss.is_finite() || !g.grads.all_finite() {
                return Err(Error::AbortNaN { stage, epoch });
            }
            total += g.report.loss * chunk.len() as f64;
            adam.step(&mut model.params, &g.grads);
            model.params.log_inv_tau = model.params.log_inv_tau.clamp(MIN_LOG_INV_TAU, MAX_LOG_INV_TAU);
            if !model.params.all_finite() {
                return Err(Error::AbortNaN { stage, epoch });
            }
        }
        log.push(EpochLog {
            stage,
            epoch,
            mean_loss: total / corpus.len() as f64,
        });
    }
    Ok(())
}

/// Single-stage training for `cfg.stage1_epochs` epochs. The logged loss of
/// an epoch is the example-weighted mean of its batch losses.
pub fn train(
    m0: &ModelCheckpoint,
    corpus: &[LabeledExample],
    bank: &ImageBank,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = m0.clone();
    let mut log = Vec::new();
    run_stage(&mut model, corpus, bank, cfg.stage1_epochs, 1, cfg, &mut log)?;
    Ok(TrainOutcome { model, log })
}

/// Stage 1 on the automatically labeled corpus, then stage 2 on the human
/// labeled one with fresh Adam moments. A stage with zero epochs is skipped.
pub fn two_stage_train(
    m0: &ModelCheckpoint,
    auto_corpus: &[LabeledExample],
    human_corpus: &[LabeledExample],
    bank: &ImageBank,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = m0.clone();
    let mut log = Vec::new();
    run_stage(&mut model, auto_corpus, bank, cfg.stage1_epochs, 1, cfg, &mut log)?;
    run_stage(&mut model, human_corpus, bank, cfg.stage2_epochs, 2, cfg, &mut log)?;
    Ok(TrainOutcome { model, log })
}

/// Sorted distinct tokens of every text.
pub fn build_vocab<'a>(corpora: impl IntoIterator<Item = &'a [LabeledExample]>) -> Vec<String> {
    let mut vocab = BTreeSet::new();
    for corpus in corpora {
        for ex in corpus {
            vocab.extend(tokenize(&ex.text));
        }
    }
    vocab.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub macro_f1: f64,
}

/// Sweeps `-inf`, the midpoints between adjacent distinct scores and `+inf`,
/// predicting visual when `score >= threshold`. The first (smallest)
/// threshold with the best macro-F1 wins.
pub fn calibrate_threshold(scores: &[f64], gold: &[Label]) -> Result<Calibration> {
    if scores.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: gold.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("score"));
    }
    if !(gold.contains(&Label::Visual) && gold.contains(&Label::NonVisual)) {
        return Err(Error::SingleClass);
    }
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(f64::INFINITY);

    let mut best: Option<Calibration> = None;
    for t in candidates {
        let f1 = classification_metrics(gold, &apply_threshold(scores, t))?.macro_f1;
        if best.is_none_or(|b| f1 > b.macro_f1) {
            best = Some(Calibration {
                threshold: t,
                macro_f1: f1,
            });
        }
    }
    Ok(best.expect("at least two candidates"))
}

/// Visual when `score >= threshold`; accepts the infinite thresholds that
/// calibration may return.
pub fn apply_threshold(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| if s >= threshold { Label::Visual } else { Label::NonVisual })
        .collect()
}

pub const HELD_OUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_topics: usize,
    pub n_visual: usize,
    pub n_nonvisual: usize,
    pub sentence_len_range: (usize, usize),
    pub noise_sigma: f64,
    pub seed: u64,
    pub feature_dim: usize,
    pub words_per_topic: usize,
    pub n_function_words: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_topics: 4,
            n_visual: 400,
            n_nonvisual: 400,
            sentence_len_range: (4, 10),
            noise_sigma: 0.1,
            seed: 7,
            feature_dim: 64,
            words_per_topic: 8,
            n_function_words: 40,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.into()));
        if self.n_topics == 0 || self.n_visual == 0 || self.n_nonvisual == 0 {
            return bad("topic and example counts must be > 0");
        }
        if self.feature_dim == 0 || self.words_per_topic == 0 || self.n_function_words == 0 {
            return bad("feature_dim, words_per_topic and n_function_words must be > 0");
        }
        let (lo, hi) = self.sentence_len_range;
        if lo == 0 || lo > hi {
            return bad("sentence_len_range must satisfy 1 <= min <= max");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<LabeledExample>,
    pub held_out: Vec<LabeledExample>,
    /// One noisy image per visual example.
    pub bank: ImageBank,
    /// One noise-free image per topic.
    pub prototypes: ImageBank,
    /// Topic of every image in `bank`.
    pub image_topics: BTreeMap<String, usize>,
}

pub fn topic_word(topic: usize, i: usize) -> String {
    format!("t{topic}w{i}")
}

pub fn function_word(i: usize) -> String {
    format!("f{i}")
}

pub fn prototype_id(topic: usize) -> String {
    format!("proto{topic:03}")
}

impl SyntheticData {
    /// `(text, prototype id)` for every visual example in `examples`.
    pub fn retrieval_pairs(&self, examples: &[LabeledExample]) -> Vec<(String, String)> {
        examples
            .iter()
            .filter_map(|ex| {
                let id = ex.image_id.as_ref()?;
                Some((ex.text.clone(), prototype_id(self.image_topics[id])))
            })
            .collect()
    }
}

/// Visual sentences draw words from one topic and pair with that topic's
/// prototype plus gaussian noise; non-visual sentences draw from a separate
/// function-word list. Examples are shuffled and the last 20% held out.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let mut prototypes = ImageBank::new();
    let protos: Vec<Vec<f64>> = (0..spec.n_topics)
        .map(|_| (0..spec.feature_dim).map(|_| uniform_pm1(&mut rng)).collect())
        .collect();
    for (t, p) in protos.iter().enumerate() {
        prototypes.insert(prototype_id(t), RawVector::new(p.clone())?);
    }

    let (lo, hi) = spec.sentence_len_range;
    let sentence = |rng: &mut rand_xoshiro::Xoshiro256StarStar, word: &dyn Fn(usize) -> String, n_words: usize| {
        let len = Rng::random_range(rng, lo..=hi);
        let words: Vec<String> = (0..len).map(|_| word(Rng::random_range(rng, 0..n_words))).collect();
        format!("{}.", words.join(" "))
    };

    let mut bank = ImageBank::new();
    let mut image_topics = BTreeMap::new();
    let mut examples = Vec::with_capacity(spec.n_visual + spec.n_nonvisual);
    for i in 0..spec.n_visual {
        let topic = i % spec.n_topics;
        let text = sentence(&mut rng, &|w| topic_word(topic, w), spec.words_per_topic);
        let features: Vec<f64> = protos[topic].iter().map(|&p| p + noise.sample(&mut rng)).collect();
        let id = format!("img{i:05}");
        bank.insert(id.clone(), RawVector::new(features)?);
        image_topics.insert(id.clone(), topic);
        examples.push(LabeledExample::visual(text, id));
    }
    for _ in 0..spec.n_nonvisual {
        let text = sentence(&mut rng, &function_word, spec.n_function_words);
        examples.push(LabeledExample::non_visual(text));
    }
    examples.shuffle(&mut rng);
    let n_held = (examples.len() as f64 * HELD_OUT_FRACTION).round() as usize;
    let held_out = examples.split_off(examples.len() - n_held);
    Ok(SyntheticData {
        corpus: examples,
        held_out,
        bank,
        prototypes,
        image_topics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VisualnessScore;
    use proptest::prelude::*;
    use Label::{NonVisual as N, Visual as V};

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_topics: 3,
            n_visual: 48,
            n_nonvisual: 48,
            ..SyntheticSpec::default()
        }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            stage1_epochs: 5,
            learning_rate: 1e-2,
            batch_size: 16,
            seed: 3,
            model: ModelShape {
                d_tok: 16,
                d_hidden: 16,
                d_out: 8,
                ..ModelShape::default()
            },
            ..TrainConfig::default()
        }
    }

    fn fresh(data: &SyntheticData, cfg: &TrainConfig) -> ModelCheckpoint {
        let vocab = build_vocab([data.corpus.as_slice(), data.held_out.as_slice()]);
        ModelCheckpoint::init(cfg.model.config(vocab, 64), cfg.seed).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let cfg = TrainConfig {
            stage1_epochs: 0,
            ..small_cfg()
        };
        let m0 = fresh(&data, &cfg);
        let out = train(&m0, &data.corpus, &data.bank, &cfg).unwrap();
        assert_eq!(out.model, m0);
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let cfg = small_cfg();
        let m0 = fresh(&data, &cfg);
        let a = train(&m0, &data.corpus, &data.bank, &cfg).unwrap();
        let b = train(&m0, &data.corpus, &data.bank, &cfg).unwrap();
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 5);
        assert!(a.log[4].mean_loss < a.log[0].mean_loss, "{:?}", a.log);
    }

    #[test]
    fn two_stage_reductions_and_reset() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let (auto, human) = data.corpus.split_at(60);
        let cfg = TrainConfig {
            stage1_epochs: 2,
            stage2_epochs: 2,
            ..small_cfg()
        };
        let m0 = fresh(&data, &cfg);
        let human_only = two_stage_train(
            &m0,
            &[],
            human,
            &data.bank,
            &TrainConfig {
                stage1_epochs: 0,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert!(human_only.log.iter().all(|l| l.stage == 2));
        let auto_only = two_stage_train(
            &m0,
            auto,
            &[],
            &data.bank,
            &TrainConfig {
                stage2_epochs: 0,
                ..cfg.clone()
            },
        )
        .unwrap();
        let single = train(&m0, auto, &data.bank, &TrainConfig { stage1_epochs: 2, ..cfg.clone() }).unwrap();
        assert_eq!(auto_only.model, single.model);

        // Same corpus in both stages: both runs still improve on m0.
        let both = two_stage_train(&m0, auto, auto, &data.bank, &cfg).unwrap();
        let four = train(&m0, auto, &data.bank, &TrainConfig { stage1_epochs: 4, ..cfg.clone() }).unwrap();
        let loss = |m: &ModelCheckpoint| {
            let b = Batch::from_examples(auto, &data.bank).unwrap();
            crate::objective::contrastive_loss(m, &b).unwrap().loss
        };
        assert!(loss(&both.model) < loss(&m0));
        assert!(loss(&four.model) < loss(&m0));
    }

    #[test]
    fn degenerate_and_unresolved() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let cfg = small_cfg();
        let m0 = fresh(&data, &cfg);
        let visual: Vec<_> = data.corpus.iter().filter(|e| e.label == V).cloned().collect();
        assert!(matches!(train(&m0, &visual, &data.bank, &cfg), Err(Error::DegenerateCorpus)));
        let mut broken = data.corpus.clone();
        let i = broken.iter().position(|e| e.label == V).unwrap();
        broken[i].image_id = Some("nope".into());
        assert!(matches!(train(&m0, &broken, &data.bank, &cfg), Err(Error::UnresolvedImage(_))));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..cfg
        };
        assert!(matches!(train(&m0, &data.corpus, &data.bank, &bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let cfg = small_cfg();
        let m0 = fresh(&data, &cfg);
        let mut params = m0.params.clone();
        let mut adam = Adam::new(m0.config(), &cfg);
        adam.step(&mut params, &Params::zeros(m0.config()));
        assert_eq!(params, m0.params);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // Bias-corrected first step is lr·g/(|g| + eps).
        let cfg = small_cfg();
        let config = ModelConfig {
            d_tok: 1,
            d_hidden: 1,
            d_out: 1,
            d_img: 1,
            ..ModelConfig::new(vec!["a".into()])
        };
        let mut params = Params::zeros(&config);
        let mut grads = Params::zeros(&config);
        grads.log_inv_tau = -3.0;
        let mut adam = Adam::new(&config, &cfg);
        adam.step(&mut params, &grads);
        let expected = cfg.learning_rate * 3.0 / (3.0 + cfg.adam_eps);
        assert!((params.log_inv_tau - expected).abs() < 1e-15);
    }

    #[test]
    fn config_json_defaults() {
        let cfg = TrainConfig::from_json(r#"{"learning_rate": 0.001, "seed": 4}"#).unwrap();
        assert_eq!(cfg.stage1_epochs, 5);
        assert_eq!(cfg.stage2_epochs, 2);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.objective, ObjectiveKind::NullAnchored);
        assert_eq!(TrainConfig::default().learning_rate, 5e-5);
        assert!(TrainConfig::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"epochs": 3}"#).is_err());
        let c = TrainConfig::from_json(r#"{"objective": "classification_only"}"#).unwrap();
        assert_eq!(c.objective, ObjectiveKind::ClassificationOnly);
    }

    #[test]
    fn calibration_examples() {
        let c = calibrate_threshold(&[0.1, 0.2, 0.8, 0.9], &[N, N, V, V]).unwrap();
        assert!((c.threshold - 0.5).abs() < 1e-15);
        assert_eq!(c.macro_f1, 1.0);

        let c = calibrate_threshold(&[0.9, 0.8, 0.2, 0.1], &[N, N, V, V]).unwrap();
        assert!(c.macro_f1 < 1.0);
        assert_eq!(c.threshold, f64::NEG_INFINITY);

        let c = calibrate_threshold(&[0.5; 4], &[N, V, V, V]).unwrap();
        assert!(c.threshold.is_infinite());
        let all_visual = classification_metrics(&[N, V, V, V], &[V; 4]).unwrap().macro_f1;
        assert_eq!(c.macro_f1, all_visual);

        assert!(matches!(calibrate_threshold(&[0.1, 0.2], &[V, V]), Err(Error::SingleClass)));
    }

    #[test]
    fn synthetic_construction() {
        let spec = SyntheticSpec::default();
        let a = generate_synthetic(&spec).unwrap();
        assert_eq!(a, generate_synthetic(&spec).unwrap());
        assert_eq!(a.corpus.len(), 640);
        assert_eq!(a.held_out.len(), 160);
        let visual = build_vocab([a.corpus.iter().filter(|e| e.label == V).cloned().collect::<Vec<_>>().as_slice()]);
        let non = build_vocab([a.corpus.iter().filter(|e| e.label == N).cloned().collect::<Vec<_>>().as_slice()]);
        assert!(visual.iter().all(|w| !non.contains(w)));
        assert!(a.corpus.iter().chain(&a.held_out).all(LabeledExample::is_consistent));

        let clean = generate_synthetic(&SyntheticSpec {
            noise_sigma: 0.0,
            ..spec.clone()
        })
        .unwrap();
        for (id, f) in &clean.bank {
            assert_eq!(f, &clean.prototypes[&prototype_id(clean.image_topics[id])]);
        }
        let pairs = clean.retrieval_pairs(&clean.held_out);
        assert_eq!(pairs.len(), clean.held_out.iter().filter(|e| e.label == V).count());

        assert!(generate_synthetic(&SyntheticSpec { n_topics: 0, ..spec.clone() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { noise_sigma: -1.0, ..spec.clone() }).is_err());
        assert!(generate_synthetic(&SyntheticSpec { sentence_len_range: (5, 2), ..spec }).is_err());
    }

    #[test]
    fn trained_scores_separate_classes() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let cfg = TrainConfig {
            stage1_epochs: 10,
            ..small_cfg()
        };
        let m = train(&fresh(&data, &cfg), &data.corpus, &data.bank, &cfg).unwrap().model;
        let score = |e: &LabeledExample| m.visualness_score(&e.text).map(VisualnessScore::value).unwrap();
        let scores: Vec<f64> = data.held_out.iter().map(score).collect();
        let gold: Vec<Label> = data.held_out.iter().map(|e| e.label).collect();
        assert!(calibrate_threshold(&scores, &gold).unwrap().macro_f1 > 0.9);
    }

    proptest! {
        #[test]
        fn calibration_is_exhaustive(
            data in prop::collection::vec((0.0f64..2.0, any::<bool>()), 2..25),
            probe in -0.5f64..2.5,
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let gold: Vec<Label> = data.iter().map(|d| if d.1 { V } else { N }).collect();
            prop_assume!(gold.contains(&V) && gold.contains(&N));
            let best = calibrate_threshold(&scores, &gold).unwrap();
            let pred: Vec<Label> = scores.iter().map(|&s| if s >= probe { V } else { N }).collect();
            prop_assert!(best.macro_f1 >= classification_metrics(&gold, &pred).unwrap().macro_f1);
        }
    }
}
