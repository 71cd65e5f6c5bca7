//! The desk-scale dual encoder.
//!
//! Text path: tokens (truncated to `max_tokens`) → embedding rows → mean pool
//! → `relu(W1ᵀx + b1)` → `W2ᵀh + b2` → unit norm. Out-of-vocabulary tokens
//! share the last embedding row.
//!
//! Image path: feature vector → `W_imgᵀf + b_img` → unit norm. The NULL image
//! is a fixed feature vector (`seeded_random_vector(null_seed, d_img)`) sent
//! through the same trainable projector.
//!
//! The visualness score of a text is `S = 1 - <I_null, T>`, in `[0, 2]`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::text::tokenize;
use crate::vector::{
    dot, normalize_slice, seeded_random_vector, seeded_rng, uniform_pm1, RawVector, UnitEmbedding,
};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Inverse temperature is kept in `[1, 100]`.
pub const MIN_LOG_INV_TAU: f64 = 0.0;
pub const MAX_LOG_INV_TAU: f64 = 4.605_170_185_988_092; // ln 100

/// Operating point for classifying visualness scores.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.79;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: Vec<String>,
    pub d_tok: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub d_img: usize,
    pub null_seed: u64,
    pub max_tokens: usize,
}

impl ModelConfig {
    pub fn new(vocab: Vec<String>) -> Self {
        Self {
            vocab,
            d_tok: 64,
            d_hidden: 128,
            d_out: 32,
            d_img: 64,
            null_seed: 20,
            max_tokens: 77,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() {
            return Err(Error::InvalidConfig("vocab must not be empty".into()));
        }
        for (name, v) in [
            ("d_tok", self.d_tok),
            ("d_hidden", self.d_hidden),
            ("d_out", self.d_out),
            ("d_img", self.d_img),
            ("max_tokens", self.max_tokens),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Every trainable tensor of the model. Also used as the gradient structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[|vocab| + 1, d_tok]`, last row is the unknown token.
    pub token_embeddings: Array2<f64>,
    /// `[d_tok, d_hidden]`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `[d_hidden, d_out]`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// `[d_img, d_out]`
    pub w_img: Array2<f64>,
    pub b_img: Array1<f64>,
    pub log_inv_tau: f64,
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            token_embeddings: Array2::zeros((config.vocab.len() + 1, config.d_tok)),
            w1: Array2::zeros((config.d_tok, config.d_hidden)),
            b1: Array1::zeros(config.d_hidden),
            w2: Array2::zeros((config.d_hidden, config.d_out)),
            b2: Array1::zeros(config.d_out),
            w_img: Array2::zeros((config.d_img, config.d_out)),
            b_img: Array1::zeros(config.d_out),
            log_inv_tau: 0.0,
        }
    }

    pub const NAMES: [&'static str; 8] = [
        "token_embeddings",
        "W1",
        "b1",
        "W2",
        "b2",
        "W_img",
        "b_img",
        "log_inv_tau",
    ];

    /// Flat views of every tensor, in `NAMES` order.
    pub fn buffers(&self) -> [&[f64]; 8] {
        [
            self.token_embeddings.as_slice().expect("standard layout"),
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w_img.as_slice().expect("standard layout"),
            self.b_img.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.log_inv_tau),
        ]
    }

    pub fn buffers_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.token_embeddings
                .as_slice_mut()
                .expect("standard layout"),
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w_img.as_slice_mut().expect("standard layout"),
            self.b_img.as_slice_mut().expect("standard layout"),
            std::slice::from_mut(&mut self.log_inv_tau),
        ]
    }

    pub fn len(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in self.buffers_mut() {
            buf.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = Params::zeros(config);
        let shapes_match = self.token_embeddings.dim() == expected.token_embeddings.dim()
            && self.w1.dim() == expected.w1.dim()
            && self.b1.dim() == expected.b1.dim()
            && self.w2.dim() == expected.w2.dim()
            && self.b2.dim() == expected.b2.dim()
            && self.w_img.dim() == expected.w_img.dim()
            && self.b_img.dim() == expected.b_img.dim();
        if shapes_match {
            Ok(())
        } else {
            Err(Error::Checkpoint("parameter shapes do not match config".into()))
        }
    }
}

/// Intermediate values of one text forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct TextForward {
    pub token_ids: Vec<usize>,
    pub pooled: Array1<f64>,
    pub hidden_pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub out: Array1<f64>,
    pub embedding: UnitEmbedding,
}

/// Intermediate values of one image forward pass.
#[derive(Debug, Clone)]
pub struct ImageForward {
    pub out: Array1<f64>,
    pub embedding: UnitEmbedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    config: ModelConfig,
    pub params: Params,
    null_features: RawVector,
    vocab_index: HashMap<String, usize>,
}

impl ModelCheckpoint {
    /// Assembles a checkpoint, validating shapes, finiteness and the
    /// temperature range.
    pub fn from_parts(config: ModelConfig, params: Params, null_features: RawVector) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        if !params.all_finite() {
            return Err(Error::NonFinite("model parameters"));
        }
        if !(MIN_LOG_INV_TAU..=MAX_LOG_INV_TAU).contains(&params.log_inv_tau) {
            return Err(Error::Checkpoint(format!(
                "log_inv_tau {} outside [0, ln 100]",
                params.log_inv_tau
            )));
        }
        if null_features.dim() != config.d_img {
            return Err(Error::DimensionMismatch {
                expected: config.d_img,
                got: null_features.dim(),
            });
        }
        let mut vocab_index = HashMap::with_capacity(config.vocab.len());
        for (i, tok) in config.vocab.iter().enumerate() {
            if vocab_index.insert(tok.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocab token {tok:?}")));
            }
        }
        Ok(Self {
            config,
            params,
            null_features,
            vocab_index,
        })
    }

    /// Fresh model: uniform token embeddings in `[-1, 1)`, LeCun-uniform
    /// weights, zero biases, inverse temperature 1/0.07.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = Params::zeros(&config);
        params
            .token_embeddings
            .iter_mut()
            .for_each(|x| *x = uniform_pm1(&mut rng));
        for w in [&mut params.w1, &mut params.w2, &mut params.w_img] {
            let bound = (3.0 / w.nrows() as f64).sqrt();
            w.iter_mut().for_each(|x| *x = bound * uniform_pm1(&mut rng));
        }
        params.log_inv_tau = (1.0f64 / 0.07).ln();
        let null_features = seeded_random_vector(config.null_seed, config.d_img)?;
        Self::from_parts(config, params, null_features)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn null_features(&self) -> &RawVector {
        &self.null_features
    }

    /// Replaces the NULL feature vector; `null_seed` is left untouched.
    pub fn with_null_features(mut self, features: RawVector) -> Result<Self> {
        if features.dim() != self.config.d_img {
            return Err(Error::DimensionMismatch {
                expected: self.config.d_img,
                got: features.dim(),
            });
        }
        self.null_features = features;
        Ok(self)
    }

    /// `exp(log_inv_tau)` clamped to `[1, 100]`.
    pub fn inverse_temperature(&self) -> f64 {
        self.params.log_inv_tau.exp().clamp(1.0, 100.0)
    }

    pub fn unknown_row(&self) -> usize {
        self.config.vocab.len()
    }

    /// Token row indices for `text`, after truncation to `max_tokens`.
    pub fn token_ids(&self, text: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = tokenize(text)
            .into_iter()
            .take(self.config.max_tokens)
            .map(|t| {
                self.vocab_index
                    .get(&t)
                    .copied()
                    .unwrap_or(self.unknown_row())
            })
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(ids)
    }

    pub fn forward_text(&self, text: &str) -> Result<TextForward> {
        let token_ids = self.token_ids(text)?;
        let p = &self.params;
        let mut pooled = Array1::<f64>::zeros(self.config.d_tok);
        for &id in &token_ids {
            pooled += &p.token_embeddings.row(id);
        }
        pooled /= token_ids.len() as f64;
        let hidden_pre = pooled.dot(&p.w1) + &p.b1;
        let hidden = hidden_pre.mapv(|x| x.max(0.0));
        let out = hidden.dot(&p.w2) + &p.b2;
        let embedding = normalize_slice(out.as_slice().expect("contiguous"))?;
        Ok(TextForward {
            token_ids,
            pooled,
            hidden_pre,
            hidden,
            out,
            embedding,
        })
    }

    pub fn forward_image(&self, features: &[f64]) -> Result<ImageForward> {
        if features.len() != self.config.d_img {
            return Err(Error::DimensionMismatch {
                expected: self.config.d_img,
                got: features.len(),
            });
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("image features"));
        }
        let out = ArrayView1::from(features).dot(&self.params.w_img) + &self.params.b_img;
        let embedding = normalize_slice(out.as_slice().expect("contiguous"))?;
        Ok(ImageForward { out, embedding })
    }

    pub fn encode_text(&self, text: &str) -> Result<UnitEmbedding> {
        Ok(self.forward_text(text)?.embedding)
    }

    pub fn encode_image(&self, features: &RawVector) -> Result<UnitEmbedding> {
        Ok(self.forward_image(features.as_slice())?.embedding)
    }

    pub fn null_embedding(&self) -> Result<UnitEmbedding> {
        self.encode_image(&self.null_features)
    }

    pub fn visualness_score(&self, text: &str) -> Result<VisualnessScore> {
        let null = self.null_embedding()?;
        let t = self.encode_text(text)?;
        Ok(VisualnessScore::from_similarity(dot(null.as_slice(), t.as_slice())))
    }

    /// Candidate ids by descending similarity to `text`; stable on ties.
    pub fn rank_images(&self, text: &str, candidates: &[(String, RawVector)]) -> Result<Vec<String>> {
        if candidates.is_empty() {
            return Err(Error::EmptyInput);
        }
        let embedded = candidates
            .iter()
            .map(|(_, f)| self.encode_image(f))
            .collect::<Result<Vec<_>>>()?;
        let t = self.encode_text(text)?;
        let order = rank_by_similarity(&t, &embedded);
        Ok(order.into_iter().map(|i| candidates[i].0.clone()).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            params: ParamsFile {
                token_embeddings: rows(&self.params.token_embeddings),
                w1: rows(&self.params.w1),
                b1: self.params.b1.to_vec(),
                w2: rows(&self.params.w2),
                b2: self.params.b2.to_vec(),
                w_img: rows(&self.params.w_img),
                b_img: self.params.b_img.to_vec(),
                log_inv_tau: self.params.log_inv_tau,
                null_features: self.null_features.as_slice().to_vec(),
            },
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                file.format_version
            )));
        }
        let p = file.params;
        let params = Params {
            token_embeddings: matrix(p.token_embeddings, "token_embeddings")?,
            w1: matrix(p.w1, "W1")?,
            b1: Array1::from(p.b1),
            w2: matrix(p.w2, "W2")?,
            b2: Array1::from(p.b2),
            w_img: matrix(p.w_img, "W_img")?,
            b_img: Array1::from(p.b_img),
            log_inv_tau: p.log_inv_tau,
        };
        let null = RawVector::new(p.null_features).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_parts(file.config, params, null).map_err(|e| match e {
            Error::Checkpoint(_) => e,
            other => Error::Checkpoint(other.to_string()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Indices of `candidates` sorted by descending inner product with `query`;
/// ties keep input order.
pub fn rank_by_similarity(query: &UnitEmbedding, candidates: &[UnitEmbedding]) -> Vec<usize> {
    let sims: Vec<f64> = candidates
        .iter()
        .map(|c| dot(query.as_slice(), c.as_slice()))
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
    order
}

/// `S = 1 - <I_null, T>`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct VisualnessScore(f64);

impl VisualnessScore {
    pub fn from_similarity(null_similarity: f64) -> Self {
        Self(1.0 - null_similarity)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Visual iff `score >= threshold`.
pub fn classify(score: VisualnessScore, threshold: f64) -> Result<Label> {
    if !(0.0..=2.0).contains(&threshold) {
        return Err(Error::InvalidThreshold(threshold));
    }
    Ok(if score.value() >= threshold {
        Label::Visual
    } else {
        Label::NonVisual
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    params: ParamsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    token_embeddings: Vec<Vec<f64>>,
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    #[serde(rename = "W_img")]
    w_img: Vec<Vec<f64>>,
    b_img: Vec<f64>,
    log_inv_tau: f64,
    null_features: Vec<f64>,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: Vec<Vec<f64>>, name: &str) -> Result<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Checkpoint(format!("{name}: ragged rows")));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
}
