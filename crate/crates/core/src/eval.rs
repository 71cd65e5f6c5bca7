//! Classification, retrieval, correlation and agreement metrics.

use std::collections::BTreeMap;
use std::io::Read;

use crate::corpus::{ImageBank, Label};
use crate::error::{Error, Result};
use crate::model::{rank_by_similarity, ModelCheckpoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class precision/recall/F1 plus their unweighted (macro) means over
/// {visual, non-visual}.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
    pub per_class: BTreeMap<Label, ClassMetrics>,
}

impl MetricReport {
    /// JSON with every real rendered to 6 decimals.
    pub fn to_json(&self) -> String {
        let mut classes = Vec::new();
        for (label, c) in &self.per_class {
            classes.push(format!(
                "\"{}\":{{\"precision\":{:.6},\"recall\":{:.6},\"f1\":{:.6},\"support\":{}}}",
                label, c.precision, c.recall, c.f1, c.support
            ));
        }
        format!(
            "{{\"macro_f1\":{:.6},\"macro_precision\":{:.6},\"macro_recall\":{:.6},\"accuracy\":{:.6},\"per_class\":{{{}}}}}",
            self.macro_f1,
            self.macro_precision,
            self.macro_recall,
            self.accuracy,
            classes.join(",")
        )
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Undefined ratios (0/0) count as 0.
pub fn classification_metrics(gold: &[Label], pred: &[Label]) -> Result<MetricReport> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: gold.len(),
            right: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::Empty);
    }
    let mut per_class = BTreeMap::new();
    for class in Label::ALL {
        let tp = gold.iter().zip(pred).filter(|(g, p)| **g == class && **p == class).count();
        let predicted = pred.iter().filter(|p| **p == class).count();
        let support = gold.iter().filter(|g| **g == class).count();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.insert(
            class,
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            },
        );
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.values().map(f).sum::<f64>() / 2.0;
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(MetricReport {
        macro_f1: mean(|c| c.f1),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        accuracy: ratio(correct, gold.len()),
        per_class,
    })
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0) {
        return Err(Error::InvalidRank(bad));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData("pearson needs at least 3 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `z_i = (x_i - mean) / sd` with the population standard deviation.
pub fn z_standardize(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 values".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok(xs.iter().map(|x| (x - mean) / sd).collect())
}

/// Units × raters matrix of ordinal ratings in `1..=level_count`; `None`
/// marks a missing rating.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMatrix {
    ratings: Vec<Vec<Option<u32>>>,
    level_count: u32,
}

impl AnnotationMatrix {
    pub fn new(ratings: Vec<Vec<Option<u32>>>, level_count: u32) -> Result<Self> {
        if level_count == 0 {
            return Err(Error::InsufficientData("level_count must be > 0".into()));
        }
        for row in &ratings {
            for &v in row.iter().flatten() {
                if v < 1 || v > level_count {
                    return Err(Error::InsufficientData(format!(
                        "rating {v} outside 1..={level_count}"
                    )));
                }
            }
        }
        let pairable = ratings
            .iter()
            .filter(|r| r.iter().flatten().count() >= 2)
            .count();
        if pairable < 2 {
            return Err(Error::InsufficientData(
                "need at least two units with two or more ratings".into(),
            ));
        }
        Ok(Self {
            ratings,
            level_count,
        })
    }

    /// Rows are units, columns raters; an empty cell is a missing rating.
    /// There is no header row.
    pub fn from_csv(reader: impl Read, level_count: u32) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<u32>()
                            .map(Some)
                            .map_err(|e| Error::parse("annotation matrix", i + 1, e))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows, level_count)
    }

    pub fn ratings(&self) -> &[Vec<Option<u32>>] {
        &self.ratings
    }

    pub fn level_count(&self) -> u32 {
        self.level_count
    }
}

/// Krippendorff's α with the ordinal metric.
///
/// Coincidences `o_ck` sum, over units with `m_u ≥ 2` ratings, every ordered
/// pair of distinct raters weighted by `1/(m_u - 1)`. With margins `n_c` and
/// `n = Σ n_c`, the ordinal distance is
/// `δ²(c,k) = (Σ_{g=min(c,k)}^{max(c,k)} n_g - (n_c + n_k)/2)²` and
/// `α = 1 - (n - 1) Σ o_ck δ²(c,k) / Σ n_c n_k δ²(c,k)`.
/// When no two pairable values differ at all, α is 1.
pub fn krippendorff_alpha_ordinal(m: &AnnotationMatrix) -> Result<f64> {
    let levels = m.level_count as usize;
    let mut coincidence = vec![vec![0.0f64; levels]; levels];
    for row in &m.ratings {
        let values: Vec<usize> = row.iter().flatten().map(|&v| v as usize - 1).collect();
        let mu = values.len();
        if mu < 2 {
            continue;
        }
        let w = 1.0 / (mu - 1) as f64;
        for (a, &va) in values.iter().enumerate() {
            for (b, &vb) in values.iter().enumerate() {
                if a != b {
                    coincidence[va][vb] += w;
                }
            }
        }
    }
    let margins: Vec<f64> = coincidence.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = margins.iter().sum();
    if n < 2.0 {
        return Err(Error::InsufficientData("fewer than two pairable values".into()));
    }
    let delta2 = |c: usize, k: usize| -> f64 {
        let (lo, hi) = if c <= k { (c, k) } else { (k, c) };
        let span: f64 = margins[lo..=hi].iter().sum();
        (span - (margins[c] + margins[k]) / 2.0).powi(2)
    };
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..levels {
        for k in 0..levels {
            let d = delta2(c, k);
            observed += coincidence[c][k] * d;
            expected += margins[c] * margins[k] * d;
        }
    }
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

/// 1-based rank of every pair's own image among all bank images
/// (descending similarity, ties in bank order).
pub fn retrieval_ranks(
    m: &ModelCheckpoint,
    pairs: &[(String, String)],
    bank: &ImageBank,
) -> Result<Vec<usize>> {
    if pairs.is_empty() {
        return Err(Error::Empty);
    }
    let ids: Vec<&String> = bank.keys().collect();
    let position: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    for (_, image_id) in pairs {
        if !position.contains_key(image_id.as_str()) {
            return Err(Error::MissingImage(image_id.clone()));
        }
    }
    let embedded = bank
        .values()
        .map(|f| m.encode_image(f))
        .collect::<Result<Vec<_>>>()?;
    pairs
        .iter()
        .map(|(text, image_id)| {
            let t = m.encode_text(text)?;
            let order = rank_by_similarity(&t, &embedded);
            let target = position[image_id.as_str()];
            Ok(order.iter().position(|&i| i == target).expect("target ranked") + 1)
        })
        .collect()
}

/// Text-to-image retrieval MRR over the whole bank.
pub fn retrieval_eval(
    m: &ModelCheckpoint,
    pairs: &[(String, String)],
    bank: &ImageBank,
) -> Result<f64> {
    mean_reciprocal_rank(&retrieval_ranks(m, pairs, bank)?)
}
