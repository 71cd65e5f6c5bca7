//! Distant labeling from page-level sentence–image similarities, and
//! aggregation of Likert annotations into labels.

use serde::{Deserialize, Serialize};

use crate::corpus::{ImageRecord, LabeledExample};
use crate::error::{Error, Result};
use crate::model::ModelCheckpoint;
use crate::vector::dot;

/// Thresholds used for the automatically labeled corpus.
pub const DEFAULT_T_POS: f64 = 0.35;
pub const DEFAULT_T_NEG: f64 = 0.18;

/// One document page: its sentences, its images and the
/// `[sentences × images]` similarity matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page_id: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub images: Vec<ImageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<Vec<Vec<f64>>>,
}

impl PageRecord {
    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidPage {
            page_id: self.page_id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks the similarity matrix shape and range.
    pub fn validate(&self) -> Result<()> {
        let Some(sim) = &self.similarity else {
            return Err(self.invalid("similarity matrix missing"));
        };
        if sim.len() != self.sentences.len() {
            return Err(self.invalid(format!(
                "{} similarity rows for {} sentences",
                sim.len(),
                self.sentences.len()
            )));
        }
        for row in sim {
            if row.len() != self.images.len() {
                return Err(self.invalid(format!(
                    "similarity row has {} entries for {} images",
                    row.len(),
                    self.images.len()
                )));
            }
            if row.iter().any(|s| !s.is_finite() || !(-1.0..=1.0).contains(s)) {
                return Err(self.invalid("similarities must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    /// Fills a missing similarity matrix from the images' feature vectors.
    pub fn fill_similarity(&mut self, model: &ModelCheckpoint) -> Result<()> {
        if self.similarity.is_some() {
            return Ok(());
        }
        let images = self
            .images
            .iter()
            .map(|im| model.encode_image(&im.features))
            .collect::<Result<Vec<_>>>()?;
        let mut sim = Vec::with_capacity(self.sentences.len());
        for s in &self.sentences {
            let t = model.encode_text(s)?;
            sim.push(
                images
                    .iter()
                    .map(|i| dot(i.as_slice(), t.as_slice()).clamp(-1.0, 1.0))
                    .collect(),
            );
        }
        self.similarity = Some(sim);
        Ok(())
    }

    /// Per-sentence `(max similarity, argmax image index)`; `None` for pages
    /// without images. Ties go to the lowest image index.
    pub fn row_maxima(&self) -> Result<Vec<Option<(f64, usize)>>> {
        self.validate()?;
        let sim = self.similarity.as_ref().expect("validated");
        Ok(sim
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(None, |best: Option<(f64, usize)>, (i, &s)| match best {
                        Some((b, _)) if s <= b => best,
                        _ => Some((s, i)),
                    })
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AutoLabelOutcome {
    pub positives: Vec<LabeledExample>,
    pub negatives: Vec<LabeledExample>,
    pub discarded: usize,
}

/// A sentence is positive (paired with its most similar image) when its
/// best similarity exceeds `t_pos`, negative when every similarity is below
/// `t_neg`, and discarded otherwise. Sentences on pages without images are
/// discarded. Output keeps input order.
pub fn auto_label(pages: &[PageRecord], t_pos: f64, t_neg: f64) -> Result<AutoLabelOutcome> {
    if t_pos.is_nan() || t_neg.is_nan() || t_pos <= t_neg {
        return Err(Error::InvalidThresholds { t_pos, t_neg });
    }
    let mut out = AutoLabelOutcome::default();
    for page in pages {
        for (sentence, best) in page.sentences.iter().zip(page.row_maxima()?) {
            match best {
                Some((s, idx)) if s > t_pos => out.positives.push(LabeledExample::visual(
                    sentence.clone(),
                    page.images[idx].image_id.clone(),
                )),
                Some((s, _)) if s < t_neg => {
                    out.negatives.push(LabeledExample::non_visual(sentence.clone()))
                }
                _ => out.discarded += 1,
            }
        }
    }
    Ok(out)
}

/// Linear interpolation between order statistics: position `p·(n-1)` in the
/// sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `t_pos` is the `(1 - top_frac)` quantile and `t_neg` the `bottom_frac`
/// quantile of per-sentence maximum similarity.
pub fn percentile_thresholds(all_max_sims: &[f64], top_frac: f64, bottom_frac: f64) -> Result<(f64, f64)> {
    if all_max_sims.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(top_frac > 0.0 && bottom_frac > 0.0 && top_frac + bottom_frac < 1.0) {
        return Err(Error::InvalidFractions {
            top: top_frac,
            bottom: bottom_frac,
        });
    }
    if all_max_sims.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("similarity"));
    }
    let mut sorted = all_max_sims.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((quantile(&sorted, 1.0 - top_frac), quantile(&sorted, bottom_frac)))
}

/// Per-sentence maximum similarity across all pages (sentences on pages
/// without images are skipped).
pub fn max_similarities(pages: &[PageRecord]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for page in pages {
        out.extend(page.row_maxima()?.into_iter().flatten().map(|(s, _)| s));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub text: String,
    pub ratings: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationOutcome {
    Visual,
    NonVisual,
    Neutral,
    Ambiguous,
}

/// Strict majority vote over 7-point ratings: `{1,2,3}` → non-visual,
/// `{5,6,7}` → visual, `4` → neutral, otherwise ambiguous. The majority is
/// `⌈(n+1)/2⌉`, i.e. 5 of 9.
pub fn aggregate_annotations(rec: &AnnotationRecord) -> Result<AnnotationOutcome> {
    if rec.ratings.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = rec.ratings.iter().find(|r| !(1..=7).contains(*r)) {
        return Err(Error::InvalidRating(bad));
    }
    let n = rec.ratings.len();
    let majority = n / 2 + 1;
    let count = |f: fn(i64) -> bool| rec.ratings.iter().filter(|&&r| f(r)).count();
    Ok(if count(|r| r <= 3) >= majority {
        AnnotationOutcome::NonVisual
    } else if count(|r| r >= 5) >= majority {
        AnnotationOutcome::Visual
    } else if count(|r| r == 4) >= majority {
        AnnotationOutcome::Neutral
    } else {
        AnnotationOutcome::Ambiguous
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::RawVector;
    use proptest::prelude::*;

    fn page(sims: Vec<Vec<f64>>) -> PageRecord {
        let n_img = sims.first().map_or(0, Vec::len);
        PageRecord {
            page_id: "p".into(),
            sentences: (0..sims.len()).map(|i| format!("s{i}")).collect(),
            images: (0..n_img)
                .map(|i| ImageRecord {
                    image_id: format!("img{i}"),
                    features: RawVector::new(vec![1.0]).unwrap(),
                })
                .collect(),
            similarity: Some(sims),
        }
    }

    #[test]
    fn rule_examples() {
        let p = page(vec![vec![0.40, 0.10], vec![0.15, 0.10], vec![0.25, 0.20]]);
        let out = auto_label(&[p], 0.35, 0.18).unwrap();
        assert_eq!(out.positives, vec![LabeledExample::visual("s0", "img0")]);
        assert_eq!(out.negatives, vec![LabeledExample::non_visual("s1")]);
        assert_eq!(out.discarded, 1);
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let p = page(vec![vec![0.1, 0.5, 0.5]]);
        let out = auto_label(&[p], 0.35, 0.18).unwrap();
        assert_eq!(out.positives[0].image_id.as_deref(), Some("img1"));
    }

    #[test]
    fn invalid_thresholds_and_pages() {
        assert!(matches!(auto_label(&[], 0.2, 0.2), Err(Error::InvalidThresholds { .. })));
        let mut bad = page(vec![vec![0.5, 0.1]]);
        bad.similarity = Some(vec![vec![1.5, 0.1]]);
        assert!(matches!(auto_label(&[bad], 0.35, 0.18), Err(Error::InvalidPage { .. })));
        let mut short = page(vec![vec![0.5, 0.1]]);
        short.sentences.push("extra".into());
        assert!(auto_label(&[short], 0.35, 0.18).is_err());
    }

    #[test]
    fn pages_without_images_discard_sentences() {
        let p = PageRecord {
            page_id: "empty".into(),
            sentences: vec!["a".into(), "b".into()],
            images: vec![],
            similarity: Some(vec![vec![], vec![]]),
        };
        let out = auto_label(&[p], 0.35, 0.18).unwrap();
        assert_eq!(out.discarded, 2);
    }

    #[test]
    fn page_json_format() {
        let line = r#"{"page_id":"p1","sentences":["a cat"],"images":[{"image_id":"i1","features":[0.5,0.5]}],"similarity":[[0.4]]}"#;
        let p: PageRecord = serde_json::from_str(line).unwrap();
        assert_eq!(p.images[0].image_id, "i1");
        assert_eq!(serde_json::to_string(&p).unwrap(), line);
    }

    #[test]
    fn percentile_examples() {
        let sims: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let (tp, tn) = percentile_thresholds(&sims, 0.1, 0.1).unwrap();
        assert!((tp - 0.91).abs() < 1e-12 && (tn - 0.19).abs() < 1e-12);
        let (tp, tn) = percentile_thresholds(&sims, 0.01, 0.05).unwrap();
        assert!(tp > tn);
        let (tp, tn) = percentile_thresholds(&[0.3; 5], 0.1, 0.1).unwrap();
        assert_eq!(tp, tn);
        assert!(matches!(auto_label(&[], tp, tn), Err(Error::InvalidThresholds { .. })));
        assert!(matches!(percentile_thresholds(&[], 0.1, 0.1), Err(Error::EmptyInput)));
        assert!(matches!(percentile_thresholds(&sims, 0.6, 0.5), Err(Error::InvalidFractions { .. })));
        assert!(matches!(percentile_thresholds(&sims, 0.0, 0.5), Err(Error::InvalidFractions { .. })));
    }

    fn rec(r: &[i64]) -> AnnotationRecord {
        AnnotationRecord {
            text: "t".into(),
            ratings: r.to_vec(),
        }
    }

    #[test]
    fn aggregation_examples() {
        use AnnotationOutcome::*;
        assert_eq!(aggregate_annotations(&rec(&[1, 1, 2, 3, 3, 2, 1, 5, 6])).unwrap(), NonVisual);
        assert_eq!(aggregate_annotations(&rec(&[7; 9])).unwrap(), Visual);
        assert_eq!(aggregate_annotations(&rec(&[4, 4, 4, 4, 4, 1, 2, 6, 7])).unwrap(), Neutral);
        assert_eq!(aggregate_annotations(&rec(&[1, 2, 3, 4, 5, 6, 7, 4, 4])).unwrap(), Ambiguous);
        // 4 of 9 is not a majority.
        assert_eq!(aggregate_annotations(&rec(&[1, 1, 1, 1, 5, 5, 5, 4, 4])).unwrap(), Ambiguous);
        assert!(matches!(aggregate_annotations(&rec(&[1, 8])), Err(Error::InvalidRating(8))));
        assert!(matches!(aggregate_annotations(&rec(&[0])), Err(Error::InvalidRating(0))));
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(
            ratings in prop::collection::vec(1i64..=7, 1..12),
            seed in 0u64..50,
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = ratings.clone();
            shuffled.shuffle(&mut crate::vector::seeded_rng(seed));
            prop_assert_eq!(
                aggregate_annotations(&rec(&ratings)).unwrap(),
                aggregate_annotations(&rec(&shuffled)).unwrap()
            );
        }

        #[test]
        fn labeling_partitions_and_is_monotone(
            sims in prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, 3), 1..20),
            t_neg in -0.5f64..0.3,
            gap in 0.01f64..0.5,
            bump in 0.0f64..0.3,
        ) {
            let p = page(sims.clone());
            let t_pos = t_neg + gap;
            let out = auto_label(std::slice::from_ref(&p), t_pos, t_neg).unwrap();
            prop_assert_eq!(out.positives.len() + out.negatives.len() + out.discarded, sims.len());
            let higher = auto_label(std::slice::from_ref(&p), t_pos + bump, t_neg).unwrap();
            prop_assert!(higher.positives.len() <= out.positives.len());
            let lower = auto_label(std::slice::from_ref(&p), t_pos, t_neg - bump).unwrap();
            prop_assert!(lower.negatives.len() <= out.negatives.len());
            // Each positive's image attains its row maximum.
            for ex in &out.positives {
                let row: usize = ex.text[1..].parse().unwrap();
                let img: usize = ex.image_id.as_ref().unwrap()[3..].parse().unwrap();
                let max = sims[row].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(sims[row][img], max);
            }
        }
    }
}
