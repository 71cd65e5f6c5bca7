//! Word-level imageability lexicons and the heuristic sentence baselines.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::text::unique_tokens;
use crate::vector::{cosine, seeded_rng, uniform01, RawVector};

/// Word → imageability score in `[0, 1]`. Keys are lowercase and non-empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageabilityLexicon {
    entries: BTreeMap<String, f64>,
}

impl ImageabilityLexicon {
    /// Builds a lexicon from already-normalized scores.
    pub fn from_scores(scores: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (word, score) in scores {
            let word = word.to_lowercase();
            if word.is_empty() || !(0.0..=1.0).contains(&score) {
                return Err(Error::InvalidScore { word, score });
            }
            entries.entry(word).or_insert(score);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.entries.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(w, s)| (w.as_str(), *s))
    }

    /// TSV rendering, words in sorted order, full round-trip precision.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (w, s) in &self.entries {
            out.push_str(&format!("{w}\t{s}\n"));
        }
        out
    }
}

/// Reads `word<TAB>score` lines; `#` starts a comment line, blank lines are
/// skipped. Scores are returned as-is (not normalized).
pub fn read_raw_lexicon(path: &Path) -> Result<BTreeMap<String, f64>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::parse(&name, 0, e))?;
    parse_raw_lexicon(&text, &name)
}

pub fn parse_raw_lexicon(text: &str, name: &str) -> Result<BTreeMap<String, f64>> {
    let mut raw = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (word, score) = trimmed
            .split_once('\t')
            .ok_or_else(|| Error::parse(name, i + 1, "expected word<TAB>score"))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|e| Error::parse(name, i + 1, e))?;
        if !score.is_finite() {
            return Err(Error::parse(name, i + 1, "score is not finite"));
        }
        let word = word.trim().to_lowercase();
        if word.is_empty() {
            return Err(Error::parse(name, i + 1, "empty word"));
        }
        raw.entry(word).or_insert(score);
    }
    Ok(raw)
}

/// Min–max scales raw ratings into `[0, 1]`. A degenerate range maps every
/// word to 0.5.
pub fn normalize_lexicon(raw: &BTreeMap<String, f64>) -> Result<ImageabilityLexicon> {
    if raw.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    if raw.values().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("lexicon score"));
    }
    let min = raw.values().copied().fold(f64::INFINITY, f64::min);
    let max = raw.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    ImageabilityLexicon::from_scores(raw.iter().map(|(w, &s)| {
        let scaled = if range > 0.0 {
            ((s - min) / range).clamp(0.0, 1.0)
        } else {
            0.5
        };
        (w.clone(), scaled)
    }))
}

/// Word vectors in word2vec text format order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<RawVector>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, entries: Vec<(String, RawVector)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("embedding dim must be > 0".into()));
        }
        let mut words = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        for (w, v) in entries {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            words.push(w);
            vectors.push(v);
        }
        Ok(Self {
            dim,
            words,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RawVector)> {
        self.words.iter().map(String::as_str).zip(&self.vectors)
    }
}

/// Parses word2vec text format: a `count dim` header, then one
/// `word v1 .. v_dim` line per word.
pub fn parse_word2vec_text(text: &str, name: &str) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(name, 1, "missing `count dim` header"))?;
    let mut parts = header.split_whitespace();
    let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
        (Some(c), Some(d), None) => (
            c.parse::<usize>().map_err(|e| Error::parse(name, 1, e))?,
            d.parse::<usize>().map_err(|e| Error::parse(name, 1, e))?,
        ),
        _ => return Err(Error::parse(name, 1, "header must be `count dim`")),
    };
    let mut entries = Vec::with_capacity(count);
    for (i, line) in lines {
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| Error::parse(name, i + 1, "missing word"))?
            .to_string();
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(name, i + 1, e))?;
        if values.len() != dim {
            return Err(Error::parse(
                name,
                i + 1,
                format!("expected {dim} components, found {}", values.len()),
            ));
        }
        let v = RawVector::new(values).map_err(|e| Error::parse(name, i + 1, e))?;
        entries.push((word, v));
    }
    if entries.len() != count {
        return Err(Error::parse(
            name,
            1,
            format!("header announces {count} words, found {}", entries.len()),
        ));
    }
    EmbeddingTable::new(dim, entries)
}

pub fn read_word2vec_text(path: &Path) -> Result<EmbeddingTable> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::parse(&name, 0, e))?;
    parse_word2vec_text(&text, &name)
}

/// Expands `lex` to every table word it lacks. Each new word takes
/// `clamp(sim_max, 0, 1) * score(w_best)`, where `w_best` is the lexicon word
/// with the highest cosine similarity (ties go to the lexicographically
/// smallest word). Lexicon words keep their scores. Table words are matched
/// lowercased; the first occurrence of a lowercased form wins. Zero-norm
/// vectors never take part.
pub fn propagate(lex: &ImageabilityLexicon, table: &EmbeddingTable) -> Result<ImageabilityLexicon> {
    let mut seen = BTreeSet::new();
    let mut table_words: Vec<(String, &RawVector)> = Vec::new();
    for (w, v) in table.iter() {
        let lw = w.to_lowercase();
        if !lw.is_empty() && seen.insert(lw.clone()) {
            table_words.push((lw, v));
        }
    }

    // BTreeMap order gives lexicographic candidates, so strict `>` keeps the
    // smallest word on ties.
    let anchors: BTreeMap<&str, (&RawVector, f64)> = table_words
        .iter()
        .filter(|(w, v)| lex.contains(w) && v.norm() > crate::vector::NORM_EPS)
        .map(|(w, v)| (w.as_str(), (*v, lex.get(w).unwrap())))
        .collect();
    if anchors.is_empty() {
        return Err(Error::NoOverlap);
    }

    let mut entries: BTreeMap<String, f64> = lex.entries.clone();
    for (w, v) in &table_words {
        if lex.contains(w) {
            continue;
        }
        let mut best: Option<(f64, f64)> = None;
        for (vec, score) in anchors.values() {
            let Some(sim) = cosine(v.as_slice(), vec.as_slice()) else {
                break;
            };
            if best.is_none_or(|(b, _)| sim > b) {
                best = Some((sim, *score));
            }
        }
        if let Some((sim_max, score)) = best {
            entries.insert(w.clone(), sim_max.clamp(0.0, 1.0) * score);
        }
    }
    Ok(ImageabilityLexicon { entries })
}

/// Mean lexicon score over the unique tokens of `text`; words missing from
/// the lexicon count as 0.
pub fn sentence_score_lexicon(text: &str, lex: &ImageabilityLexicon) -> Result<f64> {
    let tokens = unique_tokens(text);
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    // Running mean: exact when every token has the same score.
    let mut mean = 0.0;
    for (k, t) in tokens.iter().enumerate() {
        let s = lex.get(t).unwrap_or(0.0);
        mean += (s - mean) / (k + 1) as f64;
    }
    Ok(mean)
}

/// Set of lowercase object names. Only single-word names can match a token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectVocabulary {
    objects: BTreeSet<String>,
}

impl ObjectVocabulary {
    pub fn new(names: impl IntoIterator<Item = String>) -> Result<Self> {
        let objects: BTreeSet<String> = names
            .into_iter()
            .map(|n| n.trim().to_lowercase())
            .filter(|n| !n.is_empty())
            .collect();
        if objects.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self { objects })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.objects.contains(token)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

pub fn read_object_vocabulary(path: &Path) -> Result<ObjectVocabulary> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::parse(&name, 0, e))?;
    ObjectVocabulary::new(text.lines().map(str::to_string))
        .map_err(|_| Error::parse(name, 0, "object vocabulary is empty"))
}

/// Fraction of unique tokens that name an object.
pub fn sentence_score_vg(text: &str, vocab: &ObjectVocabulary) -> Result<f64> {
    let tokens = unique_tokens(text);
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    let hits = tokens.iter().filter(|t| vocab.contains(t)).count();
    Ok(hits as f64 / tokens.len() as f64)
}

/// Draws `n` labels i.i.d. from the class frequencies of `labels_train`.
pub fn random_baseline(labels_train: &[Label], n: usize, seed: u64) -> Result<Vec<Label>> {
    if labels_train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let visual = labels_train.iter().filter(|l| **l == Label::Visual).count();
    let p_visual = visual as f64 / labels_train.len() as f64;
    let mut rng = seeded_rng(seed);
    Ok((0..n)
        .map(|_| {
            if uniform01(&mut rng) < p_visual {
                Label::Visual
            } else {
                Label::NonVisual
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(pairs: &[(&str, f64)]) -> ImageabilityLexicon {
        ImageabilityLexicon::from_scores(pairs.iter().map(|(w, s)| (w.to_string(), *s))).unwrap()
    }

    fn table(dim: usize, rows: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::new(
            dim,
            rows.iter()
                .map(|(w, v)| (w.to_string(), RawVector::new(v.to_vec()).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        let raw: BTreeMap<String, f64> = [("a".into(), 100.0), ("b".into(), 700.0)].into();
        let l = normalize_lexicon(&raw).unwrap();
        assert_eq!(l.get("a"), Some(0.0));
        assert_eq!(l.get("b"), Some(1.0));

        let flat: BTreeMap<String, f64> = [("a".into(), 5.0), ("b".into(), 5.0)].into();
        let l = normalize_lexicon(&flat).unwrap();
        assert_eq!(l.get("a"), Some(0.5));
        assert_eq!(l.get("b"), Some(0.5));

        assert!(matches!(normalize_lexicon(&BTreeMap::new()), Err(Error::EmptyLexicon)));
    }

    #[test]
    fn propagation_kitten() {
        let l = lex(&[("cat", 0.9)]);
        let t = table(2, &[("cat", &[1.0, 0.0]), ("kitten", &[0.8, 0.6])]);
        let p = propagate(&l, &t).unwrap();
        assert!((p.get("kitten").unwrap() - 0.72).abs() < 1e-12);
        assert_eq!(p.get("cat"), Some(0.9));
    }

    #[test]
    fn propagation_clamps_negative_similarity() {
        let l = lex(&[("cat", 0.9)]);
        let t = table(2, &[("cat", &[1.0, 0.0]), ("anti", &[-0.3, 0.9539392014169456])]);
        let p = propagate(&l, &t).unwrap();
        assert_eq!(p.get("anti"), Some(0.0));
    }

    #[test]
    fn propagation_ties_pick_smallest_word() {
        let l = lex(&[("bird", 0.2), ("apple", 0.8)]);
        let t = table(
            2,
            &[("bird", &[1.0, 0.0]), ("apple", &[1.0, 0.0]), ("thing", &[1.0, 0.0])],
        );
        let p = propagate(&l, &t).unwrap();
        assert_eq!(p.get("thing"), Some(0.8));
    }

    #[test]
    fn propagation_needs_overlap() {
        let l = lex(&[("cat", 0.9)]);
        let t = table(2, &[("dog", &[1.0, 0.0])]);
        assert!(matches!(propagate(&l, &t), Err(Error::NoOverlap)));
    }

    #[test]
    fn word2vec_parsing() {
        let t = parse_word2vec_text("2 3\ncat 1 0 0\nDog 0 1 0.5\n", "mem").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        let bad = parse_word2vec_text("1 3\ncat 1 0\n", "mem").unwrap_err();
        assert!(matches!(bad, Error::Parse { line: 2, .. }));
        assert!(parse_word2vec_text("3 2\na 1 0\n", "mem").is_err());
    }

    #[test]
    fn raw_lexicon_parsing() {
        let raw = parse_raw_lexicon("# MRC style\nCat\t600\n\ndog\t500\n", "mem").unwrap();
        assert_eq!(raw.get("cat"), Some(&600.0));
        assert!(parse_raw_lexicon("cat 600\n", "mem").is_err());
    }

    #[test]
    fn sentence_lexicon_examples() {
        let l = lex(&[("cat", 0.9), ("dog", 0.7)]);
        assert!((sentence_score_lexicon("cat cat dog", &l).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(sentence_score_lexicon("zzz qqq", &l).unwrap(), 0.0);
        assert!(matches!(sentence_score_lexicon("", &l), Err(Error::EmptyText)));
    }

    #[test]
    fn sentence_vg_examples() {
        let v = ObjectVocabulary::new(["apple".to_string()]).unwrap();
        assert!((sentence_score_vg("the red apple", &v).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(sentence_score_vg("nothing here", &v).unwrap(), 0.0);
        assert_eq!(sentence_score_vg("Apple apple.", &v).unwrap(), 1.0);
        assert!(matches!(sentence_score_vg("...", &v), Err(Error::EmptyText)));
    }

    #[test]
    fn random_baseline_examples() {
        let all_visual = vec![Label::Visual; 3];
        assert_eq!(random_baseline(&all_visual, 5, 1).unwrap(), vec![Label::Visual; 5]);
        assert!(random_baseline(&all_visual, 0, 1).unwrap().is_empty());
        assert!(matches!(random_baseline(&[], 3, 1), Err(Error::EmptyTraining)));

        let half = vec![Label::Visual, Label::NonVisual];
        let draws = random_baseline(&half, 10_000, 42).unwrap();
        let frac = draws.iter().filter(|l| **l == Label::Visual).count() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
        assert_eq!(draws, random_baseline(&half, 10_000, 42).unwrap());
    }

    proptest! {
        #[test]
        fn lexicon_score_ignores_order_and_repeats(
            words in prop::collection::vec(0usize..5, 1..10),
            reps in 1usize..4,
        ) {
            let vocab = ["sun", "tree", "idea", "truth", "boat"];
            let l = lex(&[("sun", 0.9), ("tree", 0.8), ("idea", 0.1), ("boat", 0.7)]);
            let text: Vec<&str> = words.iter().map(|&i| vocab[i]).collect();
            let base = sentence_score_lexicon(&text.join(" "), &l).unwrap();
            let mut repeated: Vec<&str> = Vec::new();
            for _ in 0..reps { repeated.extend(text.iter().rev()); }
            let again = sentence_score_lexicon(&repeated.join(" "), &l).unwrap();
            prop_assert_eq!(base, again);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn equal_scores_give_that_score(s in 0.0f64..=1.0, n in 1usize..6) {
            let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
            let l = ImageabilityLexicon::from_scores(words.iter().map(|w| (w.clone(), s))).unwrap();
            prop_assert_eq!(sentence_score_lexicon(&words.join(" "), &l).unwrap(), s);
        }

        #[test]
        fn vg_monotone_when_adding_object(
            words in prop::collection::vec("[a-e]{1,3}", 1..6),
        ) {
            let v = ObjectVocabulary::new(["obj".to_string()]).unwrap();
            let text = words.join(" ");
            let before = sentence_score_vg(&text, &v).unwrap();
            let after = sentence_score_vg(&format!("{text} obj"), &v).unwrap();
            prop_assert!(after >= before);
            prop_assert!((0.0..=1.0).contains(&after));
        }

        #[test]
        fn propagation_preserves_lexicon_and_range(
            vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 4..8),
            scores in prop::collection::vec(0.0f64..=1.0, 2),
        ) {
            let l = lex(&[("w0", scores[0]), ("w1", scores[1])]);
            let rows: Vec<(String, RawVector)> = vecs
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("w{i}"), RawVector::new(v.clone()).unwrap()))
                .collect();
            let t = EmbeddingTable::new(3, rows).unwrap();
            if let Ok(p) = propagate(&l, &t) {
                prop_assert_eq!(p.get("w0"), Some(scores[0]));
                prop_assert_eq!(p.get("w1"), Some(scores[1]));
                for (_, s) in p.iter() {
                    prop_assert!((0.0..=1.0).contains(&s));
                }
            }
        }
    }
}
