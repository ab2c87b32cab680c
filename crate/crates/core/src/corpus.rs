//! Posts, corpora and corpus curation.
//!
//! A [`Post`] carries a real-valued toxicity score (the fraction of raters who
//! judged it toxic), the binary label derived from it, and optionally a set of
//! gold toxic character spans. `spans == None` means no span annotation exists
//! for the post; `Some(vec![])` means it was annotated and contains no toxic
//! span.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{normalize_spans, Span};

pub mod synth;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    NonToxic = 0,
    Toxic = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_toxic(self) -> bool {
        self == Label::Toxic
    }

    pub fn from_bool(toxic: bool) -> Self {
        if toxic {
            Label::Toxic
        } else {
            Label::NonToxic
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::NonToxic => f.write_str("non-toxic"),
            Label::Toxic => f.write_str("toxic"),
        }
    }
}

/// Casts a toxicity score to a binary label. Scores at the threshold are toxic.
pub fn binarize(toxicity: f64, threshold: f64) -> Label {
    Label::from_bool(toxicity >= threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub toxicity: f64,
    pub label: Label,
    pub spans: Option<Vec<Span>>,
}

impl Post {
    /// Builds a post, validating the toxicity range and normalizing spans.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        toxicity: f64,
        spans: Option<Vec<Span>>,
    ) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        if !(0.0..=1.0).contains(&toxicity) {
            return Err(Error::Data(format!(
                "post `{id}`: toxicity {toxicity} outside [0, 1]"
            )));
        }
        let len = text.chars().count();
        let spans = spans
            .map(|s| normalize_spans(&s, len))
            .transpose()
            .map_err(|e| Error::Data(format!("post `{id}`: {e}")))?;
        Ok(Post {
            label: binarize(toxicity, DEFAULT_THRESHOLD),
            id,
            text,
            toxicity,
            spans,
        })
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    pub fn has_span_annotation(&self) -> bool {
        self.spans.is_some()
    }

    /// Whether the post can supervise token-level span loss. Toxic posts
    /// annotated with no span would imply an all-zero token target for a toxic
    /// sequence, so they only feed the classification loss.
    pub fn is_span_trainable(&self) -> bool {
        match &self.spans {
            None => false,
            Some(s) => !s.is_empty() || !self.label.is_toxic(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusRole {
    /// Sequence-level labels only.
    Classification,
    /// Span-annotated posts.
    Span,
    #[default]
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub posts: Vec<Post>,
    pub role: CorpusRole,
}

impl Corpus {
    pub fn new(posts: Vec<Post>, role: CorpusRole) -> Result<Self> {
        let mut seen = HashSet::with_capacity(posts.len());
        for p in &posts {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Data(format!("duplicate post id `{}`", p.id)));
            }
        }
        Ok(Corpus { posts, role })
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Post> {
        self.posts.iter()
    }

    /// Splits into (span-trainable, classification-only) posts.
    pub fn split_streams(&self) -> (Corpus, Corpus) {
        let (span, cls): (Vec<Post>, Vec<Post>) =
            self.posts.iter().cloned().partition(Post::is_span_trainable);
        (
            Corpus { posts: span, role: CorpusRole::Span },
            Corpus { posts: cls, role: CorpusRole::Classification },
        )
    }

    pub fn label_mean(&self) -> f64 {
        if self.posts.is_empty() {
            return 0.0;
        }
        self.posts.iter().map(|p| p.label.as_f64()).sum::<f64>() / self.posts.len() as f64
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    text: String,
    toxicity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<Span>>,
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_jsonl(BufReader::new(file), &path.display().to_string())
}

/// Reads one JSON record per line. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_jsonl(reader: impl BufRead, source_name: &str) -> Result<Corpus> {
    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let post = Post::new(rec.id, rec.text, rec.toxicity, rec.spans)
            .map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(post.id.clone()) {
            return Err(parse_err(format!("duplicate post id `{}`", post.id)));
        }
        posts.push(post);
    }
    Ok(Corpus { posts, role: CorpusRole::Mixed })
}

pub fn write_jsonl(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    for p in &corpus.posts {
        let rec = Record {
            id: p.id.clone(),
            text: p.text.clone(),
            toxicity: p.toxicity,
            spans: p.spans.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_jsonl(corpus, &mut w)?;
    w.flush()?;
    Ok(())
}

/// A whitespace-delimited term with surrounding punctuation stripped,
/// lowercased, with its code-point range in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

pub fn extract_terms(text: &str) -> Vec<Term> {
    let chars: Vec<char> = text.chars().collect();
    let mut terms = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let (mut s, mut e) = (i, j);
        while s < e && !chars[s].is_alphanumeric() {
            s += 1;
        }
        while e > s && !chars[e - 1].is_alphanumeric() {
            e -= 1;
        }
        if s < e {
            terms.push(Term {
                text: chars[s..e].iter().collect::<String>().to_lowercase(),
                start: s,
                end: e,
            });
        }
        i = j;
    }
    terms
}

/// Terms that occur inside annotated toxic spans, with occurrence counts,
/// sorted by descending count then ascending term.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TermFrequencyList {
    pub entries: Vec<(String, usize)>,
}

impl TermFrequencyList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, term: &str) -> Option<usize> {
        self.entries.iter().find(|(t, _)| t == term).map(|&(_, c)| c)
    }

    pub fn terms(&self) -> HashSet<&str> {
        self.entries.iter().map(|(t, _)| t.as_str()).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, c) in &self.entries {
            out.push_str(t);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in s.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Parse {
                source_name: "term list".into(),
                line: i + 1,
                message: m.into(),
            };
            let (t, c) = line.split_once('\t').ok_or_else(|| err("expected term<TAB>count"))?;
            let c: usize = c.parse().map_err(|_| err("count is not an integer"))?;
            entries.push((t.to_lowercase(), c));
        }
        Ok(TermFrequencyList { entries })
    }
}

/// Counts each term whose full character range lies inside a gold span, and
/// keeps those seen at least `min_count` times.
pub fn build_toxic_term_list(span_corpus: &Corpus, min_count: usize) -> Result<TermFrequencyList> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut annotated = 0usize;
    for post in &span_corpus.posts {
        let Some(spans) = &post.spans else { continue };
        annotated += 1;
        for term in extract_terms(&post.text) {
            if spans.iter().any(|s| s.contains_range(term.start, term.end)) {
                *counts.entry(term.text).or_default() += 1;
            }
        }
    }
    if annotated == 0 {
        return Err(Error::Empty("span corpus has no span annotations".into()));
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count.max(1))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(TermFrequencyList { entries })
}

/// Posts with `lo <= toxicity <= hi` containing at least one listed term
/// (exact lowercase whole-term match).
pub fn mine_ambiguous(corpus: &Corpus, terms: &TermFrequencyList, lo: f64, hi: f64) -> Corpus {
    let listed = terms.terms();
    let posts = corpus
        .posts
        .iter()
        .filter(|p| (lo..=hi).contains(&p.toxicity))
        .filter(|p| extract_terms(&p.text).iter().any(|t| listed.contains(t.text.as_str())))
        .cloned()
        .collect();
    Corpus { posts, role: corpus.role }
}

/// Sample counts for the curated training/evaluation mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Clear-cut toxic posts (toxicity above `toxic_min`), including those
    /// drawn from the span corpus.
    pub highly_toxic: usize,
    /// How many of `highly_toxic` come from the span corpus.
    pub span_toxic: usize,
    /// Clear-cut non-toxic posts (toxicity below `non_toxic_max`).
    pub non_toxic: usize,
    /// Low-toxicity posts that contain frequent toxic terms.
    pub ambiguous: usize,
    /// Extra toxic posts that balance the ambiguous ones.
    pub extra_toxic: usize,
    pub train_fraction: f64,
    pub toxic_min: f64,
    pub non_toxic_max: f64,
    pub ambiguous_lo: f64,
    pub ambiguous_hi: f64,
    pub min_term_count: usize,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            highly_toxic: 7000,
            span_toxic: 3000,
            non_toxic: 7000,
            ambiguous: 8000,
            extra_toxic: 8000,
            train_fraction: 14000.0 / 30000.0,
            toxic_min: 0.8,
            non_toxic_max: 0.1,
            ambiguous_lo: 0.1,
            ambiguous_hi: 0.3,
            min_term_count: 20,
            seed: 0,
        }
    }
}

impl CurationConfig {
    /// Scales every stratum count linearly, rounding to the nearest integer.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |n: usize| (n as f64 * factor).round() as usize;
        CurationConfig {
            highly_toxic: s(self.highly_toxic),
            span_toxic: s(self.span_toxic),
            non_toxic: s(self.non_toxic),
            ambiguous: s(self.ambiguous),
            extra_toxic: s(self.extra_toxic),
            ..self.clone()
        }
    }

    pub fn total(&self) -> usize {
        self.highly_toxic + self.non_toxic + self.ambiguous + self.extra_toxic
    }

    pub fn train_size(&self) -> usize {
        (self.total() as f64 * self.train_fraction).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.span_toxic > self.highly_toxic {
            return Err(Error::Config(format!(
                "span_toxic ({}) exceeds highly_toxic ({})",
                self.span_toxic, self.highly_toxic
            )));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("train_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Curation {
    pub train: Corpus,
    pub test: Corpus,
    pub terms: TermFrequencyList,
    /// Stratum name → number of posts drawn, in sampling order.
    pub strata: BTreeMap<String, usize>,
}

fn draw(
    stratum: &str,
    pool: Vec<&Post>,
    n: usize,
    used: &mut HashSet<String>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Post>> {
    let pool: Vec<&Post> = pool.into_iter().filter(|p| !used.contains(&p.id)).collect();
    if pool.len() < n {
        return Err(Error::Shortfall {
            stratum: stratum.into(),
            requested: n,
            available: pool.len(),
        });
    }
    let picked: Vec<Post> = sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    for p in &picked {
        used.insert(p.id.clone());
    }
    Ok(picked)
}

/// Builds the curated mix: clear-cut toxic (part of it span-annotated),
/// clear-cut non-toxic, ambiguous low-toxicity posts containing frequent toxic
/// terms, and extra toxic posts; then shuffles and splits into train/test.
pub fn curate(corpus: &Corpus, span_corpus: &Corpus, config: &CurationConfig) -> Result<Curation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut used = HashSet::new();
    let mut strata = BTreeMap::new();
    let mut all = Vec::with_capacity(config.total());

    let terms = if config.ambiguous > 0 {
        build_toxic_term_list(span_corpus, config.min_term_count)?
    } else {
        TermFrequencyList::default()
    };

    let span_toxic_pool = span_corpus
        .iter()
        .filter(|p| p.toxicity > config.toxic_min && p.spans.is_some())
        .collect();
    let toxic_pool = || -> Vec<&Post> {
        corpus.iter().filter(|p| p.toxicity > config.toxic_min).collect()
    };
    let non_toxic_pool = corpus.iter().filter(|p| p.toxicity < config.non_toxic_max).collect();
    let ambiguous = mine_ambiguous(corpus, &terms, config.ambiguous_lo, config.ambiguous_hi);

    let mut take = |name: &str, pool: Vec<&Post>, n: usize, all: &mut Vec<Post>| -> Result<()> {
        let picked = draw(name, pool, n, &mut used, &mut rng)?;
        strata.insert(name.to_string(), picked.len());
        all.extend(picked);
        Ok(())
    };
    take("span_toxic", span_toxic_pool, config.span_toxic, &mut all)?;
    take(
        "highly_toxic",
        toxic_pool(),
        config.highly_toxic - config.span_toxic,
        &mut all,
    )?;
    take("non_toxic", non_toxic_pool, config.non_toxic, &mut all)?;
    take("ambiguous", ambiguous.iter().collect(), config.ambiguous, &mut all)?;
    take("extra_toxic", toxic_pool(), config.extra_toxic, &mut all)?;

    let order = sample(&mut rng, all.len(), all.len()).into_vec();
    let mut slots: Vec<Option<Post>> = all.into_iter().map(Some).collect();
    let shuffled: Vec<Post> = order.into_iter().map(|i| slots[i].take().unwrap()).collect();
    let n_train = config.train_size().min(shuffled.len());
    let mut train = shuffled;
    let test = train.split_off(n_train);
    Ok(Curation {
        train: Corpus { posts: train, role: CorpusRole::Mixed },
        test: Corpus { posts: test, role: CorpusRole::Mixed },
        terms,
        strata,
    })
}
