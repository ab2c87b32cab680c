//! Synthetic corpora with gold spans known by construction.
//!
//! Posts are sequences of pseudo-word filler. Toxic posts get one or two words
//! planted from a toxic lexicon, and the planted words are the gold spans.
//! Context rules add a harder slice: a term that is toxic only when it
//! completes a specific trigram (`prefix[0] prefix[1] term`), and that also
//! appears in benign posts next to partial copies of the pattern.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusRole, Post};
use crate::error::{Error, Result};
use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRule {
    pub prefix: [String; 2],
    pub term: String,
}

impl ContextRule {
    pub fn new(p0: &str, p1: &str, term: &str) -> Self {
        ContextRule {
            prefix: [p0.to_string(), p1.to_string()],
            term: term.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    pub filler_vocab: usize,
    pub toxic_lexicon: Vec<String>,
    pub context_rules: Vec<ContextRule>,
    pub min_words: usize,
    pub max_words: usize,
    pub toxic_rate: f64,
    /// Fraction of posts (toxic and benign alike) built around a context rule.
    pub context_rate: f64,
    /// Fraction of posts that keep their span annotation.
    pub span_annotated_fraction: f64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 1000,
            filler_vocab: 200,
            toxic_lexicon: [
                "zorg", "idiot", "moron", "stupid", "loser", "pathetic", "dumb", "fool", "crap",
                "jerk",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            context_rules: vec![ContextRule::new("you", "are", "trash")],
            min_words: 4,
            max_words: 12,
            toxic_rate: 0.5,
            context_rate: 0.0,
            span_annotated_fraction: 1.0,
            id_prefix: "syn".into(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.toxic_lexicon.is_empty() {
            return Err(Error::Config("toxic lexicon is empty".into()));
        }
        if self.min_words == 0 || self.max_words < self.min_words {
            return Err(Error::Config(format!(
                "invalid post length range {}..={}",
                self.min_words, self.max_words
            )));
        }
        if self.filler_vocab == 0 {
            return Err(Error::Config("filler vocabulary is empty".into()));
        }
        for (name, r) in [
            ("toxic_rate", self.toxic_rate),
            ("context_rate", self.context_rate),
            ("span_annotated_fraction", self.span_annotated_fraction),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    fn reserved_words(&self) -> Vec<String> {
        let mut words: Vec<String> = self.toxic_lexicon.iter().map(|w| w.to_lowercase()).collect();
        for r in &self.context_rules {
            words.extend(r.prefix.iter().cloned());
            words.push(r.term.clone());
        }
        words
    }
}

const ONSETS: [&str; 12] = ["b", "k", "m", "t", "r", "s", "l", "n", "v", "d", "p", "g"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pseudo-words built from consonant-vowel syllables, skipping
/// any that collide with `reserved`.
pub fn filler_words(n: usize, reserved: &[String]) -> Vec<String> {
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut i = 0usize;
    while out.len() < n {
        // Two syllables first, then three once those run out.
        let ns = syllables.len();
        let w = if i < ns * ns {
            format!("{}{}", syllables[i % ns], syllables[i / ns])
        } else {
            let j = i - ns * ns;
            format!(
                "{}{}{}",
                syllables[j % ns],
                syllables[(j / ns) % ns],
                syllables[(j / (ns * ns)) % ns]
            )
        };
        if !reserved.contains(&w) {
            out.push(w);
        }
        i += 1;
    }
    out
}

/// A word of a post under construction and whether it is gold-toxic.
struct Unit {
    word: String,
    toxic: bool,
}

fn render(units: &[Unit], rng: &mut ChaCha8Rng) -> (String, Vec<Span>) {
    let mut text = String::new();
    let mut pos = 0usize;
    let mut spans = Vec::new();
    let last = units.len().saturating_sub(1);
    for (i, u) in units.iter().enumerate() {
        if i > 0 {
            text.push(' ');
            pos += 1;
        }
        let mut word = u.word.clone();
        if i == 0 && rng.random_bool(0.3) {
            let mut cs = word.chars();
            if let Some(first) = cs.next() {
                word = first.to_uppercase().chain(cs).collect();
            }
        }
        let len = word.chars().count();
        if u.toxic {
            spans.push(Span::new(pos, pos + len));
        }
        text.push_str(&word);
        pos += len;
        if i == last {
            if rng.random_bool(0.5) {
                text.push(*['.', '!', '?'].choose(rng).unwrap());
            }
        } else if rng.random_bool(0.08) {
            text.push(',');
            pos += 1;
        }
    }
    (text, spans)
}

fn filler_units(n: usize, filler: &[String], rng: &mut ChaCha8Rng) -> Vec<Vec<Unit>> {
    (0..n)
        .map(|_| {
            vec![Unit {
                word: filler.choose(rng).unwrap().clone(),
                toxic: false,
            }]
        })
        .collect()
}

fn insert_group(groups: &mut Vec<Vec<Unit>>, group: Vec<Unit>, rng: &mut ChaCha8Rng) {
    let at = rng.random_range(0..=groups.len());
    groups.insert(at, group);
}

fn plain(word: &str) -> Unit {
    Unit { word: word.to_string(), toxic: false }
}

/// Generates a corpus; identical `(config, seed)` yields an identical corpus.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler = filler_words(config.filler_vocab, &config.reserved_words());
    let mut posts = Vec::with_capacity(config.size);
    for i in 0..config.size {
        let toxic = rng.random_bool(config.toxic_rate);
        let context = !config.context_rules.is_empty() && rng.random_bool(config.context_rate);
        let n = rng.random_range(config.min_words..=config.max_words);
        let mut groups = filler_units(n, &filler, &mut rng);
        let toxicity = match (toxic, context) {
            (true, false) => {
                let planted = if rng.random_bool(0.2) { 2 } else { 1 };
                for _ in 0..planted {
                    let w = config.toxic_lexicon.choose(&mut rng).unwrap().to_lowercase();
                    insert_group(&mut groups, vec![Unit { word: w, toxic: true }], &mut rng);
                }
                0.8 + 0.2 * (1.0 - rng.random::<f64>())
            }
            (true, true) => {
                let rule = config.context_rules.choose(&mut rng).unwrap();
                let group = vec![
                    plain(&rule.prefix[0]),
                    plain(&rule.prefix[1]),
                    Unit { word: rule.term.clone(), toxic: true },
                ];
                insert_group(&mut groups, group, &mut rng);
                // Half the time add a second, harmless use of the middle word,
                // so that word and pair counts match the split decoy below.
                if rng.random_bool(0.5) {
                    let x = plain(filler.choose(&mut rng).unwrap());
                    let y = plain(filler.choose(&mut rng).unwrap());
                    insert_group(&mut groups, vec![x, plain(&rule.prefix[1]), y], &mut rng);
                }
                0.8 + 0.2 * (1.0 - rng.random::<f64>())
            }
            (false, true) => {
                let rule = config.context_rules.choose(&mut rng).unwrap();
                let x = plain(filler.choose(&mut rng).unwrap());
                let y = plain(filler.choose(&mut rng).unwrap());
                let (p0, p1, t) = (&rule.prefix[0], &rule.prefix[1], &rule.term);
                match rng.random_range(0..4) {
                    0 => insert_group(&mut groups, vec![x, plain(p1), plain(t)], &mut rng),
                    1 => insert_group(&mut groups, vec![plain(p0), plain(p1), y], &mut rng),
                    2 => insert_group(&mut groups, vec![plain(p0), x, plain(t)], &mut rng),
                    _ => {
                        insert_group(&mut groups, vec![plain(p0), plain(p1), y], &mut rng);
                        insert_group(&mut groups, vec![x, plain(p1), plain(t)], &mut rng);
                    }
                }
                0.1 + 0.2 * rng.random::<f64>()
            }
            (false, false) => 0.1 * rng.random::<f64>(),
        };
        let units: Vec<Unit> = groups.into_iter().flatten().collect();
        let (text, spans) = render(&units, &mut rng);
        let annotated = rng.random_bool(config.span_annotated_fraction);
        let id = format!("{}{:06}", config.id_prefix, i);
        posts.push(Post::new(id, text, toxicity, annotated.then_some(spans))?);
    }
    Corpus::new(posts, CorpusRole::Mixed)
}

/// Span corpus in which each `(term, count)` is planted inside a gold span in
/// exactly `count` posts, one term per post, surrounded by filler.
pub fn generate_with_term_counts(
    counts: &[(String, usize)],
    config: &SynthConfig,
    seed: u64,
) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reserved = config.reserved_words();
    reserved.extend(counts.iter().map(|(t, _)| t.to_lowercase()));
    let filler = filler_words(config.filler_vocab, &reserved);
    let mut posts = Vec::new();
    for (term, count) in counts {
        for _ in 0..*count {
            let n = rng.random_range(config.min_words..=config.max_words);
            let mut groups = filler_units(n, &filler, &mut rng);
            insert_group(
                &mut groups,
                vec![Unit { word: term.to_lowercase(), toxic: true }],
                &mut rng,
            );
            let units: Vec<Unit> = groups.into_iter().flatten().collect();
            let (text, spans) = render(&units, &mut rng);
            let id = format!("{}{:06}", config.id_prefix, posts.len());
            let toxicity = 0.8 + 0.2 * (1.0 - rng.random::<f64>());
            posts.push(Post::new(id, text, toxicity, Some(spans))?);
        }
    }
    Corpus::new(posts, CorpusRole::Span)
}
