//! Classification reports and character-level span detection metrics.
//!
//! Span metrics give partial credit at the character level. For a post with
//! gold offsets `G` and system offsets `A`:
//!
//! ```text
//! P = |A ∩ G| / |A|      R = |A ∩ G| / |G|      F1 = 2PR / (P + R)
//! ```
//!
//! computed per post and then averaged, unweighted, over posts. When both sets
//! are empty the post scores `(1, 1, 1)`; when exactly one is empty it scores
//! `(0, 0, 0)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::span::CharSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub toxic: ClassScores,
    pub non_toxic: ClassScores,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn class_scores(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    ClassScores { precision, recall, f1: f1(precision, recall), support: tp + fn_ }
}

/// Per-class precision/recall/F1 with the toxic class as positive. Zero
/// denominators yield 0.
pub fn classification_report(gold: &[Label], predicted: &[Label]) -> Result<ClassificationReport> {
    if gold.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Empty("no labels to evaluate".into()));
    }
    let mut c = Confusion { true_positive: 0, false_positive: 0, false_negative: 0, true_negative: 0 };
    for (&g, &p) in gold.iter().zip(predicted) {
        match (g.is_toxic(), p.is_toxic()) {
            (true, true) => c.true_positive += 1,
            (false, true) => c.false_positive += 1,
            (true, false) => c.false_negative += 1,
            (false, false) => c.true_negative += 1,
        }
    }
    let toxic = class_scores(c.true_positive, c.false_positive, c.false_negative);
    let non_toxic = class_scores(c.true_negative, c.false_negative, c.false_positive);
    Ok(ClassificationReport {
        macro_f1: (toxic.f1 + non_toxic.f1) / 2.0,
        accuracy: ratio(c.true_positive + c.true_negative, gold.len()),
        toxic,
        non_toxic,
        confusion: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Span precision, recall and F1 of one post.
pub fn sd_prf(gold: &CharSet, system: &CharSet) -> SpanScores {
    match (gold.is_empty(), system.is_empty()) {
        (true, true) => return SpanScores { precision: 1.0, recall: 1.0, f1: 1.0 },
        (true, false) | (false, true) => return SpanScores { precision: 0.0, recall: 0.0, f1: 0.0 },
        _ => {}
    }
    let overlap = system.intersection(gold).count();
    let precision = overlap as f64 / system.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    SpanScores { precision, recall, f1: f1(precision, recall) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEvalResult {
    pub per_post: Vec<SpanScores>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Unweighted means over posts.
pub fn sd_average(per_post: Vec<SpanScores>) -> Result<SpanEvalResult> {
    if per_post.is_empty() {
        return Err(Error::Empty("no posts to average span scores over".into()));
    }
    let n = per_post.len() as f64;
    let mean = |f: fn(&SpanScores) -> f64| per_post.iter().map(f).sum::<f64>() / n;
    Ok(SpanEvalResult {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_post,
    })
}

/// Aligned text table with one row per system, columns as in a toxicity
/// classification results table: per-class P/R/F1 and macro-F1.
pub fn classification_table(rows: &[(&str, &ClassificationReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} | {:>21} | {:>21} | {:>8}",
        "", "Toxic", "Non-toxic", ""
    );
    let _ = writeln!(
        out,
        "{:<width$} | {:>6} {:>6} {:>7} | {:>6} {:>6} {:>7} | {:>8}",
        "Model", "P", "R", "F1", "P", "R", "F1", "Macro-F1"
    );
    let _ = writeln!(out, "{}", "-".repeat(width + 58));
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$} | {:>6.3} {:>6.3} {:>7.3} | {:>6.3} {:>6.3} {:>7.3} | {:>8.3}",
            name,
            r.toxic.precision,
            r.toxic.recall,
            r.toxic.f1,
            r.non_toxic.precision,
            r.non_toxic.recall,
            r.non_toxic.f1,
            r.macro_f1
        );
    }
    out
}

/// Aligned text table of SD-P / SD-R / SD-F1 per system.
pub fn span_table(rows: &[(&str, &SpanEvalResult)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | {:>6} {:>6} {:>6}", "Model", "SD-P", "SD-R", "SD-F1");
    let _ = writeln!(out, "{}", "-".repeat(width + 24));
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$} | {:>6.3} {:>6.3} {:>6.3}",
            name, r.precision, r.recall, r.f1
        );
    }
    out
}
