//! Highlighted explanation reports.
//!
//! Token backgrounds are linear in the score around a neutral midpoint of
//! 0.5: white at 0.5, saturated warm at 1, saturated cool at 0. Text between
//! tokens is copied verbatim, so stripping the markup gives back the input.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::head::{ExplanationWord, Prediction};
use crate::tokenizer::Token;

const WARM: (f64, f64, f64) = (214.0, 39.0, 40.0);
const COOL: (f64, f64, f64) = (31.0, 119.0, 180.0);

/// Distance from the midpoint, scaled to `[0, 1]`.
pub fn intensity(score: f64) -> f64 {
    ((score - 0.5).abs() * 2.0).min(1.0)
}

/// Background color for a score, blended from white.
pub fn color(score: f64) -> (u8, u8, u8) {
    let target = if score >= 0.5 { WARM } else { COOL };
    let a = intensity(score);
    let mix = |c: f64| (255.0 + (c - 255.0) * a).round() as u8;
    (mix(target.0), mix(target.1), mix(target.2))
}

/// One post with per-token scores, from either model family.
#[derive(Debug, Clone, PartialEq)]
pub struct Highlight {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub scores: Vec<f64>,
    pub sequence_score: f64,
    pub top: Vec<ExplanationWord>,
}

impl Highlight {
    pub fn from_prediction(id: &str, text: &str, p: &Prediction) -> Self {
        Highlight {
            id: id.to_string(),
            text: text.to_string(),
            tokens: p.tokens.clone(),
            scores: p.token_scores.clone(),
            sequence_score: p.sequence_score,
            top: p.explanation.clone(),
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

/// Alternating gaps and tokens covering the whole text, in order.
fn segments<'a>(h: &'a Highlight) -> Vec<(String, Option<(&'a Token, f64)>)> {
    let chars: Vec<char> = h.text.chars().collect();
    let slice = |a: usize, b: usize| chars[a..b].iter().collect::<String>();
    let mut out = Vec::new();
    let mut pos = 0;
    for (t, &s) in h.tokens.iter().zip(&h.scores) {
        if t.start > pos {
            out.push((slice(pos, t.start), None));
        }
        out.push((slice(t.start, t.end), Some((t, s))));
        pos = t.end;
    }
    if pos < chars.len() {
        out.push((slice(pos, chars.len()), None));
    }
    out
}

/// The post body: every token once, in a `span` carrying its offsets and
/// score.
pub fn html_text(h: &Highlight) -> String {
    let mut out = String::from("<p class=\"post-text\">");
    for (text, tok) in segments(h) {
        match tok {
            None => out.push_str(&escape(&text)),
            Some((t, s)) => {
                let (r, g, b) = color(s);
                let _ = write!(
                    out,
                    "<span class=\"tok\" data-start=\"{}\" data-end=\"{}\" data-score=\"{s:.4}\" \
                     style=\"background:rgb({r},{g},{b})\">{}</span>",
                    t.start,
                    t.end,
                    escape(&text)
                );
            }
        }
    }
    out.push_str("</p>");
    out
}

/// Recovers the original text from the first post body in `html`.
pub fn text_from_html(html: &str) -> Option<String> {
    let start = html.find("<p class=\"post-text\">")? + "<p class=\"post-text\">".len();
    let end = start + html[start..].find("</p>")?;
    let mut out = String::new();
    let mut in_tag = false;
    for c in html[start..end].chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            c if !in_tag => out.push(c),
            _ => {}
        }
    }
    Some(unescape(&out))
}

fn html_post(out: &mut String, title: &str, h: &Highlight) {
    let _ = writeln!(out, "<section class=\"post\">");
    let _ = writeln!(out, "<h2>{}</h2>", escape(title));
    let _ = writeln!(out, "{}", html_text(h));
    let _ = writeln!(out, "<p class=\"score\">sequence score {:.3}</p>", h.sequence_score);
    let top: Vec<String> = h.top.iter().map(|w| format!("{} ({:.3})", escape(&w.word), w.score)).collect();
    let _ = writeln!(out, "<p class=\"top\">top words: {}</p>", top.join(", "));
    let _ = writeln!(out, "</section>");
}

const STYLE: &str = "body{font-family:sans-serif;max-width:50em;margin:auto}\
.post-text{white-space:pre-wrap;font-size:1.2em;line-height:1.8}\
.tok{padding:0 1px;border-radius:2px}.pair{display:flex;gap:2em}.pair>div{flex:1}";

fn document(body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>spanmax explanations</title>\
         <style>{STYLE}</style></head><body>\n{body}</body></html>\n"
    )
}

pub fn html_report(posts: &[Highlight]) -> String {
    let mut body = String::new();
    for h in posts {
        html_post(&mut body, &h.id, h);
    }
    document(&body)
}

/// Terminal rendering with 24-bit background colors.
pub fn ansi(h: &Highlight) -> String {
    let mut out = String::new();
    for (text, tok) in segments(h) {
        match tok {
            None => out.push_str(&text),
            Some((_, s)) => {
                let (r, g, b) = color(s);
                let _ = write!(out, "\x1b[48;2;{r};{g};{b}m\x1b[38;2;0;0;0m{text}\x1b[0m");
            }
        }
    }
    let top: Vec<&str> = h.top.iter().map(|w| w.word.as_str()).collect();
    let _ = write!(out, "  [{:.3}] {}", h.sequence_score, top.join(", "));
    out
}

/// Which system was shown on each side for one post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindKey {
    pub id: String,
    pub a: String,
    pub b: String,
}

/// Renders two systems' explanations of the same posts side by side, as
/// "A" and "B" in a per-post random order. Returns the page and the key.
pub fn side_by_side(posts: &[(Highlight, Highlight)], names: (&str, &str), seed: u64) -> (String, Vec<BlindKey>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut body = String::new();
    let mut key = Vec::with_capacity(posts.len());
    for (first, second) in posts {
        let mut order = [(names.0, first), (names.1, second)];
        order.shuffle(&mut rng);
        let _ = writeln!(body, "<div class=\"pair\">");
        for (label, (_, h)) in ["A", "B"].iter().zip(&order) {
            let _ = writeln!(body, "<div>");
            html_post(&mut body, &format!("{} / {label}", first.id), h);
            let _ = writeln!(body, "</div>");
        }
        let _ = writeln!(body, "</div>");
        key.push(BlindKey { id: first.id.clone(), a: order[0].0.to_string(), b: order[1].0.to_string() });
    }
    (document(&body), key)
}
