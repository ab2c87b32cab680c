//! Squared-error losses for the two tasks and their weighted combination.
//!
//! For a batch `B`, the classification loss is the mean over posts of
//! `(s̃ − y)²` and the span loss is the mean, over posts that carry token
//! labels, of the per-post mean `(sᵢ − yᵢ)²`. The joint loss is
//! `λ·L_C + (1 − λ)·L_S`, falling back to `L_C` when no post in the batch has
//! token labels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::Parameters;
use crate::tokenizer::TokenizedPost;

/// Posts per parallel work item. Fixed so that gradient summation order does
/// not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    Joint { lambda: f64 },
    Classification,
    Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    /// `None` when the batch has no token-labeled post.
    pub span: Option<f64>,
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mean squared error of nothing".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Per-post squared errors: classification, and span when labeled.
struct PostLoss {
    classification: f64,
    span: Option<f64>,
}

fn post_loss(model: &Model, post: &TokenizedPost) -> Result<PostLoss> {
    let fwd = model.forward(&post.ids)?;
    let diff = fwd.sequence_score - post.label;
    let span = post
        .token_labels
        .as_ref()
        .map(|y| mse(&fwd.token_scores, y))
        .transpose()?;
    Ok(PostLoss { classification: diff * diff, span })
}

fn combine(objective: Objective, losses: &[PostLoss]) -> Result<LossBreakdown> {
    if losses.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let classification = losses.iter().map(|l| l.classification).sum::<f64>() / losses.len() as f64;
    let labeled: Vec<f64> = losses.iter().filter_map(|l| l.span).collect();
    let span = (!labeled.is_empty()).then(|| labeled.iter().sum::<f64>() / labeled.len() as f64);
    let total = match (objective, span) {
        (Objective::Joint { lambda }, Some(ls)) => lambda * classification + (1.0 - lambda) * ls,
        (Objective::Joint { .. }, None) | (Objective::Classification, _) => classification,
        (Objective::Span, Some(ls)) => ls,
        (Objective::Span, None) => {
            return Err(Error::Data("span objective on a batch without token labels".into()))
        }
    };
    Ok(LossBreakdown { total, classification, span })
}

fn batch_losses(batch: &[TokenizedPost], model: &Model) -> Result<Vec<PostLoss>> {
    batch.iter().map(|p| post_loss(model, p)).collect()
}

pub fn classification_loss(batch: &[TokenizedPost], model: &Model) -> Result<f64> {
    Ok(combine(Objective::Classification, &batch_losses(batch, model)?)?.classification)
}

/// Errors if any post in the batch lacks token labels.
pub fn span_loss(batch: &[TokenizedPost], model: &Model) -> Result<f64> {
    if let Some(p) = batch.iter().find(|p| p.token_labels.is_none()) {
        return Err(Error::Data(format!("post `{}` has no token labels", p.post_id)));
    }
    combine(Objective::Span, &batch_losses(batch, model)?).map(|l| l.total)
}

pub fn joint_loss(batch: &[TokenizedPost], model: &Model, lambda: f64) -> Result<LossBreakdown> {
    combine(Objective::Joint { lambda }, &batch_losses(batch, model)?)
}

pub fn batch_loss(batch: &[TokenizedPost], model: &Model, objective: Objective) -> Result<LossBreakdown> {
    combine(objective, &batch_losses(batch, model)?)
}

/// Loss and its gradient with respect to every model parameter.
pub fn loss_and_grad(batch: &[TokenizedPost], model: &Model, objective: Objective) -> Result<(LossBreakdown, Model)> {
    if batch.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let n = batch.len() as f64;
    let n_labeled = batch.iter().filter(|p| p.token_labels.is_some()).count();
    let (w_cls, w_span) = match objective {
        Objective::Joint { lambda } if n_labeled > 0 => (lambda / n, (1.0 - lambda) / n_labeled as f64),
        Objective::Joint { .. } | Objective::Classification => (1.0 / n, 0.0),
        Objective::Span if n_labeled > 0 => (0.0, 1.0 / n_labeled as f64),
        Objective::Span => return Err(Error::Data("span objective on a batch without token labels".into())),
    };

    let parts: Vec<Result<(Vec<PostLoss>, Model)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = model.zeros_like();
            let mut losses = Vec::with_capacity(chunk.len());
            for post in chunk {
                let fwd = model.forward(&post.ids)?;
                let diff = fwd.sequence_score - post.label;
                let d_sequence = w_cls * 2.0 * diff;
                let count = fwd.token_scores.len() as f64;
                let (d_token, span) = match &post.token_labels {
                    Some(y) => {
                        let d: Vec<f64> = fwd
                            .token_scores
                            .iter()
                            .zip(y)
                            .map(|(s, t)| w_span * 2.0 * (s - t) / count)
                            .collect();
                        (d, Some(mse(&fwd.token_scores, y)?))
                    }
                    None => (vec![0.0; fwd.token_scores.len()], None),
                };
                model.backward_into(&fwd, &d_token, d_sequence, &mut grads)?;
                losses.push(PostLoss { classification: diff * diff, span });
            }
            Ok((losses, grads))
        })
        .collect();

    let mut grads = model.zeros_like();
    let mut losses = Vec::with_capacity(batch.len());
    for part in parts {
        let (l, g) = part?;
        losses.extend(l);
        grads.add_scaled(&g, 1.0);
    }
    Ok((combine(objective, &losses)?, grads))
}
