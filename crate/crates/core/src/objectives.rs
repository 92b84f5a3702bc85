//! Classification heads, losses and evaluation metrics.

use std::collections::BTreeMap;

use dcr_tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{DcrError, Result};
use crate::reasoners::Linear;
use crate::rng::Stream;

/// Probabilities below this are clamped before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;
pub const CLASS_WEIGHT_MIN: f64 = 0.1;
pub const CLASS_WEIGHT_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionForm {
    /// Sum of per-frame L2 norms.
    L2,
    /// Sum of per-frame squared errors.
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_rec: f64,
    pub epsilon: f64,
    pub reconstruction: ReconstructionForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cls: 0.5,
            lambda_rec: 1.0,
            epsilon: 0.2,
            reconstruction: ReconstructionForm::L2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cls >= 0.0 && self.lambda_rec >= 0.0) {
            return Err(DcrError::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(DcrError::Config(format!("label smoothing {} outside [0, 1)", self.epsilon)));
        }
        Ok(())
    }
}

/// Per-class weights for each head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub action: Vec<f64>,
    pub verb: Option<Vec<f64>>,
    pub noun: Option<Vec<f64>>,
}

impl ClassWeights {
    pub fn uniform(actions: usize, verb_noun: Option<(usize, usize)>) -> Self {
        ClassWeights {
            action: vec![1.0; actions],
            verb: verb_noun.map(|(v, _)| vec![1.0; v]),
            noun: verb_noun.map(|(_, n)| vec![1.0; n]),
        }
    }
}

/// Inverse-frequency weights `mean / count_c`, clamped to `[0.1, 10]`;
/// classes never seen get the upper clamp.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(DcrError::Invalid("class histogram is empty".into()));
    }
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| {
            if c == 0 {
                CLASS_WEIGHT_MAX
            } else {
                (mean / c as f64).clamp(CLASS_WEIGHT_MIN, CLASS_WEIGHT_MAX)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedCe {
    pub loss: f64,
    /// Probabilities raised to [`LOG_FLOOR`].
    pub clamped: usize,
}

/// Label-smoothed, class-weighted cross-entropy summed over prediction
/// rows: `-(1-eps) w_y log p_y - sum_j eps/C log p_j` per row.
pub fn smoothed_ce(predictions: &[Vec<f64>], y: usize, weights: &[f64], epsilon: f64) -> Result<SmoothedCe> {
    let c = weights.len();
    if y >= c || !(0.0..1.0).contains(&epsilon) {
        return Err(DcrError::Invalid(format!("label {y} of {c} classes, smoothing {epsilon}")));
    }
    let mut loss = 0.0;
    let mut clamped = 0;
    for row in predictions {
        if row.len() != c {
            return Err(DcrError::Invalid(format!("prediction row has {} classes, expected {c}", row.len())));
        }
        let mut log = |p: f64| {
            if p < LOG_FLOOR {
                clamped += 1;
            }
            p.max(LOG_FLOOR).ln()
        };
        loss -= (1.0 - epsilon) * weights[y] * log(row[y]);
        for &p in row {
            loss -= epsilon / c as f64 * log(p);
        }
    }
    Ok(SmoothedCe { loss, clamped })
}

/// Graph form of [`smoothed_ce`] over logits `[R, C]`, one label per row,
/// summed over rows.
pub fn smoothed_ce_graph<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[usize],
    weights: &[f64],
    epsilon: f64,
) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let c = weights.len();
    if shape.len() != 2 || shape[0] != labels.len() || shape[1] != c {
        return Err(DcrError::Invalid(format!(
            "logits {shape:?} do not match {} labels over {c} classes",
            labels.len()
        )));
    }
    let mut coef = vec![T::lit(-epsilon / c as f64); labels.len() * c];
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(DcrError::Invalid(format!("label {y} outside {c} classes")));
        }
        coef[r * c + y] = coef[r * c + y] - T::lit((1.0 - epsilon) * weights[y]);
    }
    let p = g.softmax_rows(logits)?;
    let lp = g.log_clamped(p, T::lit(LOG_FLOOR));
    let weighted = g.mul_const(lp, &Tensor::new(shape, coef)?)?;
    Ok(g.sum(weighted))
}

/// Reconstruction error over masked frames: `sum_i (1 - beta_i) |z_i - x_i|`
/// (or its square).
pub fn reconstruction_loss(x: &[f32], z: &[f32], dim: usize, beta: &[bool], form: ReconstructionForm) -> Result<f64> {
    if dim == 0 || x.len() != z.len() || x.len() != beta.len() * dim {
        return Err(DcrError::Invalid("reconstruction shapes differ".into()));
    }
    let mut total = 0.0;
    for (r, &b) in beta.iter().enumerate() {
        if b {
            continue;
        }
        let sq: f64 = x[r * dim..(r + 1) * dim]
            .iter()
            .zip(&z[r * dim..(r + 1) * dim])
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        total += match form {
            ReconstructionForm::L2 => sq.sqrt(),
            ReconstructionForm::Squared => sq,
        };
    }
    Ok(total)
}

/// Graph form: `z` and `target` are `[R, D]`, `hidden` holds `1 - beta`
/// per row. Returns the weighted sum.
pub fn reconstruction_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    z: Var,
    target: Var,
    hidden: &[f64],
    form: ReconstructionForm,
) -> Result<Var> {
    let diff = g.sub(z, target)?;
    let per_row = match form {
        ReconstructionForm::L2 => g.row_norm(diff),
        ReconstructionForm::Squared => {
            let sq = g.mul(diff, diff)?;
            let d = g.shape(sq)[1];
            let ones = g.constant(Tensor::full(vec![d, 1], T::one()));
            let s = g.matmul(sq, ones)?;
            let r = g.shape(s)[0];
            g.reshape(s, vec![r])?
        }
    };
    if g.shape(per_row)[0] != hidden.len() {
        return Err(DcrError::Invalid("one mask weight per reconstructed row required".into()));
    }
    let w = Tensor::vector(hidden.iter().map(|&h| T::lit(h)).collect());
    let weighted = g.mul_const(per_row, &w)?;
    Ok(g.sum(weighted))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cls_verb: f64,
    pub cls_noun: f64,
    pub cls_action: f64,
    pub rec: f64,
}

impl LossComponents {
    pub fn cls(&self) -> f64 {
        self.cls_verb + self.cls_noun + self.cls_action
    }
}

/// `lambda_cls * (L_V + L_N + L_A) + lambda_rec * L_rec`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.lambda_cls * c.cls() + w.lambda_rec * c.rec
}

/// What the heads read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInput {
    /// Decoded reconstructions `z_1..z_4`.
    Reconstruction,
    /// Mean of the visible observation tokens (classification baseline).
    PooledTokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input: HeadInput,
    pub input_dim: usize,
    pub actions: usize,
    pub verb_noun: Option<(usize, usize)>,
}

/// Linear classifiers for action and, optionally, verb and noun.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSet {
    pub config: HeadConfig,
    pub action: Linear,
    pub verb: Option<Linear>,
    pub noun: Option<Linear>,
}

/// Logits of each head for the same input rows.
#[derive(Debug, Clone, Copy)]
pub struct HeadLogits {
    pub action: Var,
    pub verb: Option<Var>,
    pub noun: Option<Var>,
}

impl HeadSet {
    pub fn new<T: Scalar>(config: HeadConfig, store: &mut ParamStore<T>, rng: &mut Stream) -> Result<Self> {
        if config.actions == 0 || config.input_dim == 0 {
            return Err(DcrError::Config("heads need classes and inputs".into()));
        }
        let d = config.input_dim;
        let action = Linear::new(store, "head.action", d, config.actions, rng);
        let (verb, noun) = match config.verb_noun {
            Some((v, n)) => (
                Some(Linear::new(store, "head.verb", d, v, rng)),
                Some(Linear::new(store, "head.noun", d, n, rng)),
            ),
            None => (None, None),
        };
        Ok(HeadSet {
            config,
            action,
            verb,
            noun,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<HeadLogits> {
        Ok(HeadLogits {
            action: self.action.forward(g, store, x)?,
            verb: self.verb.map(|h| h.forward(g, store, x)).transpose()?,
            noun: self.noun.map(|h| h.forward(g, store, x)).transpose()?,
        })
    }
}

/// Averages logit rows, then applies softmax.
pub fn consensus_predict(logits: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = logits.first().ok_or_else(|| DcrError::Invalid("no logit rows".into()))?;
    let c = first.len();
    if c == 0 || logits.iter().any(|r| r.len() != c) {
        return Err(DcrError::Invalid("logit rows must share a positive width".into()));
    }
    let n = logits.len() as f64;
    let mean: Vec<f64> = (0..c).map(|j| logits.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let max = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = mean.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / s).collect())
}

/// Position of `label` when scores are sorted descending, ties broken in
/// favour of the lower class index.
pub fn rank_of(scores: &[f64], label: usize) -> usize {
    let s = scores[label];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < label))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1: f64,
    pub top5: f64,
    pub mean_recall5: f64,
    pub count: usize,
}

/// Mergeable tallies for top-1, top-5 and class-mean recall@5.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAccumulator {
    classes: usize,
    count: usize,
    top1: usize,
    top5: usize,
    per_class: Vec<usize>,
    per_class_top5: Vec<usize>,
}

impl MetricAccumulator {
    pub fn new(classes: usize) -> Self {
        MetricAccumulator {
            classes,
            count: 0,
            top1: 0,
            top5: 0,
            per_class: vec![0; classes],
            per_class_top5: vec![0; classes],
        }
    }

    pub fn add(&mut self, scores: &[f64], label: usize) -> Result<()> {
        if scores.len() != self.classes || label >= self.classes {
            return Err(DcrError::Invalid(format!(
                "{} scores / label {label} for {} classes",
                scores.len(),
                self.classes
            )));
        }
        let rank = rank_of(scores, label);
        self.count += 1;
        self.per_class[label] += 1;
        if rank == 0 {
            self.top1 += 1;
        }
        if rank < 5 {
            self.top5 += 1;
            self.per_class_top5[label] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) -> Result<()> {
        if other.classes != self.classes {
            return Err(DcrError::Invalid("cannot merge metrics over different class counts".into()));
        }
        self.count += other.count;
        self.top1 += other.top1;
        self.top5 += other.top5;
        for c in 0..self.classes {
            self.per_class[c] += other.per_class[c];
            self.per_class_top5[c] += other.per_class_top5[c];
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(DcrError::Invalid("no predictions to score".into()));
        }
        let n = self.count as f64;
        let present: Vec<usize> = (0..self.classes).filter(|&c| self.per_class[c] > 0).collect();
        let recall = present
            .iter()
            .map(|&c| self.per_class_top5[c] as f64 / self.per_class[c] as f64)
            .sum::<f64>()
            / present.len() as f64;
        Ok(Metrics {
            top1: self.top1 as f64 / n,
            top5: self.top5 as f64 / n,
            mean_recall5: recall,
            count: self.count,
        })
    }
}

/// Scores a list of predictions.
pub fn metrics(predictions: &[Vec<f64>], labels: &[usize]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(DcrError::Invalid("one label per prediction required".into()));
    }
    let classes = predictions.first().map_or(0, |p| p.len());
    let mut acc = MetricAccumulator::new(classes);
    for (p, &y) in predictions.iter().zip(labels) {
        acc.add(p, y)?;
    }
    acc.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    /// Keyed by head name: `action`, `verb`, `noun`.
    pub heads: BTreeMap<String, Metrics>,
    pub losses: Option<LossComponents>,
}

impl MetricReport {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn new(heads: BTreeMap<String, Metrics>, losses: Option<LossComponents>) -> Self {
        MetricReport {
            schema_version: Self::SCHEMA_VERSION,
            heads,
            losses,
        }
    }

    pub fn action(&self) -> Option<&Metrics> {
        self.heads.get("action")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prediction_costs_log_c_per_frame() {
        let p = vec![vec![0.1; 10]; 4];
        for eps in [0.0, 0.2, 0.7] {
            let l = smoothed_ce(&p, 3, &[1.0; 10], eps).unwrap().loss;
            assert!((l - 4.0 * 10f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothed_ce_hand_value() {
        let l = smoothed_ce(&[vec![0.7, 0.1, 0.1, 0.1]], 0, &[1.0; 4], 0.2).unwrap().loss;
        let expect = 0.8 * -(0.7f64.ln()) + 0.05 * (-(0.7f64.ln()) - 3.0 * 0.1f64.ln());
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.6486).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_is_clamped_and_counted() {
        let r = smoothed_ce(&[vec![1.0, 0.0]], 0, &[1.0; 2], 0.2).unwrap();
        assert!(r.loss.is_finite());
        assert_eq!(r.clamped, 1);
        assert_eq!(smoothed_ce(&[vec![1.0, 0.0]], 0, &[1.0; 2], 0.0).unwrap().loss, 0.0);
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights(&[7, 7, 7]).unwrap(), vec![1.0; 3]);
        let w = class_weights(&[90, 10]).unwrap();
        assert!((w[0] - 50.0 / 90.0).abs() < 1e-12 && (w[1] - 5.0).abs() < 1e-12);
        assert_eq!(class_weights(&[999, 1]).unwrap()[1], 10.0);
        assert_eq!(class_weights(&[5, 0]).unwrap()[1], 10.0);
        assert!(class_weights(&[]).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let x = [3.0, 4.0, 0.0, 1.0, 1.0, 1.0];
        let z = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let f = ReconstructionForm::L2;
        assert_eq!(reconstruction_loss(&x, &z, 3, &[false, true], f).unwrap(), 5.0);
        assert_eq!(reconstruction_loss(&x, &z, 3, &[true, true], f).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&x, &x, 3, &[false, false], f).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&x, &z, 3, &[false, true], ReconstructionForm::Squared).unwrap(), 25.0);
    }

    #[test]
    fn total_loss_examples() {
        let c = LossComponents {
            cls_action: 2.0,
            rec: 3.0,
            ..Default::default()
        };
        let w = LossWeights::default();
        assert_eq!(total_loss(&c, &w), 4.0);
        let w0 = LossWeights { lambda_cls: 0.0, ..w };
        assert_eq!(total_loss(&c, &w0), 3.0);
    }

    #[test]
    fn consensus_examples() {
        let p = consensus_predict(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let single = consensus_predict(&[vec![0.75, 0.25]]).unwrap();
        assert!(p[0] > p[1]);
        assert!((p[0] - single[0]).abs() < 1e-15);
    }

    #[test]
    fn metric_examples() {
        let perfect = metrics(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 1]).unwrap();
        assert_eq!((perfect.top1, perfect.top5, perfect.mean_recall5), (1.0, 1.0, 1.0));

        let rank3 = vec![0.5, 0.4, 0.3, 0.2, 0.1, 0.0];
        let m = metrics(&[rank3.clone(), rank3], &[3, 3]).unwrap();
        assert_eq!((m.top1, m.top5, m.mean_recall5), (0.0, 1.0, 1.0));

        // Class 0: 9 instances all hit; class 6: 1 instance ranked last.
        let mut preds = vec![vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.0]; 9];
        let mut labels = vec![0; 9];
        preds.push(vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.0]);
        labels.push(6);
        assert_eq!(metrics(&preds, &labels).unwrap().mean_recall5, 0.5);
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn ties_favour_lower_index() {
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 0), 0);
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 2), 2);
    }
}
