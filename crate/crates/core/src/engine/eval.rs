use std::collections::BTreeMap;

use dcr_tensor::{Scalar, Var};

use super::model::Model;
use super::train::batch_pass;
use crate::curriculum::{VisibilityMask, GAP_FRAMES};
use crate::dataset::Dataset;
use crate::error::{DcrError, Result};
use crate::objectives::{consensus_predict, ClassWeights, LossComponents, LossWeights, MetricAccumulator, MetricReport};
use crate::reasoners::FeatureSequence;

const EVAL_BATCH: usize = 128;

/// Scores `model` on `data` with the future hidden except for the
/// `revealed` gap frames nearest the observation (0 = the test-time
/// layout). Predictions average the logits of the reconstructed action
/// frames before the softmax. Reported losses use uniform class weights
/// and the default smoothing.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, revealed: usize) -> Result<MetricReport> {
    let k = data.k().ok_or_else(|| DcrError::Invalid("nothing to evaluate".into()))?;
    let mask = VisibilityMask::with_revealed_gap(k, revealed)?;
    let weights = LossWeights::default();
    let class_w = ClassWeights::uniform(data.n_actions, data.verb_noun);
    let mut acc_a = MetricAccumulator::new(data.n_actions);
    let mut acc_vn = data
        .verb_noun
        .map(|(v, n)| (MetricAccumulator::new(v), MetricAccumulator::new(n)));
    let mut losses = LossComponents::default();
    for chunk in data.sequences.chunks(EVAL_BATCH) {
        let seqs: Vec<&FeatureSequence> = chunk.iter().collect();
        let masks = vec![&mask; seqs.len()];
        let pass = batch_pass(model, &seqs, &masks, &weights, &class_w, None)?;
        let rows = pass.rows_per_instance;
        let n = seqs.len() as f64;
        losses.cls_action += pass.components.cls_action * n;
        losses.cls_verb += pass.components.cls_verb * n;
        losses.cls_noun += pass.components.cls_noun * n;
        losses.rec += pass.components.rec * n;
        let scores = |v: Var| -> Result<Vec<Vec<f64>>> {
            let t = pass.graph.value(v);
            let c = t.dims2().1;
            let vals: Vec<f64> = t.data().iter().map(|x| x.as_f64()).collect();
            (0..seqs.len())
                .map(|i| {
                    let block: Vec<Vec<f64>> = (0..rows)
                        .map(|r| vals[(i * rows + r) * c..(i * rows + r + 1) * c].to_vec())
                        .collect();
                    consensus_predict(&block)
                })
                .collect()
        };
        for (s, p) in seqs.iter().zip(scores(pass.action_logits)?) {
            acc_a.add(&p, s.action)?;
        }
        if let (Some((av, an)), Some(lv), Some(ln)) = (acc_vn.as_mut(), pass.verb_logits, pass.noun_logits) {
            for ((s, pv), pn) in seqs.iter().zip(scores(lv)?).zip(scores(ln)?) {
                av.add(&pv, s.verb.unwrap_or(usize::MAX))?;
                an.add(&pn, s.noun.unwrap_or(usize::MAX))?;
            }
        }
    }
    let n = data.len() as f64;
    let losses = LossComponents {
        cls_verb: losses.cls_verb / n,
        cls_noun: losses.cls_noun / n,
        cls_action: losses.cls_action / n,
        rec: losses.rec / n,
    };
    let mut heads = BTreeMap::new();
    heads.insert("action".to_string(), acc_a.finish()?);
    if let Some((av, an)) = acc_vn {
        heads.insert("verb".to_string(), av.finish()?);
        heads.insert("noun".to_string(), an.finish()?);
    }
    Ok(MetricReport::new(heads, Some(losses)))
}

/// Metrics with 0, 1, .., 4 gap frames revealed, i.e. a shrinking
/// anticipation time. Entry `i` reveals `i` frames.
pub fn tau_sweep<T: Scalar>(model: &Model<T>, data: &Dataset) -> Result<Vec<MetricReport>> {
    (0..=GAP_FRAMES).map(|r| evaluate(model, data, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{HeadConfig, HeadInput};
    use crate::reasoners::ReasonerConfig;

    fn tiny_data(n: usize, classes: usize) -> Dataset {
        let sequences = (0..n)
            .map(|i| {
                let frames: Vec<f32> = (0..12 * 3).map(|j| ((i * 7 + j) % 5) as f32 * 0.1).collect();
                FeatureSequence::new(format!("s{i}"), frames, 3, i % classes, None, None).unwrap()
            })
            .collect();
        Dataset {
            sequences,
            n_actions: classes,
            verb_noun: None,
        }
    }

    #[test]
    fn reports_cover_every_instance() {
        let data = tiny_data(10, 3);
        let heads = HeadConfig {
            input: HeadInput::Reconstruction,
            input_dim: 3,
            actions: 3,
            verb_noun: None,
        };
        let model: Model<f64> = Model::new(ReasonerConfig::transformer(3, 8, 1, 2), Some(heads), 1).unwrap();
        let sweep = tau_sweep(&model, &data).unwrap();
        assert_eq!(sweep.len(), 5);
        for r in &sweep {
            let m = r.action().unwrap();
            assert_eq!(m.count, 10);
            assert!((0.0..=1.0).contains(&m.top1));
            assert_eq!(m.top5, 1.0, "three classes always fit in the top five");
        }
    }
}
