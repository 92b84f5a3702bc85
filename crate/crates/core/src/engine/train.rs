use std::time::Instant;

use dcr_tensor::{Graph, Scalar, Tensor, Var};
use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::eval::evaluate;
use super::model::Model;
use super::optim::{lr_at_epoch, pretrain_lr_at_epoch, Optimizer};
use super::runlog::{RunLog, RunLogRow};
use crate::curriculum::{
    global_easiness, reconstruction_quality, sample_mask, EasinessBank, EasinessStats, Phase, ScheduleKind,
    EasinessTraceRow, VisibilityMask, ACTION_FRAMES,
};
use crate::dataset::Dataset;
use crate::error::{DcrError, Result};
use crate::objectives::{
    class_weights, reconstruction_loss_graph, smoothed_ce_graph, ClassWeights, HeadConfig, HeadInput, LossComponents,
    LossWeights, MetricReport,
};
use crate::order_pretrain::{gaussian_affinity, order_loss_graph, position_accuracy};
use crate::reasoners::{FeatureSequence, ForwardVars};
use crate::rng::{self, Stream};

/// A batch pushed through reasoner, heads and losses.
pub(crate) struct BatchPass<T> {
    pub graph: Graph<T>,
    pub total: Var,
    pub components: LossComponents,
    pub vars: ForwardVars,
    /// Logits per head, rows ordered by instance.
    pub action_logits: Var,
    pub verb_logits: Option<Var>,
    pub noun_logits: Option<Var>,
    /// Logit rows per instance (4 for reconstruction heads, 1 for pooled).
    pub rows_per_instance: usize,
}

/// Forward pass plus classification and reconstruction losses for a batch, averaged over
/// instances.
pub(crate) fn batch_pass<T: Scalar>(
    model: &Model<T>,
    seqs: &[&FeatureSequence],
    masks: &[&VisibilityMask],
    weights: &LossWeights,
    class_w: &ClassWeights,
    dropout: Option<&mut Stream>,
) -> Result<BatchPass<T>> {
    let heads = model
        .heads
        .as_ref()
        .ok_or_else(|| DcrError::Invalid("model has no classification heads".into()))?;
    let b = seqs.len();
    let k = seqs[0].len();
    let d = seqs[0].dim();
    let mut g = Graph::new();
    let input = g.constant(model.reasoner.prepare_input::<T>(seqs, masks)?);
    let vars = model.reasoner.forward(&mut g, &model.store, input, k, true, dropout)?;
    let inv_b = T::lit(1.0 / b as f64);

    let (features, rows_per_instance) = match heads.config.input {
        HeadInput::Reconstruction => {
            let idx: Vec<usize> = (0..b).flat_map(|i| (0..ACTION_FRAMES).map(move |r| i * k + r)).collect();
            (g.gather_rows(vars.z, &idx)?, ACTION_FRAMES)
        }
        HeadInput::PooledTokens => {
            let groups: Vec<Vec<usize>> = masks
                .iter()
                .enumerate()
                .map(|(i, m)| (0..k).filter(|&r| m.visible(r)).map(|r| i * k + r).collect())
                .collect();
            (g.segment_mean(vars.tokens, &groups)?, 1)
        }
    };
    let logits = heads.forward(&mut g, &model.store, features)?;
    let labels = |f: &dyn Fn(&FeatureSequence) -> Option<usize>| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(b * rows_per_instance);
        for s in seqs {
            let y = f(s).ok_or_else(|| DcrError::Invalid(format!("{} lacks a verb/noun label", s.instance_id)))?;
            out.extend(std::iter::repeat_n(y, rows_per_instance));
        }
        Ok(out)
    };

    let mut components = LossComponents::default();
    let eps = weights.epsilon;
    let ce_a = smoothed_ce_graph(&mut g, logits.action, &labels(&|s| Some(s.action))?, &class_w.action, eps)?;
    let mut cls = g.scale(ce_a, inv_b);
    components.cls_action = g.value(cls).item().as_f64();
    if let (Some(lv), Some(ln), Some(wv), Some(wn)) = (logits.verb, logits.noun, &class_w.verb, &class_w.noun) {
        let ce_v = smoothed_ce_graph(&mut g, lv, &labels(&|s| s.verb)?, wv, eps)?;
        let ce_v = g.scale(ce_v, inv_b);
        let ce_n = smoothed_ce_graph(&mut g, ln, &labels(&|s| s.noun)?, wn, eps)?;
        let ce_n = g.scale(ce_n, inv_b);
        components.cls_verb = g.value(ce_v).item().as_f64();
        components.cls_noun = g.value(ce_n).item().as_f64();
        cls = g.add(cls, ce_v)?;
        cls = g.add(cls, ce_n)?;
    }
    let mut total = g.scale(cls, T::lit(weights.lambda_cls));

    if heads.config.input == HeadInput::Reconstruction {
        let mut target = Vec::with_capacity(b * k * d);
        let mut hidden = Vec::with_capacity(b * k);
        for (s, m) in seqs.iter().zip(masks) {
            target.extend(s.frames().iter().map(|&v| T::lit(v as f64)));
            hidden.extend(m.hidden_weights());
        }
        let target = g.constant(Tensor::new(vec![b * k, d], target)?);
        let rec = reconstruction_loss_graph(&mut g, vars.z, target, &hidden, weights.reconstruction)?;
        let rec = g.scale(rec, inv_b);
        components.rec = g.value(rec).item().as_f64();
        let weighted = g.scale(rec, T::lit(weights.lambda_rec));
        total = g.add(total, weighted)?;
    }

    Ok(BatchPass {
        graph: g,
        total,
        components,
        vars,
        action_logits: logits.action,
        verb_logits: logits.verb,
        noun_logits: logits.noun,
        rows_per_instance,
    })
}

/// Class weights from the training labels, or uniform ones.
pub fn class_weights_for(data: &Dataset, enabled: bool) -> Result<ClassWeights> {
    if !enabled {
        return Ok(ClassWeights::uniform(data.n_actions, data.verb_noun));
    }
    Ok(ClassWeights {
        action: class_weights(&data.action_counts())?,
        verb: data.verb_counts().map(|c| class_weights(&c)).transpose()?,
        noun: data.noun_counts().map(|c| class_weights(&c)).transpose()?,
    })
}

/// Deterministic epoch order keyed by `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::keyed(seed, "shuffle", epoch as u64, ""));
    order
}

/// Easiness used for `id` in `epoch` under the configured schedule.
pub fn easiness_for(bank: &EasinessBank, config: &TrainConfig, id: &str, epoch: usize) -> f64 {
    global_easiness(&config.schedule, epoch, config.train_epochs).unwrap_or_else(|| bank.easiness(id))
}

/// Training-phase mask for one instance, keyed by `(seed, epoch, id)`.
pub fn training_mask(config: &TrainConfig, k: usize, easiness: f64, epoch: usize, id: &str) -> Result<VisibilityMask> {
    if config.head_input == HeadInput::PooledTokens {
        return VisibilityMask::eval(k);
    }
    let mut stream = rng::keyed(config.seed, "mask", epoch as u64, id);
    sample_mask(k, easiness, Phase::Train, &mut stream)
}

/// Training state: model, optimizer, easiness bank and log.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub optimizer: Optimizer<T>,
    pub bank: EasinessBank,
    pub class_weights: ClassWeights,
    pub log: RunLog,
    /// Per-instance easiness and quality of every epoch (instance-local
    /// schedule only).
    pub trace: Vec<EasinessTraceRow>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig, model: Model<T>, train: &Dataset) -> Result<Self> {
        config.validate()?;
        if model.heads.is_none() {
            return Err(DcrError::Config("training needs a model with heads".into()));
        }
        let optimizer = Optimizer::new(config.optimizer, &model.store);
        let bank = EasinessBank::new(train.sequences.iter().map(|s| s.instance_id.as_str()));
        let class_weights = class_weights_for(train, config.class_weighting)?;
        Ok(Trainer {
            config,
            model,
            optimizer,
            bank,
            class_weights,
            log: RunLog::new(),
            trace: Vec::new(),
        })
    }

    /// One epoch over `data`: per instance a mask at its current easiness,
    /// forward, losses, backward, step, and its reconstruction quality
    /// recorded in the bank. The easiness sweep for the next epoch runs at
    /// the end.
    pub fn train_epoch(&mut self, data: &Dataset, epoch: usize, val: Option<&Dataset>) -> Result<RunLogRow> {
        let started = Instant::now();
        let cfg = &self.config;
        let lr = lr_at_epoch(cfg, epoch);
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let mut sums = LossComponents::default();
        let mut total_sum = 0.0;
        let clip = cfg.grad_clip.map(T::lit);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seqs: Vec<&FeatureSequence> = chunk.iter().map(|&i| &data.sequences[i]).collect();
            let masks = seqs
                .iter()
                .map(|s| {
                    let t = easiness_for(&self.bank, cfg, &s.instance_id, epoch);
                    training_mask(cfg, s.len(), t, epoch, &s.instance_id)
                })
                .collect::<Result<Vec<_>>>()?;
            let mask_refs: Vec<&VisibilityMask> = masks.iter().collect();
            let mut drop = rng::keyed(cfg.seed, "dropout", epoch as u64, &bi.to_string());
            let mut pass = batch_pass(
                &self.model,
                &seqs,
                &mask_refs,
                &cfg.weights,
                &self.class_weights,
                Some(&mut drop),
            )?;
            let total = pass.graph.value(pass.total).item().as_f64();
            if !total.is_finite() {
                let id = self.offending_instance(&seqs, &mask_refs)?;
                log::error!("non-finite loss {total} in epoch {epoch}, instance {id}");
                return Err(DcrError::NonFiniteLoss { instance_id: id, value: total });
            }
            pass.graph.backward(pass.total)?;
            self.model.store.zero_grad();
            pass.graph.accumulate_param_grads(&mut self.model.store);
            if let Some(c) = clip {
                self.model.store.clip_grad_norm(c);
            }
            self.optimizer.step(&mut self.model.store, lr);

            let n = seqs.len() as f64;
            total_sum += total * n;
            sums.cls_action += pass.components.cls_action * n;
            sums.cls_verb += pass.components.cls_verb * n;
            sums.cls_noun += pass.components.cls_noun * n;
            sums.rec += pass.components.rec * n;
            if self.model.heads.as_ref().unwrap().config.input == HeadInput::Reconstruction {
                let z = pass.graph.value(pass.vars.z);
                let width = z.dims2().1;
                let zf: Vec<f32> = z.data().iter().map(|v| v.as_f64() as f32).collect();
                let k = seqs[0].len();
                for (i, (s, m)) in seqs.iter().zip(&masks).enumerate() {
                    let q = reconstruction_quality(s.frames(), &zf[i * k * width..(i + 1) * k * width], width, m)?;
                    self.bank.record_quality(&s.instance_id, q);
                }
            }
        }
        let n = data.len().max(1) as f64;
        let losses = LossComponents {
            cls_verb: sums.cls_verb / n,
            cls_noun: sums.cls_noun / n,
            cls_action: sums.cls_action / n,
            rec: sums.rec / n,
        };
        let easiness = self.easiness_stats(epoch);
        if self.config.schedule.kind == ScheduleKind::InstanceLocal {
            self.trace.extend(self.bank.trace_rows(epoch));
            self.bank.advance(epoch + 1, &self.config.schedule);
        }
        let cfg = &self.config;
        let val_report = match val {
            Some(v) if epoch == cfg.train_epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) => {
                Some(evaluate(&self.model, v, 0)?)
            }
            _ => None,
        };
        let row = RunLogRow {
            phase: Phase::Train,
            epoch,
            lr,
            losses,
            total: total_sum / n,
            order_loss: None,
            position_accuracy: None,
            val: val_report,
            easiness,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        self.log.push(row.clone())?;
        Ok(row)
    }

    fn easiness_stats(&self, epoch: usize) -> Option<EasinessStats> {
        match global_easiness(&self.config.schedule, epoch, self.config.train_epochs) {
            Some(t) => Some(EasinessStats { min: t, mean: t, max: t }),
            None => self.bank.stats(),
        }
    }

    /// First instance of a batch whose own loss is non-finite.
    fn offending_instance(&self, seqs: &[&FeatureSequence], masks: &[&VisibilityMask]) -> Result<String> {
        for (s, m) in seqs.iter().zip(masks) {
            let pass = batch_pass(&self.model, &[*s], &[*m], &self.config.weights, &self.class_weights, None)?;
            if !pass.graph.value(pass.total).item().as_f64().is_finite() {
                return Ok(s.instance_id.clone());
            }
        }
        Ok(seqs[0].instance_id.clone())
    }

    /// All training epochs, evaluating on `val` per `eval_every`.
    pub fn fit(&mut self, train: &Dataset, val: Option<&Dataset>) -> Result<()> {
        for epoch in 1..=self.config.train_epochs {
            let row = self.train_epoch(train, epoch, val)?;
            log::info!(
                "epoch {epoch}: total {:.4} rec {:.4} cls {:.4} lr {:.2e}",
                row.total,
                row.losses.rec,
                row.losses.cls(),
                row.lr
            );
        }
        Ok(())
    }
}

/// Order pre-training of the transformer reasoner: positional encodings
/// off at the input, every frame visible, tokens matched to positional
/// rows with Gaussian soft labels. Appends one row per epoch to `log`.
pub fn pretrain<T: Scalar>(model: &mut Model<T>, data: &Dataset, config: &TrainConfig, log: &mut RunLog) -> Result<()> {
    let table_id = model
        .reasoner
        .positional_table()
        .ok_or_else(|| DcrError::Config("order pre-training needs a positional table".into()))?;
    let k = data.k().ok_or_else(|| DcrError::Invalid("no pre-training data".into()))?;
    let labels = gaussian_affinity(k, config.sigma)?;
    let mut opt = Optimizer::new(config.optimizer, &model.store);
    let clip = config.grad_clip.map(T::lit);
    let mask = VisibilityMask::pretrain(k)?;
    for epoch in 1..=config.pretrain_epochs {
        let started = Instant::now();
        let lr = pretrain_lr_at_epoch(config, epoch);
        let order = epoch_order(data.len(), config.seed ^ 0x5052_4554, epoch);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        for (bi, chunk) in order.chunks(config.pretrain_batch_size).enumerate() {
            let seqs: Vec<&FeatureSequence> = chunk.iter().map(|&i| &data.sequences[i]).collect();
            let masks = vec![&mask; seqs.len()];
            let mut g = Graph::new();
            let input = g.constant(model.reasoner.prepare_input::<T>(&seqs, &masks)?);
            let mut drop = rng::keyed(config.seed, "pretrain-dropout", epoch as u64, &bi.to_string());
            let vars = model.reasoner.forward(&mut g, &model.store, input, k, false, Some(&mut drop))?;
            let table = g.param(&model.store, table_id);
            let loss = order_loss_graph(&mut g, vars.tokens, table, &labels, config.temperature)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(DcrError::NonFiniteLoss {
                    instance_id: seqs[0].instance_id.clone(),
                    value,
                });
            }
            let acc = position_accuracy(g.value(vars.tokens), model.store.value(table_id), k)?;
            g.backward(loss)?;
            model.store.zero_grad();
            g.accumulate_param_grads(&mut model.store);
            if let Some(c) = clip {
                model.store.clip_grad_norm(c);
            }
            opt.step(&mut model.store, lr);
            let n = seqs.len() as f64;
            loss_sum += value * n;
            acc_sum += acc * n;
        }
        let n = data.len().max(1) as f64;
        log.push(RunLogRow {
            phase: Phase::Pretrain,
            epoch,
            lr,
            losses: LossComponents::default(),
            total: loss_sum / n,
            order_loss: Some(loss_sum / n),
            position_accuracy: Some(acc_sum / n),
            val: None,
            easiness: None,
            wall_ms: started.elapsed().as_millis() as u64,
        })?;
        log::info!("pretrain epoch {epoch}: order loss {:.4} accuracy {:.3}", loss_sum / n, acc_sum / n);
    }
    model.order_pretrained = true;
    Ok(())
}

/// Mean order loss and position accuracy of `model` on `data` without
/// dropout.
pub fn order_metrics<T: Scalar>(model: &Model<T>, data: &Dataset, config: &TrainConfig) -> Result<(f64, f64)> {
    let table_id = model
        .reasoner
        .positional_table()
        .ok_or_else(|| DcrError::Config("order metrics need a positional table".into()))?;
    let k = data.k().ok_or_else(|| DcrError::Invalid("no data".into()))?;
    let labels = gaussian_affinity(k, config.sigma)?;
    let mask = VisibilityMask::pretrain(k)?;
    let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
    for chunk in data.sequences.chunks(256) {
        let seqs: Vec<&FeatureSequence> = chunk.iter().collect();
        let masks = vec![&mask; seqs.len()];
        let mut g = Graph::new();
        let input = g.constant(model.reasoner.prepare_input::<T>(&seqs, &masks)?);
        let vars = model.reasoner.forward(&mut g, &model.store, input, k, false, None)?;
        let table = g.constant(model.store.value(table_id).clone());
        let loss = order_loss_graph(&mut g, vars.tokens, table, &labels, config.temperature)?;
        let n = seqs.len() as f64;
        loss_sum += g.value(loss).item().as_f64() * n;
        acc_sum += position_accuracy(g.value(vars.tokens), model.store.value(table_id), k)? * n;
    }
    let n = data.len().max(1) as f64;
    Ok((loss_sum / n, acc_sum / n))
}

/// Heads matching `config` for the label spaces of `data`.
pub fn head_config_for(config: &TrainConfig, data: &Dataset) -> HeadConfig {
    let input_dim = match config.head_input {
        HeadInput::Reconstruction => config.reasoner.input_dim,
        HeadInput::PooledTokens => config.reasoner.latent_dim,
    };
    HeadConfig {
        input: config.head_input,
        input_dim,
        actions: data.n_actions,
        verb_noun: data.verb_noun,
    }
}

/// An order pre-trained reasoner and the log of its pre-training.
#[derive(Debug, Clone)]
pub struct Pretrained<T> {
    pub model: Model<T>,
    pub log: RunLog,
}

/// Initializes a reasoner from `config.seed` and order pre-trains it on
/// `data` for `config.pretrain_epochs` epochs.
pub fn pretrain_model<T: Scalar>(config: &TrainConfig, data: &Dataset) -> Result<Pretrained<T>> {
    config.validate()?;
    let mut model = Model::new(config.reasoner.clone(), None, config.seed)?;
    let mut log = RunLog::new();
    pretrain(&mut model, data, config, &mut log)?;
    Ok(Pretrained { model, log })
}

/// Everything a finished training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub log: RunLog,
    pub trace: Vec<EasinessTraceRow>,
    /// Final metrics on the validation data (test-time masks).
    pub report: Option<MetricReport>,
}

/// Trains heads and reasoner, starting from `pretrained` weights when
/// given and from a fresh initialization keyed by `config.seed` otherwise.
pub fn train_model<T: Scalar>(
    config: &TrainConfig,
    pretrained: Option<&Pretrained<T>>,
    train: &Dataset,
    val: Option<&Dataset>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let heads = head_config_for(config, train);
    let (model, log) = match pretrained {
        Some(p) => (Model::with_heads_from(&p.model, heads, config.seed)?, p.log.clone()),
        None => (Model::new(config.reasoner.clone(), Some(heads), config.seed)?, RunLog::new()),
    };
    let mut trainer = Trainer::new(config.clone(), model, train)?;
    trainer.log = log;
    trainer.fit(train, val)?;
    let report = trainer
        .log
        .rows()
        .last()
        .and_then(|r| r.val.clone());
    Ok(TrainOutcome {
        model: trainer.model,
        log: trainer.log,
        trace: trainer.trace,
        report,
    })
}

/// Pre-training (when `config.pretrain_epochs > 0`) followed by training.
pub fn run_training<T: Scalar>(config: &TrainConfig, train: &Dataset, val: Option<&Dataset>) -> Result<TrainOutcome<T>> {
    let pretrained = if config.pretrain_epochs > 0 {
        Some(pretrain_model(config, train)?)
    } else {
        None
    };
    train_model(config, pretrained.as_ref(), train, val)
}
