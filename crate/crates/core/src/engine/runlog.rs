use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::{EasinessStats, Phase};
use crate::error::{DcrError, Result};
use crate::objectives::{LossComponents, MetricReport};

/// Summary of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRow {
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-instance loss components (training phase).
    pub losses: LossComponents,
    pub total: f64,
    pub order_loss: Option<f64>,
    pub position_accuracy: Option<f64>,
    pub val: Option<MetricReport>,
    pub easiness: Option<EasinessStats>,
    pub wall_ms: u64,
}

/// Append-only epoch log: pre-training rows first, then training rows,
/// each with strictly increasing epochs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    rows: Vec<RunLogRow>,
}

fn phase_rank(p: Phase) -> u8 {
    match p {
        Phase::Pretrain => 0,
        Phase::Train => 1,
        Phase::Eval => 2,
    }
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: RunLogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            let prev = (phase_rank(last.phase), last.epoch);
            let next = (phase_rank(row.phase), row.epoch);
            if next <= prev {
                return Err(DcrError::Invalid(format!(
                    "run log rows must be ordered: {:?} epoch {} after {:?} epoch {}",
                    row.phase, row.epoch, last.phase, last.epoch
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[RunLogRow] {
        &self.rows
    }

    pub fn phase_rows(&self, phase: Phase) -> impl Iterator<Item = &RunLogRow> {
        self.rows.iter().filter(move |r| r.phase == phase)
    }

    /// Copy with wall-clock times zeroed, the part of a log that must be
    /// reproducible.
    pub fn without_timing(&self) -> RunLog {
        RunLog {
            rows: self
                .rows
                .iter()
                .map(|r| RunLogRow { wall_ms: 0, ..r.clone() })
                .collect(),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| DcrError::json(path, e))?;
        fs::write(path, json).map_err(|e| DcrError::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| DcrError::io(path, e))?;
        serde_json::from_slice(&text).map_err(|e| DcrError::json(path, e))
    }

    /// Flat CSV view, one line per row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = [
            "phase", "epoch", "lr", "cls_verb", "cls_noun", "cls_action", "rec", "total", "order_loss",
            "position_accuracy", "val_top1", "val_top5", "val_recall5", "t_min", "t_mean", "t_max", "wall_ms",
        ];
        let csv_err = |e: csv::Error| DcrError::Invalid(format!("csv: {e}"));
        w.write_record(header).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let val = r.val.as_ref().and_then(|v| v.action().copied());
            let phase = serde_json::to_value(r.phase)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            w.write_record([
                phase,
                r.epoch.to_string(),
                r.lr.to_string(),
                r.losses.cls_verb.to_string(),
                r.losses.cls_noun.to_string(),
                r.losses.cls_action.to_string(),
                r.losses.rec.to_string(),
                r.total.to_string(),
                opt(r.order_loss),
                opt(r.position_accuracy),
                opt(val.map(|m| m.top1)),
                opt(val.map(|m| m.top5)),
                opt(val.map(|m| m.mean_recall5)),
                opt(r.easiness.map(|e| e.min)),
                opt(r.easiness.map(|e| e.mean)),
                opt(r.easiness.map(|e| e.max)),
                r.wall_ms.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| DcrError::Invalid(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| DcrError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(phase: Phase, epoch: usize) -> RunLogRow {
        RunLogRow {
            phase,
            epoch,
            lr: 0.1,
            losses: LossComponents::default(),
            total: 0.0,
            order_loss: None,
            position_accuracy: None,
            val: None,
            easiness: None,
            wall_ms: 7,
        }
    }

    #[test]
    fn rows_must_advance() {
        let mut log = RunLog::new();
        log.push(row(Phase::Pretrain, 1)).unwrap();
        log.push(row(Phase::Train, 1)).unwrap();
        assert!(log.push(row(Phase::Train, 1)).is_err());
        assert!(log.push(row(Phase::Pretrain, 2)).is_err());
        log.push(row(Phase::Train, 2)).unwrap();
        assert_eq!(log.without_timing().rows()[0].wall_ms, 0);
        assert_eq!(log.to_csv().unwrap().lines().count(), 4);
    }
}
