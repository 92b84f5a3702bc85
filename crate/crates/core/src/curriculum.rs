//! Visibility masks, reconstruction quality and easiness scheduling.
//!
//! Frame indices in this module's docs are 1-based and reverse
//! chronological: index 1 is the latest frame. In code, row `r` holds index
//! `r + 1`. Indices 1..=4 are the action frames, 5..=8 the anticipation gap
//! and 9..=K the observation window.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DcrError, Result};
use crate::rng::Stream;

pub const ACTION_FRAMES: usize = 4;
pub const GAP_FRAMES: usize = 4;
/// Frames ahead of the observation window that only training may see.
pub const FUTURE_FRAMES: usize = ACTION_FRAMES + GAP_FRAMES;
pub const MIN_SEQUENCE_LEN: usize = FUTURE_FRAMES + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Train,
    Eval,
}

/// Per-frame visibility `beta` with the phase that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityMask {
    beta: Vec<bool>,
    phase: Phase,
    /// Uniform draws for indices 5..=8, empty unless sampled in training.
    rho_draws: Vec<f64>,
}

impl VisibilityMask {
    fn check_len(k: usize) -> Result<()> {
        if k < MIN_SEQUENCE_LEN {
            return Err(DcrError::Invalid(format!(
                "sequence length {k} below minimum {MIN_SEQUENCE_LEN}"
            )));
        }
        Ok(())
    }

    /// Everything visible.
    pub fn pretrain(k: usize) -> Result<Self> {
        Self::check_len(k)?;
        Ok(VisibilityMask {
            beta: vec![true; k],
            phase: Phase::Pretrain,
            rho_draws: Vec::new(),
        })
    }

    /// Test-time layout: only the observation window is visible.
    pub fn eval(k: usize) -> Result<Self> {
        Self::check_len(k)?;
        Ok(VisibilityMask {
            beta: (0..k).map(|r| r >= FUTURE_FRAMES).collect(),
            phase: Phase::Eval,
            rho_draws: Vec::new(),
        })
    }

    /// Observation window plus the `revealed` gap frames closest to it
    /// (index 8, then 7, ...). Used to shorten the anticipation time.
    pub fn with_revealed_gap(k: usize, revealed: usize) -> Result<Self> {
        Self::check_len(k)?;
        if revealed > GAP_FRAMES {
            return Err(DcrError::Invalid(format!(
                "cannot reveal {revealed} of {GAP_FRAMES} gap frames"
            )));
        }
        let first_visible = FUTURE_FRAMES - revealed;
        Ok(VisibilityMask {
            beta: (0..k).map(|r| r >= first_visible).collect(),
            phase: if revealed == 0 { Phase::Eval } else { Phase::Train },
            rho_draws: Vec::new(),
        })
    }

    /// Builds a training-phase mask from explicit gap visibility for
    /// indices 5..=8.
    pub fn train_from_gap(k: usize, gap: [bool; GAP_FRAMES]) -> Result<Self> {
        Self::check_len(k)?;
        let beta = (0..k)
            .map(|r| match r {
                r if r < ACTION_FRAMES => false,
                r if r < FUTURE_FRAMES => gap[r - ACTION_FRAMES],
                _ => true,
            })
            .collect();
        Ok(VisibilityMask {
            beta,
            phase: Phase::Train,
            rho_draws: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self) -> &[bool] {
        &self.beta
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn rho_draws(&self) -> &[f64] {
        &self.rho_draws
    }

    pub fn visible(&self, row: usize) -> bool {
        self.beta[row]
    }

    pub fn visible_count(&self) -> usize {
        self.beta.iter().filter(|&&b| b).count()
    }

    /// Row-aligned `1 - beta` weights.
    pub fn hidden_weights(&self) -> Vec<f64> {
        self.beta.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect()
    }

    /// Whether the mask satisfies the layout its phase requires.
    pub fn satisfies_phase_layout(&self) -> bool {
        let k = self.beta.len();
        if k < MIN_SEQUENCE_LEN {
            return false;
        }
        let obs_visible = self.beta[FUTURE_FRAMES..].iter().all(|&b| b);
        match self.phase {
            Phase::Pretrain => self.beta.iter().all(|&b| b),
            Phase::Eval => obs_visible && self.beta[..FUTURE_FRAMES].iter().all(|&b| !b),
            Phase::Train => obs_visible && self.beta[..ACTION_FRAMES].iter().all(|&b| !b),
        }
    }
}

/// Draws a visibility mask. In training, gap index `i` is visible iff
/// `easiness > rho_i` with `rho_i ~ U[0, 1)` drawn from `stream`.
pub fn sample_mask(k: usize, easiness: f64, phase: Phase, stream: &mut Stream) -> Result<VisibilityMask> {
    if !(0.0..=1.0).contains(&easiness) {
        return Err(DcrError::Invalid(format!("easiness {easiness} outside [0, 1]")));
    }
    match phase {
        Phase::Pretrain => VisibilityMask::pretrain(k),
        Phase::Eval => VisibilityMask::eval(k),
        Phase::Train => {
            let rho: Vec<f64> = (0..GAP_FRAMES).map(|_| stream.random::<f64>()).collect();
            let mut gap = [false; GAP_FRAMES];
            for (g, &r) in gap.iter_mut().zip(&rho) {
                *g = easiness > r;
            }
            let mut mask = VisibilityMask::train_from_gap(k, gap)?;
            mask.rho_draws = rho;
            Ok(mask)
        }
    }
}

/// Index (1-based) of the earliest-in-index visible frame at or beyond 5.
pub fn first_visible_context(mask: &VisibilityMask) -> Option<usize> {
    (ACTION_FRAMES..mask.len())
        .find(|&r| mask.visible(r))
        .map(|r| r + 1)
}

/// Reconstruction error of the frame one second after the earliest
/// visible context frame `k`: `|| x_{k-4} - z_{k-4} ||_2`.
///
/// `x` and `z` are `K x dim`, row-major.
pub fn reconstruction_quality(x: &[f32], z: &[f32], dim: usize, mask: &VisibilityMask) -> Result<f64> {
    if mask.phase() == Phase::Pretrain {
        return Err(DcrError::Invalid(
            "reconstruction quality needs a training or evaluation mask".into(),
        ));
    }
    if x.len() != z.len() || x.len() != mask.len() * dim {
        return Err(DcrError::Invalid("frame matrices do not match mask".into()));
    }
    let k = first_visible_context(mask)
        .ok_or_else(|| DcrError::Invalid("no visible frame at index 5 or later".into()))?;
    let row = k - 1 - ACTION_FRAMES;
    let range = row * dim..(row + 1) * dim;
    let sq: f64 = x[range.clone()]
        .iter()
        .zip(&z[range])
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Per-instance easiness driven by the decline of reconstruction error.
    InstanceLocal,
    Constant(f64),
    Linear,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Per-epoch factor of the exponential schedule.
    pub gamma: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::InstanceLocal,
            gamma: 0.95,
            gamma_min: 0.95,
            gamma_max: 1.0,
        }
    }
}

impl ScheduleSpec {
    pub fn with_kind(kind: ScheduleKind) -> Self {
        ScheduleSpec {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma_min && self.gamma_min <= self.gamma_max && self.gamma_max <= 1.0) {
            return Err(DcrError::Config(format!(
                "need 0 < gamma_min <= gamma_max <= 1, got {} and {}",
                self.gamma_min, self.gamma_max
            )));
        }
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(DcrError::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if let ScheduleKind::Constant(v) = self.kind {
            if !(0.0..=1.0).contains(&v) {
                return Err(DcrError::Config(format!("constant easiness {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Clamped decline factor `Q_{e-1} / Q_{e-2}`. A zero denominator gives
    /// `gamma_max`.
    pub fn decline_factor(&self, q_prev: f64, q_prev2: f64) -> f64 {
        if q_prev2 == 0.0 || !q_prev.is_finite() || !q_prev2.is_finite() {
            return self.gamma_max;
        }
        (q_prev / q_prev2).max(self.gamma_min).min(self.gamma_max)
    }
}

impl FromStr for ScheduleKind {
    type Err = DcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instance" | "instance_local" => Ok(ScheduleKind::InstanceLocal),
            "linear" => Ok(ScheduleKind::Linear),
            "exponential" => Ok(ScheduleKind::Exponential),
            other => match other.strip_prefix("constant:") {
                Some(v) => v
                    .parse::<f64>()
                    .map(ScheduleKind::Constant)
                    .map_err(|e| DcrError::Config(format!("bad constant easiness {v:?}: {e}"))),
                None => Err(DcrError::Config(format!("unknown schedule {other:?}"))),
            },
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::InstanceLocal => write!(f, "instance"),
            ScheduleKind::Constant(v) => write!(f, "constant:{v}"),
            ScheduleKind::Linear => write!(f, "linear"),
            ScheduleKind::Exponential => write!(f, "exponential"),
        }
    }
}

/// Easiness of a global schedule at epoch `epoch` of `total` (1-based).
/// `None` for the instance-local schedule, which has no global value.
pub fn global_easiness(spec: &ScheduleSpec, epoch: usize, total: usize) -> Option<f64> {
    let e = epoch.max(1);
    match spec.kind {
        ScheduleKind::InstanceLocal => None,
        ScheduleKind::Constant(v) => Some(v),
        ScheduleKind::Linear => {
            if total <= 1 {
                Some(1.0)
            } else {
                Some((1.0 - (e - 1) as f64 / (total - 1) as f64).clamp(0.0, 1.0))
            }
        }
        ScheduleKind::Exponential => Some(spec.gamma.powi((e - 1) as i32)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub easiness: f64,
    /// Quality recorded during the epoch in progress.
    pub q_current: Option<f64>,
    /// `Q_{e-1}`.
    pub q_prev: Option<f64>,
    /// `Q_{e-2}`.
    pub q_prev2: Option<f64>,
    pub last_updated_epoch: usize,
}

impl BankEntry {
    fn fresh() -> Self {
        BankEntry {
            easiness: 1.0,
            q_current: None,
            q_prev: None,
            q_prev2: None,
            last_updated_epoch: 1,
        }
    }

    fn roll(&mut self, next_epoch: usize, spec: &ScheduleSpec) {
        if let Some(q) = self.q_current.take() {
            self.q_prev2 = self.q_prev;
            self.q_prev = Some(q);
        }
        if next_epoch >= 3 {
            if let (Some(q1), Some(q2)) = (self.q_prev, self.q_prev2) {
                self.easiness *= spec.decline_factor(q1, q2);
                self.last_updated_epoch = next_epoch;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EasinessStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Per-instance memory of easiness and the last two reconstruction
/// qualities.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EasinessBank {
    entries: BTreeMap<String, BankEntry>,
}

impl EasinessBank {
    pub fn new<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        EasinessBank {
            entries: ids
                .into_iter()
                .map(|id| (id.to_string(), BankEntry::fresh()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: &str) -> Option<&BankEntry> {
        self.entries.get(id)
    }

    pub fn easiness(&self, id: &str) -> f64 {
        self.entries.get(id).map_or(1.0, |e| e.easiness)
    }

    /// Stores the epoch's quality for `id`; a later call in the same epoch
    /// overwrites it.
    pub fn record_quality(&mut self, id: &str, q: f64) {
        self.entries
            .entry(id.to_string())
            .or_insert_with(BankEntry::fresh)
            .q_current = Some(q);
    }

    /// Epoch-boundary sweep: commits this epoch's qualities and computes the
    /// easiness for `next_epoch`. Epochs 1 and 2 always have easiness 1.
    pub fn advance(&mut self, next_epoch: usize, spec: &ScheduleSpec) {
        for e in self.entries.values_mut() {
            e.roll(next_epoch, spec);
        }
    }

    /// Records `q_new` as the quality of epoch `epoch` for one instance and
    /// returns its easiness for epoch `epoch + 1`.
    pub fn update_easiness(&mut self, id: &str, q_new: f64, epoch: usize, spec: &ScheduleSpec) -> f64 {
        let entry = self
            .entries
            .entry(id.to_string())
            .or_insert_with(BankEntry::fresh);
        entry.q_current = Some(q_new);
        entry.roll(epoch + 1, spec);
        entry.easiness
    }

    pub fn stats(&self) -> Option<EasinessStats> {
        if self.entries.is_empty() {
            return None;
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for e in self.entries.values() {
            min = min.min(e.easiness);
            max = max.max(e.easiness);
            sum += e.easiness;
        }
        Some(EasinessStats {
            min,
            mean: sum / self.entries.len() as f64,
            max,
        })
    }

    /// Trace rows for epoch `epoch`: current easiness and the most recent
    /// quality of every instance.
    pub fn trace_rows(&self, epoch: usize) -> Vec<EasinessTraceRow> {
        self.entries
            .iter()
            .map(|(id, e)| EasinessTraceRow {
                epoch,
                instance_id: id.clone(),
                t: e.easiness,
                q: e.q_current.or(e.q_prev),
            })
            .collect()
    }
}

/// One line of the easiness trace CSV: `epoch,instance_id,T,Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EasinessTraceRow {
    pub epoch: usize,
    pub instance_id: String,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "Q")]
    pub q: Option<f64>,
}

pub fn write_trace_csv<W: Write>(rows: &[EasinessTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| DcrError::Invalid(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| DcrError::io("<csv>", e))?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<EasinessTraceRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| DcrError::Invalid(format!("csv: {e}")))
}

/// Min/mean/max easiness per epoch from a trace.
pub fn summarize_trace(rows: &[EasinessTraceRow]) -> Vec<(usize, EasinessStats)> {
    let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_epoch.entry(r.epoch).or_default().push(r.t);
    }
    by_epoch
        .into_iter()
        .map(|(e, ts)| {
            let min = ts.iter().copied().fold(f64::INFINITY, f64::min);
            let max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = ts.iter().sum::<f64>() / ts.len() as f64;
            (e, EasinessStats { min, mean, max })
        })
        .collect()
}
