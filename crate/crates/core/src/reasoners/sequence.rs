use serde::{Deserialize, Serialize};

use crate::curriculum::{ACTION_FRAMES, FUTURE_FRAMES, MIN_SEQUENCE_LEN};
use crate::error::{DcrError, Result};

/// One training instance: `K x dim` frame features, row 0 being the latest
/// frame (index 1), plus its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub instance_id: String,
    frames: Vec<f32>,
    len: usize,
    dim: usize,
    pub action: usize,
    pub verb: Option<usize>,
    pub noun: Option<usize>,
    pub fps: u32,
}

impl FeatureSequence {
    pub fn new(
        instance_id: impl Into<String>,
        frames: Vec<f32>,
        dim: usize,
        action: usize,
        verb: Option<usize>,
        noun: Option<usize>,
    ) -> Result<Self> {
        if dim == 0 || frames.len() % dim != 0 {
            return Err(DcrError::Invalid(format!(
                "{} values do not form rows of width {dim}",
                frames.len()
            )));
        }
        let len = frames.len() / dim;
        if len < MIN_SEQUENCE_LEN {
            return Err(DcrError::Invalid(format!(
                "sequence of {len} frames is shorter than {MIN_SEQUENCE_LEN}"
            )));
        }
        if verb.is_some() != noun.is_some() {
            return Err(DcrError::Invalid("verb and noun labels come together".into()));
        }
        Ok(FeatureSequence {
            instance_id: instance_id.into(),
            frames,
            len,
            dim,
            action,
            verb,
            noun,
            fps: 4,
        })
    }

    /// Number of frames `K`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [f32] {
        &mut self.frames
    }

    /// Frame at 0-based row `r` (index `r + 1`).
    pub fn frame(&self, r: usize) -> &[f32] {
        &self.frames[r * self.dim..(r + 1) * self.dim]
    }

    pub fn n_action(&self) -> usize {
        ACTION_FRAMES
    }

    pub fn n_observed(&self) -> usize {
        self.len - FUTURE_FRAMES
    }

    /// Checks labels against class counts.
    pub fn check_labels(&self, actions: usize, verbs: Option<usize>, nouns: Option<usize>) -> Result<()> {
        let bad = |what: &str, v: usize, n: usize| {
            DcrError::Invalid(format!("{}: {what} label {v} outside [0, {n})", self.instance_id))
        };
        if self.action >= actions {
            return Err(bad("action", self.action, actions));
        }
        if let (Some(v), Some(n)) = (self.verb, verbs) {
            if v >= n {
                return Err(bad("verb", v, n));
            }
        }
        if let (Some(v), Some(n)) = (self.noun, nouns) {
            if v >= n {
                return Err(bad("noun", v, n));
            }
        }
        Ok(())
    }
}
