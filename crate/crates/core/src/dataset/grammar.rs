//! Synthetic anticipation benchmark driven by a Markov action grammar.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::file::{FeatureStream, Manifest, SegmentRecord, Vocabulary};
use super::window::DatasetLayout;
use crate::error::{DcrError, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPair {
    pub verb: usize,
    pub noun: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub verbs: usize,
    pub nouns: usize,
    /// Valid (verb, noun) pairs; the action class is the index in this list.
    pub actions: Vec<ActionPair>,
    /// Row-stochastic matrix over actions.
    pub transition: Vec<Vec<f64>>,
    /// Distribution of the first action; uniform when absent.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    pub dim: usize,
    /// Unit-norm feature prototype per action.
    pub prototypes: Vec<Vec<f64>>,
    /// Frames before a boundary that drift toward the next prototype.
    pub ramp: usize,
    /// Standard deviation of per-dimension Gaussian noise.
    pub noise: f64,
    /// Inclusive range of segment lengths in frames.
    pub segment_len: (usize, usize),
    pub train_segments: usize,
    pub val_segments: usize,
    pub seed: u64,
}

fn unit_vector(rng: &mut Stream, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl GrammarSpec {
    /// 4 verbs, 6 nouns, 12 valid actions, 64-dim features.
    pub fn desk(seed: u64) -> Self {
        Self::generate(seed, 4, 6, 12, 64)
    }

    /// Random grammar with `n_actions` distinct valid pairs. Every action
    /// has one dominant successor (a random cycle through all actions, so
    /// each is reachable) and two weaker ones.
    pub fn generate(seed: u64, verbs: usize, nouns: usize, n_actions: usize, dim: usize) -> Self {
        let mut rng = rng::keyed(seed, "grammar", 0, "");
        let mut pairs: Vec<ActionPair> = (0..verbs)
            .flat_map(|verb| (0..nouns).map(move |noun| ActionPair { verb, noun }))
            .collect();
        pairs.shuffle(&mut rng);
        pairs.truncate(n_actions);
        pairs.sort_by_key(|p| (p.verb, p.noun));

        let mut cycle: Vec<usize> = (0..n_actions).collect();
        cycle.shuffle(&mut rng);
        let mut transition = vec![vec![0.0; n_actions]; n_actions];
        for i in 0..n_actions {
            let from = cycle[i];
            let main = cycle[(i + 1) % n_actions];
            let mut others: Vec<usize> = (0..n_actions).filter(|&a| a != main).collect();
            others.shuffle(&mut rng);
            transition[from][main] += 0.6;
            transition[from][others[0]] += 0.25;
            transition[from][others[1]] += 0.15;
        }

        let verb_protos: Vec<Vec<f64>> = (0..verbs).map(|_| unit_vector(&mut rng, dim)).collect();
        let noun_protos: Vec<Vec<f64>> = (0..nouns).map(|_| unit_vector(&mut rng, dim)).collect();
        let prototypes = pairs
            .iter()
            .map(|p| {
                let own = unit_vector(&mut rng, dim);
                let v: Vec<f64> = (0..dim)
                    .map(|j| 0.4 * verb_protos[p.verb][j] + 0.4 * noun_protos[p.noun][j] + own[j])
                    .collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();

        GrammarSpec {
            verbs,
            nouns,
            actions: pairs,
            transition,
            initial: None,
            dim,
            prototypes,
            // Four gap frames plus one observed frame: the observation keeps
            // only a faint cue of the next action.
            ramp: 5,
            noise: 0.12,
            segment_len: (8, 14),
            train_segments: 4000,
            val_segments: 1000,
            seed,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        let cfg = |m: String| Err(DcrError::Config(m));
        if n == 0 || self.dim == 0 {
            return cfg("grammar needs actions and a positive feature dimension".into());
        }
        if self.actions.iter().any(|p| p.verb >= self.verbs || p.noun >= self.nouns) {
            return cfg("action pair outside verb/noun vocabulary".into());
        }
        if self.transition.len() != n || self.transition.iter().any(|r| r.len() != n) {
            return cfg(format!("transition matrix must be {n}x{n}"));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return cfg(format!("transition row {i} is not a distribution"));
            }
        }
        if let Some(init) = &self.initial {
            if init.len() != n || (init.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return cfg("initial distribution is malformed".into());
            }
        }
        if self.prototypes.len() != n || self.prototypes.iter().any(|p| p.len() != self.dim) {
            return cfg("one prototype of length dim per action required".into());
        }
        let (lo, hi) = self.segment_len;
        if lo < 4 || hi < lo {
            return cfg(format!("segment lengths {lo}..={hi} invalid, need at least 4 frames"));
        }
        if !(self.noise >= 0.0) {
            return cfg("noise must be non-negative".into());
        }
        let unreachable = self.unreachable_actions();
        if !unreachable.is_empty() {
            return cfg(format!("actions {unreachable:?} are unreachable"));
        }
        Ok(())
    }

    /// Actions never visited from the initial distribution's support.
    pub fn unreachable_actions(&self) -> Vec<usize> {
        let n = self.actions.len();
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n)
            .filter(|&a| self.initial.as_ref().is_none_or(|p| p[a] > 0.0))
            .collect();
        for &a in &queue {
            seen[a] = true;
        }
        while let Some(a) = queue.pop_front() {
            for (b, &p) in self.transition[a].iter().enumerate() {
                if p > 0.0 && !seen[b] {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        (0..n).filter(|&a| !seen[a]).collect()
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            verbs: (0..self.verbs).map(|v| format!("verb{v}")).collect(),
            nouns: (0..self.nouns).map(|v| format!("noun{v}")).collect(),
            actions: self.actions.clone(),
        }
    }
}

fn draw(rng: &mut Stream, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Emits a chronological feature stream for one split: unlisted lead-in
/// segments first, so every listed segment has the history its window
/// needs, then the split's segments.
///
/// Frames inside a segment are the action prototype under a smooth
/// envelope plus noise; the last `ramp` frames blend linearly toward the
/// next action's prototype.
pub fn generate_synthetic(spec: &GrammarSpec, layout: &DatasetLayout, split: Split) -> Result<(FeatureStream, Manifest)> {
    spec.validate()?;
    layout.validate()?;
    let history = layout.history();
    let segments = match split {
        Split::Train => spec.train_segments,
        Split::Val => spec.val_segments,
    };
    let mut rng = rng::keyed(spec.seed, "synthetic", 0, split.key());
    let n = spec.n_actions();
    let uniform = vec![1.0 / n as f64; n];
    let init = spec.initial.as_deref().unwrap_or(&uniform);

    let lead = history.div_ceil(spec.segment_len.0);
    let total = lead + segments;
    let mut labels = Vec::with_capacity(total + 1);
    labels.push(draw(&mut rng, init));
    for i in 0..total {
        let next = draw(&mut rng, &spec.transition[labels[i]]);
        labels.push(next);
    }
    let lengths: Vec<usize> = (0..total)
        .map(|_| rng.random_range(spec.segment_len.0..=spec.segment_len.1))
        .collect();

    let normal = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| DcrError::Config(e.to_string()))?;
    let dim = spec.dim;
    let mut frames: Vec<f32> = Vec::with_capacity(lengths.iter().sum::<usize>() * dim);
    let mut records = Vec::with_capacity(segments);
    let mut start = 0usize;
    for (s, &len) in lengths.iter().enumerate() {
        let cur = &spec.prototypes[labels[s]];
        let next = &spec.prototypes[labels[s + 1]];
        let ramp = spec.ramp.min(len);
        for t in 0..len {
            let envelope = 0.75 + 0.25 * (std::f64::consts::PI * (t as f64 + 0.5) / len as f64).sin();
            let alpha = if t + ramp >= len {
                (t + ramp + 1 - len) as f64 / (ramp + 1) as f64
            } else {
                0.0
            };
            for j in 0..dim {
                let clean = (1.0 - alpha) * envelope * cur[j] + alpha * next[j];
                let noise = if spec.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                frames.push((clean + noise) as f32);
            }
        }
        if s >= lead {
            let a = labels[s];
            records.push(SegmentRecord {
                instance_id: format!("{}-{:06}", split.key(), s - lead),
                start_frame: start,
                action: a,
                verb: Some(spec.actions[a].verb),
                noun: Some(spec.actions[a].noun),
            });
        }
        start += len;
    }
    let frame_count = start;
    let stream = FeatureStream::new(dim, layout.fps, frames)?;
    let manifest = Manifest {
        schema_version: Manifest::SCHEMA_VERSION,
        dim,
        fps: layout.fps,
        frame_count,
        segments: records,
        vocabulary: spec.vocabulary(),
    };
    Ok((stream, manifest))
}
