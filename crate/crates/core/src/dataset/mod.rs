//! Synthetic data, window assembly and the on-disk feature format.

mod file;
mod grammar;
mod window;

pub use file::{
    decode_stream, encode_stream, manifest_path, read_feature_file, write_feature_file, FeatureStream, Manifest,
    SegmentRecord, Vocabulary, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use grammar::{generate_synthetic, ActionPair, GrammarSpec, Split};
pub use window::{assemble_all, assemble_window, DatasetLayout};

use crate::error::Result;
use crate::reasoners::FeatureSequence;

/// Windowed instances of one split plus the label spaces they index.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<FeatureSequence>,
    pub n_actions: usize,
    /// `(verbs, nouns)` when the data carries them.
    pub verb_noun: Option<(usize, usize)>,
}

impl Dataset {
    pub fn from_stream(stream: &FeatureStream, manifest: &Manifest, layout: &DatasetLayout) -> Result<Self> {
        let sequences = assemble_all(stream, manifest, layout)?;
        Ok(Dataset {
            sequences,
            n_actions: manifest.n_actions(),
            verb_noun: manifest
                .has_verb_noun()
                .then(|| (manifest.vocabulary.verbs.len(), manifest.vocabulary.nouns.len())),
        })
    }

    /// Generates and windows one split of the synthetic benchmark.
    pub fn synthetic(spec: &GrammarSpec, layout: &DatasetLayout, split: Split) -> Result<Self> {
        let (stream, manifest) = generate_synthetic(spec, layout, split)?;
        Self::from_stream(&stream, &manifest, layout)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn k(&self) -> Option<usize> {
        self.sequences.first().map(|s| s.len())
    }

    pub fn dim(&self) -> Option<usize> {
        self.sequences.first().map(|s| s.dim())
    }

    /// Action label histogram.
    pub fn action_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_actions];
        for s in &self.sequences {
            c[s.action] += 1;
        }
        c
    }

    pub fn verb_counts(&self) -> Option<Vec<usize>> {
        let (v, _) = self.verb_noun?;
        let mut c = vec![0; v];
        for s in &self.sequences {
            c[s.verb?] += 1;
        }
        Some(c)
    }

    pub fn noun_counts(&self) -> Option<Vec<usize>> {
        let (_, n) = self.verb_noun?;
        let mut c = vec![0; n];
        for s in &self.sequences {
            c[s.noun?] += 1;
        }
        Some(c)
    }

    /// First `n` instances, for quick runs.
    pub fn truncated(&self, n: usize) -> Self {
        Dataset {
            sequences: self.sequences.iter().take(n).cloned().collect(),
            n_actions: self.n_actions,
            verb_noun: self.verb_noun,
        }
    }
}
