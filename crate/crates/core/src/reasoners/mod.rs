//! Reasoners map a masked `K x D` sequence to reconstructions `z` and
//! latent tokens. Both architectures share [`Reasoner`].
//!
//! Batches are stacked row-wise: instance `b`, row `r` sits at row
//! `b * K + r` of a `[B * K, D]` matrix. Masked frames never enter the
//! graph: the transformer sees zeros, the LSTM the copy-forward
//! imputation.

mod checkpoint;
mod lstm;
mod nn;
mod sequence;
mod transformer;

use std::fmt;
use std::str::FromStr;

use dcr_tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, TensorEntry,
    CHECKPOINT_MAGIC,
};
pub use lstm::LstmParams;
pub use nn::{dropout_mask, sinusoidal_table, LayerNorm, Linear};
pub use sequence::FeatureSequence;
pub use transformer::{TransformerLayer, TransformerParams};

use crate::curriculum::VisibilityMask;
use crate::error::{DcrError, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Transformer,
    Lstm,
}

impl FromStr for Architecture {
    type Err = DcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Architecture::Transformer),
            "lstm" => Ok(Architecture::Lstm),
            other => Err(DcrError::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Transformer => "transformer",
            Architecture::Lstm => "lstm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerConfig {
    pub architecture: Architecture,
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub input_dim: usize,
    /// Rows in the learned positional table; must be at least `K`.
    pub max_len: usize,
}

impl ReasonerConfig {
    pub fn transformer(input_dim: usize, latent_dim: usize, layers: usize, heads: usize) -> Self {
        ReasonerConfig {
            architecture: Architecture::Transformer,
            latent_dim,
            layers,
            heads,
            ff_mult: 4,
            dropout: 0.1,
            input_dim,
            max_len: 64,
        }
    }

    pub fn lstm(input_dim: usize, latent_dim: usize) -> Self {
        ReasonerConfig {
            architecture: Architecture::Lstm,
            latent_dim,
            layers: 1,
            heads: 1,
            ff_mult: 4,
            dropout: 0.0,
            input_dim,
            max_len: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DcrError::Config(m));
        if self.latent_dim == 0 || self.input_dim == 0 || self.layers == 0 {
            return bad("latent_dim, input_dim and layers must be positive".into());
        }
        if self.heads == 0 || self.latent_dim % self.heads != 0 {
            return bad(format!(
                "latent_dim {} is not divisible by {} heads",
                self.latent_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.architecture == Architecture::Lstm && self.layers != 1 {
            return bad("the LSTM reasoner has exactly one layer".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReasonerParams {
    Transformer(TransformerParams),
    Lstm(LstmParams),
}

/// A reasoner's architecture and the ids of its parameters in a
/// [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reasoner {
    pub config: ReasonerConfig,
    pub params: ReasonerParams,
}

/// Graph handles produced by a forward pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[B * K, D]`.
    pub z: Var,
    /// `[B * K, latent]`.
    pub tokens: Var,
}

/// Values of a forward pass over a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerOutput<T> {
    /// `[K, D]`.
    pub z: Tensor<T>,
    /// `[K, latent]`.
    pub latent_tokens: Tensor<T>,
}

impl Reasoner {
    pub fn new<T: Scalar>(config: ReasonerConfig, store: &mut ParamStore<T>, rng: &mut Stream) -> Result<Self> {
        config.validate()?;
        let params = match config.architecture {
            Architecture::Transformer => ReasonerParams::Transformer(TransformerParams::new(&config, store, rng)),
            Architecture::Lstm => ReasonerParams::Lstm(LstmParams::new(&config, store, rng)),
        };
        Ok(Reasoner { config, params })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    /// Builds the reasoner input for a batch: visible frames pass through,
    /// masked ones are zeroed (transformer) or imputed (LSTM).
    pub fn prepare_input<T: Scalar>(&self, seqs: &[&FeatureSequence], masks: &[&VisibilityMask]) -> Result<Tensor<T>> {
        let first = seqs.first().ok_or_else(|| DcrError::Invalid("empty batch".into()))?;
        let (k, d) = (first.len(), first.dim());
        if d != self.config.input_dim {
            return Err(DcrError::Invalid(format!(
                "feature dim {d} does not match reasoner input dim {}",
                self.config.input_dim
            )));
        }
        if seqs.len() != masks.len() {
            return Err(DcrError::Invalid("one mask per sequence required".into()));
        }
        let mut data = Vec::with_capacity(seqs.len() * k * d);
        for (seq, mask) in seqs.iter().zip(masks) {
            if seq.len() != k || seq.dim() != d || mask.len() != k {
                return Err(DcrError::Invalid(format!(
                    "{}: batch members need identical K and D and a matching mask",
                    seq.instance_id
                )));
            }
            let rows = match self.config.architecture {
                Architecture::Transformer => zero_masked(seq.frames(), d, mask.beta()),
                Architecture::Lstm => impute_masked(seq.frames(), d, mask.beta())?,
            };
            data.extend(rows.into_iter().map(|v| T::lit(v as f64)));
        }
        Ok(Tensor::new(vec![seqs.len() * k, d], data)?)
    }

    /// Forward pass over a prepared `[B * K, D]` input. `positional` is
    /// honoured by the transformer only; `dropout` enables dropout with the
    /// given stream.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: Var,
        k: usize,
        positional: bool,
        dropout: Option<&mut Stream>,
    ) -> Result<ForwardVars> {
        match &self.params {
            ReasonerParams::Transformer(p) => p.forward(&self.config, g, store, input, k, positional, dropout),
            ReasonerParams::Lstm(p) => p.forward(&self.config, g, store, input, k),
        }
    }

    /// Id of the learned positional table, if the architecture has one.
    pub fn positional_table(&self) -> Option<dcr_tensor::ParamId> {
        match &self.params {
            ReasonerParams::Transformer(p) => Some(p.positional),
            ReasonerParams::Lstm(_) => None,
        }
    }

    fn single<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        seq: &FeatureSequence,
        mask: &VisibilityMask,
        positional: bool,
    ) -> Result<ReasonerOutput<T>> {
        let input = self.prepare_input(&[seq], &[mask])?;
        let mut g = Graph::new();
        let x = g.constant(input);
        let out = self.forward(&mut g, store, x, seq.len(), positional, None)?;
        Ok(ReasonerOutput {
            z: g.value(out.z).clone(),
            latent_tokens: g.value(out.tokens).clone(),
        })
    }
}

/// Transformer reconstruction of one sequence without dropout.
pub fn transformer_forward<T: Scalar>(
    reasoner: &Reasoner,
    store: &ParamStore<T>,
    seq: &FeatureSequence,
    mask: &VisibilityMask,
    use_positional_encoding: bool,
) -> Result<ReasonerOutput<T>> {
    if reasoner.architecture() != Architecture::Transformer {
        return Err(DcrError::Invalid("transformer_forward needs a transformer reasoner".into()));
    }
    reasoner.single(store, seq, mask, use_positional_encoding)
}

/// LSTM reconstruction of one sequence.
pub fn lstm_forward<T: Scalar>(
    reasoner: &Reasoner,
    store: &ParamStore<T>,
    seq: &FeatureSequence,
    mask: &VisibilityMask,
) -> Result<ReasonerOutput<T>> {
    if reasoner.architecture() != Architecture::Lstm {
        return Err(DcrError::Invalid("lstm_forward needs an LSTM reasoner".into()));
    }
    reasoner.single(store, seq, mask, false)
}

fn zero_masked(frames: &[f32], dim: usize, beta: &[bool]) -> Vec<f32> {
    let mut out = frames.to_vec();
    for (r, &b) in beta.iter().enumerate() {
        if !b {
            out[r * dim..(r + 1) * dim].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

/// Replaces every masked row `i` by the nearest visible row `j > i`, the
/// latest visible frame that is earlier in time. Visible rows are kept.
pub fn impute_masked(frames: &[f32], dim: usize, beta: &[bool]) -> Result<Vec<f32>> {
    let k = beta.len();
    if dim == 0 || frames.len() != k * dim {
        return Err(DcrError::Invalid(format!(
            "{} values do not match {k} frames of width {dim}",
            frames.len()
        )));
    }
    if !beta.iter().any(|&b| b) {
        return Err(DcrError::Invalid("every frame is masked; nothing to copy from".into()));
    }
    let mut out = frames.to_vec();
    let mut source: Option<usize> = None;
    for i in (0..k).rev() {
        if beta[i] {
            source = Some(i);
        } else if let Some(j) = source {
            out.copy_within(j * dim..(j + 1) * dim, i * dim);
        } else {
            return Err(DcrError::Invalid(format!(
                "frame {} is masked and no earlier frame is visible",
                i + 1
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_forward_examples() {
        let abc = [1.0, 2.0, 3.0];
        assert_eq!(impute_masked(&abc, 1, &[false, true, true]).unwrap(), vec![2.0, 2.0, 3.0]);
        assert_eq!(impute_masked(&abc, 1, &[true, true, true]).unwrap(), abc.to_vec());
        assert_eq!(impute_masked(&abc, 1, &[false, false, true]).unwrap(), vec![3.0, 3.0, 3.0]);
        assert!(impute_masked(&abc, 1, &[false, false, false]).is_err());
    }

    #[test]
    fn config_checks_heads() {
        let mut c = ReasonerConfig::transformer(8, 30, 2, 4);
        assert!(c.validate().is_err());
        c.latent_dim = 32;
        c.validate().unwrap();
    }
}
