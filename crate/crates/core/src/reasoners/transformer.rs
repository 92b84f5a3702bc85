use dcr_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

use super::nn::{dropout_mask, sinusoidal_table, LayerNorm, Linear};
use super::{ForwardVars, ReasonerConfig};
use crate::error::{DcrError, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub ln_attn: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub ln_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

/// Pre-norm encoder between a linear encoder and a shared linear decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub encoder: Linear,
    pub positional: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub ln_final: LayerNorm,
    pub decoder: Linear,
}

impl TransformerParams {
    pub fn new<T: Scalar>(cfg: &ReasonerConfig, store: &mut ParamStore<T>, rng: &mut Stream) -> Self {
        let (d, l) = (cfg.input_dim, cfg.latent_dim);
        let encoder = Linear::new(store, "encoder", d, l, rng);
        let table = sinusoidal_table(cfg.max_len, l).into_iter().map(T::lit).collect();
        let positional = store.add("positional", Tensor::new(vec![cfg.max_len, l], table).unwrap());
        let layers = (0..cfg.layers)
            .map(|i| {
                let n = |s: &str| format!("layer{i}.{s}");
                TransformerLayer {
                    ln_attn: LayerNorm::new(store, &n("ln_attn"), l),
                    q: Linear::new(store, &n("q"), l, l, rng),
                    k: Linear::new(store, &n("k"), l, l, rng),
                    v: Linear::new(store, &n("v"), l, l, rng),
                    out: Linear::new(store, &n("out"), l, l, rng),
                    ln_ff: LayerNorm::new(store, &n("ln_ff"), l),
                    ff_in: Linear::new(store, &n("ff_in"), l, l * cfg.ff_mult, rng),
                    ff_out: Linear::new(store, &n("ff_out"), l * cfg.ff_mult, l, rng),
                }
            })
            .collect();
        let ln_final = LayerNorm::new(store, "ln_final", l);
        let decoder = Linear::new(store, "decoder", l, d, rng);
        TransformerParams {
            encoder,
            positional,
            layers,
            ln_final,
            decoder,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn forward<T: Scalar>(
        &self,
        cfg: &ReasonerConfig,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: Var,
        k: usize,
        positional: bool,
        mut dropout: Option<&mut Stream>,
    ) -> Result<ForwardVars> {
        let rows = g.shape(input)[0];
        if k == 0 || rows % k != 0 {
            return Err(DcrError::Invalid(format!("{rows} rows do not split into length-{k} sequences")));
        }
        if k > cfg.max_len {
            return Err(DcrError::Invalid(format!(
                "sequence length {k} exceeds positional table length {}",
                cfg.max_len
            )));
        }
        let blocks = rows / k;
        let rate = cfg.dropout;
        let mut h = self.encoder.forward(g, store, input)?;
        if positional {
            let table = g.param(store, self.positional);
            h = g.add_positional(h, table, k)?;
        }
        for layer in &self.layers {
            let a = layer.ln_attn.forward(g, store, h)?;
            let q = layer.q.forward(g, store, a)?;
            let kk = layer.k.forward(g, store, a)?;
            let v = layer.v.forward(g, store, a)?;
            let keep = match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => Some(dropout_mask::<T>(vec![blocks * cfg.heads * k * k], rate, rng)),
                _ => None,
            };
            let att = g.attention(q, kk, v, k, cfg.heads, keep.as_ref())?;
            let att = layer.out.forward(g, store, att)?;
            h = g.add(h, att)?;

            let f = layer.ln_ff.forward(g, store, h)?;
            let f = layer.ff_in.forward(g, store, f)?;
            let f = g.gelu(f);
            let mut f = layer.ff_out.forward(g, store, f)?;
            if let Some(rng) = dropout.as_deref_mut() {
                if rate > 0.0 {
                    let m = dropout_mask::<T>(g.shape(f).to_vec(), rate, rng);
                    f = g.mul_const(f, &m)?;
                }
            }
            h = g.add(h, f)?;
        }
        let tokens = self.ln_final.forward(g, store, h)?;
        let z = self.decoder.forward(g, store, tokens)?;
        Ok(ForwardVars { z, tokens })
    }
}
