use dcr_tensor::{Graph, ParamStore, Scalar, Tensor, Var};

use super::nn::Linear;
use super::{ForwardVars, ReasonerConfig};
use crate::error::{DcrError, Result};
use crate::rng::Stream;

/// Single-layer LSTM with gates ordered `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input: Linear,
    pub recurrent: Linear,
    pub decoder: Linear,
}

impl LstmParams {
    pub fn new<T: Scalar>(cfg: &ReasonerConfig, store: &mut ParamStore<T>, rng: &mut Stream) -> Self {
        let (d, h) = (cfg.input_dim, cfg.latent_dim);
        let input = Linear::new(store, "lstm.input", d, 4 * h, rng);
        // Forget-gate bias of one keeps early gradients flowing.
        let bias = &mut store.get_mut(input.b).value;
        bias.data_mut()[h..2 * h].iter_mut().for_each(|b| *b = T::one());
        let recurrent = Linear::new(store, "lstm.recurrent", h, 4 * h, rng);
        let decoder = Linear::new(store, "decoder", h, d, rng);
        LstmParams {
            input,
            recurrent,
            decoder,
        }
    }

    /// Runs index `K` (oldest) down to index 1; the hidden state after
    /// consuming row `r` is that row's latent token.
    pub(super) fn forward<T: Scalar>(
        &self,
        cfg: &ReasonerConfig,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: Var,
        k: usize,
    ) -> Result<ForwardVars> {
        let rows = g.shape(input)[0];
        if k == 0 || rows % k != 0 {
            return Err(DcrError::Invalid(format!("{rows} rows do not split into length-{k} sequences")));
        }
        let b = rows / k;
        let hd = cfg.latent_dim;
        let xw = self.input.forward(g, store, input)?;
        let mut h = g.constant(Tensor::zeros(vec![b, hd]));
        let mut c = g.constant(Tensor::zeros(vec![b, hd]));
        let mut states = vec![h; k];
        for r in (0..k).rev() {
            let idx: Vec<usize> = (0..b).map(|i| i * k + r).collect();
            let x_t = g.gather_rows(xw, &idx)?;
            let rec = self.recurrent.forward(g, store, h)?;
            let gates = g.add(x_t, rec)?;
            let i_g = g.slice_cols(gates, 0, hd)?;
            let f_g = g.slice_cols(gates, hd, hd)?;
            let c_g = g.slice_cols(gates, 2 * hd, hd)?;
            let o_g = g.slice_cols(gates, 3 * hd, hd)?;
            let i_g = g.sigmoid(i_g);
            let f_g = g.sigmoid(f_g);
            let c_g = g.tanh(c_g);
            let o_g = g.sigmoid(o_g);
            let keep = g.mul(f_g, c)?;
            let write = g.mul(i_g, c_g)?;
            c = g.add(keep, write)?;
            let tc = g.tanh(c);
            h = g.mul(o_g, tc)?;
            states[r] = h;
        }
        let tokens = g.interleave_rows(&states)?;
        let z = self.decoder.forward(g, store, tokens)?;
        Ok(ForwardVars { z, tokens })
    }
}
