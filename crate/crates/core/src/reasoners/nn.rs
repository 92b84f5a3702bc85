use dcr_tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::Result;
use crate::rng::Stream;

/// Affine map `x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut Stream) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::lit(rng.random_range(-limit..limit)))
            .collect();
        let w = store.add(format!("{name}.weight"), Tensor::new(vec![fan_in, fan_out], data).unwrap());
        let b = store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        Ok(g.add_bias(y, b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(vec![width], T::one()));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![width]));
        LayerNorm { gain, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        Ok(g.layer_norm(x, gain, bias, T::lit(Self::EPS))?)
    }
}

/// Fixed sinusoidal table `[len, width]`, used to initialise the learned
/// positional encodings.
pub fn sinusoidal_table(len: usize, width: usize) -> Vec<f64> {
    let mut t = vec![0.0; len * width];
    for p in 0..len {
        for i in 0..width {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let a = p as f64 * freq;
            t[p * width + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    t
}

/// Inverted-dropout keep mask: entries are `0` or `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar>(shape: Vec<usize>, rate: f64, rng: &mut Stream) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let keep = T::lit(1.0 / (1.0 - rate));
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    Tensor::new(shape, data).unwrap()
}
