//! Self-supervised order pre-training: without positional encodings the
//! encoder must place each token at its temporal index, scored against
//! the positional table with Gaussian soft labels.

use dcr_tensor::{Graph, Scalar, Tensor, Var};

use crate::error::{DcrError, Result};

pub const DEFAULT_SIGMA: f64 = 5.0;
pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// Gaussian affinity between positions, raw and row-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityLabels {
    pub k: usize,
    pub sigma: f64,
    /// `exp(-(i - j)^2 / sigma^2)`, row-major `K x K`.
    pub raw: Vec<f64>,
    /// Each row of `raw` scaled to sum to one.
    pub normalized: Vec<f64>,
}

impl AffinityLabels {
    pub fn raw_at(&self, i: usize, j: usize) -> f64 {
        self.raw[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.normalized[i * self.k..(i + 1) * self.k]
    }
}

pub fn gaussian_affinity(k: usize, sigma: f64) -> Result<AffinityLabels> {
    if k == 0 || !(sigma > 0.0) {
        return Err(DcrError::Invalid(format!("affinity needs K >= 1 and sigma > 0 (K={k}, sigma={sigma})")));
    }
    let s2 = sigma * sigma;
    let mut raw = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let d = i as f64 - j as f64;
            raw[i * k + j] = (-(d * d) / s2).exp();
        }
    }
    let mut normalized = raw.clone();
    for row in normalized.chunks_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(AffinityLabels {
        k,
        sigma,
        raw,
        normalized,
    })
}

/// Soft-label cross-entropy from each token to the first `K` positional
/// rows, averaged over tokens. `tokens` is `[B * K, L]`; token row `r`
/// belongs to position `r mod K`. Gradients reach both inputs.
pub fn order_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    tokens: Var,
    table: Var,
    labels: &AffinityLabels,
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(DcrError::Invalid(format!("temperature {temperature} must be positive")));
    }
    let k = labels.k;
    let rows = g.shape(tokens)[0];
    if rows % k != 0 || g.shape(table)[0] < k {
        return Err(DcrError::Invalid(format!(
            "{rows} tokens and a {}-row table do not fit K={k}",
            g.shape(table)[0]
        )));
    }
    let idx: Vec<usize> = (0..k).collect();
    let pe = g.gather_rows(table, &idx)?;
    let cos = g.cosine_rows(tokens, pe)?;
    let logits = g.scale(cos, T::lit(1.0 / temperature));
    let p = g.softmax_rows(logits)?;
    let lp = g.log_clamped(p, T::lit(crate::objectives::LOG_FLOOR));
    let scale = -1.0 / rows as f64;
    let coef: Vec<T> = (0..rows)
        .flat_map(|r| labels.row(r % k).iter().map(move |&v| T::lit(v * scale)))
        .collect();
    let weighted = g.mul_const(lp, &Tensor::new(vec![rows, k], coef)?)?;
    Ok(g.sum(weighted))
}

/// Value of [`order_loss_graph`] for fixed tokens `[B * K, L]` and table.
pub fn order_loss(tokens: &Tensor<f64>, table: &Tensor<f64>, labels: &AffinityLabels, temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(tokens.clone());
    let p = g.constant(table.clone());
    let l = order_loss_graph(&mut g, t, p, labels, temperature)?;
    Ok(g.value(l).item())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Fraction of tokens whose most cosine-similar positional row (lowest
/// index on ties) is their own position.
pub fn position_accuracy<T: Scalar>(tokens: &Tensor<T>, table: &Tensor<T>, k: usize) -> Result<f64> {
    let (rows, l) = tokens.dims2();
    let (p, tl) = table.dims2();
    if k == 0 || rows % k != 0 || p < k || tl != l {
        return Err(DcrError::Invalid("tokens and positional table do not align".into()));
    }
    if rows == 0 {
        return Err(DcrError::Invalid("no tokens".into()));
    }
    let pe: Vec<Vec<f64>> = (0..k).map(|i| table.row(i).iter().map(|v| v.as_f64()).collect()).collect();
    let mut hits = 0usize;
    for r in 0..rows {
        let tok: Vec<f64> = tokens.row(r).iter().map(|v| v.as_f64()).collect();
        let mut best = (0, f64::NEG_INFINITY);
        for (i, row) in pe.iter().enumerate() {
            let c = cosine(&tok, row);
            if c > best.1 {
                best = (i, c);
            }
        }
        if best.0 == r % k {
            hits += 1;
        }
    }
    Ok(hits as f64 / rows as f64)
}
