use crate::graph::{gelu_grad, Node, Op, Var};
use crate::scalar::{gemm, Layout, Scalar};
use crate::tensor::dims2;

fn accumulate<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    v: Var,
    local: impl FnOnce(&mut [T]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let n = nodes[v.0].value.numel();
    let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
    local(buf);
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Pushes the gradient `g` of node `i` into its inputs.
pub(crate) fn propagate<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    i: usize,
    g: &[T],
) {
    let node = &nodes[i];
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::MatMul { a, b, trans_b } => {
            let (m, k) = dims2(nodes[a.0].value.shape());
            let (br, bc) = dims2(nodes[b.0].value.shape());
            let n = if *trans_b { br } else { bc };
            let (ad, bd) = (val(*a), val(*b));
            if nodes[a.0].requires_grad {
                let lb = if *trans_b {
                    Layout::row_major(k)
                } else {
                    Layout::transposed(n)
                };
                let mut da = vec![T::zero(); m * k];
                gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    g,
                    Layout::row_major(n),
                    bd,
                    lb,
                    T::zero(),
                    &mut da,
                    Layout::row_major(k),
                );
                accumulate(nodes, grads, *a, |buf| add_into(buf, &da));
            }
            if nodes[b.0].requires_grad {
                let mut db = vec![T::zero(); k * n];
                if *trans_b {
                    gemm(
                        n,
                        m,
                        k,
                        T::one(),
                        g,
                        Layout::transposed(n),
                        ad,
                        Layout::row_major(k),
                        T::zero(),
                        &mut db,
                        Layout::row_major(k),
                    );
                } else {
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        ad,
                        Layout::transposed(k),
                        g,
                        Layout::row_major(n),
                        T::zero(),
                        &mut db,
                        Layout::row_major(n),
                    );
                }
                accumulate(nodes, grads, *b, |buf| add_into(buf, &db));
            }
        }
        Op::AddBias { x, bias } => {
            accumulate(nodes, grads, *x, |buf| add_into(buf, g));
            let n = nodes[bias.0].value.numel();
            accumulate(nodes, grads, *bias, |buf| {
                for (j, &gv) in g.iter().enumerate() {
                    buf[j % n] = buf[j % n] + gv;
                }
            });
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |buf| add_into(buf, g));
            accumulate(nodes, grads, *b, |buf| add_into(buf, g));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |buf| add_into(buf, g));
            accumulate(nodes, grads, *b, |buf| {
                for (d, &s) in buf.iter_mut().zip(g) {
                    *d = *d - s;
                }
            });
        }
        Op::Mul(a, b) => {
            let da: Vec<T> = g.iter().zip(val(*b)).map(|(&gv, &y)| gv * y).collect();
            let db: Vec<T> = g.iter().zip(val(*a)).map(|(&gv, &x)| gv * x).collect();
            accumulate(nodes, grads, *a, |buf| add_into(buf, &da));
            accumulate(nodes, grads, *b, |buf| add_into(buf, &db));
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, |buf| {
            for (d, &gv) in buf.iter_mut().zip(g) {
                *d = *d + gv * *s;
            }
        }),
        Op::MulConst(a, c) => accumulate(nodes, grads, *a, |buf| {
            for ((d, &gv), &cv) in buf.iter_mut().zip(g).zip(c) {
                *d = *d + gv * cv;
            }
        }),
        Op::Relu(a) => {
            let x = val(*a);
            accumulate(nodes, grads, *a, |buf| {
                for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(x) {
                    if xv > T::zero() {
                        *d = *d + gv;
                    }
                }
            })
        }
        Op::Gelu(a) => {
            let x = val(*a);
            accumulate(nodes, grads, *a, |buf| {
                for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(x) {
                    *d = *d + gv * gelu_grad(xv);
                }
            })
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            accumulate(nodes, grads, *a, |buf| {
                for ((d, &gv), &yv) in buf.iter_mut().zip(g).zip(y) {
                    *d = *d + gv * yv * (T::one() - yv);
                }
            })
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            accumulate(nodes, grads, *a, |buf| {
                for ((d, &gv), &yv) in buf.iter_mut().zip(g).zip(y) {
                    *d = *d + gv * (T::one() - yv * yv);
                }
            })
        }
        Op::SoftmaxRows(a) => {
            let (m, n) = dims2(node.value.shape());
            let y = node.value.data();
            accumulate(nodes, grads, *a, |buf| {
                for r in 0..m {
                    let s = r * n;
                    let dot = (s..s + n).map(|j| g[j] * y[j]).sum::<T>();
                    for j in s..s + n {
                        buf[j] = buf[j] + y[j] * (g[j] - dot);
                    }
                }
            })
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let (m, n) = dims2(node.value.shape());
            let gv = val(*gain);
            let nf = T::lit(n as f64);
            if nodes[x.0].requires_grad {
                let mut dx = vec![T::zero(); m * n];
                for r in 0..m {
                    let s = r * n;
                    let mut sum_d = T::zero();
                    let mut sum_dh = T::zero();
                    for j in 0..n {
                        let d = g[s + j] * gv[j];
                        sum_d = sum_d + d;
                        sum_dh = sum_dh + d * xhat[s + j];
                    }
                    for j in 0..n {
                        let d = g[s + j] * gv[j];
                        dx[s + j] = rstd[r] / nf * (nf * d - sum_d - xhat[s + j] * sum_dh);
                    }
                }
                accumulate(nodes, grads, *x, |buf| add_into(buf, &dx));
            }
            accumulate(nodes, grads, *gain, |buf| {
                for r in 0..m {
                    for j in 0..n {
                        buf[j] = buf[j] + g[r * n + j] * xhat[r * n + j];
                    }
                }
            });
            accumulate(nodes, grads, *bias, |buf| {
                for r in 0..m {
                    for j in 0..n {
                        buf[j] = buf[j] + g[r * n + j];
                    }
                }
            });
        }
        Op::LogClamped { x, floor } => {
            let xv = val(*x);
            accumulate(nodes, grads, *x, |buf| {
                for ((d, &gv), &v) in buf.iter_mut().zip(g).zip(xv) {
                    if v >= *floor {
                        *d = *d + gv / v;
                    }
                }
            })
        }
        Op::RowNorm(a) => {
            let (m, n) = dims2(nodes[a.0].value.shape());
            let x = val(*a);
            let norms = node.value.data();
            accumulate(nodes, grads, *a, |buf| {
                for r in 0..m {
                    if norms[r] > T::zero() {
                        let f = g[r] / norms[r];
                        for j in r * n..(r + 1) * n {
                            buf[j] = buf[j] + f * x[j];
                        }
                    }
                }
            })
        }
        Op::NormalizeRows { x, norms } => {
            let (m, n) = dims2(node.value.shape());
            let y = node.value.data();
            accumulate(nodes, grads, *x, |buf| {
                for r in 0..m {
                    if norms[r] > T::zero() {
                        let s = r * n;
                        let dot = (s..s + n).map(|j| g[j] * y[j]).sum::<T>();
                        for j in s..s + n {
                            buf[j] = buf[j] + (g[j] - y[j] * dot) / norms[r];
                        }
                    }
                }
            })
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |buf| {
            buf.iter_mut().for_each(|d| *d = *d + g[0]);
        }),
        Op::Mean(a) => {
            let n = T::lit(nodes[a.0].value.numel().max(1) as f64);
            accumulate(nodes, grads, *a, |buf| {
                buf.iter_mut().for_each(|d| *d = *d + g[0] / n);
            })
        }
        Op::Mse(a, b) => {
            let n = T::lit(nodes[a.0].value.numel().max(1) as f64);
            let f = T::lit(2.0) * g[0] / n;
            let diff: Vec<T> = val(*a)
                .iter()
                .zip(val(*b))
                .map(|(&x, &y)| f * (x - y))
                .collect();
            accumulate(nodes, grads, *a, |buf| add_into(buf, &diff));
            accumulate(nodes, grads, *b, |buf| {
                for (d, &s) in buf.iter_mut().zip(&diff) {
                    *d = *d - s;
                }
            });
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, |buf| add_into(buf, g)),
        Op::GatherRows { x, index } => {
            let (_, n) = dims2(node.value.shape());
            accumulate(nodes, grads, *x, |buf| {
                for (o, &r) in index.iter().enumerate() {
                    add_into(&mut buf[r * n..(r + 1) * n], &g[o * n..(o + 1) * n]);
                }
            })
        }
        Op::InterleaveRows(parts) => {
            let np = parts.len();
            let (rows, n) = dims2(node.value.shape());
            let b = rows / np;
            for (p, &part) in parts.iter().enumerate() {
                accumulate(nodes, grads, part, |buf| {
                    for r in 0..b {
                        let src = (r * np + p) * n;
                        add_into(&mut buf[r * n..(r + 1) * n], &g[src..src + n]);
                    }
                });
            }
        }
        Op::SliceCols { x, start } => {
            let (m, len) = dims2(node.value.shape());
            let (_, n) = dims2(nodes[x.0].value.shape());
            accumulate(nodes, grads, *x, |buf| {
                for r in 0..m {
                    add_into(
                        &mut buf[r * n + start..r * n + start + len],
                        &g[r * len..(r + 1) * len],
                    );
                }
            })
        }
        Op::AddPositional { x, table, block } => {
            let (m, n) = dims2(node.value.shape());
            accumulate(nodes, grads, *x, |buf| add_into(buf, g));
            accumulate(nodes, grads, *table, |buf| {
                for r in 0..m {
                    let pos = r % block;
                    add_into(&mut buf[pos * n..(pos + 1) * n], &g[r * n..(r + 1) * n]);
                }
            });
        }
        Op::Attention {
            q,
            k,
            v,
            block,
            heads,
            probs,
            keep,
        } => attention_backward(nodes, grads, g, (*q, *k, *v), *block, *heads, probs, keep),
        Op::SegmentMean { x, groups } => {
            let (_, n) = dims2(node.value.shape());
            accumulate(nodes, grads, *x, |buf| {
                for (gi, rows) in groups.iter().enumerate() {
                    if rows.is_empty() {
                        continue;
                    }
                    let inv = T::one() / T::lit(rows.len() as f64);
                    for &r in rows {
                        for j in 0..n {
                            buf[r * n + j] = buf[r * n + j] + g[gi * n + j] * inv;
                        }
                    }
                }
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    (q, k, v): (Var, Var, Var),
    block: usize,
    heads: usize,
    probs: &[T],
    keep: &Option<Vec<T>>,
) {
    let (rows, width) = dims2(nodes[q.0].value.shape());
    let blocks = rows / block;
    let dh = width / heads;
    let kk = block * block;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let strided = Layout { rs: width, cs: 1 };
    let strided_t = Layout { rs: 1, cs: width };
    let (qd, kd, vd) = (
        nodes[q.0].value.data(),
        nodes[k.0].value.data(),
        nodes[v.0].value.data(),
    );
    let mut dq = vec![T::zero(); rows * width];
    let mut dk = vec![T::zero(); rows * width];
    let mut dv = vec![T::zero(); rows * width];
    let mut dp = vec![T::zero(); kk];
    let mut dropped = vec![T::zero(); kk];
    for b in 0..blocks {
        for h in 0..heads {
            let off = b * block * width + h * dh;
            let pidx = (b * heads + h) * kk;
            let p = &probs[pidx..pidx + kk];
            let pd: &[T] = match keep {
                Some(mask) => {
                    for (d, (&pv, &m)) in dropped.iter_mut().zip(p.iter().zip(&mask[pidx..])) {
                        *d = pv * m;
                    }
                    &dropped
                }
                None => p,
            };
            // dV += P'^T dO
            gemm(
                block,
                block,
                dh,
                T::one(),
                pd,
                Layout::transposed(block),
                &g[off..],
                strided,
                T::one(),
                &mut dv[off..],
                strided,
            );
            // dP' = dO V^T
            gemm(
                block,
                dh,
                block,
                T::one(),
                &g[off..],
                strided,
                &vd[off..],
                strided_t,
                T::zero(),
                &mut dp,
                Layout::row_major(block),
            );
            if let Some(mask) = keep {
                for (d, &m) in dp.iter_mut().zip(&mask[pidx..pidx + kk]) {
                    *d = *d * m;
                }
            }
            // softmax backward, in place: dS = P * (dP - rowsum(dP * P))
            for r in 0..block {
                let s = r * block;
                let dot = (s..s + block).map(|j| dp[j] * p[j]).sum::<T>();
                for j in s..s + block {
                    dp[j] = p[j] * (dp[j] - dot);
                }
            }
            // dQ += scale dS K ; dK += scale dS^T Q
            gemm(
                block,
                block,
                dh,
                scale,
                &dp,
                Layout::row_major(block),
                &kd[off..],
                strided,
                T::one(),
                &mut dq[off..],
                strided,
            );
            gemm(
                block,
                block,
                dh,
                scale,
                &dp,
                Layout::transposed(block),
                &qd[off..],
                strided,
                T::one(),
                &mut dk[off..],
                strided,
            );
        }
    }
    accumulate(nodes, grads, q, |buf| add_into(buf, &dq));
    accumulate(nodes, grads, k, |buf| add_into(buf, &dk));
    accumulate(nodes, grads, v, |buf| add_into(buf, &dv));
}
