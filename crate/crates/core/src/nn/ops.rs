//! Differentiable tensor operations.
//!
//! Each op computes its output eagerly and, when the tape records
//! gradients, registers a closure mapping the output gradient to parent
//! contributions. Convolutions and pooling live in [`super::conv`].

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_LAMBDA: f64 = 1.0507009873554805;

/// Guard applied to cosines before angle arithmetic.
pub const COS_CLAMP: f64 = 1.0 - 1e-7;

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

pub fn add(tape: &mut Tape, a: Var, b: Var) -> Var {
    let out = tape.value(a).zip_map(tape.value(b), |x, y| x + y);
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.clone());
            sink.accumulate(b, g.clone());
        })
    })
}

pub fn sub(tape: &mut Tape, a: Var, b: Var) -> Var {
    let out = tape.value(a).zip_map(tape.value(b), |x, y| x - y);
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.clone());
            sink.accumulate(b, g.map(|v| -v));
        })
    })
}

pub fn mul(tape: &mut Tape, a: Var, b: Var) -> Var {
    let (out, caps) = {
        let va = tape.value(a);
        let vb = tape.value(b);
        let out = va.zip_map(vb, |x, y| x * y);
        let caps = tape
            .grad_enabled()
            .then(|| (va.clone(), vb.clone()));
        (out, caps)
    };
    tape.push_op(out, || {
        let (ca, cb) = caps.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.zip_map(&cb, |gv, y| gv * y));
            sink.accumulate(b, g.zip_map(&ca, |gv, x| gv * x));
        })
    })
}

pub fn scale(tape: &mut Tape, a: Var, c: f64) -> Var {
    let out = tape.value(a).map(|v| v * c);
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.map(|v| v * c));
        })
    })
}

pub fn add_scalar(tape: &mut Tape, a: Var, c: f64) -> Var {
    let out = tape.value(a).map(|v| v + c);
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.clone());
        })
    })
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

pub fn sum_all(tape: &mut Tape, a: Var) -> Var {
    let va = tape.value(a);
    let shape = va.shape().to_vec();
    let out = Tensor::scalar(va.data().iter().sum());
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, Tensor::filled(&shape, g.item()));
        })
    })
}

pub fn mean_all(tape: &mut Tape, a: Var) -> Var {
    let va = tape.value(a);
    let n = va.numel() as f64;
    let shape = va.shape().to_vec();
    let out = Tensor::scalar(va.data().iter().sum::<f64>() / n);
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, Tensor::filled(&shape, g.item() / n));
        })
    })
}

/// Scalar `sum(x .* w)` against a constant weighting; the workhorse head for
/// gradient checks, where a plain sum would hide transposition bugs.
pub fn dot_const(tape: &mut Tape, a: Var, w: &Tensor) -> Var {
    let va = tape.value(a);
    assert_eq!(va.shape(), w.shape(), "dot_const shape mismatch");
    let out = Tensor::scalar(
        va.data()
            .iter()
            .zip(w.data())
            .map(|(&x, &y)| x * y)
            .sum(),
    );
    let wc = w.clone();
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let g0 = g.item();
            sink.accumulate(a, wc.map(|v| v * g0));
        })
    })
}

/// Mean over axis 1 of a (B, F, D) tensor -> (B, D). Time pooling.
pub fn mean_axis1(tape: &mut Tape, a: Var) -> Var {
    let va = tape.value(a);
    let shape = va.shape().to_vec();
    assert_eq!(shape.len(), 3, "mean_axis1 expects (B, F, D)");
    let (bs, frames, dim) = (shape[0], shape[1], shape[2]);
    let mut out = Tensor::zeros(&[bs, dim]);
    {
        let src = va.data();
        let dst = out.data_mut();
        for b in 0..bs {
            for f in 0..frames {
                let row = &src[(b * frames + f) * dim..][..dim];
                let acc = &mut dst[b * dim..][..dim];
                for (o, &x) in acc.iter_mut().zip(row) {
                    *o += x;
                }
            }
        }
        for v in dst.iter_mut() {
            *v /= frames as f64;
        }
    }
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let mut dx = Tensor::zeros(&[bs, frames, dim]);
            let gd = g.data();
            let dd = dx.data_mut();
            for b in 0..bs {
                for f in 0..frames {
                    let dst = &mut dd[(b * frames + f) * dim..][..dim];
                    let src = &gd[b * dim..][..dim];
                    for (o, &x) in dst.iter_mut().zip(src) {
                        *o = x / frames as f64;
                    }
                }
            }
            sink.accumulate(a, dx);
        })
    })
}

/// Global average pool over the two trailing spatial dims:
/// (B, C, H, W) -> (B, C).
pub fn global_avg_pool(tape: &mut Tape, a: Var) -> Var {
    let va = tape.value(a);
    let shape = va.shape().to_vec();
    assert_eq!(shape.len(), 4, "global_avg_pool expects (B, C, H, W)");
    let (bs, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let mut out = Tensor::zeros(&[bs, ch]);
    {
        let src = va.data();
        let dst = out.data_mut();
        for (i, o) in dst.iter_mut().enumerate() {
            let plane = &src[i * hw..][..hw];
            *o = plane.iter().sum::<f64>() / hw as f64;
        }
    }
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let mut dx = Tensor::zeros(&[bs, ch, h, w]);
            let gd = g.data();
            let dd = dx.data_mut();
            for (i, &gv) in gd.iter().enumerate() {
                let plane = &mut dd[i * hw..][..hw];
                plane.fill(gv / hw as f64);
            }
            sink.accumulate(a, dx);
        })
    })
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

pub fn reshape(tape: &mut Tape, a: Var, new_shape: &[usize]) -> Var {
    let va = tape.value(a);
    let old_shape = va.shape().to_vec();
    let out = va.reshaped(new_shape);
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.reshaped(&old_shape));
        })
    })
}

/// Swap the two trailing axes of a 3-d tensor: (B, C, L) -> (B, L, C).
pub fn transpose_12(tape: &mut Tape, a: Var) -> Var {
    fn tr(t: &Tensor) -> Tensor {
        let s = t.shape();
        let (bs, c, l) = (s[0], s[1], s[2]);
        let mut out = Tensor::zeros(&[bs, l, c]);
        let src = t.data();
        let dst = out.data_mut();
        for b in 0..bs {
            for ci in 0..c {
                for li in 0..l {
                    dst[(b * l + li) * c + ci] = src[(b * c + ci) * l + li];
                }
            }
        }
        out
    }
    let out = tr(tape.value(a));
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, tr(g));
        })
    })
}

/// Zero-pad the trailing axis of a (B, C, L) tensor.
pub fn pad1d(tape: &mut Tape, a: Var, left: usize, right: usize) -> Var {
    let va = tape.value(a);
    let s = va.shape().to_vec();
    assert_eq!(s.len(), 3, "pad1d expects (B, C, L)");
    let (bs, c, l) = (s[0], s[1], s[2]);
    let lp = l + left + right;
    let mut out = Tensor::zeros(&[bs, c, lp]);
    {
        let src = va.data();
        let dst = out.data_mut();
        for row in 0..bs * c {
            dst[row * lp + left..][..l].copy_from_slice(&src[row * l..][..l]);
        }
    }
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let mut dx = Tensor::zeros(&[bs, c, l]);
            let gd = g.data();
            let dd = dx.data_mut();
            for row in 0..bs * c {
                dd[row * l..][..l].copy_from_slice(&gd[row * lp + left..][..l]);
            }
            sink.accumulate(a, dx);
        })
    })
}

/// Keep `[start, start + len)` of the trailing axis of a (B, C, L) tensor.
pub fn crop1d(tape: &mut Tape, a: Var, start: usize, len: usize) -> Var {
    let va = tape.value(a);
    let s = va.shape().to_vec();
    assert_eq!(s.len(), 3, "crop1d expects (B, C, L)");
    let (bs, c, l) = (s[0], s[1], s[2]);
    assert!(start + len <= l, "crop1d out of range");
    let mut out = Tensor::zeros(&[bs, c, len]);
    {
        let src = va.data();
        let dst = out.data_mut();
        for row in 0..bs * c {
            dst[row * len..][..len].copy_from_slice(&src[row * l + start..][..len]);
        }
    }
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let mut dx = Tensor::zeros(&[bs, c, l]);
            let gd = g.data();
            let dd = dx.data_mut();
            for row in 0..bs * c {
                dd[row * l + start..][..len].copy_from_slice(&gd[row * len..][..len]);
            }
            sink.accumulate(a, dx);
        })
    })
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

pub fn relu(tape: &mut Tape, a: Var) -> Var {
    let (out, cap) = {
        let va = tape.value(a);
        (va.map(|v| v.max(0.0)), tape.grad_enabled().then(|| va.clone()))
    };
    tape.push_op(out, || {
        let x = cap.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.zip_map(&x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
        })
    })
}

pub fn tanh_op(tape: &mut Tape, a: Var) -> Var {
    let out = tape.value(a).map(f64::tanh);
    let cap = tape.grad_enabled().then(|| out.clone());
    tape.push_op(out, || {
        let y = cap.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.zip_map(&y, |gv, yv| gv * (1.0 - yv * yv)));
        })
    })
}

pub fn sigmoid(tape: &mut Tape, a: Var) -> Var {
    let out = tape.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
    let cap = tape.grad_enabled().then(|| out.clone());
    tape.push_op(out, || {
        let y = cap.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(a, g.zip_map(&y, |gv, yv| gv * yv * (1.0 - yv)));
        })
    })
}

/// Scaled exponential linear unit.
pub fn selu(tape: &mut Tape, a: Var) -> Var {
    let (out, cap) = {
        let va = tape.value(a);
        let out = va.map(|v| {
            if v > 0.0 {
                SELU_LAMBDA * v
            } else {
                SELU_LAMBDA * SELU_ALPHA * (v.exp() - 1.0)
            }
        });
        (out, tape.grad_enabled().then(|| va.clone()))
    };
    tape.push_op(out, || {
        let x = cap.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(
                a,
                g.zip_map(&x, |gv, xv| {
                    if xv > 0.0 {
                        gv * SELU_LAMBDA
                    } else {
                        gv * SELU_LAMBDA * SELU_ALPHA * xv.exp()
                    }
                }),
            );
        })
    })
}

/// PReLU with one learnable slope per channel (axis 1).
pub fn prelu(tape: &mut Tape, x: Var, alpha: Var) -> Var {
    let (out, caps, ch, inner) = {
        let vx = tape.value(x);
        let va = tape.value(alpha);
        let shape = vx.shape();
        assert!(shape.len() >= 2, "prelu expects a channel axis");
        let ch = shape[1];
        assert_eq!(va.shape(), &[ch], "prelu alpha must be (channels,)");
        let inner: usize = shape[2..].iter().product();
        let ad = va.data();
        let mut out = vx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if *v < 0.0 {
                *v *= ad[(i / inner) % ch];
            }
        }
        let caps = tape.grad_enabled().then(|| (vx.clone(), va.clone()));
        (out, caps, ch, inner)
    };
    tape.push_op(out, || {
        let (vx, va) = caps.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            let xd = vx.data();
            let ad = va.data();
            let gd = g.data();
            let mut dx = vec![0.0; xd.len()];
            let mut da = vec![0.0; ch];
            for i in 0..xd.len() {
                let c = (i / inner) % ch;
                if xd[i] >= 0.0 {
                    dx[i] = gd[i];
                } else {
                    dx[i] = gd[i] * ad[c];
                    da[c] += gd[i] * xd[i];
                }
            }
            sink.accumulate(x, Tensor::new(vx.shape(), dx));
            sink.accumulate(alpha, Tensor::new(&[ch], da));
        })
    })
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..][..k];
        let orow = &mut out[i * n..][..n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..][..n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    // a: (m, k), b: (n, k) -> a b^T: (m, n)
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..][..k];
        for j in 0..n {
            let brow = &b[j * k..][..k];
            out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    // a: (k, m), b: (k, n) -> a^T b: (m, n)
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..][..m];
        let brow = &b[p * n..][..n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..][..n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// (m, k) x (k, n) -> (m, n).
pub fn matmul(tape: &mut Tape, a: Var, b: Var) -> Var {
    let (out, caps, m, k, n) = {
        let va = tape.value(a);
        let vb = tape.value(b);
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let (k2, n) = (vb.shape()[0], vb.shape()[1]);
        assert_eq!(k, k2, "matmul inner dims");
        let out = Tensor::new(&[m, n], mm(va.data(), vb.data(), m, k, n));
        let caps = tape.grad_enabled().then(|| (va.clone(), vb.clone()));
        (out, caps, m, k, n)
    };
    tape.push_op(out, || {
        let (va, vb) = caps.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            // dA = g B^T, dB = A^T g
            sink.accumulate(a, Tensor::new(&[m, k], mm_nt(g.data(), vb.data(), m, n, k)));
            sink.accumulate(b, Tensor::new(&[k, n], mm_tn(va.data(), g.data(), k, m, n)));
        })
    })
}

/// (m, k) x (n, k)^T -> (m, n). Cosine tables against a row-major
/// class-weight matrix come through here.
pub fn matmul_nt(tape: &mut Tape, a: Var, b: Var) -> Var {
    let (out, caps, m, k, n) = {
        let va = tape.value(a);
        let vb = tape.value(b);
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let (n, k2) = (vb.shape()[0], vb.shape()[1]);
        assert_eq!(k, k2, "matmul_nt inner dims");
        let out = Tensor::new(&[m, n], mm_nt(va.data(), vb.data(), m, k, n));
        let caps = tape.grad_enabled().then(|| (va.clone(), vb.clone()));
        (out, caps, m, k, n)
    };
    tape.push_op(out, || {
        let (va, vb) = caps.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            // dA = g B, dB = g^T A
            sink.accumulate(a, Tensor::new(&[m, k], mm(g.data(), vb.data(), m, n, k)));
            sink.accumulate(b, Tensor::new(&[n, k], mm_tn(g.data(), va.data(), n, m, k)));
        })
    })
}

/// Fully-connected layer: x (m, in) with weight (out, in), bias (out)
/// -> (m, out).
pub fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Var {
    let (out, caps, m, din, dout) = {
        let vx = tape.value(x);
        let vw = tape.value(weight);
        let vb = tape.value(bias);
        let (m, din) = (vx.shape()[0], vx.shape()[1]);
        let (dout, din2) = (vw.shape()[0], vw.shape()[1]);
        assert_eq!(din, din2, "linear weight shape");
        assert_eq!(vb.shape(), &[dout], "linear bias shape");
        let mut data = mm_nt(vx.data(), vw.data(), m, din, dout);
        for row in data.chunks_mut(dout) {
            for (o, &bv) in row.iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        let caps = tape.grad_enabled().then(|| (vx.clone(), vw.clone()));
        (Tensor::new(&[m, dout], data), caps, m, din, dout)
    };
    tape.push_op(out, || {
        let (vx, vw) = caps.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            sink.accumulate(
                x,
                Tensor::new(&[m, din], mm(g.data(), vw.data(), m, dout, din)),
            );
            sink.accumulate(
                weight,
                Tensor::new(&[dout, din], mm_tn(g.data(), vx.data(), dout, m, din)),
            );
            let mut db = vec![0.0; dout];
            for row in g.data().chunks(dout) {
                for (o, &gv) in db.iter_mut().zip(row) {
                    *o += gv;
                }
            }
            sink.accumulate(bias, Tensor::new(&[dout], db));
        })
    })
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Row-wise L2 normalization of (B, D). Errors on a zero-norm row.
pub fn normalize_rows(tape: &mut Tape, a: Var) -> Result<Var> {
    let (out, norms, bs, d) = {
        let va = tape.value(a);
        let (bs, d) = (va.shape()[0], va.shape()[1]);
        let mut out = va.clone();
        let mut norms = vec![0.0; bs];
        for (i, row) in out.data_mut().chunks_mut(d).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-300 {
                return Err(Error::NumericDomain(format!(
                    "zero-norm row {i} in normalize_rows"
                )));
            }
            norms[i] = n;
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        (out, norms, bs, d)
    };
    let cap = tape.grad_enabled().then(|| out.clone());
    Ok(tape.push_op(out, || {
        let y = cap.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            let mut dx = vec![0.0; bs * d];
            for i in 0..bs {
                let yrow = &y.data()[i * d..][..d];
                let grow = &g.data()[i * d..][..d];
                let gy: f64 = grow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                let drow = &mut dx[i * d..][..d];
                for j in 0..d {
                    drow[j] = (grow[j] - yrow[j] * gy) / norms[i];
                }
            }
            sink.accumulate(a, Tensor::new(&[bs, d], dx));
        })
    }))
}

/// Row-wise cosine similarity of two (B, D) tensors -> (B,).
pub fn cosine_rows(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (out, caps, bs, d) = {
        let va = tape.value(a);
        let vb = tape.value(b);
        assert_eq!(va.shape(), vb.shape(), "cosine_rows shape mismatch");
        let (bs, d) = (va.shape()[0], va.shape()[1]);
        let mut cos = vec![0.0; bs];
        for i in 0..bs {
            let ra = &va.data()[i * d..][..d];
            let rb = &vb.data()[i * d..][..d];
            let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na < 1e-300 || nb < 1e-300 {
                return Err(Error::NumericDomain(format!(
                    "zero-norm embedding in cosine_rows (row {i})"
                )));
            }
            let dot: f64 = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
            cos[i] = dot / (na * nb);
        }
        let caps = tape.grad_enabled().then(|| (va.clone(), vb.clone()));
        (Tensor::new(&[bs], cos), caps, bs, d)
    };
    let cos_cap = tape.grad_enabled().then(|| out.clone());
    Ok(tape.push_op(out, || {
        let (va, vb) = caps.unwrap();
        let cos = cos_cap.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            let mut da = vec![0.0; bs * d];
            let mut db = vec![0.0; bs * d];
            for i in 0..bs {
                let ra = &va.data()[i * d..][..d];
                let rb = &vb.data()[i * d..][..d];
                let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
                let c = cos.data()[i];
                let gv = g.data()[i];
                for j in 0..d {
                    da[i * d + j] = gv * (rb[j] / (na * nb) - c * ra[j] / (na * na));
                    db[i * d + j] = gv * (ra[j] / (na * nb) - c * rb[j] / (nb * nb));
                }
            }
            sink.accumulate(a, Tensor::new(&[bs, d], da));
            sink.accumulate(b, Tensor::new(&[bs, d], db));
        })
    }))
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Mean softmax cross-entropy over rows of (B, C) logits.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Var {
    let (out, probs, bs, c) = {
        let vl = tape.value(logits);
        let (bs, c) = (vl.shape()[0], vl.shape()[1]);
        assert_eq!(bs, targets.len(), "one target per row");
        let mut probs = vec![0.0; bs * c];
        let mut loss = 0.0;
        for i in 0..bs {
            let row = &vl.data()[i * c..][..c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &z in row {
                denom += (z - max).exp();
            }
            let lse = max + denom.ln();
            loss += lse - row[targets[i]];
            for (j, &z) in row.iter().enumerate() {
                probs[i * c + j] = (z - max).exp() / denom;
            }
        }
        (Tensor::scalar(loss / bs as f64), probs, bs, c)
    };
    let targets = targets.to_vec();
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let g0 = g.item() / bs as f64;
            let mut dl = probs.clone();
            for (i, &y) in targets.iter().enumerate() {
                dl[i * c + y] -= 1.0;
            }
            for v in dl.iter_mut() {
                *v *= g0;
            }
            sink.accumulate(logits, Tensor::new(&[bs, c], dl));
        })
    })
}

/// Additive-angular-margin adjustment: replaces the target-class cosine
/// `cos(theta_y)` with `cos(theta_y + m)` in a (B, C) cosine table.
/// Cosines are clamped away from +-1 before the angle shift.
pub fn add_margin(tape: &mut Tape, cosines: Var, targets: &[usize], margin: f64) -> Var {
    let cos_m = margin.cos();
    let sin_m = margin.sin();
    let (out, cap, bs, c) = {
        let vc = tape.value(cosines);
        let (bs, c) = (vc.shape()[0], vc.shape()[1]);
        assert_eq!(bs, targets.len(), "one target per row");
        let mut out = vc.clone();
        for (i, &y) in targets.iter().enumerate() {
            let v = out.data()[i * c + y].clamp(-COS_CLAMP, COS_CLAMP);
            out.data_mut()[i * c + y] = v * cos_m - (1.0 - v * v).sqrt() * sin_m;
        }
        let cap = tape.grad_enabled().then(|| vc.clone());
        (out, cap, bs, c)
    };
    let targets = targets.to_vec();
    tape.push_op(out, || {
        let vc = cap.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            let mut dx = g.data().to_vec();
            for (i, &y) in targets.iter().enumerate() {
                let raw = vc.data()[i * c + y];
                let factor = if raw.abs() < COS_CLAMP {
                    // d/dc [c cos_m - sqrt(1 - c^2) sin_m]
                    cos_m + raw * sin_m / (1.0 - raw * raw).sqrt()
                } else {
                    0.0 // clamped: locally constant in the raw cosine
                };
                dx[i * c + y] *= factor;
            }
            sink.accumulate(cosines, Tensor::new(&[bs, c], dx));
        })
    })
}
