//! Convolution, pooling, and normalization ops.

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;

/// Static hyperparameters of a 1-d convolution.
#[derive(Debug, Clone, Copy)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            dilation: 1,
            groups: 1,
            pad_left: 0,
            pad_right: 0,
        }
    }
}

pub fn conv1d_out_len(len: usize, kernel: usize, spec: &Conv1dSpec) -> usize {
    let padded = len + spec.pad_left + spec.pad_right;
    let span = spec.dilation * (kernel - 1) + 1;
    assert!(padded >= span, "conv1d input shorter than kernel span");
    (padded - span) / spec.stride + 1
}

fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    bs: usize,
    cin: usize,
    l: usize,
    cout: usize,
    k: usize,
    spec: &Conv1dSpec,
    lout: usize,
) -> Vec<f64> {
    let cpg = cin / spec.groups;
    let opg = cout / spec.groups;
    let mut out = vec![0.0; bs * cout * lout];
    for bi in 0..bs {
        for co in 0..cout {
            let ci0 = (co / opg) * cpg;
            let orow = &mut out[(bi * cout + co) * lout..][..lout];
            orow.fill(b[co]);
            for cg in 0..cpg {
                let xrow = &x[(bi * cin + ci0 + cg) * l..][..l];
                let wrow = &w[(co * cpg + cg) * k..][..k];
                for (ki, &wv) in wrow.iter().enumerate() {
                    let off = ki * spec.dilation;
                    for (t, ov) in orow.iter_mut().enumerate() {
                        let pos = t * spec.stride + off;
                        if pos >= spec.pad_left {
                            if let Some(&xv) = xrow.get(pos - spec.pad_left) {
                                *ov += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Grouped, dilated 1-d convolution with explicit zero padding.
///
/// x: (B, Cin, L), weight: (Cout, Cin/groups, K), bias: (Cout)
/// -> (B, Cout, Lout).
pub fn conv1d(tape: &mut Tape, x: Var, weight: Var, bias: Var, spec: Conv1dSpec) -> Var {
    let (out, caps, dims) = {
        let vx = tape.value(x);
        let vw = tape.value(weight);
        let vb = tape.value(bias);
        let (bs, cin, l) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let (cout, cpg, k) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
        assert_eq!(cin % spec.groups, 0, "cin divisible by groups");
        assert_eq!(cout % spec.groups, 0, "cout divisible by groups");
        assert_eq!(cpg, cin / spec.groups, "weight group shape");
        assert_eq!(vb.shape(), &[cout], "conv1d bias shape");
        let lout = conv1d_out_len(l, k, &spec);
        let data = conv1d_forward(
            vx.data(),
            vw.data(),
            vb.data(),
            bs,
            cin,
            l,
            cout,
            k,
            &spec,
            lout,
        );
        let caps = tape.grad_enabled().then(|| (vx.clone(), vw.clone()));
        (
            Tensor::new(&[bs, cout, lout], data),
            caps,
            (bs, cin, l, cout, k, lout),
        )
    };
    let (bs, cin, l, cout, k, lout) = dims;
    tape.push_op(out, || {
        let (vx, vw) = caps.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            let cpg = cin / spec.groups;
            let opg = cout / spec.groups;
            let gd = g.data();
            let mut dx = vec![0.0; bs * cin * l];
            let mut dw = vec![0.0; cout * cpg * k];
            let mut db = vec![0.0; cout];
            for bi in 0..bs {
                for co in 0..cout {
                    let ci0 = (co / opg) * cpg;
                    let grow = &gd[(bi * cout + co) * lout..][..lout];
                    db[co] += grow.iter().sum::<f64>();
                    for cg in 0..cpg {
                        let xrow = &vx.data()[(bi * cin + ci0 + cg) * l..][..l];
                        let wrow = &vw.data()[(co * cpg + cg) * k..][..k];
                        let dxrow = &mut dx[(bi * cin + ci0 + cg) * l..][..l];
                        let dwrow = &mut dw[(co * cpg + cg) * k..][..k];
                        for ki in 0..k {
                            let off = ki * spec.dilation;
                            let wv = wrow[ki];
                            let mut wacc = 0.0;
                            for (t, &gv) in grow.iter().enumerate() {
                                let pos = t * spec.stride + off;
                                if pos >= spec.pad_left && pos - spec.pad_left < l {
                                    let p = pos - spec.pad_left;
                                    dxrow[p] += gv * wv;
                                    wacc += gv * xrow[p];
                                }
                            }
                            dwrow[ki] += wacc;
                        }
                    }
                }
            }
            sink.accumulate(x, Tensor::new(&[bs, cin, l], dx));
            sink.accumulate(weight, Tensor::new(&[cout, cpg, k], dw));
            sink.accumulate(bias, Tensor::new(&[cout], db));
        })
    })
}

/// Transposed 1-d convolution (overlap-add decoder).
///
/// x: (B, Cin, L), weight: (Cin, Cout, K), bias: (Cout)
/// -> (B, Cout, (L-1)*stride + K).
pub fn conv_transpose1d(tape: &mut Tape, x: Var, weight: Var, bias: Var, stride: usize) -> Var {
    let (out, caps, dims) = {
        let vx = tape.value(x);
        let vw = tape.value(weight);
        let vb = tape.value(bias);
        let (bs, cin, l) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let (cin2, cout, k) = (vw.shape()[0], vw.shape()[1], vw.shape()[2]);
        assert_eq!(cin, cin2, "conv_transpose1d weight shape");
        assert_eq!(vb.shape(), &[cout], "conv_transpose1d bias shape");
        let lout = (l - 1) * stride + k;
        let mut data = vec![0.0; bs * cout * lout];
        for bi in 0..bs {
            for co in 0..cout {
                let orow = &mut data[(bi * cout + co) * lout..][..lout];
                orow.fill(vb.data()[co]);
                for ci in 0..cin {
                    let xrow = &vx.data()[(bi * cin + ci) * l..][..l];
                    let wrow = &vw.data()[(ci * cout + co) * k..][..k];
                    for (t, &xv) in xrow.iter().enumerate() {
                        let base = t * stride;
                        for (ki, &wv) in wrow.iter().enumerate() {
                            orow[base + ki] += xv * wv;
                        }
                    }
                }
            }
        }
        let caps = tape.grad_enabled().then(|| (vx.clone(), vw.clone()));
        (
            Tensor::new(&[bs, cout, lout], data),
            caps,
            (bs, cin, l, cout, k, lout),
        )
    };
    let (bs, cin, l, cout, k, lout) = dims;
    tape.push_op(out, || {
        let (vx, vw) = caps.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            let gd = g.data();
            let mut dx = vec![0.0; bs * cin * l];
            let mut dw = vec![0.0; cin * cout * k];
            let mut db = vec![0.0; cout];
            for bi in 0..bs {
                for co in 0..cout {
                    let grow = &gd[(bi * cout + co) * lout..][..lout];
                    db[co] += grow.iter().sum::<f64>();
                    for ci in 0..cin {
                        let xrow = &vx.data()[(bi * cin + ci) * l..][..l];
                        let wrow = &vw.data()[(ci * cout + co) * k..][..k];
                        let dxrow = &mut dx[(bi * cin + ci) * l..][..l];
                        let dwrow = &mut dw[(ci * cout + co) * k..][..k];
                        for t in 0..l {
                            let base = t * stride;
                            let gseg = &grow[base..][..k];
                            let mut acc = 0.0;
                            for (ki, &gv) in gseg.iter().enumerate() {
                                acc += gv * wrow[ki];
                                dwrow[ki] += gv * xrow[t];
                            }
                            dxrow[t] += acc;
                        }
                    }
                }
            }
            sink.accumulate(x, Tensor::new(&[bs, cin, l], dx));
            sink.accumulate(weight, Tensor::new(&[cin, cout, k], dw));
            sink.accumulate(bias, Tensor::new(&[cout], db));
        })
    })
}

/// 2-d convolution, stride 1, explicit symmetric zero padding.
///
/// x: (B, Cin, H, W), weight: (Cout, Cin, KH, KW), bias: (Cout)
/// -> (B, Cout, H + 2ph - KH + 1, W + 2pw - KW + 1).
pub fn conv2d(tape: &mut Tape, x: Var, weight: Var, bias: Var, ph: usize, pw: usize) -> Var {
    let (out, caps, dims) = {
        let vx = tape.value(x);
        let vw = tape.value(weight);
        let vb = tape.value(bias);
        let s = vx.shape();
        let (bs, cin, h, w) = (s[0], s[1], s[2], s[3]);
        let ws = vw.shape();
        let (cout, cin2, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(cin, cin2, "conv2d weight shape");
        assert_eq!(vb.shape(), &[cout], "conv2d bias shape");
        let ho = h + 2 * ph - kh + 1;
        let wo = w + 2 * pw - kw + 1;
        let mut data = vec![0.0; bs * cout * ho * wo];
        for bi in 0..bs {
            for co in 0..cout {
                let oplane = &mut data[(bi * cout + co) * ho * wo..][..ho * wo];
                oplane.fill(vb.data()[co]);
                for ci in 0..cin {
                    let xplane = &vx.data()[(bi * cin + ci) * h * w..][..h * w];
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let kv = vw.data()[((co * cin + ci) * kh + dh) * kw + dw];
                            if kv == 0.0 {
                                continue;
                            }
                            // oh + dh - ph in [0, h) and ow + dw - pw in [0, w)
                            let oh_lo = ph.saturating_sub(dh);
                            let oh_hi = (h + ph - dh).min(ho);
                            let ow_lo = pw.saturating_sub(dw);
                            let ow_hi = (w + pw - dw).min(wo);
                            for oh in oh_lo..oh_hi {
                                let ih = oh + dh - ph;
                                let xrow = &xplane[ih * w..][..w];
                                let orow = &mut oplane[oh * wo..][..wo];
                                for ow in ow_lo..ow_hi {
                                    orow[ow] += kv * xrow[ow + dw - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
        let caps = tape.grad_enabled().then(|| (vx.clone(), vw.clone()));
        (
            Tensor::new(&[bs, cout, ho, wo], data),
            caps,
            (bs, cin, h, w, cout, kh, kw, ho, wo),
        )
    };
    let (bs, cin, h, w, cout, kh, kw, ho, wo) = dims;
    tape.push_op(out, || {
        let (vx, vw) = caps.unwrap();
        Box::new(move |g, sink: &mut Gradients| {
            let gd = g.data();
            let mut dx = vec![0.0; bs * cin * h * w];
            let mut dwt = vec![0.0; cout * cin * kh * kw];
            let mut db = vec![0.0; cout];
            for bi in 0..bs {
                for co in 0..cout {
                    let gplane = &gd[(bi * cout + co) * ho * wo..][..ho * wo];
                    db[co] += gplane.iter().sum::<f64>();
                    for ci in 0..cin {
                        let xplane = &vx.data()[(bi * cin + ci) * h * w..][..h * w];
                        let dxplane = &mut dx[(bi * cin + ci) * h * w..][..h * w];
                        for dh in 0..kh {
                            for dwi in 0..kw {
                                let widx = ((co * cin + ci) * kh + dh) * kw + dwi;
                                let kv = vw.data()[widx];
                                let oh_lo = ph.saturating_sub(dh);
                                let oh_hi = (h + ph - dh).min(ho);
                                let ow_lo = pw.saturating_sub(dwi);
                                let ow_hi = (w + pw - dwi).min(wo);
                                let mut wacc = 0.0;
                                for oh in oh_lo..oh_hi {
                                    let ih = oh + dh - ph;
                                    let grow = &gplane[oh * wo..][..wo];
                                    let xrow = &xplane[ih * w..][..w];
                                    let dxrow = &mut dxplane[ih * w..][..w];
                                    for ow in ow_lo..ow_hi {
                                        let iw = ow + dwi - pw;
                                        dxrow[iw] += grow[ow] * kv;
                                        wacc += grow[ow] * xrow[iw];
                                    }
                                }
                                dwt[widx] += wacc;
                            }
                        }
                    }
                }
            }
            sink.accumulate(x, Tensor::new(&[bs, cin, h, w], dx));
            sink.accumulate(weight, Tensor::new(&[cout, cin, kh, kw], dwt));
            sink.accumulate(bias, Tensor::new(&[cout], db));
        })
    })
}

/// Max pooling over (B, C, H, W), square kernel, no padding. Ties resolve
/// to the first maximum in scan order, which keeps runs bit-reproducible.
pub fn maxpool2d(tape: &mut Tape, x: Var, kernel: usize, stride: usize) -> Var {
    let (out, argmax, dims) = {
        let vx = tape.value(x);
        let s = vx.shape();
        let (bs, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert!(h >= kernel && w >= kernel, "maxpool2d input too small");
        let ho = (h - kernel) / stride + 1;
        let wo = (w - kernel) / stride + 1;
        let mut data = vec![0.0; bs * c * ho * wo];
        let mut argmax = vec![0usize; bs * c * ho * wo];
        for plane_idx in 0..bs * c {
            let xplane = &vx.data()[plane_idx * h * w..][..h * w];
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for dh in 0..kernel {
                        let ih = oh * stride + dh;
                        for dw in 0..kernel {
                            let iw = ow * stride + dw;
                            let v = xplane[ih * w + iw];
                            if v > best {
                                best = v;
                                best_at = ih * w + iw;
                            }
                        }
                    }
                    let o = (plane_idx * ho + oh) * wo + ow;
                    data[o] = best;
                    argmax[o] = plane_idx * h * w + best_at;
                }
            }
        }
        (
            Tensor::new(&[bs, c, ho, wo], data),
            argmax,
            (bs, c, h, w),
        )
    };
    let (bs, c, h, w) = dims;
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let mut dx = vec![0.0; bs * c * h * w];
            for (o, &src) in argmax.iter().enumerate() {
                dx[src] += g.data()[o];
            }
            sink.accumulate(x, Tensor::new(&[bs, c, h, w], dx));
        })
    })
}

fn bn_backward_common(
    g: &Tensor,
    xhat: &Tensor,
    gamma: &[f64],
    inv_std: &[f64],
    group_of: impl Fn(usize) -> (usize, usize), // flat index -> (stat group, channel)
    n_per_group: f64,
    n_groups: usize,
    n_channels: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let gd = g.data();
    let xd = xhat.data();
    let mut dgamma = vec![0.0; n_channels];
    let mut dbeta = vec![0.0; n_channels];
    let mut sum_h = vec![0.0; n_groups]; // sum of g*gamma per group
    let mut sum_hx = vec![0.0; n_groups]; // sum of g*gamma*xhat per group
    for i in 0..gd.len() {
        let (grp, ch) = group_of(i);
        let h = gd[i] * gamma[ch];
        dgamma[ch] += gd[i] * xd[i];
        dbeta[ch] += gd[i];
        sum_h[grp] += h;
        sum_hx[grp] += h * xd[i];
    }
    let mut dx = vec![0.0; gd.len()];
    for i in 0..gd.len() {
        let (grp, ch) = group_of(i);
        let h = gd[i] * gamma[ch];
        dx[i] = inv_std[grp]
            * (h - sum_h[grp] / n_per_group - xd[i] * sum_hx[grp] / n_per_group);
    }
    (dx, dgamma, dbeta)
}

/// Batch statistics produced by a training-mode batch-norm forward; the
/// owning layer folds them into its running estimates.
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Training-mode 2-d batch normalization over (B, C, H, W): per-channel
/// statistics over batch and spatial dims, biased variance.
pub fn batchnorm2d_train(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> (Var, BatchStats) {
    let (out, xhat, inv_std, stats, dims) = {
        let vx = tape.value(x);
        let vg = tape.value(gamma);
        let vb = tape.value(beta);
        let s = vx.shape();
        let (bs, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert_eq!(vg.shape(), &[c]);
        assert_eq!(vb.shape(), &[c]);
        let n = (bs * h * w) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let xd = vx.data();
        for bi in 0..bs {
            for ci in 0..c {
                let plane = &xd[(bi * c + ci) * h * w..][..h * w];
                mean[ci] += plane.iter().sum::<f64>();
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        for bi in 0..bs {
            for ci in 0..c {
                let plane = &xd[(bi * c + ci) * h * w..][..h * w];
                var[ci] += plane.iter().map(|&v| (v - mean[ci]).powi(2)).sum::<f64>();
            }
        }
        for v in var.iter_mut() {
            *v /= n;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bs {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                for j in 0..h * w {
                    let xh = (xd[base + j] - mean[ci]) * inv_std[ci];
                    xhat[base + j] = xh;
                    out[base + j] = vg.data()[ci] * xh + vb.data()[ci];
                }
            }
        }
        let stats = BatchStats {
            mean,
            var: var.clone(),
        };
        (
            Tensor::new(s, out),
            Tensor::new(s, xhat),
            inv_std,
            stats,
            (bs, c, h, w, vg.clone()),
        )
    };
    let (bs, c, h, w, vg) = dims;
    let out_var = tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let hw = h * w;
            let n = (bs * hw) as f64;
            let (dx, dgamma, dbeta) = bn_backward_common(
                g,
                &xhat,
                vg.data(),
                &inv_std,
                |i| {
                    let ch = (i / hw) % c;
                    (ch, ch)
                },
                n,
                c,
                c,
            );
            sink.accumulate(x, Tensor::new(&[bs, c, h, w], dx));
            sink.accumulate(gamma, Tensor::new(&[c], dgamma));
            sink.accumulate(beta, Tensor::new(&[c], dbeta));
        })
    });
    (out_var, stats)
}

/// Inference-mode batch normalization: per-channel affine with fixed
/// running statistics.
pub fn batchnorm2d_eval(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Var {
    let (out, xhat, dims) = {
        let vx = tape.value(x);
        let vg = tape.value(gamma);
        let vb = tape.value(beta);
        let s = vx.shape();
        let (bs, c, h, w) = (s[0], s[1], s[2], s[3]);
        let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let xd = vx.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bs {
            for ci in 0..c {
                let base = (bi * c + ci) * h * w;
                for j in 0..h * w {
                    let xh = (xd[base + j] - running_mean[ci]) * inv_std[ci];
                    xhat[base + j] = xh;
                    out[base + j] = vg.data()[ci] * xh + vb.data()[ci];
                }
            }
        }
        (
            Tensor::new(s, out),
            Tensor::new(s, xhat),
            (bs, c, h, w, vg.clone(), inv_std),
        )
    };
    let (bs, c, h, w, vg, inv_std) = dims;
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let hw = h * w;
            let gd = g.data();
            let mut dx = vec![0.0; gd.len()];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for i in 0..gd.len() {
                let ch = (i / hw) % c;
                dx[i] = gd[i] * vg.data()[ch] * inv_std[ch];
                dgamma[ch] += gd[i] * xhat.data()[i];
                dbeta[ch] += gd[i];
            }
            sink.accumulate(x, Tensor::new(&[bs, c, h, w], dx));
            sink.accumulate(gamma, Tensor::new(&[c], dgamma));
            sink.accumulate(beta, Tensor::new(&[c], dbeta));
        })
    })
}

/// Global layer normalization over (B, C, L): statistics over channels and
/// time per sample, per-channel affine. The separator's norm of choice.
pub fn global_layer_norm(tape: &mut Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
    let (out, xhat, inv_std, dims) = {
        let vx = tape.value(x);
        let vg = tape.value(gamma);
        let vb = tape.value(beta);
        let s = vx.shape();
        let (bs, c, l) = (s[0], s[1], s[2]);
        assert_eq!(vg.shape(), &[c]);
        assert_eq!(vb.shape(), &[c]);
        let n = (c * l) as f64;
        let xd = vx.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; bs];
        for bi in 0..bs {
            let sample = &xd[bi * c * l..][..c * l];
            let mean = sample.iter().sum::<f64>() / n;
            let var = sample.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[bi] = istd;
            for ci in 0..c {
                for li in 0..l {
                    let idx = (bi * c + ci) * l + li;
                    let xh = (xd[idx] - mean) * istd;
                    xhat[idx] = xh;
                    out[idx] = vg.data()[ci] * xh + vb.data()[ci];
                }
            }
        }
        (
            Tensor::new(s, out),
            Tensor::new(s, xhat),
            inv_std,
            (bs, c, l, vg.clone()),
        )
    };
    let (bs, c, l, vg) = dims;
    tape.push_op(out, || {
        Box::new(move |g, sink: &mut Gradients| {
            let n = (c * l) as f64;
            let (dx, dgamma, dbeta) = bn_backward_common(
                g,
                &xhat,
                vg.data(),
                &inv_std,
                |i| {
                    let b = i / (c * l);
                    let ch = (i / l) % c;
                    (b, ch)
                },
                n,
                bs,
                c,
            );
            sink.accumulate(x, Tensor::new(&[bs, c, l], dx));
            sink.accumulate(gamma, Tensor::new(&[c], dgamma));
            sink.accumulate(beta, Tensor::new(&[c], dbeta));
        })
    })
}
