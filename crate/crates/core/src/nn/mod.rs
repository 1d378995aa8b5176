//! Minimal reverse-mode autodiff engine the models are built on.
//!
//! f64 end to end, single-threaded, fully deterministic under a fixed
//! seed. That combination is what lets the test suites demand bitwise
//! reproducibility and tight finite-difference agreement.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use layers::Cx;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::conv::{self, Conv1dSpec};
    use super::gradcheck::{finite_diff, max_rel_error};
    use super::init::{rng_from_seed, uniform_fan_in};
    use super::ops;
    use super::tape::{Tape, Var};
    use super::tensor::Tensor;
    use rand::Rng as _;

    const TOL: f64 = 1e-6;
    const H: f64 = 1e-5;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        uniform_fan_in(shape, 1, &mut rng_from_seed(seed))
    }

    /// Checks analytic gradients of `f` against central differences for
    /// every input. `f` builds the graph and returns the scalar root.
    fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&mut tape, &vars);
        let grads = tape.backward(root);

        let mut eval = |xs: &[Tensor]| {
            let mut t = Tape::forward_only();
            let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
            let r = f(&mut t, &vs);
            t.value(r).item()
        };
        let numeric = finite_diff(&mut eval, inputs, H);
        for (i, num) in numeric.iter().enumerate() {
            let ana = grads
                .get(vars[i])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
            let err = max_rel_error(&ana, num, 1e-6);
            assert!(err < TOL, "input {i}: rel error {err}");
        }
    }

    /// Random weighting so reductions cannot hide transposition errors.
    fn head(tape: &mut Tape, x: Var, seed: u64) -> Var {
        let w = rand_tensor(tape.value(x).shape(), seed ^ 0xdead);
        ops::dot_const(tape, x, &w)
    }

    #[test]
    fn grad_elementwise() {
        let a = rand_tensor(&[3, 4], 1);
        let b = rand_tensor(&[3, 4], 2);
        check(&[a.clone(), b.clone()], |t, v| {
            let s = ops::add(t, v[0], v[1]);
            let d = ops::sub(t, s, v[1]);
            let m = ops::mul(t, d, v[1]);
            let sc = ops::scale(t, m, 1.7);
            let sh = ops::add_scalar(t, sc, 0.3);
            head(t, sh, 11)
        });
    }

    #[test]
    fn grad_reductions() {
        let a = rand_tensor(&[2, 3], 3);
        check(&[a.clone()], |t, v| ops::sum_all(t, v[0]));
        check(&[a.clone()], |t, v| ops::mean_all(t, v[0]));
        let b = rand_tensor(&[2, 4, 3], 4);
        check(&[b], |t, v| {
            let m = ops::mean_axis1(t, v[0]);
            head(t, m, 12)
        });
        let c = rand_tensor(&[2, 3, 4, 5], 5);
        check(&[c], |t, v| {
            let p = ops::global_avg_pool(t, v[0]);
            head(t, p, 13)
        });
    }

    #[test]
    fn grad_shape_ops() {
        let a = rand_tensor(&[2, 3, 4], 6);
        check(&[a.clone()], |t, v| {
            let r = ops::reshape(t, v[0], &[6, 4]);
            head(t, r, 14)
        });
        check(&[a.clone()], |t, v| {
            let tr = ops::transpose_12(t, v[0]);
            head(t, tr, 15)
        });
        check(&[a.clone()], |t, v| {
            let p = ops::pad1d(t, v[0], 2, 3);
            head(t, p, 16)
        });
        check(&[a], |t, v| {
            let cseg = ops::crop1d(t, v[0], 1, 2);
            head(t, cseg, 17)
        });
    }

    #[test]
    fn grad_activations() {
        // Offset inputs away from the origin so kinked activations
        // (relu/prelu) see no finite-difference crossings.
        let mut a = rand_tensor(&[2, 3, 5], 7);
        for v in a.data_mut().iter_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        check(&[a.clone()], |t, v| {
            let y = ops::relu(t, v[0]);
            head(t, y, 18)
        });
        check(&[a.clone()], |t, v| {
            let y = ops::tanh_op(t, v[0]);
            head(t, y, 19)
        });
        check(&[a.clone()], |t, v| {
            let y = ops::sigmoid(t, v[0]);
            head(t, y, 20)
        });
        check(&[a.clone()], |t, v| {
            let y = ops::selu(t, v[0]);
            head(t, y, 21)
        });
        let alpha = Tensor::new(&[3], vec![0.25, 0.5, -0.3]);
        check(&[a, alpha], |t, v| {
            let y = ops::prelu(t, v[0], v[1]);
            head(t, y, 22)
        });
    }

    #[test]
    fn grad_matmul_linear() {
        let a = rand_tensor(&[3, 4], 8);
        let b = rand_tensor(&[4, 5], 9);
        check(&[a.clone(), b], |t, v| {
            let y = ops::matmul(t, v[0], v[1]);
            head(t, y, 23)
        });
        let bt = rand_tensor(&[5, 4], 10);
        check(&[a.clone(), bt], |t, v| {
            let y = ops::matmul_nt(t, v[0], v[1]);
            head(t, y, 24)
        });
        let w = rand_tensor(&[5, 4], 11);
        let bias = rand_tensor(&[5], 12);
        check(&[a, w, bias], |t, v| {
            let y = ops::linear(t, v[0], v[1], v[2]);
            head(t, y, 25)
        });
    }

    #[test]
    fn grad_conv1d_variants() {
        // plain strided
        let x = rand_tensor(&[2, 3, 16], 13);
        let w = rand_tensor(&[4, 3, 5], 14);
        let b = rand_tensor(&[4], 15);
        let spec = Conv1dSpec {
            stride: 2,
            ..Default::default()
        };
        check(&[x, w, b], |t, v| {
            let y = conv::conv1d(t, v[0], v[1], v[2], spec);
            head(t, y, 26)
        });
        // depthwise dilated with same padding
        let x = rand_tensor(&[2, 4, 12], 16);
        let w = rand_tensor(&[4, 1, 3], 17);
        let b = rand_tensor(&[4], 18);
        let spec = Conv1dSpec {
            groups: 4,
            dilation: 2,
            pad_left: 2,
            pad_right: 2,
            ..Default::default()
        };
        check(&[x, w, b], |t, v| {
            let y = conv::conv1d(t, v[0], v[1], v[2], spec);
            head(t, y, 27)
        });
        // grouped, stride + asymmetric padding
        let x = rand_tensor(&[1, 4, 10], 19);
        let w = rand_tensor(&[6, 2, 3], 20);
        let b = rand_tensor(&[6], 21);
        let spec = Conv1dSpec {
            stride: 2,
            groups: 2,
            pad_left: 1,
            pad_right: 2,
            ..Default::default()
        };
        check(&[x, w, b], |t, v| {
            let y = conv::conv1d(t, v[0], v[1], v[2], spec);
            head(t, y, 28)
        });
    }

    #[test]
    fn grad_conv_transpose1d() {
        let x = rand_tensor(&[2, 3, 6], 22);
        let w = rand_tensor(&[3, 2, 4], 23);
        let b = rand_tensor(&[2], 24);
        check(&[x, w, b], |t, v| {
            let y = conv::conv_transpose1d(t, v[0], v[1], v[2], 2);
            head(t, y, 29)
        });
    }

    #[test]
    fn grad_conv2d() {
        let x = rand_tensor(&[2, 2, 5, 6], 25);
        let w = rand_tensor(&[3, 2, 3, 3], 26);
        let b = rand_tensor(&[3], 27);
        check(&[x.clone(), w, b], |t, v| {
            let y = conv::conv2d(t, v[0], v[1], v[2], 1, 1);
            head(t, y, 30)
        });
        // 1x1 projection, no padding
        let w1 = rand_tensor(&[4, 2, 1, 1], 28);
        let b1 = rand_tensor(&[4], 29);
        check(&[x, w1, b1], |t, v| {
            let y = conv::conv2d(t, v[0], v[1], v[2], 0, 0);
            head(t, y, 31)
        });
    }

    #[test]
    fn grad_maxpool2d() {
        let x = rand_tensor(&[2, 2, 9, 7], 30);
        check(&[x], |t, v| {
            let y = conv::maxpool2d(t, v[0], 3, 3);
            head(t, y, 32)
        });
    }

    #[test]
    fn maxpool_shape_rule() {
        let mut tape = Tape::forward_only();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 201, 128]));
        let y = conv::maxpool2d(&mut tape, x, 3, 3);
        assert_eq!(tape.value(y).shape(), &[1, 1, 67, 42]);
    }

    #[test]
    fn grad_batchnorm_train_and_eval() {
        let x = rand_tensor(&[3, 2, 4, 5], 31);
        let gamma = rand_tensor(&[2], 32);
        let beta = rand_tensor(&[2], 33);
        check(&[x.clone(), gamma.clone(), beta.clone()], |t, v| {
            let (y, _) = conv::batchnorm2d_train(t, v[0], v[1], v[2], 1e-5);
            head(t, y, 34)
        });
        check(&[x, gamma, beta], |t, v| {
            let y =
                conv::batchnorm2d_eval(t, v[0], v[1], v[2], &[0.1, -0.2], &[0.9, 1.1], 1e-5);
            head(t, y, 35)
        });
    }

    #[test]
    fn grad_global_layer_norm() {
        let x = rand_tensor(&[2, 3, 7], 36);
        let gamma = rand_tensor(&[3], 37);
        let beta = rand_tensor(&[3], 38);
        check(&[x, gamma, beta], |t, v| {
            let y = conv::global_layer_norm(t, v[0], v[1], v[2], 1e-8);
            head(t, y, 39)
        });
    }

    #[test]
    fn grad_softmax_ce() {
        let logits = rand_tensor(&[4, 3], 40);
        let targets = vec![0, 2, 1, 2];
        check(&[logits], |t, v| {
            ops::softmax_cross_entropy(t, v[0], &targets)
        });
    }

    #[test]
    fn softmax_ce_uniform_logits_is_ln2() {
        let mut tape = Tape::forward_only();
        let logits = tape.leaf(Tensor::zeros(&[5, 2]));
        let loss = ops::softmax_cross_entropy(&mut tape, logits, &[0, 1, 0, 1, 1]);
        assert!((tape.value(loss).item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn grad_normalize_and_cosine() {
        let a = rand_tensor(&[3, 4], 41);
        let b = rand_tensor(&[3, 4], 42);
        check(&[a.clone()], |t, v| {
            let y = ops::normalize_rows(t, v[0]).unwrap();
            head(t, y, 43)
        });
        check(&[a, b], |t, v| {
            let y = ops::cosine_rows(t, v[0], v[1]).unwrap();
            head(t, y, 44)
        });
    }

    #[test]
    fn cosine_zero_norm_is_domain_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[1, 3]));
        let b = tape.leaf(Tensor::ones(&[1, 3]));
        assert!(ops::cosine_rows(&mut tape, a, b).is_err());
    }

    #[test]
    fn grad_add_margin() {
        let mut rng = rng_from_seed(45);
        // Keep |cos| well below the clamp so the margin branch is smooth.
        let mut data = Vec::new();
        for _ in 0..4 * 3 {
            data.push(rng.gen_range(-0.9..0.9));
        }
        let cos = Tensor::new(&[4, 3], data);
        let targets = vec![2, 0, 1, 1];
        check(&[cos], |t, v| {
            let y = ops::add_margin(t, v[0], &targets, 0.3);
            head(t, y, 46)
        });
    }

    #[test]
    fn gradient_accumulates_across_multiple_uses() {
        // y = x*x + x: dy/dx = 2x + 1
        let x = Tensor::new(&[1], vec![3.0]);
        let mut tape = Tape::new();
        let vx = tape.leaf(x);
        let sq = ops::mul(&mut tape, vx, vx);
        let y = ops::add(&mut tape, sq, vx);
        let s = ops::sum_all(&mut tape, y);
        let grads = tape.backward(s);
        assert!((grads.get(vx).unwrap().data()[0] - 7.0).abs() < 1e-12);
    }
}
