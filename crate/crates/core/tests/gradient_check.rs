//! Finite-difference verification of every hand-written backward pass.
//!
//! All checks run in f64. Losses are random linear functionals of the op
//! output, so the upstream gradient is known exactly and the analytic path
//! is exercised end to end.

use hmic_core::gradcheck::{finite_difference_gradient, max_relative_error};
use hmic_core::net::{LayerSpec, Mode, Network};
use hmic_core::ops::activation::Activation;
use hmic_core::ops::conv::{conv_backward, conv_forward, ConvGeom};
use hmic_core::ops::dense::{dense_backward, dense_forward};
use hmic_core::ops::dropout::{dropout_grad, dropout_with_mask, DropoutSpec};
use hmic_core::ops::loss::softmax_ce_from_logits;
use hmic_core::ops::pool::{maxpool, maxpool_grad};
use hmic_core::ops::upsample::{upsample_nearest, upsample_nearest_grad};
use hmic_core::rng;
use hmic_core::Tensor3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const TOLERANCE: f64 = 1e-3;
const FLOOR: f64 = 1e-4;
const INSTANCES: usize = 20;

fn random_vec(stream: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| stream.gen_range(lo..hi)).collect()
}

fn dims(stream: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        stream.gen_range(3..=8),
        stream.gen_range(3..=8),
        stream.gen_range(1..=2),
    )
}

#[test]
fn conv_gradients_match_finite_differences() {
    for instance in 0..INSTANCES {
        let mut stream = rng::substream(0xC0_17, &[instance as u64]);
        let (h, w, cin) = dims(&mut stream);
        let cout = stream.gen_range(1..=3);
        let geom = ConvGeom {
            out_channels: cout,
            in_channels: cin,
            kernel: 3,
            padding: 1,
            stride: 1,
            };
        let input_data = random_vec(&mut stream, h * w * cin, -1.0, 1.0);
        let kernels = random_vec(&mut stream, geom.weight_len(), -0.7, 0.7);
        let bias = random_vec(&mut stream, cout, -0.3, 0.3);
        let input = Tensor3::from_vec(h, w, cin, input_data.clone()).unwrap();
        let out_shape = {
            let (oh, ow) = geom.output_dims(h, w).unwrap();
            (oh, ow, cout)
        };
        let upstream_data = random_vec(&mut stream, out_shape.0 * out_shape.1 * out_shape.2, -1.0, 1.0);
        let upstream =
            Tensor3::from_vec(out_shape.0, out_shape.1, out_shape.2, upstream_data.clone())
                .unwrap();

        let grads = conv_backward(&input, &geom, &kernels, &upstream).unwrap();

        // loss(x) = sum(upstream .* conv(x))
        let loss_wrt_input = |data: &[f64]| {
            let t = Tensor3::from_vec(h, w, cin, data.to_vec()).unwrap();
            let out = conv_forward(&t, &geom, &kernels, &bias, Activation::Identity).unwrap();
            out.data()
                .iter()
                .zip(&upstream_data)
                .map(|(o, u)| o * u)
                .sum()
        };
        let numeric = finite_difference_gradient(&input_data, STEP, loss_wrt_input);
        let err = max_relative_error(grads.input.data(), &numeric, FLOOR);
        assert!(err < TOLERANCE, "conv input grad error {err}");

        let loss_wrt_kernels = |k: &[f64]| {
            let out = conv_forward(&input, &geom, k, &bias, Activation::Identity).unwrap();
            out.data()
                .iter()
                .zip(&upstream_data)
                .map(|(o, u)| o * u)
                .sum()
        };
        let numeric = finite_difference_gradient(&kernels, STEP, loss_wrt_kernels);
        let err = max_relative_error(&grads.kernels, &numeric, FLOOR);
        assert!(err < TOLERANCE, "conv kernel grad error {err}");

        let loss_wrt_bias = |b: &[f64]| {
            let out = conv_forward(&input, &geom, &kernels, b, Activation::Identity).unwrap();
            out.data()
                .iter()
                .zip(&upstream_data)
                .map(|(o, u)| o * u)
                .sum()
        };
        let numeric = finite_difference_gradient(&bias, STEP, loss_wrt_bias);
        let err = max_relative_error(&grads.bias, &numeric, FLOOR);
        assert!(err < TOLERANCE, "conv bias grad error {err}");
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    for instance in 0..INSTANCES {
        let mut stream = rng::substream(0xDE_25, &[instance as u64]);
        let in_dim = stream.gen_range(2..=12);
        let out_dim = stream.gen_range(1..=6);
        let input = random_vec(&mut stream, in_dim, -1.0, 1.0);
        let weights = random_vec(&mut stream, in_dim * out_dim, -0.8, 0.8);
        let bias = random_vec(&mut stream, out_dim, -0.3, 0.3);
        let upstream = random_vec(&mut stream, out_dim, -1.0, 1.0);

        let grads = dense_backward(&input, in_dim, out_dim, &weights, &upstream).unwrap();

        let loss_wrt_input = |x: &[f64]| {
            let out =
                dense_forward(x, in_dim, out_dim, &weights, &bias, Activation::Identity).unwrap();
            out.iter().zip(&upstream).map(|(o, u)| o * u).sum()
        };
        let numeric = finite_difference_gradient(&input, STEP, loss_wrt_input);
        let err = max_relative_error(&grads.input, &numeric, FLOOR);
        assert!(err < TOLERANCE, "dense input grad error {err}");

        let loss_wrt_weights = |w: &[f64]| {
            let out =
                dense_forward(&input, in_dim, out_dim, w, &bias, Activation::Identity).unwrap();
            out.iter().zip(&upstream).map(|(o, u)| o * u).sum()
        };
        let numeric = finite_difference_gradient(&weights, STEP, loss_wrt_weights);
        let err = max_relative_error(&grads.weights, &numeric, FLOOR);
        assert!(err < TOLERANCE, "dense weight grad error {err}");
    }
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    for instance in 0..INSTANCES {
        let mut stream = rng::substream(0x90_01, &[instance as u64]);
        let window = stream.gen_range(2..=2usize);
        let h = window * stream.gen_range(1..=3);
        let w = window * stream.gen_range(1..=3);
        let c = stream.gen_range(1..=2);
        // continuous random values: ties have probability zero
        let input_data = random_vec(&mut stream, h * w * c, -1.0, 1.0);
        let input = Tensor3::from_vec(h, w, c, input_data.clone()).unwrap();
        let (out, indices) = maxpool(&input, window).unwrap();
        let upstream_data = random_vec(&mut stream, out.len(), -1.0, 1.0);
        let upstream = Tensor3::from_vec(h / window, w / window, c, upstream_data.clone()).unwrap();

        let analytic = maxpool_grad(&indices, &upstream).unwrap();
        let loss = |data: &[f64]| {
            let t = Tensor3::from_vec(h, w, c, data.to_vec()).unwrap();
            let (o, _) = maxpool(&t, window).unwrap();
            o.data()
                .iter()
                .zip(&upstream_data)
                .map(|(a, b)| a * b)
                .sum()
        };
        let numeric = finite_difference_gradient(&input_data, 1e-5, loss);
        let err = max_relative_error(analytic.data(), &numeric, FLOOR);
        assert!(err < TOLERANCE, "maxpool grad error {err}");

        // conservation: routed mass equals upstream mass
        let sum_up: f64 = upstream_data.iter().sum();
        let sum_grad: f64 = analytic.data().iter().sum();
        assert!((sum_up - sum_grad).abs() < 1e-12);
    }
}

#[test]
fn dropout_gradient_matches_finite_differences() {
    for instance in 0..INSTANCES {
        let mut stream = rng::substream(0xD0_0F, &[instance as u64]);
        let (h, w, c) = dims(&mut stream);
        let input_data = random_vec(&mut stream, h * w * c, -1.0, 1.0);
        let input = Tensor3::from_vec(h, w, c, input_data.clone()).unwrap();
        // inference mode (dropout off) and a fixed training mask both have
        // exact derivatives
        for (rate, training) in [(0.5, false), (0.4, true)] {
            let spec = DropoutSpec::new(rate, instance as u64).unwrap();
            let (_, mask) = dropout_with_mask(&input, &spec, training);
            let upstream_data = random_vec(&mut stream, input.len(), -1.0, 1.0);
            let upstream = Tensor3::from_vec(h, w, c, upstream_data.clone()).unwrap();
            let analytic = dropout_grad(&upstream, &mask, spec.rate);

            let loss = |data: &[f64]| {
                let t = Tensor3::from_vec(h, w, c, data.to_vec()).unwrap();
                let (o, _) = dropout_with_mask(&t, &spec, training);
                o.data()
                    .iter()
                    .zip(&upstream_data)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let numeric = finite_difference_gradient(&input_data, STEP, loss);
            let err = max_relative_error(analytic.data(), &numeric, FLOOR);
            assert!(err < TOLERANCE, "dropout grad error {err} (training {training})");
        }
    }
}

#[test]
fn softmax_crossentropy_gradient_matches_finite_differences() {
    for instance in 0..INSTANCES {
        let mut stream = rng::substream(0x5E_CE, &[instance as u64]);
        let n = stream.gen_range(2..=8);
        let logits = random_vec(&mut stream, n, -2.0, 2.0);
        let label = stream.gen_range(0..n);

        let (_, analytic, _) = softmax_ce_from_logits(&logits, label).unwrap();
        let loss = |z: &[f64]| {
            let (l, _, _) = softmax_ce_from_logits(z, label).unwrap();
            l
        };
        let numeric = finite_difference_gradient(&logits, 1e-5, loss);
        let err = max_relative_error(&analytic, &numeric, FLOOR);
        assert!(err < TOLERANCE, "softmax+CE grad error {err}");
    }
}

#[test]
fn upsample_gradient_matches_finite_differences() {
    for instance in 0..INSTANCES {
        let mut stream = rng::substream(0x0B_5A, &[instance as u64]);
        let (h, w, c) = (
            stream.gen_range(1..=4),
            stream.gen_range(1..=4),
            stream.gen_range(1..=2),
        );
        let factor = stream.gen_range(2..=3);
        let input_data = random_vec(&mut stream, h * w * c, -1.0, 1.0);
        let input = Tensor3::from_vec(h, w, c, input_data.clone()).unwrap();
        let out = upsample_nearest(&input, factor).unwrap();
        let upstream_data = random_vec(&mut stream, out.len(), -1.0, 1.0);
        let upstream =
            Tensor3::from_vec(h * factor, w * factor, c, upstream_data.clone()).unwrap();

        let analytic = upsample_nearest_grad((h, w, c), factor, &upstream).unwrap();
        let loss = |data: &[f64]| {
            let t = Tensor3::from_vec(h, w, c, data.to_vec()).unwrap();
            let o = upsample_nearest(&t, factor).unwrap();
            o.data()
                .iter()
                .zip(&upstream_data)
                .map(|(a, b)| a * b)
                .sum()
        };
        let numeric = finite_difference_gradient(&input_data, STEP, loss);
        let err = max_relative_error(analytic.data(), &numeric, FLOOR);
        assert!(err < TOLERANCE, "upsample grad error {err}");
    }
}

/// Whole-network check: a small conv+pool+dense stack with ReLU and a
/// softmax+CE head, differentiated w.r.t. every parameter at once.
#[test]
fn network_parameter_gradients_match_finite_differences() {
    for instance in 0..8 {
        let mut stream = rng::substream(0x2E_07, &[instance as u64]);
        let specs = vec![
            LayerSpec::Conv {
                out_channels: 2,
                kernel: 3,
                padding: 1,
                stride: 1,
                activation: Activation::Relu,
            },
            LayerSpec::MaxPool { window: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                out: 4,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                out: 3,
                activation: Activation::Identity,
            },
        ];
        let mut net = Network::<f64>::new((4, 4, 1), specs).unwrap();
        let n_params = net.param_count();
        let init = random_vec(&mut stream, n_params, -0.6, 0.6);
        net.params_mut().copy_from_slice(&init);

        let input =
            Tensor3::from_vec(4, 4, 1, random_vec(&mut stream, 16, -1.0, 1.0)).unwrap();
        let label = stream.gen_range(0..3);

        let (out, caches) = net.forward_cached(&input, Mode::Infer).unwrap();
        let (_, grad_logits, _) = softmax_ce_from_logits(out.data(), label).unwrap();
        let upstream = Tensor3::from_vec(1, 1, 3, grad_logits).unwrap();
        let (analytic, _) = net.backward(&caches, upstream, 0).unwrap();

        let loss = |params: &[f64]| {
            let mut probe = net.clone();
            probe.params_mut().copy_from_slice(params);
            let out = probe.forward(&input).unwrap();
            let (l, _, _) = softmax_ce_from_logits(out.data(), label).unwrap();
            l
        };
        let numeric = finite_difference_gradient(&init, STEP, loss);
        let err = max_relative_error(&analytic, &numeric, FLOOR);
        assert!(err < TOLERANCE, "network grad error {err}");
    }
}

/// The autoencoder stack (upsampling + sigmoid output) under an MSE loss.
#[test]
fn autoencoder_stack_gradients_match_finite_differences() {
    for instance in 0..6 {
        let mut stream = rng::substream(0xAE_60, &[instance as u64]);
        let specs = vec![
            LayerSpec::Conv {
                out_channels: 2,
                kernel: 3,
                padding: 1,
                stride: 1,
                activation: Activation::Relu,
            },
            LayerSpec::MaxPool { window: 2 },
            LayerSpec::UpsampleNearest { factor: 2 },
            LayerSpec::Conv {
                out_channels: 1,
                kernel: 3,
                padding: 1,
                stride: 1,
                activation: Activation::Sigmoid,
            },
        ];
        let mut net = Network::<f64>::new((4, 4, 1), specs).unwrap();
        let n_params = net.param_count();
        let init = random_vec(&mut stream, n_params, -0.8, 0.8);
        net.params_mut().copy_from_slice(&init);

        let target = random_vec(&mut stream, 16, 0.0, 1.0);
        let input =
            Tensor3::from_vec(4, 4, 1, random_vec(&mut stream, 16, 0.0, 1.0)).unwrap();

        let (out, caches) = net.forward_cached(&input, Mode::Infer).unwrap();
        let mut grad_out = out.clone();
        let scale = 2.0 / 16.0;
        for (g, &t) in grad_out.data_mut().iter_mut().zip(&target) {
            *g = (*g - t) * scale;
        }
        let (analytic, _) = net.backward(&caches, grad_out, 0).unwrap();

        let loss = |params: &[f64]| {
            let mut probe = net.clone();
            probe.params_mut().copy_from_slice(params);
            let out = probe.forward(&input).unwrap();
            out.data()
                .iter()
                .zip(&target)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
                / 16.0
        };
        // small step: a parameter nudge must not flip a pool winner
        let numeric = finite_difference_gradient(&init, 1e-5, loss);
        let err = max_relative_error(&analytic, &numeric, FLOOR);
        assert!(err < TOLERANCE, "autoencoder grad error {err}");
    }
}
