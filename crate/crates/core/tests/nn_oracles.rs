use moe_gating::data::synthetic;
use moe_gating::expert::{accuracy, train_expert};
use moe_gating::data::DatasetRef;
use moe_gating::nn::{
    cross_entropy_loss, gradient_check, sgd_step, GradCheckOptions, LayerSpec, Network, SgdState, TrainConfig,
};
use moe_gating::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(out_dim: usize) -> LayerSpec {
    LayerSpec::Dense { out_dim }
}

#[test]
fn two_layer_forward_matches_straight_line() {
    let net = {
        let mut n = Network::<f32>::new(&[3], &[dense(4), LayerSpec::Relu, dense(2)]).unwrap();
        n.init(11);
        n
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f32> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = net.predict(&Tensor::new(vec![1, 3], x.clone()).unwrap()).unwrap();

    let (l1, l2) = (&net.layers()[0], &net.layers()[2]);
    let mut h = [0.0f64; 4];
    for (o, v) in h.iter_mut().enumerate() {
        *v = f64::from(l1.bias[o]);
        for i in 0..3 {
            *v += f64::from(l1.weight[o * 3 + i]) * f64::from(x[i]);
        }
        *v = v.max(0.0);
    }
    for o in 0..2 {
        let mut y = f64::from(l2.bias[o]);
        for (i, hv) in h.iter().enumerate() {
            y += f64::from(l2.weight[o * 4 + i]) * hv;
        }
        assert!((y - f64::from(out.data()[o])).abs() < 1e-5, "logit {o}: {y} vs {}", out.data()[o]);
    }
}

#[test]
fn loss_matches_brute_force_log_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, k) = (4, 6);
    let z: Vec<f32> = (0..n * k).map(|_| rng.random_range(-30.0..30.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| (i * 5) % k).collect();
    let (loss, grad) = cross_entropy_loss(&Tensor::new(vec![n, k], z.clone()).unwrap(), &labels).unwrap();

    let mut expected = 0.0f64;
    for (row, &y) in z.chunks(k).zip(&labels) {
        let max = row.iter().map(|&v| f64::from(v)).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (f64::from(v) - max).exp()).sum::<f64>().ln();
        expected += lse - f64::from(row[y]);
    }
    expected /= n as f64;
    assert!((f64::from(loss) - expected).abs() < 1e-4 * expected.max(1.0));

    for (i, (row, &y)) in z.chunks(k).zip(&labels).enumerate() {
        let max = row.iter().map(|&v| f64::from(v)).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|&v| (f64::from(v) - max).exp()).sum();
        for j in 0..k {
            let p = (f64::from(row[j]) - max).exp() / s;
            let g = (p - f64::from(u8::from(j == y))) / n as f64;
            assert!((f64::from(grad.data()[i * k + j]) - g).abs() < 1e-6);
        }
    }
}

#[test]
fn one_sgd_step_matches_closed_form() {
    // one input feature, two logits: z_j = w_j * x + b_j
    let mut net = Network::<f32>::new(&[1], &[dense(2)]).unwrap();
    net.layers_mut()[0].weight = vec![0.5, -0.25];
    net.layers_mut()[0].bias = vec![0.1, 0.0];
    let x = 2.0f64;
    let cfg = TrainConfig {
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let mut state = SgdState::new(&net);
    let batch = Tensor::new(vec![1, 1], vec![x as f32]).unwrap();
    sgd_step(&mut net, &mut state, &batch, &[1], None, &cfg).unwrap();

    let z = [0.5 * x + 0.1, -0.25 * x];
    let p1 = 1.0 / (1.0 + (z[0] - z[1]).exp());
    let p = [1.0 - p1, p1];
    let y = [0.0, 1.0];
    let w0 = [0.5, -0.25];
    let b0 = [0.1, 0.0];
    for j in 0..2 {
        let g = p[j] - y[j];
        let w = w0[j] - 0.1 * g * x;
        let b = b0[j] - 0.1 * g;
        assert!((f64::from(net.layers()[0].weight[j]) - w).abs() < 1e-6);
        assert!((f64::from(net.layers()[0].bias[j]) - b).abs() < 1e-6);
    }
}

#[test]
fn loss_falls_every_step_on_separable_pair() {
    let mut net = Network::<f32>::new(&[2], &[dense(2)]).unwrap();
    net.init(1);
    let batch = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let mut state = SgdState::new(&net);
    let losses: Vec<f32> = (0..11)
        .map(|_| sgd_step(&mut net, &mut state, &batch, &[0, 1], None, &cfg).unwrap())
        .collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn linear_model_gradcheck() {
    let mut net = Network::<f32>::new(&[5], &[dense(3)]).unwrap();
    net.init(2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f32> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = gradient_check(&net, &Tensor::new(vec![3, 5], x).unwrap(), &[0, 2, 1], &GradCheckOptions::default())
        .unwrap();
    assert_eq!(r.checked, 18);
    assert!(r.max_relative_error < 1e-4, "{r:?}");
}

#[test]
fn conv_dense_gradcheck() {
    let specs = [
        LayerSpec::Conv {
            out_channels: 2,
            kernel: 3,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 2 },
        LayerSpec::Flatten,
        dense(3),
    ];
    let mut net = Network::<f32>::new(&[1, 6, 6], &specs).unwrap();
    net.init(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f32> = (0..72).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = gradient_check(&net, &Tensor::new(vec![2, 1, 6, 6], x).unwrap(), &[1, 2], &GradCheckOptions::default())
        .unwrap();
    assert_eq!(r.checked, net.param_count());
    assert!(r.max_relative_error < 1e-3, "{r:?}");
}

#[test]
fn lenet_overfits_fifty_samples() {
    let train = synthetic::generate_tag("synth-blobs", 50, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = train_expert(DatasetRef::full("synth-blobs"), &train, None, &cfg, |_| {}).unwrap();
    let logits = model.infer_dataset(&train).unwrap().logits;
    assert_eq!(accuracy(&logits, train.labels()), 1.0);
}
