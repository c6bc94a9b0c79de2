use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_gradients;
use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Builds `sum(w ⊙ op(inputs))` with fixed random weights `w`, differentiates
/// it, and checks every input element against central differences.
fn fd_check<F>(inputs: Vec<Tensor<f64>>, seed: u64, tolerance: f64, op: F)
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = op(&mut g, &vars);
        g.value(out).shape().to_vec()
    };
    let weights = if probe.is_empty() { Tensor::scalar(1.0) } else { random_tensor(&mut rng, &probe) };
    let eval = |ts: &[Tensor<f64>], want_grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = op(&mut g, &vars);
        let w = g.constant(weights.clone());
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod);
        let value = g.value(loss).item();
        if !want_grads {
            return (value, Vec::new());
        }
        g.backward(loss).unwrap();
        let grads = vars
            .iter()
            .zip(ts)
            .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
            .collect();
        (value, grads)
    };
    let (_, analytic) = eval(&inputs, true);
    let mut inputs = inputs;
    let report = check_gradients(&mut inputs, &analytic, 1e-5, tolerance, |ts| eval(ts, false).0);
    assert!(report.passed(), "finite-difference mismatch: {:?}", report.failures.first());
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let m = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(g.value(p).shape(), &[2, 2]);
}

#[test]
fn matmul_orthogonal_pick() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
    let b = g.constant(Tensor::from_rows(&[vec![0.0], vec![5.0]]).unwrap());
    let p = g.matmul(a, b).unwrap();
    assert_eq!(g.value(p).data(), &[0.0]);
    assert_eq!(g.value(p).shape(), &[1, 1]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(g.matmul(a, b), Err(AutodiffError::Shape(_))));
    assert!(g.matmul_t(a, b).is_ok());
    let c = g.constant(Tensor::zeros(vec![4, 2]));
    assert!(matches!(g.matmul_t(a, c), Err(AutodiffError::Shape(_))));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_tensor(&mut rng, &[3, 4]);
    let b = random_tensor(&mut rng, &[4, 2]);
    fd_check(vec![a, b], 1, 1e-6, |g, v| g.matmul(v[0], v[1]).unwrap());
}

#[test]
fn matmul_vector_forms_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = random_tensor(&mut rng, &[3, 4]);
    let v = random_tensor(&mut rng, &[4]);
    let r = random_tensor(&mut rng, &[3]);
    fd_check(vec![m.clone(), v], 2, 1e-6, |g, x| g.matmul(x[0], x[1]).unwrap());
    fd_check(vec![r, m], 3, 1e-6, |g, x| g.matmul(x[0], x[1]).unwrap());
}

#[test]
fn matmul_t_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_tensor(&mut rng, &[3, 5]);
    let b = random_tensor(&mut rng, &[2, 5]);
    fd_check(vec![a, b], 4, 1e-6, |g, v| g.matmul_t(v[0], v[1]).unwrap());
}

#[test]
fn elementwise_definitions() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, -3.0, 2.0]));
    let s = g.sigmoid(x);
    let r = g.relu(x);
    assert_eq!(g.value(s).data()[0], 0.5);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn mean_gradient_is_uniform() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]), true);
    let m = g.mean(x);
    g.backward(m).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);
}

#[test]
fn log_clamps_small_inputs() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![0.0, 1e-20, 1.0]), true);
    let l = g.log(x);
    let expected = (1e-12f64).ln();
    assert_eq!(g.value(l).data(), &[expected, expected, 0.0]);
    let s = g.sum(l);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_tensor(&mut rng, &[2, 3]);
    let b = random_tensor(&mut rng, &[2, 3]);
    let row = random_tensor(&mut rng, &[3]);
    let pos = Tensor::new(vec![2, 3], a.data().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
    fd_check(vec![a.clone()], 5, 1e-4, |g, v| g.sigmoid(v[0]));
    fd_check(vec![a.clone()], 6, 1e-4, |g, v| g.relu(v[0]));
    fd_check(vec![a.clone()], 7, 1e-4, |g, v| g.gelu(v[0]));
    fd_check(vec![pos], 8, 1e-4, |g, v| g.log(v[0]));
    fd_check(vec![a.clone(), b.clone()], 9, 1e-4, |g, v| g.add(v[0], v[1]).unwrap());
    fd_check(vec![a.clone(), b.clone()], 10, 1e-4, |g, v| g.mul(v[0], v[1]).unwrap());
    fd_check(vec![a.clone(), row], 11, 1e-4, |g, v| g.add_row(v[0], v[1]).unwrap());
    fd_check(vec![a.clone()], 12, 1e-4, |g, v| g.affine(v[0], -0.7, 0.3));
    fd_check(vec![a.clone()], 13, 1e-4, |g, v| g.mul_const(v[0], vec![0.0, 2.0, 1.0, 1.0, 0.5, 0.0]).unwrap());
    fd_check(vec![a.clone(), b], 14, 1e-4, |g, v| g.concat(&[v[0], v[1]]).unwrap());
    fd_check(vec![a.clone()], 15, 1e-4, |g, v| g.slice_last(v[0], 1, 2).unwrap());
    fd_check(vec![a.clone()], 16, 1e-4, |g, v| g.mean(v[0]));
    fd_check(vec![a.clone()], 17, 1e-4, |g, v| g.sum_last(v[0]));
    fd_check(vec![a.clone()], 18, 1e-4, |g, v| g.pick(v[0], &[2, 0]).unwrap());
    fd_check(vec![a], 19, 1e-4, |g, v| g.gather_rows(v[0], &[1, 0, 1]).unwrap());
}

#[test]
fn layer_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&mut rng, &[3, 5]);
    let gamma = random_tensor(&mut rng, &[5]);
    let beta = random_tensor(&mut rng, &[5]);
    fd_check(vec![x, gamma, beta], 20, 1e-4, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-12).unwrap());
}

#[test]
fn softmax_equal_logits() {
    let p = softmax::<f64>(&[2.5, 2.5, 2.5]).unwrap();
    for v in p {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let p = softmax::<f64>(&[1000.0, 0.0]).unwrap();
    assert!(p.iter().all(|v| v.is_finite()));
    assert!((p[0] - 1.0).abs() < 1e-15);
    assert!(p[1] < 1e-300);
}

#[test]
fn softmax_of_nothing_is_an_error() {
    assert!(softmax::<f64>(&[]).is_err());
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_tensor(&mut rng, &[5]);
    fd_check(vec![x], 21, 1e-6, |g, v| g.softmax(v[0]));
    let rows = random_tensor(&mut rng, &[3, 4]);
    fd_check(vec![rows], 22, 1e-6, |g, v| g.softmax(v[0]));
}

#[test]
fn log_softmax_matches_log_of_softmax() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![1000.0, 0.0, -5.0]]).unwrap());
    let ls = g.log_softmax(x);
    let direct = g.value(ls).data().to_vec();
    for (r, row) in g.value(x).data().chunks(3).enumerate() {
        let p = softmax::<f64>(row).unwrap();
        for c in 0..3 {
            let want = if p[c] > 0.0 { p[c].ln() } else { row[c] - 1000.0 };
            assert!((direct[r * 3 + c] - want).abs() < 1e-12, "{r},{c}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let rows = random_tensor(&mut rng, &[3, 4]);
    fd_check(vec![rows], 24, 1e-6, |g, v| g.log_softmax(v[0]));
}

#[test]
fn log_sigmoid_is_stable() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, -800.0, 800.0, 3.0]));
    let y = g.log_sigmoid(x);
    let v = g.value(y).data();
    assert!((v[0] + std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(v[1], -800.0);
    assert_eq!(v[2], 0.0);
    assert!((v[3] - (1.0 / (1.0 + (-3.0f64).exp())).ln()).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let a = random_tensor(&mut rng, &[6]);
    fd_check(vec![a], 26, 1e-6, |g, v| g.log_sigmoid(v[0]));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]), true);
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn gradients_accumulate_across_uses() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0), true);
    let y = g.add(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    assert_eq!(g.backward(x), Err(AutodiffError::NonScalarLoss(vec![2])));
}

#[test]
fn backward_rejects_non_finite_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(f64::NAN), true);
    assert!(matches!(g.backward(x), Err(AutodiffError::NonFinite(_))));
}

#[test]
fn zero_grad_resets_accumulation() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    let s = g.sum(x);
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    let c = g.constant(Tensor::vector(vec![3.0, 4.0]));
    let p = g.mul(x, c).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[3.0, 4.0]);
    assert!(g.grad(c).is_none());
}

#[test]
fn repeated_backward_is_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = random_tensor(&mut rng, &[4, 6]);
    let w = random_tensor(&mut rng, &[6, 6]);
    let run = || {
        let mut g = Graph::new();
        let av = g.param(&a);
        let wv = g.param(&w);
        let h = g.matmul(av, wv).unwrap();
        let h = g.gelu(h);
        let p = g.softmax(h);
        let l = g.log(p);
        let m = g.mean(l);
        g.backward(m).unwrap();
        (g.grad(av).unwrap().to_vec(), g.grad(wv).unwrap().to_vec())
    };
    let (ga, gw) = run();
    let (ga2, gw2) = run();
    assert!(ga.iter().zip(&ga2).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(gw.iter().zip(&gw2).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(Tensor::new(vec![2, 2], vec![1.0f64; 3]).is_err());
    assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
}

#[test]
fn single_precision_graph_works() {
    let mut g = Graph::<f32>::new();
    let x = g.leaf(Tensor::vector(vec![0.5f32, -1.0]), true);
    let s = g.sigmoid(x);
    let m = g.sum(s);
    g.backward(m).unwrap();
    let grad = g.grad(x).unwrap();
    assert!((grad[0] - 0.235_003_7).abs() < 1e-6);
}

proptest! {
    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-700.0f64..700.0, 1..16)) {
        let p = softmax(&logits).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
}
