use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transrx_numerics::gradcheck::{check, numerical_gradient, relative_error};
use transrx_numerics::{Graph, Real, Result, Tensor, Var};

const TOL_F64: f64 = 1e-4;

fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

fn assert_close(name: &str, errors: &[f64], tol: f64) {
    for (i, e) in errors.iter().enumerate() {
        assert!(*e < tol, "{name}: input {i} relative error {e:.3e} >= {tol:.0e}");
    }
}

fn run(name: &str, build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) {
    let errs = check(build, inputs, 1e-6).unwrap();
    assert_close(name, &errs, TOL_F64);
}

#[test]
fn matmul_f32_against_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Tensor<f32> = random(&mut rng, &[3, 4]);
    let b: Tensor<f32> = random(&mut rng, &[4, 2]);
    let build = |g: &mut Graph<f32>, v: &[Var]| {
        let c = g.matmul(v[0], v[1])?;
        g.sum(c)
    };
    let errs = check(&build, &[a, b], 1e-2).unwrap();
    assert_close("matmul f32", &errs, 1e-3);
}

#[test]
fn primitives_f64_against_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = |rng: &mut ChaCha8Rng, s: &[usize]| random::<f64>(rng, s);

    run(
        "matmul",
        &|g, v| g.matmul(v[0], v[1]),
        &[r(&mut rng, &[2, 3, 4]), r(&mut rng, &[4, 5])],
    );
    run(
        "bmm",
        &|g, v| g.bmm(v[0], v[1], false),
        &[r(&mut rng, &[2, 3, 4]), r(&mut rng, &[2, 4, 5])],
    );
    run(
        "bmm_nt",
        &|g, v| g.bmm(v[0], v[1], true),
        &[r(&mut rng, &[2, 3, 4]), r(&mut rng, &[2, 5, 4])],
    );
    run(
        "add_broadcast",
        &|g, v| g.add_broadcast(v[0], v[1]),
        &[r(&mut rng, &[2, 3, 4]), r(&mut rng, &[3, 4])],
    );
    run(
        "add",
        &|g, v| g.add(v[0], v[1]),
        &[r(&mut rng, &[3, 4]), r(&mut rng, &[3, 4])],
    );
    run(
        "mul",
        &|g, v| g.mul(v[0], v[1]),
        &[r(&mut rng, &[3, 4]), r(&mut rng, &[3, 4])],
    );
    run("scale", &|g, v| g.scale(v[0], -1.7), &[r(&mut rng, &[5])]);
    run("sigmoid", &|g, v| g.sigmoid(v[0]), &[r(&mut rng, &[2, 5])]);
    run("softmax", &|g, v| g.softmax_lastaxis(v[0]), &[r(&mut rng, &[3, 6])]);
    run(
        "layer_norm",
        &|g, v| g.layer_norm(v[0], v[1], v[2], 1e-6),
        &[r(&mut rng, &[4, 6]), r(&mut rng, &[6]), r(&mut rng, &[6])],
    );
    run(
        "concat",
        &|g, v| g.concat_lastaxis(v[0], v[1]),
        &[r(&mut rng, &[2, 3, 4]), r(&mut rng, &[2, 3, 1])],
    );
    run("reshape", &|g, v| g.reshape(v[0], &[6, 2]), &[r(&mut rng, &[3, 4])]);
    run(
        "permute",
        &|g, v| g.permute(v[0], &[2, 0, 1]),
        &[r(&mut rng, &[2, 3, 4])],
    );
    run("transpose", &|g, v| g.transpose_last2(v[0]), &[r(&mut rng, &[2, 3, 4])]);
    run(
        "select_rows",
        &|g, v| g.select_rows(v[0], &[0, 2, 2]),
        &[r(&mut rng, &[2, 4, 3])],
    );
    run("sum", &|g, v| g.sum(v[0]), &[r(&mut rng, &[7])]);
    run("mean", &|g, v| g.mean(v[0]), &[r(&mut rng, &[7])]);
    let labels: Vec<f64> = (0..8).map(|i| (i % 3 == 0) as u8 as f64).collect();
    run("bce_llr", &|g, v| g.bce_llr(v[0], &labels), &[r(&mut rng, &[2, 4])]);
}

#[test]
fn relu_away_from_kink() {
    // Keep inputs off zero so the finite difference never straddles the kink.
    let x = Tensor::new(vec![6], vec![-0.9, -0.4, -0.1, 0.2, 0.5, 1.3]).unwrap();
    run("relu", &|g, v| g.relu(v[0]), &[x]);
}

#[test]
fn composite_attention_like_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = [
        random::<f64>(&mut rng, &[1, 5, 4]),
        random::<f64>(&mut rng, &[4, 4]),
        random::<f64>(&mut rng, &[4, 4]),
    ];
    run(
        "attention",
        &|g, v| {
            let q = g.matmul(v[0], v[1])?;
            let k = g.matmul(v[0], v[2])?;
            let s = g.bmm(q, k, true)?;
            let s = g.scale(s, 0.5)?;
            let p = g.softmax_lastaxis(s)?;
            g.bmm(p, v[0], false)
        },
        &inputs,
    );
}

#[test]
fn bce_gradient_matches_sigmoid_closed_form() {
    let llr = vec![-3.0, -0.5, 0.0, 0.7, 4.0];
    let labels = vec![1.0, 0.0, 1.0, 1.0, 0.0];
    let mut g = Graph::<f64>::new();
    let v = g
        .leaf(Tensor::new(vec![5], llr.clone()).unwrap().with_requires_grad(true))
        .unwrap();
    let loss = g.bce_llr(v, &labels).unwrap();
    let grad = g.backward(loss).unwrap().of(v);
    for i in 0..5 {
        let sig = 1.0 / (1.0 + (-llr[i] as f64).exp());
        let want = (sig - (1.0 - labels[i])) / 5.0;
        assert!((grad[i] - want).abs() < 1e-12);
    }
}

#[test]
fn numerical_gradient_of_known_function() {
    let x = Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap();
    let mut f = |ts: &[Tensor<f64>]| -> Result<f64> { Ok(ts[0].data().iter().map(|v| v * v).sum()) };
    let g = numerical_gradient(&mut f, &[x], 0, &[0, 1], 1e-5).unwrap();
    assert!(relative_error(&g, &[2.0, 4.0], 1e-12) < 1e-8);
}
