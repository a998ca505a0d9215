//! Central finite-difference oracle for the autodiff engine (64-bit).

use pixcolor_core::{ConvSpec, Graph, MaskKind, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

/// Entry-wise relative error with a floor on the denominator so that
/// vanishing gradients are compared absolutely at the `1e-2` scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Builds the loss from `inputs` (all tracked leaves) and compares the
/// analytic gradient of every input element with central differences.
/// Returns the largest relative error observed.
pub fn max_rel_error<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let mut store = ParamStore::new();
    let grads = g.backward(loss, &mut store).expect("backward");

    let eval = |ts: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };

    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-scale, scale]`, kept at least `margin` away from
/// zero so piecewise-linear ops are not probed across their kink.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64, margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v = rng.random_range(-scale..scale);
        if v.abs() >= margin {
            break v;
        }
    })
}

/// Weighted sum with fixed random weights so every output element carries
/// a distinct gradient.
pub fn probe(g: &mut Graph<f64>, x: Var, seed: u64) -> Var {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let shape = g.value(x).shape().to_vec();
    let w = random_tensor(&mut r, &shape, 1.0, 0.0);
    let w = g.constant(w);
    let p = g.mul(x, w).unwrap();
    g.sum(p)
}

/// One random instance of an operation's check: returns the worst error.
pub type Case = fn(u64) -> f64;

/// Every differentiable operation of the graph, by name.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d", conv2d),
        ("masked_conv2d", masked_conv2d),
        ("bilinear_upsample", bilinear_upsample),
        ("gated_activation", gated_activation),
        ("softmax_cross_entropy", softmax_cross_entropy),
        ("l1_loss", l1_loss),
        ("relu", relu),
        ("tanh", tanh),
        ("sigmoid", sigmoid),
        ("add_mul_scale_slice_concat", layout),
        ("grad_scale", grad_scale),
        ("composite", composite),
    ]
}

fn conv2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = [1, 3, 5][seed as usize % 3];
    let stride = 1 + (seed as usize % 2);
    let (cin, cout) = (r.random_range(1..3), r.random_range(1..3));
    let (h, w) = (r.random_range(3..6), r.random_range(3..6));
    let spec = ConvSpec::square(k, stride, cin, cout).unwrap();
    let x = random_tensor(&mut r, &[2, cin, h, w], 1.0, 0.0);
    let wt = random_tensor(&mut r, &[cout, cin, k, k], 0.5, 0.0);
    let b = random_tensor(&mut r, &[cout], 0.5, 0.0);
    max_rel_error(&[x, wt, b], |g, v| {
        let y = g.conv2d(v[0], &spec, v[1], Some(v[2])).unwrap();
        probe(g, y, seed)
    })
}

fn masked_conv2d(seed: u64) -> f64 {
    let mut r = rng(100 + seed);
    let kind = if seed % 2 == 0 { MaskKind::A } else { MaskKind::B };
    let spec = ConvSpec::square(3, 1, 2, 4)
        .unwrap()
        .masked_grouped(kind, &[0, 1], &[0, 0, 1, 1])
        .unwrap();
    let x = random_tensor(&mut r, &[1, 2, 4, 4], 1.0, 0.0);
    let wt = random_tensor(&mut r, &[4, 2, 3, 3], 0.5, 0.0);
    max_rel_error(&[x, wt], |g, v| {
        let y = g.conv2d(v[0], &spec, v[1], None).unwrap();
        probe(g, y, seed)
    })
}

fn bilinear_upsample(seed: u64) -> f64 {
    let mut r = rng(200 + seed);
    let (h, w) = (r.random_range(1..4), r.random_range(2..4));
    let (oh, ow) = (h + r.random_range(0..4), w + r.random_range(0..4));
    let x = random_tensor(&mut r, &[1, 2, h, w], 1.0, 0.0);
    max_rel_error(&[x], |g, v| {
        let y = g.upsample_bilinear(v[0], oh, ow).unwrap();
        probe(g, y, seed)
    })
}

fn gated_activation(seed: u64) -> f64 {
    let mut r = rng(300 + seed);
    let a = random_tensor(&mut r, &[1, 3, 2, 2], 2.0, 0.0);
    let b = random_tensor(&mut r, &[1, 3, 2, 2], 2.0, 0.0);
    max_rel_error(&[a, b], |g, v| {
        let y = g.gated(v[0], v[1]).unwrap();
        probe(g, y, seed)
    })
}

fn softmax_cross_entropy(seed: u64) -> f64 {
    let mut r = rng(400 + seed);
    let classes = r.random_range(2..6);
    let groups = r.random_range(1..3);
    let logits = random_tensor(&mut r, &[2, groups * classes, 2, 2], 3.0, 0.0);
    let targets: Vec<usize> = (0..2 * groups * 4).map(|_| r.random_range(0..classes)).collect();
    max_rel_error(&[logits], |g, v| g.softmax_cross_entropy(v[0], &targets, classes).unwrap())
}

fn l1_loss(seed: u64) -> f64 {
    let mut r = rng(500 + seed);
    let target = random_tensor(&mut r, &[1, 2, 3, 3], 1.0, 0.0);
    // keep predictions well away from the kink at pred == target
    let offset = random_tensor(&mut r, &[1, 2, 3, 3], 1.0, 0.05);
    let pred = Tensor::from_fn([1, 2, 3, 3], |i| target.data()[i] + offset.data()[i]);
    max_rel_error(&[pred], |g, v| g.l1_loss(v[0], &target).unwrap())
}

fn pointwise(seed: u64, op: fn(&mut Graph<f64>, Var) -> Var) -> f64 {
    let mut r = rng(600 + seed);
    let x = random_tensor(&mut r, &[1, 2, 3, 3], 2.0, 0.01);
    max_rel_error(&[x], |g, v| {
        let y = op(g, v[0]);
        probe(g, y, seed)
    })
}

fn relu(seed: u64) -> f64 {
    pointwise(seed, |g, x| g.relu(x))
}

fn tanh(seed: u64) -> f64 {
    pointwise(seed, |g, x| g.tanh(x))
}

fn sigmoid(seed: u64) -> f64 {
    pointwise(seed, |g, x| g.sigmoid(x))
}

fn layout(seed: u64) -> f64 {
    let mut r = rng(700 + seed);
    let a = random_tensor(&mut r, &[2, 3, 2, 2], 1.0, 0.0);
    let b = random_tensor(&mut r, &[2, 3, 2, 2], 1.0, 0.0);
    let c = random_tensor(&mut r, &[2, 1, 2, 2], 1.0, 0.0);
    max_rel_error(&[a, b, c], |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let m = g.mul(s, v[1]).unwrap();
        let k = g.scale(m, 0.7);
        let sl = g.slice_channels(k, 1, 2).unwrap();
        let cat = g.concat_channels(&[sl, v[2], v[0]]).unwrap();
        probe(g, cat, seed)
    })
}

fn grad_scale(seed: u64) -> f64 {
    let mut r = rng(800 + seed);
    let x = random_tensor(&mut r, &[1, 1, 2, 3], 1.0, 0.0);
    // with factor 1 the backward pass must be the plain derivative
    max_rel_error(&[x], |g, v| {
        let y = g.grad_scale(v[0], 1.0);
        probe(g, y, seed)
    })
}

fn composite(seed: u64) -> f64 {
    let mut r = rng(900 + seed);
    let x = random_tensor(&mut r, &[1, 2, 3, 3], 1.0, 0.0);
    let w1 = random_tensor(&mut r, &[4, 2, 3, 3], 0.4, 0.0);
    let w2 = random_tensor(&mut r, &[6, 2, 1, 1], 0.4, 0.0);
    let m1 = ConvSpec::square(3, 1, 2, 4).unwrap().masked_grouped(MaskKind::A, &[0, 1], &[0, 1, 0, 1]).unwrap();
    let m2 = ConvSpec::square(1, 1, 2, 6).unwrap();
    let targets: Vec<usize> = (0..2 * 25).map(|_| r.random_range(0..3)).collect();
    max_rel_error(&[x, w1, w2], |g, v| {
        let h = g.conv2d(v[0], &m1, v[1], None).unwrap();
        let a = g.slice_channels(h, 0, 2).unwrap();
        let b = g.slice_channels(h, 2, 2).unwrap();
        let z = g.gated(a, b).unwrap();
        let up = g.upsample_bilinear(z, 5, 5).unwrap();
        let logits = g.conv2d(up, &m2, v[2], None).unwrap();
        g.softmax_cross_entropy(logits, &targets, 3).unwrap()
    })
}
