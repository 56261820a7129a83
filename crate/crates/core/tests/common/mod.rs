//! Independent oracles shared by the property and acceptance tests.
#![allow(dead_code)]

use guideflow::classifier::{log_sum_exp, softmax, ClassifierNet};
use guideflow::diffusion::{forward_marginal, forward_step, NoiseSchedule};
use guideflow::flow::{integrate, NnIndex, OdeMethod};
use guideflow::nn::{mlp_backward, mlp_forward, Activation, Architecture, MlpSpec};
use guideflow::rng;
use rand::Rng;

/// Central finite differences of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A random small SiLU MLP with random time and class embedding widths.
pub fn random_spec(seed: u64) -> MlpSpec {
    let mut r = rng::stream(seed, "oracle-spec", 0);
    let depth = r.gen_range(1..=3);
    let class_embed_dim = [0, 3][r.gen_range(0..2)];
    MlpSpec {
        input_dim: r.gen_range(1..=3),
        hidden_dims: (0..depth).map(|_| r.gen_range(2..=8)).collect(),
        output_dim: r.gen_range(1..=3),
        activation: Activation::Silu,
        time_embed_dim: [0, 4][r.gen_range(0..2)],
        class_embed_dim,
        num_classes: if class_embed_dim > 0 { 2 } else { 0 },
        null_class: false,
    }
}

/// Largest relative error between reverse-mode and finite-difference
/// gradients of `<cotangent, mlp(x)>` with respect to parameters and every
/// input block.
pub fn mlp_gradient_error(seed: u64) -> f64 {
    let spec = random_spec(seed);
    let params = spec.init_params(seed).unwrap();
    let mut r = rng::stream(seed, "oracle-mlp", 0);
    let x = rng::normal_vec(&mut r, spec.input_dim);
    let te = rng::normal_vec(&mut r, spec.time_embed_dim);
    let ce = rng::normal_vec(&mut r, spec.class_embed_dim);
    let cot = rng::normal_vec(&mut r, spec.output_dim);
    let g = mlp_backward(&spec, &params, &x, &te, &ce, &cot).unwrap();
    let h = 1e-6;
    let loss_p = |p: &[f64]| {
        let mut pv = params.clone();
        pv.values_mut().copy_from_slice(p);
        dot(&cot, &mlp_forward(&spec, &pv, &x, &te, &ce).unwrap())
    };
    let mut worst = rel_err(g.params.values(), &fd_grad(loss_p, params.values(), h));
    let loss_x = |v: &[f64]| dot(&cot, &mlp_forward(&spec, &params, v, &te, &ce).unwrap());
    worst = worst.max(rel_err(&g.x, &fd_grad(loss_x, &x, h)));
    if !te.is_empty() {
        let loss_t = |v: &[f64]| dot(&cot, &mlp_forward(&spec, &params, &x, v, &ce).unwrap());
        worst = worst.max(rel_err(&g.t_embed, &fd_grad(loss_t, &te, h)));
    }
    if !ce.is_empty() {
        let loss_c = |v: &[f64]| dot(&cot, &mlp_forward(&spec, &params, &x, &te, v).unwrap());
        worst = worst.max(rel_err(&g.c_embed, &fd_grad(loss_c, &ce, h)));
    }
    worst
}

/// Relative error of `grad_x log p(c | x_t)` against finite differences, for
/// an alternating linear / MLP classifier.
pub fn classifier_gradient_error(seed: u64) -> f64 {
    let sched = NoiseSchedule::scaled_linear(50).unwrap();
    let mut r = rng::stream(seed, "oracle-clf", 0);
    let dim = r.gen_range(1..=2);
    let classes = r.gen_range(2..=3);
    let clf = if seed.is_multiple_of(2) {
        ClassifierNet::linear(dim, classes, sched, seed).unwrap()
    } else {
        ClassifierNet::mlp(dim, classes, &Architecture::small(8, 2, 4), sched, seed).unwrap()
    };
    let x = rng::normal_vec(&mut r, dim);
    let t = r.gen_range(1..=50);
    let c = r.gen_range(0..classes);
    let (_, g) = clf.log_prob_grad(&x, t, c).unwrap();
    let f = |v: &[f64]| {
        let l = clf.logits(v, t);
        l[c] - log_sum_exp(&l)
    };
    rel_err(&g, &fd_grad(f, &x, 1e-6))
}

/// Worst deviation of softmax from the simplex and of the expected score
/// `sum_c p(c|x) grad log p(c|x)` from zero.
pub fn simplex_and_score_error(seed: u64) -> f64 {
    let mut r = rng::stream(seed, "oracle-simplex", 0);
    let logits: Vec<f64> = (0..r.gen_range(2..=6)).map(|_| rng::uniform(&mut r, -30.0, 30.0)).collect();
    let p = softmax(&logits);
    let mut worst = (p.iter().sum::<f64>() - 1.0).abs();
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        worst = f64::INFINITY;
    }
    let sched = NoiseSchedule::scaled_linear(50).unwrap();
    let clf = ClassifierNet::mlp(2, 3, &Architecture::small(8, 2, 4), sched, seed).unwrap();
    let x = rng::normal_vec(&mut r, 2);
    let t = r.gen_range(1..=50);
    let probs = clf.probs(&x, t);
    let mut expected = [0.0; 2];
    for (c, pc) in probs.iter().enumerate() {
        let (_, g) = clf.log_prob_grad(&x, t, c).unwrap();
        expected[0] += pc * g[0];
        expected[1] += pc * g[1];
    }
    worst.max(expected[0].abs()).max(expected[1].abs())
}

/// Exact k nearest by full sort on `(dist2, index)`.
pub fn brute_knn(dim: usize, points: &[f64], q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .chunks(dim)
        .enumerate()
        .map(|(i, p)| (i, p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// One random kNN instance (with deliberate duplicate points) compared to the
/// brute-force oracle on several queries.
pub fn knn_matches_brute_force(seed: u64) -> bool {
    let mut r = rng::stream(seed, "oracle-knn", 0);
    let dim = r.gen_range(1..=3);
    let n = r.gen_range(1..=2000);
    let mut points: Vec<f64> = (0..n * dim).map(|_| (rng::uniform(&mut r, -1.0, 1.0) * 8.0).round() / 8.0).collect();
    if n > 3 {
        let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
        for j in 0..dim {
            points[b * dim + j] = points[a * dim + j];
        }
    }
    let idx = NnIndex::new(dim, points.clone()).unwrap();
    (0..10).all(|_| {
        let q: Vec<f64> = (0..dim).map(|_| rng::uniform(&mut r, -1.2, 1.2)).collect();
        let k = r.gen_range(1..=n.min(25));
        let got: Vec<(usize, f64)> = idx.knn(&q, k).unwrap().iter().map(|nb| (nb.index, nb.dist2)).collect();
        got == brute_knn(dim, &points, &q, k)
    })
}

/// Least-squares log-log slope of RK4 error on `dz/dt = z` over `n_steps`.
pub fn rk4_order(steps: &[usize]) -> f64 {
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .map(|&n| {
            let z = integrate(&[1.0], n, OdeMethod::Rk4, |z, _, o| o.copy_from_slice(z)).unwrap();
            ((1.0 / n as f64).ln(), (z[0] - std::f64::consts::E).abs().ln())
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Mean and variance of `draws` chained forward kernels versus the closed-form
/// marginal, each as a multiple of its Monte-Carlo standard error.
pub fn forward_marginal_z_scores(seed: u64, draws: usize) -> (f64, f64) {
    let s = NoiseSchedule::scaled_linear(100).unwrap();
    let (x0, t) = (0.8, 30);
    let mut r = rng::stream(seed, "oracle-forward", 0);
    let finals: Vec<f64> = (0..draws)
        .map(|_| {
            let mut x = vec![x0];
            for k in 1..=t {
                x = forward_step(&s, &x, k, &rng::normal_vec(&mut r, 1)).unwrap();
            }
            x[0]
        })
        .collect();
    let n = draws as f64;
    let m = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let ab = s.alpha_bar(t);
    // Closed form evaluated through the library with zero noise for the mean.
    let want_m = forward_marginal(&s, &[x0], t, &[0.0]).unwrap()[0];
    let want_v = 1.0 - ab;
    let zm = (m - want_m).abs() / (want_v / n).sqrt();
    let zv = (var - want_v).abs() / (want_v * (2.0 / n).sqrt());
    (zm, zv)
}
