//! Two-class 2D fractal: each class is a depth-6 binary tree of branches,
//! every branch carrying 8 anisotropic Gaussians along its length.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use super::Dataset;
use crate::rng;

pub const TREE_DEPTH: u32 = 6;
pub const NUM_BRANCHES: usize = (1 << (TREE_DEPTH + 1)) - 1;
pub const GAUSSIANS_PER_BRANCH: usize = 8;
pub const ROOT_LENGTH: f64 = 1.2;

#[derive(Debug, Clone, PartialEq)]
pub struct FractalBranch {
    /// 1-based heap index: children of `i` are `2i` and `2i + 1`.
    pub index: usize,
    pub start: [f64; 2],
    pub length: f64,
    /// Radians in `[0, 2π)`.
    pub orientation: f64,
}

impl FractalBranch {
    pub fn direction(&self) -> [f64; 2] {
        [self.orientation.cos(), self.orientation.sin()]
    }

    pub fn end(&self) -> [f64; 2] {
        let d = self.direction();
        [self.start[0] + self.length * d[0], self.start[1] + self.length * d[1]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: [f64; 2],
    /// Row-major symmetric 2x2.
    pub covariance: [[f64; 2]; 2],
    pub branch_index: usize,
    pub component_index: usize,
}

impl GaussianComponent {
    /// Lower-triangular factor `L` with `L Lᵀ = covariance`, or `None` if the
    /// matrix is not positive definite.
    pub fn cholesky(&self) -> Option<[[f64; 2]; 2]> {
        let [[a, b], [_, c]] = self.covariance;
        if !(a > 0.0) {
            return None;
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let rem = c - l21 * l21;
        if !(rem > 0.0) {
            return None;
        }
        Some([[l11, 0.0], [l21, rem.sqrt()]])
    }
}

pub fn root_orientation(class_id: usize) -> f64 {
    match class_id {
        0 => 0.25 * PI,
        1 => 1.75 * PI,
        _ => panic!("fractal classes are 0 and 1"),
    }
}

fn wrap_angle(o: f64) -> f64 {
    let w = o.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Branches of one class in heap order (index 1..=127).
pub fn build_fractal_tree(class_id: usize, seed: u64) -> Vec<FractalBranch> {
    let mut branches = Vec::with_capacity(NUM_BRANCHES);
    branches.push(FractalBranch {
        index: 1,
        start: [0.0, 0.0],
        length: ROOT_LENGTH,
        orientation: root_orientation(class_id),
    });
    for k in 2..=NUM_BRANCHES {
        let parent = &branches[k / 2 - 1];
        let mut r = rng::stream(seed, "fractal-branch", (class_id * 1024 + k) as u64);
        let xi = rng::uniform(&mut r, 0.5, 0.8);
        let flip = if r.gen_bool(0.5) { 1.0 } else { 0.0 };
        let jitter = rng::uniform(&mut r, 0.0, 0.05);
        let level = (usize::BITS - 1 - k.leading_zeros()) as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let turn = sign * PI * (1.0 / (2.8 * (level / 4.0).exp()) + flip * jitter);
        let child = FractalBranch {
            index: k,
            start: parent.end(),
            length: parent.length * (1.0 - 0.4 * xi),
            orientation: wrap_angle(parent.orientation + turn),
        };
        branches.push(child);
    }
    branches
}

/// 8 Gaussians per branch with means at fractions `(j + 0.5) / 8` along it.
/// Component `i` (ordered by branch then position) has base covariance
/// `diag(0.005 e^{-i/30}, 0.003 e^{-i/25})` rotated to the branch direction.
pub fn place_gaussians(branches: &[FractalBranch]) -> Vec<GaussianComponent> {
    let mut out = Vec::with_capacity(branches.len() * GAUSSIANS_PER_BRANCH);
    for branch in branches {
        let [c, s] = branch.direction();
        for j in 0..GAUSSIANS_PER_BRANCH {
            let i = out.len();
            let frac = (j as f64 + 0.5) / GAUSSIANS_PER_BRANCH as f64;
            let along = frac * branch.length;
            let l1 = 0.005 * (-(i as f64) / 30.0).exp();
            let l2 = 0.003 * (-(i as f64) / 25.0).exp();
            // R diag(l1, l2) Rᵀ with R = [[c, -s], [s, c]]
            let cov_xx = c * c * l1 + s * s * l2;
            let cov_xy = c * s * (l1 - l2);
            let cov_yy = s * s * l1 + c * c * l2;
            out.push(GaussianComponent {
                mean: [branch.start[0] + along * c, branch.start[1] + along * s],
                covariance: [[cov_xx, cov_xy], [cov_xy, cov_yy]],
                branch_index: branch.index,
                component_index: i,
            });
        }
    }
    out
}

/// Points drawn from branch ordinal `b` (0-based): `⌊1000 e^{-b/100}⌋` per Gaussian.
pub fn points_per_gaussian(branch_ordinal: usize) -> usize {
    (1000.0 * (-(branch_ordinal as f64) / 100.0).exp()).floor() as usize
}

pub fn sample_fractal(components: &[GaussianComponent], label: usize, seed: u64) -> Dataset {
    let mut ds = Dataset::new(2);
    for comp in components {
        let n = points_per_gaussian(comp.component_index / GAUSSIANS_PER_BRANCH);
        let chol = comp
            .cholesky()
            .expect("fractal covariances are positive definite");
        let key = (label * 4096 + comp.component_index) as u64;
        let mut r = rng::stream(seed, "fractal-sample", key);
        let z = rng::normal_vec(&mut r, 2 * n);
        for p in z.chunks_exact(2) {
            let x = comp.mean[0] + chol[0][0] * p[0];
            let y = comp.mean[1] + chol[1][0] * p[0] + chol[1][1] * p[1];
            ds.push(&[x, y], label);
        }
    }
    ds
}

/// Both classes of the fractal dataset (class 0 rows first).
pub fn gen_fractal(seed: u64) -> Dataset {
    let mut ds = Dataset::new(2);
    for class in 0..2 {
        let tree = build_fractal_tree(class, rng::derive_seed(seed, "fractal-tree", class as u64));
        let comps = place_gaussians(&tree);
        let part = sample_fractal(&comps, class, rng::derive_seed(seed, "fractal-points", class as u64));
        ds.extend(&part).expect("same dimension");
    }
    ds
}
