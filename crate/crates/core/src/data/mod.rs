//! Labeled point sets and the seeded synthetic generators.

mod csv;
pub mod fractal;
pub mod gaussian1d;

pub use fractal::{build_fractal_tree, gen_fractal, place_gaussians, sample_fractal, FractalBranch, GaussianComponent};
pub use gaussian1d::gen_gaussian_1d;

use crate::{Error, Result};

/// One owned data point and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub label: usize,
}

/// A set of same-dimension labeled points, stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    dim: usize,
    xs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            xs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, xs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || xs.len() != dim * labels.len() {
            return Err(Error::data(format!(
                "{} coordinates cannot form {} points of dimension {dim}",
                xs.len(),
                labels.len()
            )));
        }
        Ok(Self { dim, xs, labels })
    }

    pub fn from_points(dim: usize, points: &[LabeledPoint]) -> Result<Self> {
        let mut ds = Self::new(dim);
        for p in points {
            if p.x.len() != dim {
                return Err(Error::data("points have inconsistent dimensions"));
            }
            ds.push(&p.x, p.label);
        }
        Ok(ds)
    }

    pub fn push(&mut self, x: &[f64], label: usize) {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        self.xs.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::data("cannot merge datasets of different dimension"));
        }
        self.xs.extend_from_slice(&other.xs);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn coords(&self) -> &[f64] {
        &self.xs
    }

    pub fn get(&self, i: usize) -> LabeledPoint {
        LabeledPoint {
            x: self.point(i).to_vec(),
            label: self.labels[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.xs.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    /// One more than the largest label (0 when empty).
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn class_subset(&self, class: usize) -> Dataset {
        let mut out = Dataset::new(self.dim);
        for (x, l) in self.iter() {
            if l == class {
                out.push(x, l);
            }
        }
        out
    }

    /// First `n` points of every class, order otherwise preserved.
    pub fn cap_per_class(&self, n: usize) -> Dataset {
        let mut seen = vec![0usize; self.num_classes()];
        let mut out = Dataset::new(self.dim);
        for (x, l) in self.iter() {
            if seen[l] < n {
                seen[l] += 1;
                out.push(x, l);
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        csv::write(self, w)
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        csv::read(r)
    }
}
