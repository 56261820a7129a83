//! Training pairs for the postprocessing flow: each generated sample is
//! paired with a target drawn uniformly from its top-k same-class real
//! neighbors, re-drawn on every use.

use rand::Rng;

use super::knn::ClassIndex;
use crate::data::Dataset;
use crate::{exec, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub label: usize,
}

impl FlowPair {
    /// `(1 - t) source + t target`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        for ((o, s), g) in out.iter_mut().zip(&self.source).zip(&self.target) {
            *o = (1.0 - t) * s + t * g;
        }
    }

    /// `target - source`, the regression target for the velocity field.
    pub fn displacement(&self) -> Vec<f64> {
        self.target.iter().zip(&self.source).map(|(g, s)| g - s).collect()
    }
}

/// Generated samples with their precomputed top-k candidate targets.
#[derive(Debug, Clone)]
pub struct PairSampler {
    dim: usize,
    k: usize,
    sources: Dataset,
    /// `candidates[(i * k + j) * dim..]` is the j-th nearest real point of source i.
    candidates: Vec<f64>,
}

impl PairSampler {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sources(&self) -> &Dataset {
        &self.sources
    }

    pub fn candidate(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.k + j) * self.dim;
        &self.candidates[at..at + self.dim]
    }

    /// Pair for source `i` with a uniformly chosen candidate target.
    pub fn pair_for<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> FlowPair {
        let j = rng.gen_range(0..self.k);
        FlowPair {
            source: self.sources.point(i).to_vec(),
            target: self.candidate(i, j).to_vec(),
            label: self.sources.label(i),
        }
    }

    /// Uniform source, then uniform target among its candidates.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> FlowPair {
        let i = rng.gen_range(0..self.len());
        self.pair_for(i, rng)
    }
}

/// Find the `k` nearest same-class real points of every generated sample.
pub fn make_training_pairs(generated: &Dataset, real: &ClassIndex, k: usize) -> Result<PairSampler> {
    if generated.is_empty() {
        return Err(Error::data("no generated samples to pair"));
    }
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let dim = generated.dim();
    for c in 0..generated.num_classes() {
        if generated.labels().contains(&c) {
            let idx = real.class(c)?;
            if idx.dim() != dim {
                return Err(Error::config("generated and real data dimensions differ"));
            }
        }
    }
    let rows = exec::map_range(generated.len(), |i| -> Result<Vec<f64>> {
        let idx = real.class(generated.label(i))?;
        let nn = idx.knn(generated.point(i), k)?;
        Ok(nn.iter().flat_map(|n| idx.point(n.index).iter().copied()).collect())
    });
    let mut candidates = Vec::with_capacity(generated.len() * k * dim);
    for row in rows {
        candidates.extend(row?);
    }
    Ok(PairSampler {
        dim,
        k,
        sources: generated.clone(),
        candidates,
    })
}

/// Pool generations from several guidance scales in equal proportion: the
/// first `per_class / sets.len()` samples of each class from every set.
pub fn mix_equal(sets: &[Dataset], per_class: usize) -> Result<Dataset> {
    let first = sets.first().ok_or_else(|| Error::config("nothing to mix"))?;
    let share = per_class / sets.len();
    if share == 0 {
        return Err(Error::config("per-class budget smaller than the number of sets"));
    }
    let mut out = Dataset::new(first.dim());
    for set in sets {
        let capped = set.cap_per_class(share);
        for c in 0..set.num_classes() {
            let have = capped.labels().iter().filter(|&&l| l == c).count();
            if have > 0 && have < share {
                return Err(Error::data(format!("set has only {have} samples of class {c}, need {share}")));
            }
        }
        out.extend(&capped)?;
    }
    Ok(out)
}
