//! Measurements over sampler outputs: the per-step gap between vanilla
//! conditional sampling and its classifier-guided decomposition, distances to
//! a class boundary, and nearest-neighbor distances before and after flow
//! postprocessing.

use std::io::Write;

use crate::classifier::ClassifierNet;
use crate::data::Dataset;
use crate::diffusion::{DenoiserNet, NoiseBank, Trajectory};
use crate::flow::{postprocess, ClassIndex, FlowNet, OdeMethod};
use crate::guidance::{sample_guided, GuidanceConfig};
use crate::{exec, rng, Error, Result};

/// Mean, population standard deviation and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = exec::mean_std(xs);
        Self { n: xs.len(), mean, std }
    }

    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std / (self.n as f64).sqrt()
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-step statistics of `|x_t^a - x_t^b|`, indexed from `t = T` down to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub dataset: String,
    pub n_chains: usize,
    pub seed: u64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GapReport {
    pub fn steps(&self) -> usize {
        self.mean.len() - 1
    }

    /// Statistics at diffusion step `t`.
    pub fn at(&self, t: usize) -> Summary {
        let i = self.steps() - t;
        Summary {
            n: self.n_chains,
            mean: self.mean[i],
            std: self.std[i],
        }
    }

    pub fn terminal(&self) -> Summary {
        self.at(0)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,mean,std,n_chains")?;
        for (i, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            writeln!(w, "{},{m},{s},{}", self.steps() - i, self.n_chains)?;
        }
        Ok(())
    }
}

/// Pair trajectories by position and reduce `|a_t - b_t|` per step.
pub fn trajectory_gap(a: &[Trajectory], b: &[Trajectory]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::config("gap needs two equally sized, non-empty trajectory sets"));
    }
    let len = a[0].states.len();
    for (x, y) in a.iter().zip(b) {
        if x.chain_id != y.chain_id || x.states.len() != len || y.states.len() != len {
            return Err(Error::config("trajectories are not paired by chain"));
        }
    }
    let per_step = exec::map_range(len, |i| {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| euclid(&x.states[i], &y.states[i])).collect();
        exec::mean_std(&d)
    });
    Ok(per_step.into_iter().unzip())
}

/// Run the vanilla conditional sampler and the unit-scale classifier-guided
/// sampler on the same noise bank, `n_chains` per class, and report the
/// per-step gap pooled over chains and classes.
pub fn decomposition_gap(
    vanilla: &DenoiserNet,
    uncond: &DenoiserNet,
    classifier: &ClassifierNet,
    dataset_tag: &str,
    n_chains: usize,
    seed: u64,
) -> Result<GapReport> {
    if vanilla.dim() != uncond.dim() || vanilla.dim() != classifier.dim() {
        return Err(Error::config("models disagree on the data dimension"));
    }
    if vanilla.schedule != uncond.schedule {
        return Err(Error::config("denoisers use different noise schedules"));
    }
    if n_chains == 0 {
        return Err(Error::config("need at least one chain"));
    }
    let steps = vanilla.schedule.steps();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for c in 0..vanilla.num_classes() {
        let bank = NoiseBank::new(n_chains, steps, vanilla.dim(), rng::derive_seed(seed, "gap-bank", c as u64));
        let va = sample_guided(vanilla, None, GuidanceConfig::vanilla(c), n_chains, 0, Some(&bank), true)?;
        let cg = sample_guided(uncond, Some(classifier), GuidanceConfig::cg(1.0, c), n_chains, 0, Some(&bank), true)?;
        a.extend(va.trajectories.expect("recorded"));
        b.extend(cg.trajectories.expect("recorded"));
    }
    let (mean, std) = trajectory_gap(&a, &b)?;
    Ok(GapReport {
        dataset: dataset_tag.to_string(),
        n_chains: a.len(),
        seed,
        mean,
        std,
    })
}

/// The hyperplane `normal . x = offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Hyperplane {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) || !offset.is_finite() {
            return Err(Error::config("hyperplane needs a finite non-zero normal"));
        }
        Ok(Self { normal, offset })
    }

    pub fn through_origin(normal: Vec<f64>) -> Result<Self> {
        Self::new(normal, 0.0)
    }

    /// The symmetry boundary of the two-class datasets: `x = 0` in 1D and
    /// the horizontal axis (`x1 = 0`) in 2D.
    pub fn default_for_dim(dim: usize) -> Result<Self> {
        match dim {
            1 => Self::through_origin(vec![1.0]),
            2 => Self::through_origin(vec![0.0, 1.0]),
            _ => Err(Error::config(format!("no default boundary for dimension {dim}"))),
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let norm = self.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = self.normal.iter().zip(x).map(|(n, v)| n * v).sum();
        (dot - self.offset).abs() / norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryStats {
    pub final_distances: Vec<f64>,
    /// Per-trajectory minimum distance over all recorded states.
    pub min_distances: Vec<f64>,
}

impl BoundaryStats {
    pub fn final_summary(&self) -> Summary {
        Summary::of(&self.final_distances)
    }

    pub fn min_summary(&self) -> Summary {
        Summary::of(&self.min_distances)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "chain,final_distance,min_distance")?;
        for (i, (f, m)) in self.final_distances.iter().zip(&self.min_distances).enumerate() {
            writeln!(w, "{i},{f},{m}")?;
        }
        Ok(())
    }
}

pub fn boundary_stats(trajectories: &[Trajectory], boundary: &Hyperplane) -> BoundaryStats {
    let final_distances = trajectories.iter().map(|t| boundary.distance(t.final_state())).collect();
    let min_distances = trajectories
        .iter()
        .map(|t| t.states.iter().map(|x| boundary.distance(x)).fold(f64::INFINITY, f64::min))
        .collect();
    BoundaryStats {
        final_distances,
        min_distances,
    }
}

/// Boundary distances of final samples only; the per-trajectory minimum is
/// the final distance.
pub fn boundary_stats_of_samples(samples: &Dataset, boundary: &Hyperplane) -> BoundaryStats {
    let d: Vec<f64> = samples.iter().map(|(x, _)| boundary.distance(x)).collect();
    BoundaryStats {
        final_distances: d.clone(),
        min_distances: d,
    }
}

/// Mean nearest-neighbor distance, squared and plain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NnDistance {
    pub squared: f64,
    pub plain: f64,
}

/// Mean distance from each sample of class `class` to its nearest real point
/// of the same class.
pub fn mean_nn_distance(samples: &Dataset, real: &ClassIndex, class: usize) -> Result<NnDistance> {
    let sub = samples.class_subset(class);
    if sub.is_empty() {
        return Err(Error::data(format!("no samples of class {class}")));
    }
    let idx = real.class(class)?;
    let d2 = exec::map_range(sub.len(), |i| idx.nearest_dist2(sub.point(i)))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let plain: Vec<f64> = d2.iter().map(|v| v.sqrt()).collect();
    Ok(NnDistance {
        squared: exec::mean(&d2),
        plain: exec::mean(&plain),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnRow {
    pub class: usize,
    pub scale: f64,
    pub n_samples: usize,
    /// Raw samples.
    pub pre: NnDistance,
    /// After the nearest-target (k = 1) flow.
    pub post_nearest: NnDistance,
    /// After the top-k flow.
    pub post_topk: NnDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnDistanceTable {
    pub rows: Vec<NnRow>,
    pub k: usize,
    pub seed: u64,
}

impl NnDistanceTable {
    /// Average of a column over all (class, scale) cells.
    pub fn grid_mean(&self, column: impl Fn(&NnRow) -> f64) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(column).collect();
        exec::mean(&v)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "class,scale,n_samples,pre_sq,post_nearest_sq,post_topk_sq,pre,post_nearest,post_topk,k,seed"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.class,
                r.scale,
                r.n_samples,
                r.pre.squared,
                r.post_nearest.squared,
                r.post_topk.squared,
                r.pre.plain,
                r.post_nearest.plain,
                r.post_topk.plain,
                self.k,
                self.seed
            )?;
        }
        Ok(())
    }
}

/// Flows used for one postprocessed column.
#[derive(Debug, Clone, Copy)]
pub enum FlowSet<'a> {
    /// One flow per entry of `samples_by_scale`, in the same order.
    PerScale(&'a [FlowNet]),
    /// A single flow for every scale.
    Shared(&'a FlowNet),
}

impl<'a> FlowSet<'a> {
    fn get(&self, i: usize) -> Result<&'a FlowNet> {
        match *self {
            FlowSet::PerScale(v) => v.get(i).ok_or_else(|| Error::config("missing flow for a guidance scale")),
            FlowSet::Shared(f) => Ok(f),
        }
    }
}

/// Per (class, scale): mean NN distance of the raw samples and of the samples
/// after the nearest-target and top-k flows.
pub fn nn_distance_table(
    samples_by_scale: &[(f64, Dataset)],
    real: &ClassIndex,
    nearest: FlowSet<'_>,
    topk: FlowSet<'_>,
    n_steps: usize,
    method: OdeMethod,
    seed: u64,
) -> Result<NnDistanceTable> {
    let mut rows = Vec::new();
    let mut k = 0;
    for (i, (scale, samples)) in samples_by_scale.iter().enumerate() {
        let f1 = nearest.get(i)?;
        let fk = topk.get(i)?;
        k = fk.k;
        let b = postprocess(samples, f1, n_steps, method)?;
        let c = postprocess(samples, fk, n_steps, method)?;
        for class in 0..samples.num_classes() {
            let n_samples = samples.labels().iter().filter(|&&l| l == class).count();
            if n_samples == 0 {
                continue;
            }
            rows.push(NnRow {
                class,
                scale: *scale,
                n_samples,
                pre: mean_nn_distance(samples, real, class)?,
                post_nearest: mean_nn_distance(&b, real, class)?,
                post_topk: mean_nn_distance(&c, real, class)?,
            });
        }
    }
    rows.sort_by(|a, b| a.class.cmp(&b.class).then(a.scale.total_cmp(&b.scale)));
    Ok(NnDistanceTable { rows, k, seed })
}
