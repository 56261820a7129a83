//! One function per subcommand. Each reads its declared inputs, writes its
//! outputs atomically under the run directory and records a manifest.

use std::path::{Path, PathBuf};

use guideflow::analysis::{
    boundary_stats, decomposition_gap, nn_distance_table, FlowSet, Hyperplane,
};
use guideflow::classifier::{train_classifier, ClassifierNet};
use guideflow::data::{gen_fractal, gen_gaussian_1d, Dataset};
use guideflow::diffusion::{
    read_trajectories_csv, train_denoiser, write_trajectories_csv, DenoiserKind, DenoiserNet, NoiseBank, Trajectory,
};
use guideflow::flow::{make_training_pairs, mix_equal, postprocess, train_flow, ClassIndex, FlowNet};
use guideflow::guidance::{sample_guided, GuidanceConfig, GuidanceMode};
use guideflow::rng::derive_seed;
use guideflow::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::io::{self, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    DenoiserCond,
    DenoiserUncond,
    DenoiserCfg,
    Classifier,
    Flow,
}

impl TrainTarget {
    pub fn name(self) -> &'static str {
        match self {
            TrainTarget::DenoiserCond => "denoiser-cond",
            TrainTarget::DenoiserUncond => "denoiser-uncond",
            TrainTarget::DenoiserCfg => "denoiser-cfg",
            TrainTarget::Classifier => "classifier",
            TrainTarget::Flow => "flow",
        }
    }
}

fn stage_seed(cfg: &RunConfig, stage: &str) -> Result<u64> {
    Ok(derive_seed(cfg.seed()?, stage, 0))
}

pub fn data_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("data").join("train.csv")
}

pub fn ckpt_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir().join("ckpt").join(format!("{name}.ckpt"))
}

fn reports_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("reports")
}

fn plot_dir(cfg: &RunConfig) -> PathBuf {
    reports_dir(cfg).join("plot")
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned())
}

pub fn gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let seed = stage_seed(cfg, "gen-data")?;
    let ds = match cfg.get("data.kind") {
        "gaussian1d" => {
            let mean: f64 = cfg.parse_key("data.mean")?;
            let std: f64 = cfg.parse_key("data.std")?;
            let n: usize = cfg.parse_key("data.n_per_class")?;
            if !(std > 0.0 && std.is_finite() && mean.is_finite()) || n == 0 {
                return Err(Error::Config("data.std and data.n_per_class must be positive".into()));
            }
            gen_gaussian_1d(mean, std, n, seed)
        }
        "fractal" => {
            let cap: usize = cfg.parse_key("data.fractal_cap")?;
            let ds = gen_fractal(seed);
            if cap > 0 {
                ds.cap_per_class(cap)
            } else {
                ds
            }
        }
        other => return Err(Error::Config(format!("unknown data.kind '{other}'"))),
    };
    let path = data_path(cfg);
    io::write_dataset(&path, &ds)?;
    let mut m = Manifest::new("gen-data").seed("gen-data", seed);
    m.output(&path);
    m.write(cfg, "gen-data")?;
    Ok(path)
}

pub struct TrainArgs {
    pub data: Option<PathBuf>,
    pub samples: Vec<PathBuf>,
    pub name: Option<String>,
}

pub fn train(cfg: &RunConfig, target: TrainTarget, args: &TrainArgs) -> Result<PathBuf> {
    let data_file = args.data.clone().unwrap_or_else(|| data_path(cfg));
    let data = io::read_dataset(&data_file)?;
    let name = args.name.clone().unwrap_or_else(|| match target {
        TrainTarget::Flow => format!("flow-k{}", cfg.get("flow.k")),
        t => t.name().to_string(),
    });
    let init_seed = stage_seed(cfg, &format!("init-{}", target.name()))?;
    let train_seed = stage_seed(cfg, &format!("train-{}", target.name()))?;
    let mut m = Manifest::new(format!("train {}", target.name()))
        .seed("init", init_seed)
        .seed("train", train_seed);
    m.input(&data_file);
    let (ck, final_loss) = match target {
        TrainTarget::DenoiserCond | TrainTarget::DenoiserUncond | TrainTarget::DenoiserCfg => {
            let kind = match target {
                TrainTarget::DenoiserCond => DenoiserKind::Conditional,
                TrainTarget::DenoiserUncond => DenoiserKind::Unconditional,
                _ => DenoiserKind::ClassifierFree,
            };
            let dropout = if kind == DenoiserKind::ClassifierFree {
                cfg.parse_key("denoiser.dropout_prob")?
            } else {
                0.0
            };
            let mut den = DenoiserNet::new(
                kind,
                data.dim(),
                data.num_classes(),
                &cfg.architecture("denoiser")?,
                cfg.schedule()?,
                dropout,
                init_seed,
            )?;
            let rep = train_denoiser(&data, &mut den, &cfg.train_config("denoiser")?, train_seed)?;
            (den.to_checkpoint(), rep.tail_loss(100))
        }
        TrainTarget::Classifier => {
            let mut clf = match cfg.get("classifier.kind") {
                "linear" => ClassifierNet::linear(data.dim(), data.num_classes(), cfg.schedule()?, init_seed)?,
                "mlp" => ClassifierNet::mlp(
                    data.dim(),
                    data.num_classes(),
                    &cfg.architecture("classifier")?,
                    cfg.schedule()?,
                    init_seed,
                )?,
                other => return Err(Error::Config(format!("unknown classifier.kind '{other}'"))),
            };
            let rep = train_classifier(&data, &mut clf, &cfg.train_config("classifier")?, train_seed)?;
            (clf.to_checkpoint(), rep.tail_loss(100))
        }
        TrainTarget::Flow => {
            if args.samples.is_empty() {
                return Err(Error::Config("flow training needs at least one --samples file".into()));
            }
            let one_for_all: bool = cfg.parse_key("flow.one_for_all")?;
            if args.samples.len() > 1 && !one_for_all {
                return Err(Error::Config(
                    "several --samples files need flow.one_for_all = true".into(),
                ));
            }
            let sets = args
                .samples
                .iter()
                .map(|p| {
                    m.input(p);
                    io::read_dataset(p)
                })
                .collect::<Result<Vec<_>>>()?;
            let generated = if sets.len() == 1 {
                sets.into_iter().next().expect("one set")
            } else {
                // Same total budget as a single-scale model: the smallest
                // per-class count among the sets, split evenly.
                let per_class = sets
                    .iter()
                    .flat_map(|s| (0..s.num_classes()).map(move |c| s.labels().iter().filter(|&&l| l == c).count()))
                    .filter(|&n| n > 0)
                    .min()
                    .unwrap_or(0);
                mix_equal(&sets, per_class)?
            };
            let k: usize = cfg.parse_key("flow.k")?;
            let conditional: bool = cfg.parse_key("flow.conditional")?;
            let real = ClassIndex::new(&data)?;
            let pairs = make_training_pairs(&generated, &real, k)?;
            let classes = conditional.then(|| data.num_classes().max(generated.num_classes()));
            let mut flow = FlowNet::new(data.dim(), classes, &cfg.architecture("flow")?, k, init_seed)?;
            let rep = train_flow(&pairs, &mut flow, &cfg.train_config("flow")?, train_seed)?;
            (flow.to_checkpoint(), rep.tail_loss(100))
        }
    };
    let path = ckpt_path(cfg, &name);
    io::write_checkpoint(&path, &ck)?;
    m.output(&path);
    m.extra.insert("tail_loss".into(), json!(final_loss));
    m.write(cfg, &format!("train-{name}"))?;
    Ok(path)
}

pub struct SampleArgs {
    pub denoiser: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
    pub noise_bank: Option<PathBuf>,
    pub save_noise_bank: bool,
    pub trajectories: bool,
    pub output: Option<PathBuf>,
}

pub struct SampleOutputs {
    pub samples: PathBuf,
    pub trajectories: Option<PathBuf>,
    pub bank: Option<PathBuf>,
}

fn load_denoiser(path: &Path) -> Result<DenoiserNet> {
    DenoiserNet::from_checkpoint(&io::read_checkpoint(path)?)
}

fn load_classifier(path: &Path) -> Result<ClassifierNet> {
    ClassifierNet::from_checkpoint(&io::read_checkpoint(path)?)
}

pub fn sample(cfg: &RunConfig, args: &SampleArgs) -> Result<SampleOutputs> {
    let mode: GuidanceMode = cfg.parse_key("sample.mode")?;
    let scale: f64 = cfg.parse_key("sample.scale")?;
    let n: usize = cfg.parse_key("sample.n")?;
    if n == 0 {
        return Err(Error::Config("sample.n must be positive".into()));
    }
    let mut m = Manifest::new("sample");
    let default_den = match mode {
        GuidanceMode::Vanilla => "denoiser-cond",
        GuidanceMode::ClassifierFree => "denoiser-cfg",
        GuidanceMode::ClassifierGuidance => "denoiser-uncond",
    };
    let den_path = args.denoiser.clone().unwrap_or_else(|| ckpt_path(cfg, default_den));
    let den = load_denoiser(&den_path)?;
    m.input(&den_path);
    let clf = if mode == GuidanceMode::ClassifierGuidance {
        let p = args.classifier.clone().unwrap_or_else(|| ckpt_path(cfg, "classifier"));
        m.input(&p);
        Some(load_classifier(&p)?)
    } else {
        None
    };
    let classes = match &clf {
        Some(c) => c.num_classes(),
        None => den.num_classes(),
    };
    let (steps, dim) = (den.schedule.steps(), den.dim());
    let bank_seed = stage_seed(cfg, "noise-bank")?;
    let bank = match &args.noise_bank {
        Some(p) => {
            m.input(p);
            io::read_bank(p)?
        }
        None => NoiseBank::new(n * classes, steps, dim, bank_seed),
    };
    bank.check_fits(n * classes, steps, dim)?;
    let mut samples = Dataset::new(dim);
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for c in 0..classes {
        let sub = bank.select(c * n, n)?;
        let config = GuidanceConfig {
            mode,
            scale,
            class_id: c,
        };
        let run = sample_guided(&den, clf.as_ref(), config, n, 0, Some(&sub), args.trajectories)?;
        samples.extend(&run.samples)?;
        for mut tr in run.trajectories.unwrap_or_default() {
            tr.chain_id += c * n;
            trajectories.push(tr);
        }
    }
    let default_name = match mode {
        GuidanceMode::Vanilla => "vanilla.csv".to_string(),
        _ => format!("{mode}_w{scale}.csv"),
    };
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| cfg.out_dir().join("samples").join(default_name));
    io::write_dataset(&out, &samples)?;
    m.output(&out);
    let traj_path = if args.trajectories {
        let p = out.with_file_name(format!("{}_traj.csv", stem(&out)));
        let mut buf = Vec::new();
        write_trajectories_csv(&trajectories, &mut buf)?;
        io::atomic_write(&p, &buf)?;
        m.output(&p);
        Some(p)
    } else {
        None
    };
    let bank_path = if args.save_noise_bank {
        let p = out.with_file_name(format!("{}.bank", stem(&out)));
        io::write_bank(&p, &bank)?;
        m.output(&p);
        Some(p)
    } else {
        None
    };
    m.seeds.insert("noise-bank".into(), bank.seed());
    m.extra.insert("mode".into(), json!(mode.to_string()));
    m.extra.insert("scale".into(), json!(scale));
    m.write(cfg, &format!("sample-{}", stem(&out)))?;
    Ok(SampleOutputs {
        samples: out,
        trajectories: traj_path,
        bank: bank_path,
    })
}

pub fn postprocess_cmd(cfg: &RunConfig, samples: &Path, flow: &Path, output: Option<PathBuf>) -> Result<PathBuf> {
    let ds = io::read_dataset(samples)?;
    let net = FlowNet::from_checkpoint(&io::read_checkpoint(flow)?)?;
    let moved = postprocess(&ds, &net, cfg.parse_key("flow.ode_steps")?, cfg.ode_method()?)?;
    let out = output.unwrap_or_else(|| samples.with_file_name(format!("{}_post.csv", stem(samples))));
    io::write_dataset(&out, &moved)?;
    let mut m = Manifest::new("postprocess");
    m.input(samples);
    m.input(flow);
    m.output(&out);
    m.write(cfg, &format!("postprocess-{}", stem(&out)))?;
    Ok(out)
}

pub struct GapArgs {
    pub vanilla: Option<PathBuf>,
    pub uncond: Option<PathBuf>,
    pub classifier: Option<PathBuf>,
}

pub fn analyze_gap(cfg: &RunConfig, args: &GapArgs, emit_plot: bool) -> Result<Vec<PathBuf>> {
    let vp = args.vanilla.clone().unwrap_or_else(|| ckpt_path(cfg, "denoiser-cond"));
    let up = args.uncond.clone().unwrap_or_else(|| ckpt_path(cfg, "denoiser-uncond"));
    let cp = args.classifier.clone().unwrap_or_else(|| ckpt_path(cfg, "classifier"));
    let seed = stage_seed(cfg, "gap")?;
    let tag = format!("{}:{}", cfg.get("data.kind"), cfg.get("data.mean"));
    let rep = decomposition_gap(
        &load_denoiser(&vp)?,
        &load_denoiser(&up)?,
        &load_classifier(&cp)?,
        &tag,
        cfg.parse_key("analysis.n_chains")?,
        seed,
    )?;
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    let path = reports_dir(cfg).join("gap.csv");
    io::atomic_write(&path, &buf)?;
    let mut m = Manifest::new("analyze gap").seed("gap", seed);
    for p in [&vp, &up, &cp] {
        m.input(p);
    }
    m.output(&path);
    let mut outputs = vec![path];
    if emit_plot {
        let mut text = String::from("step_index,t,mean,std\n");
        for (i, (mean, std)) in rep.mean.iter().zip(&rep.std).enumerate() {
            text.push_str(&format!("{i},{},{mean},{std}\n", rep.steps() - i));
        }
        let p = plot_dir(cfg).join("gap_by_step.csv");
        io::atomic_write(&p, text.as_bytes())?;
        m.output(&p);
        outputs.push(p);
    }
    let term = rep.terminal();
    m.extra.insert("terminal_mean".into(), json!(term.mean));
    m.extra.insert("terminal_se".into(), json!(term.se()));
    m.write(cfg, "analyze-gap")?;
    Ok(outputs)
}

pub fn analyze_boundary(cfg: &RunConfig, trajectories: &[PathBuf], emit_plot: bool) -> Result<Vec<PathBuf>> {
    if trajectories.is_empty() {
        return Err(Error::Config("boundary analysis needs at least one --trajectories file".into()));
    }
    let mut m = Manifest::new("analyze boundary");
    let mut text = String::from("file,n,mean_final,se_final,mean_min,se_min\n");
    let mut outputs = Vec::new();
    for path in trajectories {
        m.input(path);
        let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let trs = read_trajectories_csv(&bytes[..])?;
        let dim = trs.first().map_or(0, |t| t.final_state().len());
        let boundary = match cfg.boundary_normal()? {
            Some(normal) => Hyperplane::new(normal, cfg.parse_key("analysis.boundary_offset")?)?,
            None => Hyperplane::default_for_dim(dim)?,
        };
        if boundary.normal.len() != dim {
            return Err(Error::Config("boundary normal does not match the data dimension".into()));
        }
        let stats = boundary_stats(&trs, &boundary);
        let (f, mn) = (stats.final_summary(), stats.min_summary());
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            stem(path),
            f.n,
            f.mean,
            f.se(),
            mn.mean,
            mn.se()
        ));
        if emit_plot {
            let mut buf = Vec::new();
            stats.write_csv(&mut buf)?;
            let p = plot_dir(cfg).join(format!("boundary_{}.csv", stem(path)));
            io::atomic_write(&p, &buf)?;
            let poly = plot_dir(cfg).join(format!("trajectories_{}.csv", stem(path)));
            io::atomic_write(&poly, &bytes)?;
            m.output(&p);
            m.output(&poly);
            outputs.push(p);
            outputs.push(poly);
        }
    }
    let path = reports_dir(cfg).join("boundary.csv");
    io::atomic_write(&path, text.as_bytes())?;
    m.output(&path);
    outputs.insert(0, path);
    m.write(cfg, "analyze-boundary")?;
    Ok(outputs)
}

pub struct NnTableArgs {
    pub samples: Vec<PathBuf>,
    pub flow_nearest: Vec<PathBuf>,
    pub flow_topk: Vec<PathBuf>,
    pub real: Option<PathBuf>,
}

fn load_flows(paths: &[PathBuf], m: &mut Manifest) -> Result<Vec<FlowNet>> {
    paths
        .iter()
        .map(|p| {
            m.input(p);
            FlowNet::from_checkpoint(&io::read_checkpoint(p)?)
        })
        .collect()
}

fn flow_set<'a>(flows: &'a [FlowNet], n: usize, what: &str) -> Result<FlowSet<'a>> {
    match flows.len() {
        1 => Ok(FlowSet::Shared(&flows[0])),
        l if l == n => Ok(FlowSet::PerScale(flows)),
        l => Err(Error::Config(format!("{l} {what} flows for {n} sample files"))),
    }
}

pub fn analyze_nn_table(cfg: &RunConfig, args: &NnTableArgs, emit_plot: bool) -> Result<Vec<PathBuf>> {
    let scales = cfg.scales()?;
    if args.samples.is_empty() || args.samples.len() != scales.len() {
        return Err(Error::Config(format!(
            "{} sample files for {} scales in analysis.scales",
            args.samples.len(),
            scales.len()
        )));
    }
    let mut m = Manifest::new("analyze nn-table");
    let real_path = args.real.clone().unwrap_or_else(|| data_path(cfg));
    m.input(&real_path);
    let real = ClassIndex::new(&io::read_dataset(&real_path)?)?;
    let mut by_scale = Vec::new();
    for (p, s) in args.samples.iter().zip(&scales) {
        m.input(p);
        by_scale.push((*s, io::read_dataset(p)?));
    }
    let nearest = load_flows(&args.flow_nearest, &mut m)?;
    let topk = load_flows(&args.flow_topk, &mut m)?;
    let n = by_scale.len();
    let (steps, method) = (cfg.parse_key("flow.ode_steps")?, cfg.ode_method()?);
    let table = nn_distance_table(
        &by_scale,
        &real,
        flow_set(&nearest, n, "nearest")?,
        flow_set(&topk, n, "top-k")?,
        steps,
        method,
        cfg.seed()?,
    )?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    let path = reports_dir(cfg).join("nn_table.csv");
    io::atomic_write(&path, &buf)?;
    m.output(&path);
    let mut outputs = vec![path];
    if emit_plot {
        for (i, (_, ds)) in by_scale.iter().enumerate() {
            let name = stem(&args.samples[i]);
            let pick = |v: &[FlowNet]| if v.len() == 1 { 0 } else { i };
            let columns = [
                ("pre", ds.clone()),
                ("nearest", postprocess(ds, &nearest[pick(&nearest)], steps, method)?),
                ("topk", postprocess(ds, &topk[pick(&topk)], steps, method)?),
            ];
            for (tag, d) in columns {
                let p = plot_dir(cfg).join(format!("scatter_{name}_{tag}.csv"));
                io::write_dataset(&p, &d)?;
                m.output(&p);
                outputs.push(p);
            }
        }
    }
    m.extra.insert(
        "grid_mean_sq".into(),
        json!({
            "pre": table.grid_mean(|r| r.pre.squared),
            "nearest": table.grid_mean(|r| r.post_nearest.squared),
            "topk": table.grid_mean(|r| r.post_topk.squared),
        }),
    );
    m.write(cfg, "analyze-nn-table")?;
    Ok(outputs)
}
