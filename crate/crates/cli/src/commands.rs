use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use camvid::camera::pose_file::PoseFile;
use camvid::camera::{normalize_scale, to_relative, to_relative_at, PoseSequence};
use camvid::camera::{plucker_grid, PixelSampling, PluckerOptions, RayMode};
use camvid::curation::{
    classify_clip_motion, classify_pair_motion, run_pipeline_with_order, CurationThresholds, FlowField, Manifest,
    MotionConfig, MotionLabel, Stage,
};
use camvid::dataset::{
    reformat_static, reverse_augment, sample_stride, synth_orbit_trajectory, trajectory_pose_file, OrbitPoint,
    ReformatScheme, SourceKind, StrideRule, TrajectoryConfig,
};
use camvid::defaults::audit_header;
use camvid::diffusion::{
    gaussian_posterior_denoiser, moments, sample_batch, sigma_schedule, GaussianMixture, MixtureComponent, OdeMethod,
    Sharding, DEFAULT_RHO, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN, DEFAULT_STEPS,
};
use camvid::metrics::{
    align_and_compare, essential_matrix, frechet_distance, precision_matching_score, AucMode, EvalReport, FeatureStats,
    MatchSet, ReconstructionSummary, DEFAULT_AUC_THRESHOLDS, DEFAULT_EPIPOLAR_THRESHOLD,
};
use camvid::tensor_io::CavtTensor;

use crate::*;

// Fixed so sampled output does not depend on --jobs.
const SAMPLE_SHARDS: usize = 8;

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if g.jobs == 0 {
        return Err(UsageError("--jobs must be at least 1".into()).into());
    }
    if g.paper_defaults {
        eprint!("{}", audit_header());
    }
    if let Some(parent) = g.out.as_deref().and_then(Path::parent) {
        if !parent.as_os_str().is_empty() && !parent.is_dir() {
            anyhow::bail!("output directory {} does not exist", parent.display());
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(g.jobs).build()?;
    pool.install(|| match cli.command {
        Command::Plucker(a) => plucker(&g, a),
        Command::Relativize(a) => relativize(&g, a),
        Command::TrajGen(a) => traj_gen(&g, a),
        Command::Reformat(a) => reformat(&g, a),
        Command::Curate(a) => curate(&g, a),
        Command::ClassifyMotion(a) => classify_motion(&g, a),
        Command::EvalPose(a) => eval_pose(&g, a),
        Command::EvalEpipolar(a) => eval_epipolar(&g, a),
        Command::EvalFrechet(a) => eval_frechet(&g, a),
        Command::SampleToy(a) => sample_toy(&g, a),
    })
}

/// `given` unless `--paper-defaults` is set, in which case `default` wins.
fn pin<T>(g: &GlobalArgs, flag: &str, given: Option<T>, default: T) -> T {
    match given {
        Some(_) if g.paper_defaults => {
            log::warn!("--paper-defaults overrides --{flag}");
            default
        }
        Some(v) => v,
        None => default,
    }
}

fn require_inputs<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            anyhow::bail!("input file {} does not exist", p.display());
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn emit_text(g: &GlobalArgs, text: &str) -> Result<()> {
    match &g.out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(g: &GlobalArgs, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit_text(g, &text)
}

fn emit_tensor(g: &GlobalArgs, t: &CavtTensor) -> Result<()> {
    let Some(p) = &g.out else {
        return Err(UsageError("tensor output needs --out".into()).into());
    };
    write_file(p, &t.to_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

// Pose files carry normalized intrinsics, so any image size works when only
// extrinsics matter.
fn read_sequence(path: &Path, repair: bool) -> Result<(PoseFile, PoseSequence<f64>)> {
    let file = PoseFile::read(path).with_context(|| format!("pose file {}", path.display()))?;
    let seq = file.to_sequence(1, 1, repair).with_context(|| format!("pose file {}", path.display()))?;
    Ok((file, seq))
}

fn plucker(g: &GlobalArgs, a: PluckerArgs) -> Result<()> {
    require_inputs([&a.poses])?;
    let file = PoseFile::read(&a.poses)?;
    let mut seq = file.to_sequence::<f64>(a.width, a.height, a.repair)?;
    if a.relative {
        seq = to_relative(&seq);
    }
    let (h, w) = (a.grid_h.unwrap_or(a.height), a.grid_w.unwrap_or(a.width));
    let opts = PluckerOptions {
        mode: match a.mode {
            RayModeArg::Standard => RayMode::Standard,
            RayModeArg::PaperLiteral => RayMode::PaperLiteral,
        },
        sampling: match a.sampling {
            SamplingArg::Center => PixelSampling::Center,
            SamplingArg::Corner => PixelSampling::Corner,
        },
    };
    let grids: Vec<Vec<f64>> = seq
        .poses()
        .par_iter()
        .map(|p| plucker_grid(seq.intrinsics(), p, h, w, opts).map(|g| g.to_chw()))
        .collect::<camvid::Result<_>>()?;
    let values: Vec<f64> = grids.concat();
    log::info!("{} poses -> ({}, 6, {h}, {w})", seq.len(), seq.len());
    emit_tensor(g, &CavtTensor::from_real(vec![seq.len(), 6, h, w], &values)?)
}

fn relativize(g: &GlobalArgs, a: RelativizeArgs) -> Result<()> {
    require_inputs([&a.poses])?;
    let (file, seq) = read_sequence(&a.poses, a.repair)?;
    let mut rel = to_relative_at(&seq, a.anchor)?;
    if a.normalize {
        let (mut v, scale) = normalize_scale(std::slice::from_ref(&rel))?;
        log::info!("scale divisor {scale}");
        rel = v.remove(0);
    }
    // Keep per-frame intrinsics and distortion; only extrinsics change.
    let mut out = file.clone();
    for (rec, p) in out.records.iter_mut().zip(rel.poses()) {
        let (r, t) = (p.rotation(), p.translation());
        for (row, e) in rec.extrinsics.iter_mut().enumerate() {
            *e = [r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]];
        }
    }
    emit_text(g, &out.to_text())
}

fn traj_gen(g: &GlobalArgs, a: TrajGenArgs) -> Result<()> {
    require_inputs(a.config.iter())?;
    let mut cfg: TrajectoryConfig = match &a.config {
        Some(p) => {
            serde_json::from_str(&read_text(p)?).with_context(|| format!("trajectory config {}", p.display()))?
        }
        None => TrajectoryConfig::default(),
    };
    if g.paper_defaults {
        let d = TrajectoryConfig::default();
        cfg = TrajectoryConfig {
            frame_count: cfg.frame_count,
            azimuth_sweep: cfg.azimuth_sweep,
            start_azimuth: cfg.start_azimuth,
            start_elevation: cfg.start_elevation,
            seed: cfg.seed,
            ..d
        };
    }
    cfg.frame_count = a.frames.unwrap_or(cfg.frame_count);
    cfg.azimuth_sweep = a.sweep.unwrap_or(cfg.azimuth_sweep);
    cfg.start_azimuth = a.start_azimuth.unwrap_or(cfg.start_azimuth);
    cfg.start_elevation = a.start_elevation.unwrap_or(cfg.start_elevation);
    cfg.azimuth_noise_scale = pin(g, "azimuth-noise", a.azimuth_noise, cfg.azimuth_noise_scale);
    cfg.seed = g.seed.unwrap_or(cfg.seed);

    let traj = synth_orbit_trajectory(&cfg)?;
    let intr: [f64; 4] = a.intrinsics.as_slice().try_into().expect("clap enforces 4 values");
    let file = trajectory_pose_file(&traj, intr)?;
    if let Some(p) = &a.angles {
        let points: &[OrbitPoint] = &traj.points;
        let mut text = serde_json::to_string_pretty(points)?;
        text.push('\n');
        write_file(p, text.as_bytes())?;
    }
    emit_text(g, &file.to_text())
}

fn reformat(g: &GlobalArgs, a: ReformatArgs) -> Result<()> {
    let stride = match (a.stride, a.source_kind) {
        (Some(s), _) => s,
        (None, Some(kind)) => {
            let kind = match kind {
                SourceKindArg::StaticScene => SourceKind::StaticScene,
                SourceKindArg::Monocular => SourceKind::Monocular,
                SourceKindArg::DynamicRender => SourceKind::DynamicRender,
            };
            sample_stride(&StrideRule::for_kind(kind), g.seed.unwrap_or(0))?
        }
        (None, None) => 1,
    };
    let scheme = match a.scheme {
        SchemeArg::Blocks => ReformatScheme::Blocks,
        SchemeArg::Interleave => ReformatScheme::Interleave,
        SchemeArg::Pivot => ReformatScheme::Pivot,
    };
    log::info!("stride {stride}");
    let mut assignment = reformat_static(a.source_len, a.frames, a.views, scheme, stride)?;
    if a.reverse {
        assignment = reverse_augment(&assignment);
    }
    emit_text(g, &(assignment.to_json() + "\n"))
}

fn stage(s: StageArg) -> Stage {
    match s {
        StageArg::SfmRegistration => Stage::SfmRegistration,
        StageArg::PointCount => Stage::PointCount,
        StageArg::Ocr => Stage::Ocr,
        StageArg::Aesthetic => Stage::Aesthetic,
        StageArg::Motion => Stage::Motion,
    }
}

fn curate(g: &GlobalArgs, a: CurateArgs) -> Result<()> {
    require_inputs([&a.manifest])?;
    let d = CurationThresholds::default();
    let t = CurationThresholds {
        min_points: pin(g, "min-points", a.min_points, d.min_points),
        max_points: pin(g, "max-points", a.max_points, d.max_points),
        max_text_fraction: pin(g, "max-text-fraction", a.max_text_fraction, d.max_text_fraction),
        min_aesthetic: pin(g, "min-aesthetic", a.min_aesthetic, d.min_aesthetic),
    };
    let order: Vec<Stage> = match &a.order {
        Some(o) => {
            if o.iter().enumerate().any(|(i, s)| o[..i].contains(s)) {
                return Err(UsageError("--order lists a stage twice".into()).into());
            }
            o.iter().copied().map(stage).collect()
        }
        None => Stage::ORDER.to_vec(),
    };
    let manifest =
        Manifest::from_json(&read_text(&a.manifest)?).with_context(|| format!("manifest {}", a.manifest.display()))?;
    let out = run_pipeline_with_order(&manifest, &t, &order, g.jobs > 1)?;
    let mut report = serde_json::to_string_pretty(&out.stage_counts)?;
    report.push('\n');
    match &a.report {
        Some(p) => write_file(p, report.as_bytes())?,
        None => eprint!("{report}"),
    }
    emit_text(g, &(out.to_json() + "\n"))
}

#[derive(Serialize)]
struct PairLabel {
    file: String,
    label: MotionLabel,
}

#[derive(Serialize)]
struct MotionReport {
    pairs: Vec<PairLabel>,
    clip: MotionLabel,
}

fn classify_motion(g: &GlobalArgs, a: ClassifyMotionArgs) -> Result<()> {
    require_inputs(&a.flows)?;
    let d = MotionConfig::default();
    let cfg = MotionConfig {
        static_threshold: pin(g, "static-threshold", a.static_threshold, d.static_threshold),
        zoom_threshold: pin(g, "zoom-threshold", a.zoom_threshold, d.zoom_threshold),
        dominance: pin(g, "dominance", a.dominance, d.dominance),
        invert_pan_tilt: a.invert_pan_tilt,
    };
    let pairs: Vec<PairLabel> = a
        .flows
        .par_iter()
        .map(|p| -> Result<PairLabel> {
            let f = FlowField::read(p).with_context(|| format!("flow {}", p.display()))?;
            Ok(PairLabel { file: p.display().to_string(), label: classify_pair_motion(&f, &cfg) })
        })
        .collect::<Result<_>>()?;
    let labels: Vec<MotionLabel> = pairs.iter().map(|p| p.label).collect();
    let clip = classify_clip_motion(&labels)?;
    emit_json(g, &MotionReport { pairs, clip })
}

#[derive(Serialize)]
struct PoseReport {
    #[serde(flatten)]
    report: EvalReport,
    rotation_error: Vec<f64>,
    translation_error: Vec<f64>,
}

fn eval_pose(g: &GlobalArgs, a: EvalPoseArgs) -> Result<()> {
    require_inputs([&a.pred, &a.gt].into_iter().chain(a.colmap_results.iter()))?;
    let (_, pred) = read_sequence(&a.pred, a.repair)?;
    let (_, gt) = read_sequence(&a.gt, a.repair)?;
    let stats = align_and_compare(&pred, &gt, a.anchor)?;
    let thresholds = pin(g, "thresholds", a.thresholds, DEFAULT_AUC_THRESHOLDS.to_vec());
    let mode = if a.combined { AucMode::Combined } else { AucMode::PerMetric };
    let mut report = EvalReport::from_pose_errors(&stats, &thresholds, mode)?;
    if let Some(p) = &a.colmap_results {
        report.colmap_error_rate = Some(ReconstructionSummary::parse(&read_text(p)?)?.error_rate()?);
    }
    emit_json(
        g,
        &PoseReport { report, rotation_error: stats.rotation_error, translation_error: stats.translation_error },
    )
}

fn eval_epipolar(g: &GlobalArgs, a: EvalEpipolarArgs) -> Result<()> {
    require_inputs([&a.matches, &a.poses])?;
    let m =
        MatchSet::from_json(&read_text(&a.matches)?).with_context(|| format!("match set {}", a.matches.display()))?;
    let (_, seq) = read_sequence(&a.poses, a.repair)?;
    let pose = |i: usize| {
        seq.poses().get(i).ok_or_else(|| anyhow::anyhow!("view index {i} outside pose file of {} frames", seq.len()))
    };
    let rel = pose(a.view_b)?.compose(&pose(a.view_a)?.inverse());
    let e = essential_matrix(&rel)?;
    let threshold = pin(g, "threshold", a.threshold, DEFAULT_EPIPOLAR_THRESHOLD);
    let (precision, ms) = precision_matching_score(&m, &e, threshold);
    let report = EvalReport { precision: Some(precision), matching_score: Some(ms), ..Default::default() };
    emit_json(g, &report)
}

fn read_tensor(p: &Path) -> Result<CavtTensor> {
    CavtTensor::read(p).with_context(|| format!("tensor {}", p.display()))
}

fn eval_frechet(g: &GlobalArgs, a: EvalFrechetArgs) -> Result<()> {
    require_inputs(&a.stats)?;
    let (sa, sb): (FeatureStats<f64>, FeatureStats<f64>) = match a.stats.as_slice() {
        [pa, pb] => {
            (FeatureStats::from_packed_cavt(&read_tensor(pa)?)?, FeatureStats::from_packed_cavt(&read_tensor(pb)?)?)
        }
        [ma, ca, mb, cb] => (
            FeatureStats::from_cavt(&read_tensor(ma)?, &read_tensor(ca)?)?,
            FeatureStats::from_cavt(&read_tensor(mb)?, &read_tensor(cb)?)?,
        ),
        _ => return Err(UsageError("eval-frechet takes 2 packed or 4 mean/cov tensors".into()).into()),
    };
    let report = EvalReport { frechet_distance: Some(frechet_distance(&sa, &sb)?), ..Default::default() };
    emit_json(g, &report)
}

#[derive(Deserialize)]
struct MixtureFile {
    components: Vec<ComponentFile>,
}

#[derive(Deserialize)]
struct ComponentFile {
    weight: f64,
    mu: Vec<f64>,
    s: f64,
}

#[derive(Serialize)]
struct SampleReport {
    method: &'static str,
    steps: usize,
    seed: u64,
    count: usize,
    dim: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    target_mean: Vec<f64>,
    target_var: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    component_fractions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_weights: Option<Vec<f64>>,
}

fn sample_toy(g: &GlobalArgs, a: SampleToyArgs) -> Result<()> {
    require_inputs(a.mixture.iter())?;
    let steps = pin(g, "steps", a.steps, DEFAULT_STEPS);
    let schedule = sigma_schedule(steps, DEFAULT_SIGMA_MIN, DEFAULT_SIGMA_MAX, DEFAULT_RHO)?;
    let (method, method_name) = match a.method {
        MethodArg::Euler => (OdeMethod::Euler, "euler"),
        MethodArg::Heun => (OdeMethod::Heun, "heun"),
    };
    let seed = g.seed.unwrap_or(0);
    if a.n == 0 {
        anyhow::bail!("--n must be positive");
    }
    let sharding = Sharding::Shards(SAMPLE_SHARDS);

    let (samples, dim, target_mean, target_var, fractions, weights) = match &a.mixture {
        Some(p) => {
            let parsed: MixtureFile =
                serde_json::from_str(&read_text(p)?).with_context(|| format!("mixture config {}", p.display()))?;
            let mix = GaussianMixture::new(
                parsed.components.into_iter().map(|c| MixtureComponent { weight: c.weight, mu: c.mu, s: c.s }).collect(),
            )?;
            let dim = mix.dim();
            let samples = sample_batch(&mix, dim, a.n, &schedule, method, seed, sharding)?;
            let comps = mix.components();
            let mean: Vec<f64> = (0..dim).map(|d| comps.iter().map(|c| c.weight * c.mu[d]).sum()).collect();
            let var: Vec<f64> = (0..dim)
                .map(|d| {
                    comps.iter().map(|c| c.weight * (c.s * c.s + c.mu[d] * c.mu[d])).sum::<f64>() - mean[d] * mean[d]
                })
                .collect();
            let mut counts = vec![0usize; comps.len()];
            for s in &samples {
                counts[mix.assign(s)] += 1;
            }
            let fractions = counts.iter().map(|&c| c as f64 / a.n as f64).collect();
            let weights = comps.iter().map(|c| c.weight).collect();
            (samples, dim, mean, var, Some(fractions), Some(weights))
        }
        None => {
            let den = gaussian_posterior_denoiser(a.mu.clone(), a.s)?;
            let dim = a.mu.len();
            let samples = sample_batch(&den, dim, a.n, &schedule, method, seed, sharding)?;
            (samples, dim, a.mu.clone(), vec![a.s * a.s; dim], None, None)
        }
    };
    let (mean, var) = moments(&samples)?;
    if let Some(p) = &a.states {
        let flat: Vec<f64> = samples.concat();
        write_file(p, &CavtTensor::from_real(vec![a.n, dim], &flat)?.to_bytes())?;
    }
    let report = SampleReport {
        method: method_name,
        steps,
        seed,
        count: a.n,
        dim,
        mean,
        var,
        target_mean,
        target_var,
        component_fractions: fractions,
        target_weights: weights,
    };
    emit_json(g, &report)
}
