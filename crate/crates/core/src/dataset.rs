//! Training-item construction: orbit trajectories for multi-view renders,
//! static-video reformatting into V-view items, and stride sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::pose_file::{PoseFile, PoseRecord};
use crate::camera::CameraPose;
use crate::diffusion::seeded_rng;
use crate::error::{Error, Result};

pub const MAX_ELEVATION_DEG: f64 = 89.0;

/// Parameters of the random smooth orbit generator. Angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub frame_count: usize,
    pub sinusoid_count: usize,
    /// Sinusoid frequencies, cycles per orbit.
    pub freq_range: [f64; 2],
    /// Sinusoid amplitudes, degrees.
    pub weight_range: [f64; 2],
    pub smoothing_kernel_width: usize,
    pub max_elevation: f64,
    pub azimuth_noise_scale: f64,
    pub azimuth_sweep: f64,
    pub start_azimuth: f64,
    pub start_elevation: f64,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            frame_count: 84,
            sinusoid_count: 3,
            freq_range: [0.5, 3.0],
            weight_range: [0.0, 15.0],
            smoothing_kernel_width: 5,
            max_elevation: MAX_ELEVATION_DEG,
            azimuth_noise_scale: 1.0,
            azimuth_sweep: 360.0,
            start_azimuth: 0.0,
            start_elevation: 0.0,
            seed: 0,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.frame_count < 2 {
            return bad(format!("frame_count must be >= 2, got {}", self.frame_count));
        }
        if !(self.max_elevation > 0.0 && self.max_elevation <= MAX_ELEVATION_DEG) {
            return bad(format!("max_elevation must lie in (0, 89], got {}", self.max_elevation));
        }
        if self.smoothing_kernel_width == 0 || self.smoothing_kernel_width.is_multiple_of(2) {
            return bad(format!("smoothing_kernel_width must be odd, got {}", self.smoothing_kernel_width));
        }
        let [f0, f1] = self.freq_range;
        let [w0, w1] = self.weight_range;
        if !(f0 <= f1 && f0.is_finite() && f1.is_finite()) {
            return bad(format!("freq_range {:?} is not an interval", self.freq_range));
        }
        if !(0.0 <= w0 && w0 <= w1 && w1.is_finite()) {
            return bad(format!("weight_range {:?} must be a non-negative interval", self.weight_range));
        }
        if !(self.azimuth_noise_scale >= 0.0 && self.azimuth_noise_scale.is_finite()) {
            return bad(format!("azimuth_noise_scale must be >= 0, got {}", self.azimuth_noise_scale));
        }
        if self.start_elevation.abs() > self.max_elevation {
            return bad(format!("start_elevation {} exceeds max_elevation", self.start_elevation));
        }
        if ![self.azimuth_sweep, self.start_azimuth].iter().all(|v| v.is_finite()) {
            return bad("azimuth parameters must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitPoint {
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTrajectory {
    pub points: Vec<OrbitPoint>,
    /// Unsmoothed sinusoid sum per frame, before offsetting and clamping.
    pub raw_elevation: Vec<f64>,
}

fn reflect(mut i: isize, n: usize) -> usize {
    let last = n as isize - 1;
    if last == 0 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i > last {
            i = 2 * last - i;
        } else {
            return i as usize;
        }
    }
}

/// Normalized box filter with reflective (mirror, edge not repeated) padding.
pub fn box_smooth(values: &[f64], width: usize) -> Vec<f64> {
    let half = (width / 2) as isize;
    let n = values.len();
    (0..n as isize).map(|i| (-half..=half).map(|k| values[reflect(i + k, n)]).sum::<f64>() / width as f64).collect()
}

/// Random smooth orbit: elevation from a smoothed weighted sum of sinusoids,
/// azimuth regularly spaced over the sweep plus uniform jitter. Frame 0 sits
/// exactly at the configured start.
pub fn synth_orbit_trajectory(cfg: &TrajectoryConfig) -> Result<OrbitTrajectory> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed, 0);
    let n = cfg.frame_count;
    let sinusoids: Vec<(f64, f64, f64)> = (0..cfg.sinusoid_count)
        .map(|_| {
            let w = uniform(&mut rng, cfg.weight_range);
            let f = uniform(&mut rng, cfg.freq_range);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (w, f, phase)
        })
        .collect();
    let raw: Vec<f64> = (0..n)
        .map(|t| {
            let u = t as f64 / n as f64;
            sinusoids.iter().map(|&(w, f, phase)| w * (std::f64::consts::TAU * f * u + phase).sin()).sum()
        })
        .collect();
    let smooth = box_smooth(&raw, cfg.smoothing_kernel_width);
    let lim = cfg.max_elevation;
    let points = (0..n)
        .map(|t| {
            let elevation = (cfg.start_elevation + smooth[t] - smooth[0]).clamp(-lim, lim);
            let jitter = if t == 0 || cfg.azimuth_noise_scale == 0.0 {
                0.0
            } else {
                rng.random_range(-cfg.azimuth_noise_scale..=cfg.azimuth_noise_scale)
            };
            let azimuth = cfg.start_azimuth + cfg.azimuth_sweep * t as f64 / n as f64 + jitter;
            OrbitPoint { azimuth, elevation }
        })
        .collect();
    Ok(OrbitTrajectory { points, raw_elevation: raw })
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Camera on a sphere of `radius` at the given azimuth/elevation (degrees,
/// z up), looking at the origin.
pub fn orbit_pose(point: OrbitPoint, radius: f64) -> Result<CameraPose<f64>> {
    let (az, el) = (point.azimuth.to_radians(), point.elevation.to_radians());
    let eye = nalgebra::Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
    CameraPose::look_at(eye, nalgebra::Vector3::zeros(), nalgebra::Vector3::z())
}

/// Pose file for a trajectory at unit radius; `intrinsics` are normalized
/// `fx, fy, cx, cy` shared by every frame and timestamps are frame indices.
pub fn trajectory_pose_file(traj: &OrbitTrajectory, intrinsics: [f64; 4]) -> Result<PoseFile> {
    let records = traj
        .points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let pose = orbit_pose(p, 1.0)?;
            let (r, t) = (pose.rotation(), pose.translation());
            let mut extrinsics = [[0.0; 4]; 3];
            for (row, e) in extrinsics.iter_mut().enumerate() {
                *e = [r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]];
            }
            Ok(PoseRecord { timestamp: i as u64, intrinsics, distortion: [0.0, 0.0], extrinsics })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PoseFile { header: None, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReformatScheme {
    /// View `v` takes the contiguous block `v(F−1)+1 ..= (v+1)(F−1)` after the shared frame.
    Blocks,
    /// View `v` takes every `V`-th frame starting at `v + 1`.
    Interleave,
    /// Two views walking backward and forward from the middle frame `F − 1`.
    Pivot,
}

/// Source-frame indices for each view of one training item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewAssignment {
    pub scheme: ReformatScheme,
    pub views: Vec<Vec<usize>>,
}

impl ViewAssignment {
    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn frames_per_view(&self) -> usize {
        self.views.first().map_or(0, Vec::len)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("assignment serializes")
    }
}

/// Splits a static video of `source_len` frames, subsampled by `stride`,
/// into `views` views of `frames` frames sharing one start (or pivot) frame.
/// Returned indices refer to the original, un-subsampled video.
pub fn reformat_static(
    source_len: usize,
    frames: usize,
    views: usize,
    scheme: ReformatScheme,
    stride: usize,
) -> Result<ViewAssignment> {
    if frames == 0 || views == 0 || stride == 0 {
        return Err(Error::InvalidConfig(format!(
            "frames ({frames}), views ({views}) and stride ({stride}) must be positive"
        )));
    }
    let available = if source_len == 0 { 0 } else { (source_len - 1) / stride + 1 };
    let per_view = frames - 1;
    let views_idx: Vec<Vec<usize>> = match scheme {
        ReformatScheme::Blocks | ReformatScheme::Interleave => {
            let need = per_view * views + 1;
            if available < need {
                return Err(Error::InsufficientFrames(format!(
                    "{scheme:?} with F={frames}, V={views} needs {need} frames after stride {stride}, have {available}"
                )));
            }
            (0..views)
                .map(|v| {
                    std::iter::once(0)
                        .chain((0..per_view).map(|k| match scheme {
                            ReformatScheme::Blocks => v * per_view + 1 + k,
                            _ => v + 1 + k * views,
                        }))
                        .collect()
                })
                .collect()
        }
        ReformatScheme::Pivot => {
            if views != 2 {
                return Err(Error::InvalidConfig(format!("pivot scheme needs exactly 2 views, got {views}")));
            }
            let need = 2 * frames - 1;
            if available < need {
                return Err(Error::InsufficientFrames(format!(
                    "pivot with F={frames} needs {need} frames after stride {stride}, have {available}"
                )));
            }
            let p = per_view;
            vec![(0..frames).map(|k| p - k).collect(), (0..frames).map(|k| p + k).collect()]
        }
    };
    let views = views_idx.into_iter().map(|v| v.into_iter().map(|i| i * stride).collect()).collect();
    Ok(ViewAssignment { scheme, views })
}

/// Reversed copy of one index list.
pub fn reverse_indices(indices: &[usize]) -> Vec<usize> {
    indices.iter().rev().copied().collect()
}

/// Time-reversal augmentation of a whole assignment: every index `i` maps to
/// `lo + hi − i` over the consumed range `[lo, hi]`. This is the assignment
/// the same scheme would produce on the reversed video, so all views again
/// start at one shared frame (the old last frame). Applying it twice is the
/// identity.
pub fn reverse_augment(a: &ViewAssignment) -> ViewAssignment {
    let all = a.views.iter().flatten();
    let (lo, hi) = match (all.clone().min(), all.max()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return a.clone(),
    };
    ViewAssignment {
        scheme: a.scheme,
        views: a.views.iter().map(|v| v.iter().map(|&i| lo + hi - i).collect()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    StaticScene,
    Monocular,
    DynamicRender,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrideRule {
    pub source_kind: SourceKind,
    /// Inclusive range.
    pub stride_range: (usize, usize),
}

impl StrideRule {
    pub fn for_kind(source_kind: SourceKind) -> Self {
        let stride_range = match source_kind {
            SourceKind::StaticScene => (1, 8),
            SourceKind::Monocular => (1, 2),
            SourceKind::DynamicRender => (1, 1),
        };
        Self { source_kind, stride_range }
    }

    pub fn validate(&self) -> Result<()> {
        let canonical = Self::for_kind(self.source_kind);
        if *self != canonical {
            return Err(Error::InvalidConfig(format!(
                "{:?} strides must span {:?}, got {:?}",
                self.source_kind, canonical.stride_range, self.stride_range
            )));
        }
        Ok(())
    }
}

/// Uniform stride from the rule's inclusive range, deterministic per seed.
pub fn sample_stride(rule: &StrideRule, seed: u64) -> Result<usize> {
    rule.validate()?;
    let (lo, hi) = rule.stride_range;
    if lo == hi {
        return Ok(lo);
    }
    Ok(seeded_rng(seed, 0).random_range(lo..=hi))
}
