//! Monocular-video curation: per-clip attribute filters, the optical-flow
//! camera-motion classifier and the staged manifest pipeline.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::CavtTensor;

/// Camera motion of a frame pair or clip. Names describe the camera, not the
/// apparent image motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionLabel {
    Static,
    ZoomOut,
    ZoomIn,
    PanLeft,
    TiltUp,
    PanRight,
    TiltDown,
    Unknown,
}

impl MotionLabel {
    pub const ALL: [MotionLabel; 8] = [
        MotionLabel::Static,
        MotionLabel::ZoomOut,
        MotionLabel::ZoomIn,
        MotionLabel::PanLeft,
        MotionLabel::TiltUp,
        MotionLabel::PanRight,
        MotionLabel::TiltDown,
        MotionLabel::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MotionLabel::Static => "static",
            MotionLabel::ZoomOut => "zoom_out",
            MotionLabel::ZoomIn => "zoom_in",
            MotionLabel::PanLeft => "pan_left",
            MotionLabel::TiltUp => "tilt_up",
            MotionLabel::PanRight => "pan_right",
            MotionLabel::TiltDown => "tilt_down",
            MotionLabel::Unknown => "unknown",
        }
    }

    fn flipped(self) -> Self {
        match self {
            MotionLabel::PanLeft => MotionLabel::PanRight,
            MotionLabel::PanRight => MotionLabel::PanLeft,
            MotionLabel::TiltUp => MotionLabel::TiltDown,
            MotionLabel::TiltDown => MotionLabel::TiltUp,
            other => other,
        }
    }
}

impl fmt::Display for MotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense optical flow in pixels; `+u` is rightward, `+v` downward.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    uv: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, uv: Vec<[f64; 2]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!("flow field {width}x{height} is empty")));
        }
        if uv.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "flow field {width}x{height} needs {} vectors, got {}",
                width * height,
                uv.len()
            )));
        }
        if uv.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord("flow field has non-finite values".into()));
        }
        Ok(Self { width, height, uv })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Result<Self> {
        let uv = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, uv)
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Result<Self> {
        Self::new(width, height, vec![[u, v]; width * height])
    }

    /// Reads a `(H, W, 2)` tensor.
    pub fn from_cavt(t: &CavtTensor) -> Result<Self> {
        match *t.dims() {
            [h, w, 2] => {
                let uv = t.values().chunks_exact(2).map(|c| [c[0] as f64, c[1] as f64]).collect();
                Self::new(w, h, uv)
            }
            ref d => Err(Error::ShapeMismatch(format!("flow tensor must be (H, W, 2), got {d:?}"))),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_cavt(&CavtTensor::read(path)?)
    }

    pub fn to_cavt(&self) -> CavtTensor {
        let values = self.uv.iter().flat_map(|&[u, v]| [u as f32, v as f32]).collect();
        CavtTensor::new(vec![self.height, self.width, 2], values).expect("dims match")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.uv
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { uv: self.uv.iter().map(|&[u, v]| [u * k, v * k]).collect(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    /// Mean flow magnitude (pixels) below which a pair is static.
    pub static_threshold: f64,
    /// Radial alignment beyond which a pair is a zoom.
    pub zoom_threshold: f64,
    /// Minimum share of moving pixels in the dominant direction quadrant.
    pub dominance: f64,
    /// Map rightward flow to `pan_right` (and downward to `tilt_down`) instead.
    pub invert_pan_tilt: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { static_threshold: 1.0, zoom_threshold: 0.6, dominance: 0.5, invert_pan_tilt: false }
    }
}

const FLOW_EPS: f64 = 1e-12;

/// Index of the 90° sector centred on 0°, 90°, 180° or 270° containing the
/// image-space direction of `(u, v)`.
fn quadrant(u: f64, v: f64) -> usize {
    let deg = v.atan2(u).to_degrees().rem_euclid(360.0);
    (((deg + 45.0) / 90.0).floor() as usize) % 4
}

/// Camera motion between two frames from their dense flow.
pub fn classify_pair_motion(f: &FlowField, cfg: &MotionConfig) -> MotionLabel {
    let n = f.uv.len() as f64;
    let mean_mag = f.uv.iter().map(|&[u, v]| u.hypot(v)).sum::<f64>() / n;
    if mean_mag < cfg.static_threshold {
        return MotionLabel::Static;
    }

    let (cx, cy) = (f.width as f64 / 2.0, f.height as f64 / 2.0);
    let mut rho = 0.0;
    for y in 0..f.height {
        for x in 0..f.width {
            let [u, v] = f.uv[y * f.width + x];
            let (rx, ry) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let rn = rx.hypot(ry);
            if rn > FLOW_EPS {
                rho += (u * rx + v * ry) / rn / u.hypot(v).max(FLOW_EPS);
            }
        }
    }
    rho /= n;
    if rho > cfg.zoom_threshold {
        return MotionLabel::ZoomIn;
    }
    if rho < -cfg.zoom_threshold {
        return MotionLabel::ZoomOut;
    }

    let mut hist = [0usize; 4];
    let (mut su, mut sv, mut moving) = (0.0, 0.0, 0usize);
    for &[u, v] in &f.uv {
        let m = u.hypot(v);
        if m > FLOW_EPS {
            hist[quadrant(u, v)] += 1;
            su += u / m;
            sv += v / m;
            moving += 1;
        }
    }
    let dominant = *hist.iter().max().unwrap_or(&0);
    if moving == 0 || (dominant as f64) < cfg.dominance * moving as f64 || su.hypot(sv) <= FLOW_EPS {
        return MotionLabel::Unknown;
    }
    let label = match quadrant(su, sv) {
        0 => MotionLabel::PanLeft,
        1 => MotionLabel::TiltUp,
        2 => MotionLabel::PanRight,
        _ => MotionLabel::TiltDown,
    };
    if cfg.invert_pan_tilt {
        label.flipped()
    } else {
        label
    }
}

/// Clip label from its frame-pair labels: any static/unknown pair makes the
/// clip static; otherwise a strict majority label wins, else unknown.
pub fn classify_clip_motion(labels: &[MotionLabel]) -> Result<MotionLabel> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("clip has no frame-pair labels".into()));
    }
    if labels.iter().any(|l| matches!(l, MotionLabel::Static | MotionLabel::Unknown)) {
        return Ok(MotionLabel::Static);
    }
    let mut counts: HashMap<MotionLabel, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    Ok(counts.into_iter().find(|&(_, c)| 2 * c > labels.len()).map_or(MotionLabel::Unknown, |(l, _)| l))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub frame_count: u64,
    pub registered_frames: u64,
    /// `None` when structure-from-motion failed.
    pub sfm_point_count: Option<u64>,
    pub text_area_fraction: f64,
    pub aesthetic_score: f64,
    pub resolution: [u32; 2],
    #[serde(rename = "flow_labels", default, skip_serializing_if = "Option::is_none")]
    pub flow_pair_labels: Option<Vec<MotionLabel>>,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRecord(format!("clip {:?}: {m}", self.clip_id)));
        if self.registered_frames > self.frame_count {
            return bad(format!(
                "registered_frames {} exceeds frame_count {}",
                self.registered_frames, self.frame_count
            ));
        }
        if !(0.0..=1.0).contains(&self.text_area_fraction) {
            return bad(format!("text_area_fraction {} outside [0, 1]", self.text_area_fraction));
        }
        if !self.aesthetic_score.is_finite() {
            return bad("aesthetic_score is not finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationThresholds {
    pub min_points: u64,
    pub max_points: u64,
    pub max_text_fraction: f64,
    pub min_aesthetic: f64,
}

impl Default for CurationThresholds {
    fn default() -> Self {
        Self { min_points: 1_000, max_points: 40_000, max_text_fraction: 1e-4, min_aesthetic: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    SfmRegistration,
    PointCount,
    Ocr,
    Aesthetic,
    Motion,
}

impl Stage {
    pub const ORDER: [Stage; 5] =
        [Stage::SfmRegistration, Stage::PointCount, Stage::Ocr, Stage::Aesthetic, Stage::Motion];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SfmRegistration => "sfm_registration",
            Stage::PointCount => "point_count",
            Stage::Ocr => "ocr",
            Stage::Aesthetic => "aesthetic",
            Stage::Motion => "motion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    SfmFailed,
    UnregisteredFrames,
    PointCountMissing,
    PointCountLow,
    PointCountHigh,
    TextArea,
    AestheticLow,
    MotionStatic,
    MotionMissing,
}

impl RejectReason {
    pub fn stage(self) -> Stage {
        match self {
            RejectReason::SfmFailed | RejectReason::UnregisteredFrames => Stage::SfmRegistration,
            RejectReason::PointCountMissing | RejectReason::PointCountLow | RejectReason::PointCountHigh => {
                Stage::PointCount
            }
            RejectReason::TextArea => Stage::Ocr,
            RejectReason::AestheticLow => Stage::Aesthetic,
            RejectReason::MotionStatic | RejectReason::MotionMissing => Stage::Motion,
        }
    }
}

/// Reasons `c` fails `stage`; empty when it passes.
pub fn stage_reasons(stage: Stage, c: &ClipRecord, t: &CurationThresholds) -> Vec<RejectReason> {
    let mut out = Vec::new();
    match stage {
        Stage::SfmRegistration => {
            if c.sfm_point_count.is_none() {
                out.push(RejectReason::SfmFailed);
            }
            if c.registered_frames < c.frame_count {
                out.push(RejectReason::UnregisteredFrames);
            }
        }
        Stage::PointCount => match c.sfm_point_count {
            None => out.push(RejectReason::PointCountMissing),
            Some(p) if p < t.min_points => out.push(RejectReason::PointCountLow),
            Some(p) if p > t.max_points => out.push(RejectReason::PointCountHigh),
            Some(_) => {}
        },
        Stage::Ocr => {
            if c.text_area_fraction > t.max_text_fraction {
                out.push(RejectReason::TextArea);
            }
        }
        Stage::Aesthetic => {
            if !(c.aesthetic_score >= t.min_aesthetic) {
                out.push(RejectReason::AestheticLow);
            }
        }
        Stage::Motion => match c.flow_pair_labels.as_deref().map(classify_clip_motion) {
            Some(Ok(MotionLabel::Static)) => out.push(RejectReason::MotionStatic),
            Some(Ok(_)) => {}
            None | Some(Err(_)) => out.push(RejectReason::MotionMissing),
        },
    }
    out
}

/// Whether a clip survives every filter, with all violated reasons.
pub fn filter_clip(c: &ClipRecord, t: &CurationThresholds) -> (bool, Vec<RejectReason>) {
    let reasons: Vec<_> = Stage::ORDER.iter().flat_map(|&s| stage_reasons(s, c, t)).collect();
    (reasons.is_empty(), reasons)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub clips: Vec<ClipRecord>,
    #[serde(default)]
    pub stage_counts: IndexMap<String, usize>,
}

impl Manifest {
    pub fn new(clips: Vec<ClipRecord>) -> Self {
        Self { clips, stage_counts: IndexMap::new() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.clips.iter().try_for_each(ClipRecord::validate)
    }
}

/// Runs the stages in the standard order.
pub fn run_pipeline(m: &Manifest, t: &CurationThresholds, parallel: bool) -> Result<Manifest> {
    run_pipeline_with_order(m, t, &Stage::ORDER, parallel)
}

/// Runs the given stages in order. The surviving set depends only on which
/// stages are present; `stage_counts` records `input` and then the count
/// left after each stage. Input `stage_counts` are discarded.
pub fn run_pipeline_with_order(
    m: &Manifest,
    t: &CurationThresholds,
    order: &[Stage],
    parallel: bool,
) -> Result<Manifest> {
    m.validate()?;
    let first_fail = |c: &ClipRecord| order.iter().position(|&s| !stage_reasons(s, c, t).is_empty());
    // Ordered collect keeps the result independent of scheduling.
    let fails: Vec<Option<usize>> =
        if parallel { m.clips.par_iter().map(first_fail).collect() } else { m.clips.iter().map(first_fail).collect() };

    let mut stage_counts = IndexMap::new();
    stage_counts.insert("input".to_string(), m.clips.len());
    for (k, stage) in order.iter().enumerate() {
        let alive = fails.iter().filter(|f| f.is_none_or(|i| i > k)).count();
        stage_counts.insert(stage.as_str().to_string(), alive);
    }
    let clips = m.clips.iter().zip(&fails).filter(|(_, f)| f.is_none()).map(|(c, _)| c.clone()).collect();
    Ok(Manifest { clips, stage_counts })
}
