//! Pinned configuration constants and the audit header that lists them.

use std::fmt::Write;

use crate::curation::{CurationThresholds, MotionConfig};
use crate::dataset::{SourceKind, StrideRule, TrajectoryConfig};
use crate::diffusion::{DEFAULT_RHO, DEFAULT_SIGMA_DATA, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN, DEFAULT_STEPS};
use crate::metrics::{DEFAULT_AUC_THRESHOLDS, DEFAULT_EPIPOLAR_THRESHOLD};

fn list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn stride(kind: SourceKind) -> String {
    let (lo, hi) = StrideRule::for_kind(kind).stride_range;
    if lo == hi {
        lo.to_string()
    } else {
        format!("[{lo}, {hi}]")
    }
}

/// One `# key = value` line per pinned constant.
pub fn audit_header() -> String {
    let c = CurationThresholds::default();
    let m = MotionConfig::default();
    let t = TrajectoryConfig::default();
    let rows: Vec<(&str, String)> = vec![
        ("curation.min_points", c.min_points.to_string()),
        ("curation.max_points", c.max_points.to_string()),
        ("curation.max_text_fraction", format!("{:e}", c.max_text_fraction)),
        ("curation.min_aesthetic", c.min_aesthetic.to_string()),
        ("motion.static_threshold_px", m.static_threshold.to_string()),
        ("motion.zoom_threshold", m.zoom_threshold.to_string()),
        ("motion.dominance", m.dominance.to_string()),
        ("eval.auc_thresholds_deg", list(&DEFAULT_AUC_THRESHOLDS)),
        ("eval.epipolar_threshold", format!("{:e}", DEFAULT_EPIPOLAR_THRESHOLD)),
        ("dataset.stride.static_scene", stride(SourceKind::StaticScene)),
        ("dataset.stride.monocular", stride(SourceKind::Monocular)),
        ("dataset.stride.dynamic_render", stride(SourceKind::DynamicRender)),
        ("trajectory.max_elevation_deg", t.max_elevation.to_string()),
        ("trajectory.sinusoids", t.sinusoid_count.to_string()),
        ("trajectory.freq_range", list(&t.freq_range)),
        ("trajectory.weight_range_deg", list(&t.weight_range)),
        ("trajectory.smoothing_kernel_width", t.smoothing_kernel_width.to_string()),
        ("diffusion.steps", DEFAULT_STEPS.to_string()),
        ("diffusion.sigma_data", DEFAULT_SIGMA_DATA.to_string()),
        ("diffusion.sigma_min", DEFAULT_SIGMA_MIN.to_string()),
        ("diffusion.sigma_max", DEFAULT_SIGMA_MAX.to_string()),
        ("diffusion.rho", DEFAULT_RHO.to_string()),
    ];
    let mut out = String::from("# camvid pinned defaults\n");
    for (k, v) in rows {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out
}
