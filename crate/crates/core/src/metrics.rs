//! Evaluation metrics: angular pose errors and their AUC, epipolar
//! precision / matching score, and the Fréchet distance between Gaussian
//! feature statistics.

use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{check_rotation, normalize_scale, to_relative_at, CameraPose, PoseSequence};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor_io::CavtTensor;

pub const DEFAULT_AUC_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];
pub const DEFAULT_EPIPOLAR_THRESHOLD: f64 = 5e-4;

fn degrees<T: Real>(rad: T) -> T {
    rad * T::lit(180.0) / T::pi()
}

/// Geodesic angle between two rotations, degrees.
///
/// Equal to `arccos((tr(RaᵀRb) − 1)/2)`, evaluated as `atan2(sin θ, cos θ)`
/// so small angles keep full precision.
pub fn rotation_angle_error<T: Real>(ra: &Matrix3<T>, rb: &Matrix3<T>) -> Result<T> {
    check_rotation(ra)?;
    check_rotation(rb)?;
    let m = ra.transpose() * rb;
    let two = T::lit(2.0);
    let cos = (m.trace() - T::one()) / two;
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    Ok(degrees((skew.norm() / two).atan2(cos)))
}

/// Angle between two translation directions, degrees. Two (near-)zero
/// vectors agree (0°); exactly one zero vector is the worst case (180°).
pub fn translation_angle_error<T: Real>(ta: &Vector3<T>, tb: &Vector3<T>) -> T {
    let eps = T::lit(1e-9);
    let (na, nb) = (ta.norm(), tb.norm());
    match (na < eps, nb < eps) {
        (true, true) => T::zero(),
        (true, false) | (false, true) => T::lit(180.0),
        _ => degrees(ta.cross(tb).norm().atan2(ta.dot(tb))),
    }
}

/// Per-frame angular errors, degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorStats {
    pub rotation_error: Vec<f64>,
    pub translation_error: Vec<f64>,
}

impl PoseErrorStats {
    pub fn frame_count(&self) -> usize {
        self.rotation_error.len()
    }

    /// Per-frame `max(rotation, translation)`: a frame is under a threshold
    /// only if both errors are.
    pub fn combined(&self) -> Vec<f64> {
        self.rotation_error.iter().zip(&self.translation_error).map(|(r, t)| r.max(*t)).collect()
    }
}

fn rescaled<T: Real>(seq: PoseSequence<T>) -> Result<PoseSequence<T>> {
    match normalize_scale(std::slice::from_ref(&seq)) {
        Ok((mut v, _)) => Ok(v.remove(0)),
        // Every camera at the anchor: nothing to rescale, angles are still defined.
        Err(Error::DegenerateScale) => Ok(seq),
        Err(e) => Err(e),
    }
}

/// Re-anchors both sequences at `anchor`, normalizes each one's scale and
/// compares corresponding relative poses: rotation by geodesic angle, position
/// by the angle between relative camera centers.
pub fn align_and_compare<T: Real>(
    pred: &PoseSequence<T>,
    gt: &PoseSequence<T>,
    anchor: usize,
) -> Result<PoseErrorStats> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!("predicted {} poses, ground truth {}", pred.len(), gt.len())));
    }
    if pred.len() < 2 {
        return Err(Error::LengthMismatch(format!("need at least 2 poses, got {}", pred.len())));
    }
    let p = rescaled(to_relative_at(pred, anchor)?)?;
    let g = rescaled(to_relative_at(gt, anchor)?)?;
    let mut stats = PoseErrorStats { rotation_error: Vec::new(), translation_error: Vec::new() };
    for (a, b) in p.poses().iter().zip(g.poses()) {
        stats.rotation_error.push(rotation_angle_error(a.rotation(), b.rotation())?.as_f64());
        stats.translation_error.push(translation_angle_error(&a.center(), &b.center()).as_f64());
    }
    Ok(stats)
}

/// Normalized area under the cumulative error curve up to each threshold.
///
/// With `r(e)` the fraction of errors `≤ e`, `AUC@τ = (1/τ)∫₀^τ r(e) de`,
/// which for a step function is exactly `Σᵢ max(τ − eᵢ, 0) / (N·τ)`.
pub fn auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("no errors to aggregate".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidConfig(format!("AUC threshold must be positive, got {t}")));
    }
    if let Some(e) = errors.iter().find(|e| e.is_nan()) {
        return Err(Error::InvalidRecord(format!("error value {e} is not a number")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&tau| sorted.iter().take_while(|&&e| e < tau).map(|&e| tau - e).sum::<f64>() / (n * tau))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    /// Separate rotation and translation curves.
    #[default]
    PerMetric,
    /// One curve over `max(rotation, translation)`.
    Combined,
}

/// Essential matrix `[t̂]ₓ·R` of view b relative to view a, where
/// `x_b = R·x_a + t` and `t̂ = t/‖t‖`.
pub fn essential_matrix<T: Real>(rel: &CameraPose<T>) -> Result<Matrix3<T>> {
    let t = rel.translation();
    let n = t.norm();
    if !(n > T::lit(1e-9)) {
        return Err(Error::DegenerateBaseline);
    }
    Ok((t / n).cross_matrix() * rel.rotation())
}

/// Symmetric epipolar distance of a correspondence in normalized image
/// coordinates. A side whose epipolar line is degenerate contributes 0 when
/// the algebraic residual vanishes and `+∞` otherwise.
pub fn epipolar_error<T: Real>(xa: &Vector2<T>, xb: &Vector2<T>, e: &Matrix3<T>) -> T {
    let ha = Vector3::new(xa.x, xa.y, T::one());
    let hb = Vector3::new(xb.x, xb.y, T::one());
    let la = e * ha;
    let lb = e.transpose() * hb;
    let r = hb.dot(&la);
    let r2 = r * r;
    let tiny = T::lit(1e-18);
    let term = |den: T| {
        if den >= tiny {
            r2 / den
        } else if r == T::zero() {
            T::zero()
        } else {
            T::lit(f64::INFINITY)
        }
    };
    term(la.x * la.x + la.y * la.y) + term(lb.x * lb.x + lb.y * lb.y)
}

/// Keypoint matches between two images, in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    /// `[fx, fy, cx, cy]` in pixels.
    pub intrinsics_a: [f64; 4],
    pub intrinsics_b: [f64; 4],
    pub keypoints_a: Vec<[f64; 2]>,
    pub keypoints_b: Vec<[f64; 2]>,
    pub matches: Vec<[usize; 2]>,
    pub total_keypoints: usize,
}

impl MatchSet {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRecord(m));
        for k in [self.intrinsics_a, self.intrinsics_b] {
            if !(k[0] > 0.0 && k[1] > 0.0) || k.iter().any(|v| !v.is_finite()) {
                return bad(format!("intrinsics {k:?} need positive finite focal lengths"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for &[i, j] in &self.matches {
            if i >= self.keypoints_a.len() || j >= self.keypoints_b.len() {
                return bad(format!("match ({i}, {j}) indexes past the keypoint lists"));
            }
            if !seen.insert((i, j)) {
                return bad(format!("duplicate match ({i}, {j})"));
            }
        }
        if self.total_keypoints < self.matches.len() {
            return bad(format!("total_keypoints {} below match count {}", self.total_keypoints, self.matches.len()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: MatchSet = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    /// Normalized coordinates `((x − cx)/fx, (y − cy)/fy)` of every match.
    pub fn normalized_pairs(&self) -> Vec<(Vector2<f64>, Vector2<f64>)> {
        let norm = |k: [f64; 4], p: [f64; 2]| Vector2::new((p[0] - k[2]) / k[0], (p[1] - k[3]) / k[1]);
        self.matches
            .iter()
            .map(|&[i, j]| (norm(self.intrinsics_a, self.keypoints_a[i]), norm(self.intrinsics_b, self.keypoints_b[j])))
            .collect()
    }
}

/// `(precision, matching_score)`: correct matches over all matches and over
/// all keypoints, where a match is correct if its epipolar error is below
/// `threshold`.
pub fn precision_matching_score(m: &MatchSet, e: &Matrix3<f64>, threshold: f64) -> (f64, f64) {
    let pairs = m.normalized_pairs();
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let correct = pairs.iter().filter(|(a, b)| epipolar_error(a, b, e) < threshold).count() as f64;
    let ms = if m.total_keypoints == 0 { 0.0 } else { correct / m.total_keypoints as f64 };
    (correct / pairs.len() as f64, ms)
}

/// Mean and covariance of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats<T: Real> {
    mean: DVector<T>,
    covariance: DMatrix<T>,
    sample_count: u64,
}

impl<T: Real> FeatureStats<T> {
    pub fn new(mean: DVector<T>, covariance: DMatrix<T>, sample_count: u64) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "mean has {d} entries but covariance is {:?}",
                covariance.shape()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite_value()) {
            return Err(Error::InvalidRecord("feature statistics contain non-finite values".into()));
        }
        let tol = T::lit(1e-9);
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > tol {
            return Err(Error::NotPsd(format!("covariance asymmetric by {asym}")));
        }
        if d > 0 {
            let min_eig = covariance.clone().symmetric_eigenvalues().min();
            if min_eig < -tol {
                return Err(Error::NotPsd(format!("covariance eigenvalue {min_eig} below -1e-9")));
            }
        }
        Ok(Self { mean, covariance, sample_count })
    }

    /// Sample mean and (unbiased) covariance of row-vector features.
    pub fn from_samples(samples: &DMatrix<T>) -> Result<Self> {
        let n = samples.nrows();
        if n < 2 {
            return Err(Error::EmptyInput(format!("need at least 2 samples, got {n}")));
        }
        let mean = samples.row_mean().transpose();
        let centered = DMatrix::from_fn(n, samples.ncols(), |i, j| samples[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / T::from_count(n - 1);
        let cov = (&cov + cov.transpose()) * T::lit(0.5);
        Self::new(mean, cov, n as u64)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    /// From a `(d)` mean tensor and a `(d, d)` covariance tensor.
    pub fn from_cavt(mean: &CavtTensor, cov: &CavtTensor) -> Result<Self> {
        let [d] = *mean.dims() else {
            return Err(Error::ShapeMismatch(format!("mean tensor must be 1-D, got {:?}", mean.dims())));
        };
        if cov.dims() != [d, d] {
            return Err(Error::DimensionMismatch(format!(
                "covariance tensor {:?} does not match mean ({d})",
                cov.dims()
            )));
        }
        let covariance = DMatrix::from_row_iterator(d, d, cov.to_real::<T>());
        Self::new(DVector::from_vec(mean.to_real()), symmetrized(covariance), 0)
    }

    /// From one `(d + 1, d)` tensor: row 0 is the mean, the rest the covariance.
    pub fn from_packed_cavt(t: &CavtTensor) -> Result<Self> {
        let &[rows, d] = t.dims() else {
            return Err(Error::ShapeMismatch(format!("packed stats must be 2-D, got {:?}", t.dims())));
        };
        if rows != d + 1 {
            return Err(Error::ShapeMismatch(format!("packed stats must be (d+1, d), got {:?}", t.dims())));
        }
        let v = t.to_real::<T>();
        let covariance = DMatrix::from_row_slice(d, d, &v[d..]);
        Self::new(DVector::from_column_slice(&v[..d]), symmetrized(covariance), 0)
    }

    pub fn to_packed_cavt(&self) -> CavtTensor {
        let d = self.dim();
        let mut values: Vec<T> = self.mean.iter().copied().collect();
        values.extend(self.covariance.transpose().iter().copied());
        CavtTensor::from_real(vec![d + 1, d], &values).expect("dims match")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_packed_cavt(&CavtTensor::read(path)?)
    }
}

// Stored covariances pass through f32, which may break exact symmetry.
fn symmetrized<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::lit(0.5)
}

const SQRT_CLAMP: f64 = -1e-6;

/// Symmetric PSD square root by eigendecomposition. Eigenvalues in
/// `[−1e-6, 0)` are treated as 0; anything lower is rejected.
pub fn psd_sqrt<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let eig = symmetrized(m.clone()).symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for l in roots.iter_mut() {
        if *l < T::lit(SQRT_CLAMP) {
            return Err(Error::NotPsd(format!("eigenvalue {l} below -1e-6")));
        }
        *l = l.max(T::zero()).sqrt();
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^{1/2})`, with the trace of the
/// cross term taken as `tr((√Σa Σb √Σa)^{1/2})`.
pub fn frechet_distance<T: Real>(a: &FeatureStats<T>, b: &FeatureStats<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("feature dims {} and {}", a.dim(), b.dim())));
    }
    let diff = &a.mean - &b.mean;
    let sa = psd_sqrt(&a.covariance)?;
    let m = &sa * &b.covariance * &sa;
    let cross = psd_sqrt(&m)?.trace();
    let d = diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - T::lit(2.0) * cross;
    Ok(d.max(T::zero()))
}

/// Outcome counts of external reconstructions, one sequence per line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    pub total: usize,
    pub failed: usize,
}

impl ReconstructionSummary {
    /// Parses lines `<sequence_id> ok|fail`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self { total: 0, failed: 0 };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let failed = match parts.as_slice() {
                [_, "ok"] => false,
                [_, "fail"] => true,
                _ => {
                    return Err(Error::Parse { line: i + 1, msg: format!("expected `<id> ok|fail`, got {line:?}") });
                }
            };
            s.total += 1;
            s.failed += failed as usize;
        }
        Ok(s)
    }

    pub fn error_rate(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::EmptyInput("no reconstruction results".into()));
        }
        Ok(self.failed as f64 / self.total as f64)
    }
}

/// Evaluation report; absent sections are omitted from the JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rot_auc: Option<IndexMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trans_auc: Option<IndexMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combined_auc: Option<IndexMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matching_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub colmap_error_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frechet_distance: Option<f64>,
}

fn keyed(thresholds: &[f64], values: Vec<f64>) -> IndexMap<String, f64> {
    thresholds.iter().map(|t| t.to_string()).zip(values).collect()
}

impl EvalReport {
    pub fn from_pose_errors(stats: &PoseErrorStats, thresholds: &[f64], mode: AucMode) -> Result<Self> {
        let mut r = Self::default();
        match mode {
            AucMode::PerMetric => {
                r.rot_auc = Some(keyed(thresholds, auc(&stats.rotation_error, thresholds)?));
                r.trans_auc = Some(keyed(thresholds, auc(&stats.translation_error, thresholds)?));
            }
            AucMode::Combined => r.combined_auc = Some(keyed(thresholds, auc(&stats.combined(), thresholds)?)),
        }
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
