use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use camvid::camera::{
    normalize_scale, ray_direction, rot_from_axis_angle, CameraIntrinsics, CameraPose, PoseSequence, RayMode,
};
use camvid::curation::{classify_clip_motion, classify_pair_motion, FlowField, MotionConfig, MotionLabel};
use camvid::dataset::{reformat_static, synth_orbit_trajectory, ReformatScheme, TrajectoryConfig};
use camvid::diffusion::{
    pf_ode_sample, seeded_rng, sigma_schedule, GaussianMixture, MixtureComponent, OdeMethod, DEFAULT_RHO,
    DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN, DEFAULT_STEPS,
};
use camvid::metrics::{align_and_compare, auc, frechet_distance, rotation_angle_error, FeatureStats};

fn axis_angle() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-3.0f64..3.0).prop_map(Vector3::from)
}

fn pose() -> impl Strategy<Value = CameraPose<f64>> {
    (axis_angle(), prop::array::uniform3(-5.0f64..5.0))
        .prop_map(|(w, t)| CameraPose::new(rot_from_axis_angle(w), Vector3::from(t)).unwrap())
}

fn label() -> impl Strategy<Value = MotionLabel> {
    prop::sample::select(MotionLabel::ALL.to_vec())
}

#[test]
fn elevation_smoothing_never_increases_max_delta() {
    let max_delta = |v: &[f64]| v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    for seed in 0..1000 {
        // Wide limits so clamping never hides a violation.
        let cfg = TrajectoryConfig { seed, max_elevation: 89.0, start_elevation: 0.0, ..Default::default() };
        let traj = synth_orbit_trajectory(&cfg).unwrap();
        let elev: Vec<f64> = traj.points.iter().map(|p| p.elevation).collect();
        assert!(
            max_delta(&elev) <= max_delta(&traj.raw_elevation) + 1e-12,
            "seed {seed}: smoothed delta {} > raw {}",
            max_delta(&elev),
            max_delta(&traj.raw_elevation)
        );
    }
}

#[test]
fn pivot_views_meet_only_at_the_pivot() {
    for f in 2..=20 {
        let a = reformat_static(2 * f - 1, f, 2, ReformatScheme::Pivot, 1).unwrap();
        let shared: Vec<usize> = a.views[0].iter().filter(|i| a.views[1].contains(i)).copied().collect();
        assert_eq!(shared, vec![f - 1], "F={f}");
    }
}

#[test]
fn mixture_weights_survive_the_sampler() {
    let mix = GaussianMixture::new(vec![
        MixtureComponent { weight: 0.2, mu: vec![-2.0], s: 0.5 },
        MixtureComponent { weight: 0.8, mu: vec![2.0], s: 0.5 },
    ])
    .unwrap();
    let sched = sigma_schedule(DEFAULT_STEPS, DEFAULT_SIGMA_MIN, DEFAULT_SIGMA_MAX, DEFAULT_RHO).unwrap();
    let mut rng = seeded_rng(31, 0);
    let n = 10_000;
    let mut hits = 0usize;
    for _ in 0..n {
        // Start from the exact σ_max marginal of the mixture.
        let x0: Vec<f64> =
            mix.sample(&mut rng).iter().map(|m| m + DEFAULT_SIGMA_MAX * rng.sample::<f64, _>(StandardNormal)).collect();
        let x = pf_ode_sample(&mix, &x0, &sched, OdeMethod::Heun, None).unwrap();
        hits += usize::from(mix.assign(&x) == 0);
    }
    let p = 0.2;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    let got = hits as f64 / n as f64;
    assert!((got - p).abs() <= 3.0 * se, "component weight {got}, expected {p} ± {}", 3.0 * se);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn auc_is_monotone_in_tau_and_order_free(
        errors in prop::collection::vec(0.0f64..40.0, 1..40),
        taus in prop::collection::vec(0.1f64..50.0, 2..6),
        seed in any::<u64>(),
    ) {
        let mut sorted = taus.clone();
        sorted.sort_by(f64::total_cmp);
        let a = auc(&errors, &sorted).unwrap();
        prop_assert!(a.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        let mut shuffled = errors.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = auc(&shuffled, &sorted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn frechet_is_symmetric_and_matches_diagonal_form(
        d in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut stats = || {
            let mean = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
            let var = DVector::from_fn(d, |_, _| r.random_range(0.05..5.0));
            (mean, var)
        };
        let ((ma, va), (mb, vb)) = (stats(), stats());
        let fa = FeatureStats::new(ma.clone(), DMatrix::from_diagonal(&va), 1).unwrap();
        let fb = FeatureStats::new(mb.clone(), DMatrix::from_diagonal(&vb), 1).unwrap();
        let ab = frechet_distance(&fa, &fb).unwrap();
        let ba = frechet_distance(&fb, &fa).unwrap();
        let closed = (&ma - &mb).norm_squared() + va.iter().zip(vb.iter()).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!((ab - closed).abs() <= 1e-9, "{} vs {}", ab, closed);
    }

    #[test]
    fn rotation_error_obeys_triangle_inequality(a in axis_angle(), b in axis_angle(), c in axis_angle()) {
        let (ra, rb, rc) = (rot_from_axis_angle(a), rot_from_axis_angle(b), rot_from_axis_angle(c));
        let ab = rotation_angle_error(&ra, &rb).unwrap();
        let bc = rotation_angle_error(&rb, &rc).unwrap();
        let ac = rotation_angle_error(&ra, &rc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-6);
    }

    #[test]
    fn pose_errors_ignore_global_similarity(
        poses in prop::collection::vec(pose(), 2..7),
        q in axis_angle(),
        shift in prop::array::uniform3(-10.0f64..10.0),
        scale in 0.1f64..10.0,
    ) {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 1, 1).unwrap();
        let seq = PoseSequence::new(poses.clone(), k).unwrap();
        // World change X' = s·Q·X + u; cameras keep their image, translation follows.
        let qm: Matrix3<f64> = rot_from_axis_angle(q);
        let u = Vector3::from(shift);
        let moved: Vec<CameraPose<f64>> = poses
            .iter()
            .map(|p| {
                let r = p.rotation() * qm.transpose();
                CameraPose::new(r, p.translation() * scale - r * u).unwrap()
            })
            .collect();
        let other = PoseSequence::new(moved, k).unwrap();
        let stats = align_and_compare(&other, &seq, 0).unwrap();
        for e in stats.rotation_error.iter().chain(&stats.translation_error) {
            prop_assert!(*e < 1e-5, "error {}", e);
        }
    }

    #[test]
    fn normalize_scale_is_idempotent(poses in prop::collection::vec(pose(), 2..6)) {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 1, 1).unwrap();
        let seq = PoseSequence::new(poses, k).unwrap();
        let (once, _) = normalize_scale(&[seq]).unwrap();
        let (_, again) = normalize_scale(&once).unwrap();
        prop_assert!((again - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rays_are_invariant_to_common_pixel_scaling(
        p in pose(),
        f in prop::array::uniform2(10.0f64..500.0),
        xy in prop::array::uniform2(0.0f64..1.0),
        k in 0.25f64..4.0,
    ) {
        let (w, h) = (64usize, 48usize);
        let base = CameraIntrinsics::new(f[0], f[1], 32.0, 24.0, w, h).unwrap();
        let scaled = CameraIntrinsics::new(k * f[0], k * f[1], k * 32.0, k * 24.0, (k * w as f64).ceil() as usize, (k * h as f64).ceil() as usize).unwrap();
        let (x, y) = (xy[0] * w as f64, xy[1] * h as f64);
        let a = ray_direction(&base, &p, (x, y), RayMode::Standard).unwrap();
        let b = ray_direction(&scaled, &p, (k * x, k * y), RayMode::Standard).unwrap();
        prop_assert!((a - b).amax() <= 1e-12);
    }

    #[test]
    fn pair_label_ignores_flow_scale(
        seed in any::<u64>(),
        base in prop::array::uniform2(-5.0f64..5.0),
        k in 1.0f64..20.0,
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let flow = FlowField::from_fn(12, 9, |_, _| {
            [base[0] + r.random_range(-1.0..1.0), base[1] + r.random_range(-1.0..1.0)]
        })
        .unwrap();
        let cfg = MotionConfig::default();
        let mean_mag = flow.vectors().iter().map(|v| v[0].hypot(v[1])).sum::<f64>() / flow.vectors().len() as f64;
        prop_assume!(mean_mag >= cfg.static_threshold);
        prop_assert_eq!(classify_pair_motion(&flow, &cfg), classify_pair_motion(&flow.scaled(k), &cfg));
    }

    #[test]
    fn clip_label_ignores_order(labels in prop::collection::vec(label(), 1..12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(classify_clip_motion(&labels).unwrap(), classify_clip_motion(&shuffled).unwrap());
    }
}
