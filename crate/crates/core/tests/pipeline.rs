use depthprop_core::depth::reproject_image;
use depthprop_core::eval::DEFAULT_MAX_DEPTH;
use depthprop_core::motion::objective;
use depthprop_core::synth::{render_frame, SceneSpec};
use depthprop_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn reprojected_image_matches_the_renderer() {
    // one plane fills the view, so there are no occlusion boundaries; a smooth
    // texture keeps the half-pixel splat rounding small
    let mut spec = SceneSpec::two_plane();
    spec.planes.truncate(1);
    spec.texture_freq = [0.5, 2.0];
    let (f0, f1) = (render_frame(&spec, 0).unwrap(), render_frame(&spec, 1).unwrap());
    let warped = reproject_image(&f0.image, &f0.depth, &spec.planes[0].motion, &spec.intrinsics).unwrap();
    let diffs: Vec<f64> = warped
        .source_map
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_some())
        .map(|(i, _)| (warped.image.data()[i] - f1.image.data()[i]).abs() as f64)
        .collect();
    assert!(diffs.len() > 640 * 480 * 9 / 10);
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!(mean < 0.02, "mean abs difference {mean}");
}

#[test]
fn solve_motion_is_the_least_squares_minimum() {
    let k = Intrinsics::new(525.0, 319.5, 239.5, 640, 480).unwrap();
    let truth = RigidMotion::new([0.01, -0.02, 0.005], [0.05, 0.02, -0.1]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cs: Vec<Correspondence> = (0..60)
        .filter_map(|_| {
            let p = Pixel::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
            let point = lift(p, rng.random_range(1.0..6.0), &k).ok()?;
            let q = project(&apply_motion(&point, &truth), &k).ok()?;
            let noisy = Pixel::new(q.x + rng.random_range(-0.5..0.5), q.y + rng.random_range(-0.5..0.5));
            Some(Correspondence {
                p,
                p_prime: noisy,
                point,
            })
        })
        .collect();
    let m = solve_motion(&cs, &k).unwrap();
    let f0 = objective(&cs, &m, &k);
    let base = m.to_array();
    for i in 0..6 {
        let h = 1e-6;
        let shifted = |s: f64| {
            let mut v = base;
            v[i] += s;
            objective(&cs, &RigidMotion::from_array(v), &k)
        };
        let grad = (shifted(h) - shifted(-h)) / (2.0 * h);
        let curvature = (shifted(h) - 2.0 * f0 + shifted(-h)) / (h * h);
        assert!(
            grad.abs() <= 1e-6 * curvature.abs().max(1.0),
            "component {i}: gradient {grad}"
        );
    }
    for _ in 0..100 {
        let v: [f64; 6] = std::array::from_fn(|i| base[i] + rng.random_range(-1e-3..1e-3));
        assert!(objective(&cs, &RigidMotion::from_array(v), &k) >= f0);
    }
}

fn total_variation(e: &ErrorMap) -> f64 {
    let (w, h) = e.dims();
    let mut tv = 0.0;
    for y in 0..h {
        for x in 0..w {
            let Some(v) = e.get(x, y) else { continue };
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if let Some(u) = (nx < w && ny < h).then(|| e.get(nx, ny)).flatten() {
                    tv += (v - u).abs() as f64;
                }
            }
        }
    }
    tv
}

#[test]
fn guided_filtering_smooths_the_error_map() {
    let spec = SceneSpec::two_plane().resized(320, 240);
    let (f0, f1) = (render_frame(&spec, 0).unwrap(), render_frame(&spec, 1).unwrap());
    let p = DepthParams::default();
    let e = photometric_error(
        &f0.image,
        &f1.image,
        &f0.depth,
        &spec.planes[0].motion,
        &spec.intrinsics,
    )
    .unwrap();
    let filtered = filter_errors(std::slice::from_ref(&e), &f0.image, p.filter_radius, p.filter_eps).unwrap();
    assert_eq!(filtered[0].mask(), e.mask());
    assert!(total_variation(&filtered[0]) < 0.5 * total_variation(&e));
}

#[test]
fn assignment_prefers_the_true_motion_per_plane() {
    let spec = SceneSpec::two_plane();
    let (f0, f1) = (render_frame(&spec, 0).unwrap(), render_frame(&spec, 1).unwrap());
    let p = DepthParams::default();
    let errors: Vec<ErrorMap> = spec
        .planes
        .iter()
        .map(|pl| photometric_error(&f0.image, &f1.image, &f0.depth, &pl.motion, &spec.intrinsics).unwrap())
        .collect();
    let filtered = filter_errors(&errors, &f0.image, p.filter_radius, p.filter_eps).unwrap();
    let assignment = assign_motions(&filtered).unwrap();
    let (mut hit, mut n) = (0usize, 0usize);
    for (a, t) in assignment.data().iter().zip(f0.segmentation.data()) {
        if let (Some(a), Some(t)) = (a, t) {
            n += 1;
            hit += (a == t) as usize;
        }
    }
    assert!(hit as f64 / n as f64 > 0.95, "{hit}/{n}");
    let d1 = reproject_depth(
        &f0.depth,
        &assignment,
        &spec.planes.iter().map(|p| p.motion).collect::<Vec<_>>(),
        &spec.intrinsics,
    );
    let m = compute_metrics(&d1, &f1.depth, DEFAULT_MAX_DEPTH).unwrap();
    assert!(m.mre < 0.01 && m.coverage > 0.9, "{m:?}");
}

#[test]
fn report_means_can_be_recomputed_from_runs() {
    let spec = SceneSpec {
        frames: 5,
        ..SceneSpec::two_plane().resized(320, 240)
    };
    let frames: Vec<Frame> = synth::render_sequence(&spec)
        .unwrap()
        .into_iter()
        .map(|f| Frame {
            image: f.image,
            depth: f.depth,
        })
        .collect();
    let p = DepthParams::default();
    let runs: Vec<SequentialRun> = [0, 1]
        .iter()
        .map(|&s| sequential_run(&frames, s, 3, &spec.intrinsics, &p, DEFAULT_MAX_DEPTH).unwrap())
        .collect();
    let report = aggregate(&runs).unwrap();
    assert_eq!(report.records.len(), 3);
    for (o, rec) in report.records.iter().enumerate() {
        let mean = (runs[0].metrics[o].mre + runs[1].metrics[o].mre) / 2.0;
        assert!((rec.mre - mean).abs() <= 1e-15);
        assert_eq!(rec.offset, o + 1);
    }
    let overall = report.records.iter().map(|r| r.mre).sum::<f64>() / 3.0;
    assert!((report.summary.mre - overall).abs() <= 1e-15);
    assert_eq!(report.summary.sensor_usage_reduction, 0.75);
}

#[test]
fn estimate_is_deterministic() {
    let spec = SceneSpec::two_plane().resized(320, 240);
    let (f0, f1) = (render_frame(&spec, 0).unwrap(), render_frame(&spec, 1).unwrap());
    let p = DepthParams::default();
    let a = estimate_depth(&f0.image, &f1.image, &f0.depth, &spec.intrinsics, &p).unwrap();
    let b = estimate_depth(&f0.image, &f1.image, &f0.depth, &spec.intrinsics, &p).unwrap();
    assert_eq!(a.depth.data(), b.depth.data());
    assert_eq!(a.assignment.data(), b.assignment.data());
    assert_eq!(a.motions.motions, b.motions.motions);
}
