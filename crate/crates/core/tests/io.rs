use depthprop_core::io::{self, codec};
use depthprop_core::synth::{self, SceneSpec};
use depthprop_core::*;

#[test]
fn written_sequence_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        frames: 3,
        ..SceneSpec::two_plane().resized(160, 120)
    };
    synth::write_sequence(&spec, dir.path()).unwrap();
    let manifest = io::load_sequence(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.len(), 3);
    assert_eq!(manifest.intrinsics, spec.intrinsics);
    let loaded = manifest.load_frames().unwrap();
    for (t, frame) in loaded.iter().enumerate() {
        let truth = synth::render_frame(&spec, t).unwrap();
        // depth is stored as f64 npy, images as 16-bit PNG
        assert_eq!(frame.depth.data(), truth.depth.data());
        for (a, b) in frame.image.data().iter().zip(truth.image.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }
}

#[test]
fn depth_png_round_trip_is_within_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.png");
    let depth = DepthMap::from_fn(17, 9, |x, y| {
        if (x + y) % 5 == 0 {
            0.0
        } else {
            0.5 + 0.37 * x as f64 + 0.11 * y as f64
        }
    });
    codec::write_depth_png(&path, &depth, codec::DEFAULT_DEPTH_SCALE).unwrap();
    let back = codec::read_depth(&path, codec::DEFAULT_DEPTH_SCALE).unwrap();
    for (a, b) in depth.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 0.5 * codec::DEFAULT_DEPTH_SCALE + 1e-12, "{a} vs {b}");
    }
}

#[test]
fn manifest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(
        &path,
        "{\n  \"f\": 525.0,\n  \"xc\": 319.5,\n  \"yc\": 239.5,\n  \"width\": 640,\n  \"height\": 480,\n  \"depth_scale\": 0.0002,\n  \"frames\": [\n    {\"t\": 0, \"image\": \"missing.png\", \"depth\": \"missing.npy\"}\n  ]\n}\n",
    )
    .unwrap();
    let err = io::load_pair_manifest(&path).unwrap_err().to_string();
    assert!(err.contains("line 9"), "{err}");
}
