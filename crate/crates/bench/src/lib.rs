//! Shared fixtures for the pipeline benchmarks in `benches/`.

use depthprop_core::synth::{render_frame, SceneSpec};
use depthprop_core::{DepthMap, GrayImage, Intrinsics, RigidMotion};

pub struct Fixture {
    pub i0: GrayImage,
    pub i1: GrayImage,
    pub d0: DepthMap,
    pub k: Intrinsics,
    pub motions: Vec<RigidMotion>,
}

/// First two frames of the two-plane scene at the given size.
pub fn two_plane(width: usize, height: usize) -> Fixture {
    let spec = SceneSpec::two_plane().resized(width, height);
    let f0 = render_frame(&spec, 0).expect("valid scene");
    let f1 = render_frame(&spec, 1).expect("valid scene");
    Fixture {
        i0: f0.image,
        i1: f1.image,
        d0: f0.depth,
        k: spec.intrinsics,
        motions: spec.planes.iter().map(|p| p.motion).collect(),
    }
}
