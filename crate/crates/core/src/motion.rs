//! Rigid motion estimation from 3D-2D correspondences.
//!
//! Each correspondence gives two residuals that are linear in the six motion
//! parameters, so a motion is the solution of a 6x6 linear least-squares
//! problem. RANSAC over minimal three-point samples makes the fit robust, and
//! repeating RANSAC on the points that are left over extracts every
//! independent motion with enough support.

use nalgebra::{Matrix6, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{apply_motion, Intrinsics, RigidMotion};
use crate::error::{Error, Result};
use crate::features::{Correspondence, MIN_CORRESPONDENCES};

/// Normal matrices at or above this condition estimate are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionParams {
    pub ransac_iters: usize,
    /// Squared reprojection threshold, in px^2.
    pub inlier_eps: f64,
    /// A motion is kept only if its inlier count exceeds this.
    pub n_min: usize,
    pub rng_seed: u64,
    pub max_motions: usize,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            ransac_iters: 500,
            inlier_eps: 4.0,
            n_min: 25,
            rng_seed: 0,
            max_motions: 8,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<()> {
        if self.ransac_iters < 1 {
            return Err(Error::invalid("ransac_iters must be >= 1"));
        }
        if !(self.inlier_eps > 0.0 && self.inlier_eps.is_finite()) {
            return Err(Error::invalid("inlier_eps must be > 0"));
        }
        if self.n_min < MIN_CORRESPONDENCES {
            return Err(Error::invalid("n_min must be >= 3"));
        }
        if self.max_motions < 1 || self.max_motions > u16::MAX as usize {
            return Err(Error::invalid("max_motions must be in [1, 65535]"));
        }
        Ok(())
    }
}

/// Extracted motions, largest consensus first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionSet {
    pub motions: Vec<RigidMotion>,
    pub inlier_counts: Vec<usize>,
    /// Indices into the input correspondences, one set per motion.
    #[serde(skip)]
    pub inliers: Vec<Vec<usize>>,
}

impl MotionSet {
    pub fn len(&self) -> usize {
        self.motions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motions.is_empty()
    }
}

/// Coefficient rows of the two residuals: `phi = row . [omega; T] + offset`.
#[inline]
fn residual_rows(c: &Correspondence, k: &Intrinsics) -> ([f64; 6], f64, [f64; 6], f64) {
    let (x, y, z) = (c.point.x, c.point.y, c.point.z);
    let u = c.p_prime.x - k.xc;
    let v = c.p_prime.y - k.yc;
    let f = k.f;
    // Z' = Z + wx Y - wy X + Tz ; X' = X + wy Z - wz Y + Tx ; Y' = Y + wz X - wx Z + Ty
    let row_x = [u * y, -u * x - f * z, f * y, -f, 0.0, u];
    let row_y = [v * y + f * z, -v * x, -f * x, 0.0, -f, v];
    (row_x, u * z - f * x, row_y, v * z - f * y)
}

/// The two algebraic residuals `(phi_x, phi_y)` of a correspondence under `m`.
pub fn residuals(c: &Correspondence, m: &RigidMotion, k: &Intrinsics) -> (f64, f64) {
    let moved = apply_motion(&c.point, m);
    (
        (c.p_prime.x - k.xc) * moved.z - k.f * moved.x,
        (c.p_prime.y - k.yc) * moved.z - k.f * moved.y,
    )
}

/// Sum of squared residuals over all correspondences.
pub fn objective(cs: &[Correspondence], m: &RigidMotion, k: &Intrinsics) -> f64 {
    cs.iter()
        .map(|c| {
            let (a, b) = residuals(c, m, k);
            a * a + b * b
        })
        .sum()
}

/// Least-squares motion from at least three correspondences via the 6x6
/// normal equations.
pub fn solve_motion(cs: &[Correspondence], k: &Intrinsics) -> Result<RigidMotion> {
    if cs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientFeatures {
            found: cs.len(),
            needed: MIN_CORRESPONDENCES,
        });
    }
    solve_indexed(cs, k, 0..cs.len())
}

fn solve_indexed(cs: &[Correspondence], k: &Intrinsics, idx: impl Iterator<Item = usize>) -> Result<RigidMotion> {
    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for i in idx {
        let (rx, ox, ry, oy) = residual_rows(&cs[i], k);
        for (row, off) in [(rx, ox), (ry, oy)] {
            for a in 0..6 {
                atb[a] -= row[a] * off;
                for b in a..6 {
                    ata[(a, b)] += row[a] * row[b];
                }
            }
        }
    }
    for a in 0..6 {
        for b in 0..a {
            ata[(a, b)] = ata[(b, a)];
        }
    }
    solve_normal(ata, atb)
}

/// Solves the symmetric system after Jacobi equilibration, rejecting it when
/// the eigenvalue spread of the scaled matrix reaches [`MAX_CONDITION`].
fn solve_normal(ata: Matrix6<f64>, atb: Vector6<f64>) -> Result<RigidMotion> {
    let mut scale = Vector6::<f64>::zeros();
    for i in 0..6 {
        let d = ata[(i, i)];
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Degenerate {
                condition: f64::INFINITY,
            });
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let scaled = Matrix6::from_fn(|i, j| ata[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::Degenerate { condition });
    }
    let rhs = atb.component_mul(&scale);
    // rank is full, so the eigen-decomposition inverts exactly
    let coeffs = eig.eigenvectors.transpose() * rhs;
    let y = eig.eigenvectors * coeffs.component_div(&eig.eigenvalues);
    let sol = y.component_mul(&scale);
    let m = RigidMotion::from_array([sol[0], sol[1], sol[2], sol[3], sol[4], sol[5]]);
    if !m.is_finite() {
        return Err(Error::Degenerate { condition });
    }
    Ok(m)
}

#[inline]
fn is_inlier(c: &Correspondence, m: &RigidMotion, k: &Intrinsics, eps: f64) -> bool {
    let moved = apply_motion(&c.point, m);
    if !(moved.z > 0.0) {
        return false;
    }
    let px = k.f * moved.x / moved.z + k.xc - c.p_prime.x;
    let py = k.f * moved.y / moved.z + k.yc - c.p_prime.y;
    px * px + py * py <= eps
}

/// Indices whose squared reprojection error under `m` is at most `eps`.
/// Points pushed behind the camera are never inliers.
pub fn inlier_set(cs: &[Correspondence], m: &RigidMotion, k: &Intrinsics, eps: f64) -> Vec<usize> {
    (0..cs.len()).filter(|&i| is_inlier(&cs[i], m, k, eps)).collect()
}

fn count_inliers(cs: &[Correspondence], m: &RigidMotion, k: &Intrinsics, eps: f64) -> usize {
    cs.iter().filter(|c| is_inlier(c, m, k, eps)).count()
}

/// Robust single-motion fit.
///
/// All sample triples are drawn from `rng` up front, so scoring order does not
/// affect the result; ties keep the first hypothesis. The winner is refit on
/// its inliers once.
pub fn ransac_motion(
    cs: &[Correspondence],
    k: &Intrinsics,
    params: &MotionParams,
) -> Result<(RigidMotion, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    ransac_with_rng(cs, k, params, &mut rng)
}

fn ransac_with_rng(
    cs: &[Correspondence],
    k: &Intrinsics,
    params: &MotionParams,
    rng: &mut ChaCha8Rng,
) -> Result<(RigidMotion, Vec<usize>)> {
    if cs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientFeatures {
            found: cs.len(),
            needed: MIN_CORRESPONDENCES,
        });
    }
    let samples: Vec<[usize; 3]> = (0..params.ransac_iters)
        .map(|_| {
            let s = sample(rng, cs.len(), 3);
            [s.index(0), s.index(1), s.index(2)]
        })
        .collect();

    let mut best: Option<(usize, RigidMotion)> = None;
    for triple in &samples {
        let Ok(m) = solve_indexed(cs, k, triple.iter().copied()) else {
            continue;
        };
        let count = count_inliers(cs, &m, k, params.inlier_eps);
        if count >= MIN_CORRESPONDENCES && best.map_or(true, |(c, _)| count > c) {
            best = Some((count, m));
        }
    }
    let (_, mut motion) = best.ok_or(Error::NoConsensus)?;
    let mut inliers = inlier_set(cs, &motion, k, params.inlier_eps);
    if let Ok(refit) = solve_indexed(cs, k, inliers.iter().copied()) {
        let refit_inliers = inlier_set(cs, &refit, k, params.inlier_eps);
        if refit_inliers.len() >= MIN_CORRESPONDENCES {
            motion = refit;
            inliers = refit_inliers;
        }
    }
    Ok((motion, inliers))
}

/// Greedy sequential extraction of independent motions.
///
/// Repeats RANSAC on the correspondences not yet explained; a motion is kept
/// while its consensus exceeds `n_min`, and extraction stops at the first
/// motion that does not, when points run out, or at `max_motions`.
pub fn estimate_motions(cs: &[Correspondence], k: &Intrinsics, params: &MotionParams) -> Result<MotionSet> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut remaining: Vec<usize> = (0..cs.len()).collect();
    let mut set = MotionSet::default();
    let mut best_rejected = 0;

    while set.len() < params.max_motions && remaining.len() >= MIN_CORRESPONDENCES {
        let subset: Vec<Correspondence> = remaining.iter().map(|&i| cs[i]).collect();
        let (motion, local) = match ransac_with_rng(&subset, k, params, &mut rng) {
            Ok(r) => r,
            Err(Error::NoConsensus) | Err(Error::InsufficientFeatures { .. }) => break,
            Err(e) => return Err(e),
        };
        if local.len() <= params.n_min {
            best_rejected = local.len();
            break;
        }
        let global: Vec<usize> = local.iter().map(|&j| remaining[j]).collect();
        let mut taken = vec![false; remaining.len()];
        local.iter().for_each(|&j| taken[j] = true);
        remaining = remaining
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(&i, _)| i)
            .collect();
        set.motions.push(motion);
        set.inlier_counts.push(global.len());
        set.inliers.push(global);
    }

    if set.is_empty() {
        return Err(Error::NoMotion {
            n_min: params.n_min,
            best: best_rejected,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{lift, project, Pixel, Point3};
    use rand::Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(525.0, 319.5, 239.5, 640, 480).unwrap()
    }

    fn forward(points: &[Point3], m: &RigidMotion, k: &Intrinsics) -> Vec<Correspondence> {
        points
            .iter()
            .map(|p| Correspondence {
                p: project(p, k).unwrap(),
                p_prime: project(&apply_motion(p, m), k).unwrap(),
                point: *p,
            })
            .collect()
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k();
        (0..n)
            .map(|_| {
                let px = Pixel::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
                lift(px, rng.random_range(1.0..5.0), &k).unwrap()
            })
            .collect()
    }

    #[test]
    fn residual_hand_example() {
        let k = Intrinsics::new(100.0, 50.0, 50.0, 100, 100).unwrap();
        let c = Correspondence {
            p: Pixel::new(50.0, 50.0),
            p_prime: Pixel::new(60.0, 50.0),
            point: Point3::new(0.0, 0.0, 2.0),
        };
        assert_eq!(residuals(&c, &RigidMotion::zero(), &k), (20.0, 0.0));
    }

    #[test]
    fn residuals_vanish_at_consistency() {
        let m = RigidMotion::new([0.01, -0.02, 0.005], [0.1, 0.0, -0.05]);
        for c in forward(&random_points(20, 1), &m, &k()) {
            let (a, b) = residuals(&c, &m, &k());
            assert!(a.abs() < 1e-9 && b.abs() < 1e-9);
        }
        for c in forward(&random_points(20, 2), &RigidMotion::zero(), &k()) {
            let (a, b) = residuals(&c, &RigidMotion::zero(), &k());
            assert!(a.abs() < 1e-9 && b.abs() < 1e-9);
        }
    }

    #[test]
    fn residual_rows_agree_with_direct_evaluation() {
        let m = RigidMotion::new([0.03, 0.01, -0.02], [0.2, -0.1, 0.05]);
        let cs = forward(
            &random_points(10, 3),
            &RigidMotion::new([0.0; 3], [0.1, 0.1, 0.1]),
            &k(),
        );
        for c in &cs {
            let (rx, ox, ry, oy) = residual_rows(c, &k());
            let v = m.to_array();
            let lin_x: f64 = rx.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + ox;
            let lin_y: f64 = ry.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + oy;
            let (dx, dy) = residuals(c, &m, &k());
            assert!((lin_x - dx).abs() < 1e-9 && (lin_y - dy).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_recovery() {
        let truth = RigidMotion::new([0.01, -0.02, 0.005], [0.1, 0.0, -0.05]);
        let cs = forward(&random_points(50, 4), &truth, &k());
        let m = solve_motion(&cs, &k()).unwrap();
        assert!(m.max_abs_diff(&truth) <= 1e-9, "{:?}", m);

        let cs = forward(&random_points(50, 5), &RigidMotion::zero(), &k());
        let m = solve_motion(&cs, &k()).unwrap();
        assert!(m.max_abs_diff(&RigidMotion::zero()) <= 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let a = Point3::new(-0.5, 0.2, 2.0);
        let d = Point3::new(0.3, 0.1, 0.4);
        let pts = [a, a + d, a + d * 2.5];
        let cs = forward(&pts, &RigidMotion::new([0.01, 0.0, 0.0], [0.0, 0.05, 0.0]), &k());
        assert!(matches!(solve_motion(&cs, &k()), Err(Error::Degenerate { .. })));
        // duplicates are degenerate too
        let cs = forward(&[a, a, a, a], &RigidMotion::zero(), &k());
        assert!(matches!(solve_motion(&cs, &k()), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn too_few_correspondences() {
        let cs = forward(&random_points(2, 6), &RigidMotion::zero(), &k());
        assert!(matches!(
            solve_motion(&cs, &k()),
            Err(Error::InsufficientFeatures { .. })
        ));
    }

    #[test]
    fn inlier_set_contract() {
        let truth = RigidMotion::new([0.0, 0.0, 0.0], [0.3, 0.0, 0.0]);
        let cs = forward(&random_points(30, 7), &truth, &k());
        assert_eq!(inlier_set(&cs, &truth, &k(), 1e-6).len(), 30);
        // displacement >= 525*0.3/5 = 31 px >> 2 px
        assert!(inlier_set(&cs, &RigidMotion::zero(), &k(), 4.0).is_empty());

        let mut c = Correspondence {
            p: Pixel::new(319.5, 239.5),
            p_prime: Pixel::new(321.5, 239.5),
            point: Point3::new(0.0, 0.0, 2.0),
        };
        assert_eq!(inlier_set(&[c], &RigidMotion::zero(), &k(), 4.0), vec![0]);
        c.p_prime.x += 1e-9;
        assert!(inlier_set(&[c], &RigidMotion::zero(), &k(), 4.0).is_empty());
    }

    #[test]
    fn points_behind_camera_are_not_inliers() {
        let c = Correspondence {
            p: Pixel::new(319.5, 239.5),
            p_prime: Pixel::new(319.5, 239.5),
            point: Point3::new(0.0, 0.0, 1.0),
        };
        let m = RigidMotion::new([0.0; 3], [0.0, 0.0, -2.0]);
        assert!(inlier_set(&[c], &m, &k(), 1e6).is_empty());
    }

    #[test]
    fn ransac_is_deterministic_and_complete_on_clean_data() {
        let truth = RigidMotion::new([0.004, 0.01, -0.003], [0.05, -0.02, 0.03]);
        let cs = forward(&random_points(60, 8), &truth, &k());
        let params = MotionParams::default();
        let (m1, in1) = ransac_motion(&cs, &k(), &params).unwrap();
        let (m2, in2) = ransac_motion(&cs, &k(), &params).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(in1, in2);
        assert_eq!(in1, (0..60).collect::<Vec<_>>());
    }

    #[test]
    fn single_motion_extracts_one() {
        let truth = RigidMotion::new([0.004, 0.01, -0.003], [0.05, -0.02, 0.03]);
        let cs = forward(&random_points(80, 9), &truth, &k());
        let set = estimate_motions(&cs, &k(), &MotionParams::default()).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.inlier_counts, vec![80]);
    }

    #[test]
    fn n_min_above_count_is_no_motion() {
        let cs = forward(&random_points(20, 10), &RigidMotion::zero(), &k());
        let params = MotionParams {
            n_min: 21,
            ..Default::default()
        };
        assert!(matches!(
            estimate_motions(&cs, &k(), &params),
            Err(Error::NoMotion { .. })
        ));
    }
}
