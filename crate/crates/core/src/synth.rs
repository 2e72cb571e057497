//! Synthetic rolling-shutter scenes with ground truth, and the error
//! metrics used to score estimates against it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{
    exp_so3, project_flow, CameraConfig, FlowSample, Mat3, MotionEstimate, Vec2, Vec3,
};
use crate::raster::{DepthMap, Image};
use crate::refine::optimal_inverse_depth;
use crate::rs::{motion_fraction, scanline_factors, MotionModel};

/// Frame-to-frame camera motion: translation in scene units, rotation
/// vector in radians, acceleration factor `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueMotion {
    pub translation: Vec3,
    pub rotation: Vec3,
    pub k: f64,
}

impl TrueMotion {
    pub const ZERO: TrueMotion = TrueMotion {
        translation: Vec3::new(0.0, 0.0, 0.0),
        rotation: Vec3::new(0.0, 0.0, 0.0),
        k: 0.0,
    };

    /// Equal horizontal and vertical translation, equal yaw, pitch and roll.
    pub fn preset(translation_norm: f64, rotation_deg: f64, k: f64) -> Self {
        Self {
            translation: Vec3::new(1.0, 1.0, 0.0).normalize() * translation_norm,
            rotation: Vec3::new(1.0, 1.0, 1.0).normalize() * rotation_deg.to_radians(),
            k,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            translation: self.translation * s,
            rotation: self.rotation * s,
            k: self.k,
        }
    }

    pub fn estimate(&self) -> MotionEstimate {
        MotionEstimate::new(self.translation, self.rotation, self.k)
    }
}

/// Pose `(translation, rotation vector)` of the scanline captured at time
/// `tau`, in frame periods after the first scanline of frame `i`.
/// Constant velocity ignores `k`; a global shutter pose is constant over a
/// frame.
pub fn scanline_pose(tau: f64, motion: &TrueMotion, model: MotionModel) -> (Vec3, Vec3) {
    let f = match model {
        MotionModel::GlobalShutter => tau.floor(),
        MotionModel::ConstVelocity => tau,
        MotionModel::ConstAccel => motion_fraction(tau, motion.k),
    };
    (motion.translation * f, motion.rotation * f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub points: usize,
    pub depth_range: (f64, f64),
    pub camera: CameraConfig,
    pub motion: TrueMotion,
    pub seed: u64,
}

impl SceneSpec {
    pub const DEFAULT_DEPTH: (f64, f64) = (2.0, 10.0);

    /// Motion given as normalized translation (relative to the mean scene
    /// depth) and rotation magnitude in degrees.
    pub fn with_normalized_motion(
        camera: CameraConfig,
        points: usize,
        normalized_translation: f64,
        rotation_deg: f64,
        k: f64,
        seed: u64,
    ) -> Self {
        let depth_range = Self::DEFAULT_DEPTH;
        let mean = 0.5 * (depth_range.0 + depth_range.1);
        Self {
            points,
            depth_range,
            camera,
            motion: TrueMotion::preset(normalized_translation * mean, rotation_deg, k),
            seed,
        }
    }

    pub fn mean_depth(&self) -> f64 {
        0.5 * (self.depth_range.0 + self.depth_range.1)
    }

    pub fn normalized_translation(&self) -> f64 {
        self.motion.translation.norm() / self.mean_depth()
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "depth range ({lo}, {hi}) must satisfy 0 < min <= max"
            )));
        }
        if self.motion.k <= -2.0 {
            return Err(Error::InvalidConfig(format!(
                "k must exceed -2, got {}",
                self.motion.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub motion: TrueMotion,
    /// Depth of each emitted sample in the camera of its first-frame scanline.
    pub depths: Vec<f64>,
    /// `(y1, y2)` of each emitted sample.
    pub rows: Vec<(f64, f64)>,
    /// Points dropped because a fixed point failed, the point fell behind
    /// the camera or left the image.
    pub discarded: usize,
}

const MAX_FIXED_POINT: usize = 20;
const FIXED_POINT_TOL: f64 = 1e-12;
/// Random draws allowed per requested point before giving up.
const MAX_DRAWS_PER_POINT: usize = 50;

fn draw(rng: &mut ChaCha8Rng, spec: &SceneSpec) -> (Vec2, f64) {
    let c = &spec.camera;
    let px = rng.random_range(0.0..(c.width - 1) as f64);
    let py = rng.random_range(0.0..(c.h - 1) as f64);
    let (lo, hi) = spec.depth_range;
    let z = if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    (c.to_normalized(px, py), z)
}

fn generate<F>(spec: &SceneSpec, mut point: F) -> Result<(Vec<FlowSample>, GroundTruth)>
where
    F: FnMut(&Vec2, f64) -> Option<Vec2>,
{
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.points);
    let mut truth = GroundTruth {
        motion: spec.motion,
        depths: Vec::new(),
        rows: Vec::new(),
        discarded: 0,
    };
    let mut draws = 0;
    while samples.len() < spec.points {
        if draws >= MAX_DRAWS_PER_POINT * spec.points.max(1) {
            return Err(Error::InvalidConfig(format!(
                "only {} of {} points could be generated",
                samples.len(),
                spec.points
            )));
        }
        draws += 1;
        let (x, z) = draw(&mut rng, spec);
        let Some(u) = point(&x, z) else {
            truth.discarded += 1;
            continue;
        };
        match FlowSample::new(x, u, &spec.camera) {
            Ok(s) => {
                truth.depths.push(z);
                truth.rows.push((s.y1, s.y2));
                samples.push(s);
            }
            Err(_) => truth.discarded += 1,
        }
    }
    Ok((samples, truth))
}

/// Flows that satisfy the linearized rolling-shutter model exactly:
/// `u = β(k; y1, y2)(A v/Z + B w)` with `y2` the row of `x + u`.
pub fn generate_linearized(spec: &SceneSpec) -> Result<(Vec<FlowSample>, GroundTruth)> {
    let cam = spec.camera;
    let m = spec.motion;
    generate(spec, |x, z| {
        let base = project_flow(x, z, &m.translation, &m.rotation).ok()?;
        let mut s = FlowSample {
            x: *x,
            u: Vec2::zeros(),
            y1: cam.row_of(x),
            y2: cam.row_of(x),
        };
        for _ in 0..MAX_FIXED_POINT {
            s.u = base * scanline_factors(&s, &cam).ok()?.beta(m.k);
            let y2 = cam.row_of(&(x + s.u));
            let step = (y2 - s.y2).abs();
            s.y2 = y2;
            if step <= FIXED_POINT_TOL * (1.0 + y2.abs()) {
                return Some(s.u);
            }
        }
        None
    })
}

/// Flows from exact two-view projection. The point is back-projected from
/// the first-frame scanline pose at `τ1 = γ y1/h`; its second-frame image
/// is the fixed point of projecting with the pose at `τ2 = 1 + γ y2/h`.
pub fn generate_discrete(spec: &SceneSpec) -> Result<(Vec<FlowSample>, GroundTruth)> {
    let cam = spec.camera;
    let m = spec.motion;
    let h = cam.h as f64;
    generate(spec, |x, z| {
        let y1 = cam.row_of(x);
        let (p1, r1) = scanline_pose(cam.gamma * y1 / h, &m, MotionModel::ConstAccel);
        let world = p1 + exp_so3(&r1) * (Vec3::new(x.x, x.y, 1.0) * z);
        let mut y2 = y1;
        for _ in 0..MAX_FIXED_POINT {
            let (p2, r2) = scanline_pose(1.0 + cam.gamma * y2 / h, &m, MotionModel::ConstAccel);
            let xc = exp_so3(&r2).transpose() * (world - p2);
            if xc.z <= 0.0 {
                return None;
            }
            let x2 = Vec2::new(xc.x / xc.z, xc.y / xc.z);
            let next = cam.row_of(&x2);
            let step = (next - y2).abs();
            y2 = next;
            if step <= FIXED_POINT_TOL * (1.0 + y2.abs()) {
                return Some(x2 - x);
            }
        }
        None
    })
}

/// Replaces a `fraction` of the flows by uniform random flows in
/// `[-magnitude, magnitude]²`, redrawing until the corrupted sample's
/// residual under the true motion exceeds `min_residual`. Returns the
/// corrupted indices, ascending.
pub fn inject_outliers(
    samples: &mut [FlowSample],
    truth: &GroundTruth,
    fraction: f64,
    magnitude: f64,
    min_residual: f64,
    cam: &CameraConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) || !(magnitude > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "outlier fraction {fraction} / magnitude {magnitude}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (fraction * samples.len() as f64).round() as usize;
    let mut picked = rand::seq::index::sample(&mut rng, samples.len(), n).into_vec();
    picked.sort_unstable();
    let motion = truth.motion.estimate();
    for &i in &picked {
        let x = samples[i].x;
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > 1000 {
                return Err(Error::InvalidConfig(
                    "could not draw an outlier above the residual floor".into(),
                ));
            }
            let u = Vec2::new(
                rng.random_range(-magnitude..magnitude),
                rng.random_range(-magnitude..magnitude),
            );
            let Ok(s) = FlowSample::new(x, u, cam) else {
                continue;
            };
            let f = scanline_factors(&s, cam)?;
            let (rho, _) = optimal_inverse_depth(&s, &f, &motion);
            if crate::refine::residual_flow(&s, &f, &motion, rho).norm() > min_residual {
                samples[i] = s;
                break;
            }
        }
    }
    Ok(picked)
}

/// Fronto-parallel checkerboard at world depth `depth`, squares of side
/// `square` scene units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexturedPlane {
    pub depth: f64,
    pub square: f64,
}

impl TexturedPlane {
    fn intensity(&self, x: f64, y: f64) -> f64 {
        let parity = ((x / self.square).floor() + (y / self.square).floor()).rem_euclid(2.0);
        if parity < 0.5 {
            40.0
        } else {
            215.0
        }
    }
}

/// Renders frame `i` of a plane scene, 3×3 supersampled. With `rolling`
/// every row is seen from its scanline pose, otherwise from the pose of
/// the first scanline. Also returns the per-pixel depth in the camera that
/// saw the pixel.
pub fn render_plane(
    cam: &CameraConfig,
    motion: &TrueMotion,
    plane: &TexturedPlane,
    rolling: bool,
) -> (Image, DepthMap) {
    let mut img = Image::gray_from_fn(cam.width, cam.h, |_, _| 0);
    let mut depth = DepthMap::new(cam.width, cam.h);
    let h = cam.h as f64;
    for py in 0..cam.h {
        let tau = if rolling {
            cam.gamma * py as f64 / h
        } else {
            0.0
        };
        let (p, r) = scanline_pose(tau, motion, MotionModel::ConstAccel);
        let rot = exp_so3(&r);
        let hit = |sx: f64, sy: f64| -> Option<(f64, f64, f64)> {
            let x = cam.to_normalized(sx, sy);
            let d = rot * Vec3::new(x.x, x.y, 1.0);
            let s = (plane.depth - p.z) / d.z;
            (s > 0.0).then(|| (p.x + s * d.x, p.y + s * d.y, s))
        };
        for px in 0..cam.width {
            let mut sum = 0.0;
            let mut n = 0.0;
            for j in 0..3 {
                for i in 0..3 {
                    let (ox, oy) = ((i as f64 - 1.0) / 3.0, (j as f64 - 1.0) / 3.0);
                    if let Some((wx, wy, _)) = hit(px as f64 + ox, py as f64 + oy) {
                        sum += plane.intensity(wx, wy);
                        n += 1.0;
                    }
                }
            }
            if n > 0.0 {
                img.pixel_mut(px, py)[0] = (sum / n).round() as u8;
            }
            if let Some((_, _, s)) = hit(px as f64, py as f64) {
                depth.set(px, py, s);
            }
        }
    }
    (img, depth)
}

/// Angle between two translation directions, degrees in `[0, 180]`.
pub fn translation_error(v_est: &Vec3, v_true: &Vec3) -> Result<f64> {
    let (a, b) = (v_est.norm(), v_true.norm());
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain("translation error of a zero vector".into()));
    }
    Ok((v_est.dot(v_true) / (a * b))
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees())
}

/// Intrinsic XYZ Euler angles `(φ, θ, ψ)` with `R = Rx(φ) Ry(θ) Rz(ψ)`.
pub fn euler_xyz(r: &Mat3) -> Result<Vec3> {
    let theta = r[(0, 2)].clamp(-1.0, 1.0).asin();
    if (theta.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-6_f64.to_radians() {
        return Err(Error::Domain("Euler decomposition at gimbal lock".into()));
    }
    let phi = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let psi = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Ok(Vec3::new(phi, theta, psi))
}

/// Norm of the Euler angles of `exp(w_est) exp(w_true)ᵀ`, degrees.
pub fn rotation_error(w_est: &Vec3, w_true: &Vec3) -> Result<f64> {
    if w_est.norm() >= std::f64::consts::PI || w_true.norm() >= std::f64::consts::PI {
        return Err(Error::Domain(
            "rotation vectors must be shorter than π".into(),
        ));
    }
    let r = exp_so3(w_est) * exp_so3(w_true).transpose();
    Ok(euler_xyz(&r)?.norm().to_degrees())
}
