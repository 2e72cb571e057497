//! Rolling-shutter minimal solvers.
//!
//! Under constant velocity every flow is the global-shutter flow scaled by
//! `α = 1 + γ (y2 − y1) / h`, so rescaling the flows reduces the problem to
//! the linear 8-point solver. Under constant acceleration the scale becomes
//! `β(k) = (2a + b k) / (2 + k)`; clearing `(2 + k)` makes each constraint
//! row affine in `k`, and `k` is found as a root of `det Z(k) = 0` with 9
//! samples (hidden-variable resultant).

use nalgebra::{DMatrix, SMatrix};

use crate::error::{Error, Result};
use crate::geom::{CameraConfig, EpipolarVector, FlowSample, MotionEstimate, Vec9};
use crate::gs::{self, recover_motion, recover_motion_scaled, s_block, v_block};
use crate::poly::Polynomial;

/// Fraction of the frame-to-frame motion accumulated at scanline time `tau`
/// (in units of the frame period) under constant acceleration `k`:
/// `(2τ + k τ²) / (2 + k)`. Zero at `τ = 0`, one at `τ = 1`.
pub fn motion_fraction(tau: f64, k: f64) -> f64 {
    (2.0 * tau + k * tau * tau) / (2.0 + k)
}

/// Fraction of the frame motion reached by scanline `y` of the first frame.
pub fn beta1(y: f64, k: f64, cam: &CameraConfig) -> f64 {
    motion_fraction(cam.gamma * y / cam.h as f64, k)
}

/// Fraction reached by scanline `y` of the second frame.
pub fn beta2(y: f64, k: f64, cam: &CameraConfig) -> f64 {
    motion_fraction(1.0 + cam.gamma * y / cam.h as f64, k)
}

/// Per-sample rolling-shutter scale coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanlineFactors {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
}

impl ScanlineFactors {
    /// Factors of a global-shutter camera (`β ≡ 1`).
    pub const UNIT: Self = Self {
        alpha: 1.0,
        a: 1.0,
        b: 1.0,
    };

    /// `β(k) = (2a + b k) / (2 + k)`.
    pub fn beta(&self, k: f64) -> f64 {
        (2.0 * self.a + self.b * k) / (2.0 + k)
    }
}

pub fn scanline_factors(sample: &FlowSample, cam: &CameraConfig) -> Result<ScanlineFactors> {
    let h = cam.h as f64;
    let t1 = cam.gamma * sample.y1 / h;
    let t2 = 1.0 + cam.gamma * sample.y2 / h;
    let alpha = 1.0 + cam.gamma * (sample.y2 - sample.y1) / h;
    if !(alpha > 0.0) {
        return Err(Error::InvalidScanlinePair { alpha });
    }
    Ok(ScanlineFactors {
        alpha,
        a: alpha,
        b: t2 * t2 - t1 * t1,
    })
}

/// Camera motion model used by the solvers and the refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionModel {
    GlobalShutter,
    ConstVelocity,
    ConstAccel,
}

impl MotionModel {
    pub fn min_samples(&self) -> usize {
        match self {
            Self::ConstAccel => 9,
            _ => 8,
        }
    }

    /// Scanline factors of a sample under this model. The global-shutter
    /// model ignores the readout ratio.
    pub fn factors(&self, sample: &FlowSample, cam: &CameraConfig) -> Result<ScanlineFactors> {
        match self {
            Self::GlobalShutter => Ok(ScanlineFactors::UNIT),
            _ => scanline_factors(sample, cam),
        }
    }

    pub fn all_factors(
        &self,
        samples: &[FlowSample],
        cam: &CameraConfig,
    ) -> Result<Vec<ScanlineFactors>> {
        samples.iter().map(|s| self.factors(s, cam)).collect()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GlobalShutter => "gs",
            Self::ConstVelocity => "cv",
            Self::ConstAccel => "ca",
        }
    }
}

impl std::str::FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gs" => Ok(Self::GlobalShutter),
            "cv" => Ok(Self::ConstVelocity),
            "ca" => Ok(Self::ConstAccel),
            other => Err(Error::Format(format!(
                "unknown motion model '{other}' (expected gs, cv or ca)"
            ))),
        }
    }
}

impl std::fmt::Display for MotionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Constant-velocity solver: flows rescaled by `1/α`, then the linear
/// 8-point solver. Returns `k = 0`.
pub fn solve_const_velocity(samples: &[FlowSample], cam: &CameraConfig) -> Result<MotionEstimate> {
    let rectified = samples
        .iter()
        .map(|s| scanline_factors(s, cam).map(|f| s.scaled_flow(1.0 / f.alpha)))
        .collect::<Result<Vec<_>>>()?;
    let e = gs::solve_linear(&rectified)?;
    recover_motion(&e, &rectified)
}

/// Constraint row `(2+k) uᵀv̂x̃ − (2a + b k) x̃ᵀ s x̃` split as `z0 + k z1`.
pub fn accel_row_affine(sample: &FlowSample, factors: &ScanlineFactors) -> (Vec9, Vec9) {
    let vb = v_block(sample);
    let sb = s_block(sample);
    let mut z0 = Vec9::zeros();
    let mut z1 = Vec9::zeros();
    z0.fixed_rows_mut::<3>(0).copy_from(&(vb * 2.0));
    z1.fixed_rows_mut::<3>(0).copy_from(&vb);
    z0.fixed_rows_mut::<6>(3)
        .copy_from(&(sb * (2.0 * factors.a)));
    z1.fixed_rows_mut::<6>(3).copy_from(&(sb * factors.b));
    (z0, z1)
}

pub fn accel_row(sample: &FlowSample, factors: &ScanlineFactors, k: f64) -> Vec9 {
    let (z0, z1) = accel_row_affine(sample, factors);
    z0 + z1 * k
}

/// The 9×9 matrix `Z(k)` as `Z0 + k Z1`.
#[derive(Debug, Clone)]
pub struct AccelSystem {
    z0: SMatrix<f64, 9, 9>,
    z1: SMatrix<f64, 9, 9>,
}

impl AccelSystem {
    pub fn new(samples: &[FlowSample], factors: &[ScanlineFactors]) -> Result<Self> {
        if samples.len() != 9 || factors.len() != 9 {
            return Err(Error::NotEnoughSamples {
                needed: 9,
                got: samples.len().min(factors.len()),
            });
        }
        let mut z0 = SMatrix::<f64, 9, 9>::zeros();
        let mut z1 = SMatrix::<f64, 9, 9>::zeros();
        for (i, (s, f)) in samples.iter().zip(factors).enumerate() {
            let (r0, r1) = accel_row_affine(s, f);
            z0.set_row(i, &r0.transpose());
            z1.set_row(i, &r1.transpose());
        }
        Ok(Self { z0, z1 })
    }

    pub fn matrix(&self, k: f64) -> SMatrix<f64, 9, 9> {
        self.z0 + self.z1 * k
    }

    pub fn det(&self, k: f64) -> f64 {
        self.matrix(k).lu().determinant()
    }

    /// `det Z(k) / (2 + k)³`, evaluated directly.
    pub fn reduced_det(&self, k: f64) -> f64 {
        self.det(k) / (2.0 + k).powi(3)
    }

    /// Null vector of `Z(k)` with rows unit-normalized, and the least
    /// singular value relative to the largest.
    pub fn null_vector(&self, k: f64) -> Result<(EpipolarVector, f64)> {
        let m = self.matrix(k);
        let mut d = DMatrix::zeros(9, 9);
        for i in 0..9 {
            let row = m.row(i);
            let n = row.norm();
            if n > 0.0 {
                d.row_mut(i).copy_from(&(row / n));
            }
        }
        gs::null_vector_of(&d)
    }
}

/// Reduced determinant polynomial of degree ≤ 6 with the deflation residue.
#[derive(Debug, Clone)]
pub struct DetPolynomial {
    pub poly: Polynomial,
    /// Largest `(2+k)` division remainder relative to the largest
    /// coefficient of the dividend.
    pub remainder: f64,
}

impl DetPolynomial {
    pub fn eval(&self, k: f64) -> f64 {
        self.poly.eval(k)
    }

    pub fn degree(&self) -> usize {
        self.poly.degree()
    }
}

/// Remainder above which deflation signals a numerically degenerate set.
pub const DEFLATION_TOL: f64 = 1e-8;

const DET_NODES: usize = 10;

/// `det Z(k)` interpolated at Chebyshev nodes on [−1, 1] and deflated by
/// `(2 + k)³`.
pub fn det_polynomial(
    samples: &[FlowSample],
    factors: &[ScanlineFactors],
) -> Result<DetPolynomial> {
    det_polynomial_of(&AccelSystem::new(samples, factors)?)
}

pub fn det_polynomial_of(sys: &AccelSystem) -> Result<DetPolynomial> {
    let nodes: Vec<f64> = (0..DET_NODES)
        .map(|j| ((2 * j + 1) as f64 * std::f64::consts::PI / (2 * DET_NODES) as f64).cos())
        .collect();
    let values: Vec<f64> = nodes.iter().map(|&k| sys.det(k)).collect();
    let full = Polynomial::interpolate(&nodes, &values).ok_or(Error::DegenerateConfiguration)?;
    let scale = full.max_abs_coeff();
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::DegenerateConfiguration);
    }
    let mut q = full;
    let mut remainder: f64 = 0.0;
    for _ in 0..3 {
        let (next, r) = q.deflate(-2.0);
        remainder = remainder.max(r.abs() / q.max_abs_coeff());
        q = next;
    }
    if remainder > DEFLATION_TOL {
        return Err(Error::NumericallyDegenerate { remainder });
    }
    Ok(DetPolynomial { poly: q, remainder })
}

/// One root of the determinant polynomial turned into a motion hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelCandidate {
    pub motion: MotionEstimate,
    /// Least singular value of the row-normalized `Z(k)`, relative.
    pub sigma_min: f64,
}

/// Admissible interval `(lower, upper]` for the acceleration factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootWindow {
    pub lower: f64,
    pub upper: f64,
}

impl Default for RootWindow {
    fn default() -> Self {
        Self {
            lower: -2.0,
            upper: 10.0,
        }
    }
}

impl RootWindow {
    pub fn contains(&self, k: f64) -> bool {
        k > self.lower && k <= self.upper && (k + 2.0).abs() > 1e-9
    }
}

/// 9-point constant-acceleration solver. All admissible roots are
/// returned; choosing among them is left to the caller.
pub fn solve_const_accel(
    samples: &[FlowSample],
    cam: &CameraConfig,
) -> Result<Vec<AccelCandidate>> {
    solve_const_accel_in(samples, cam, RootWindow::default())
}

pub fn solve_const_accel_in(
    samples: &[FlowSample],
    cam: &CameraConfig,
    window: RootWindow,
) -> Result<Vec<AccelCandidate>> {
    if cam.gamma == 0.0 {
        // Every row is (2 + k) times its global-shutter row: k is
        // unobservable and the null vector is the global-shutter one.
        let (e, sigma_min) = gs::LinearSystem::from_samples(samples).null_vector()?;
        let m = recover_motion(&e, samples)?;
        return Ok(vec![AccelCandidate {
            motion: m,
            sigma_min,
        }]);
    }
    let factors = samples
        .iter()
        .map(|s| scanline_factors(s, cam))
        .collect::<Result<Vec<_>>>()?;
    let sys = AccelSystem::new(samples, &factors)?;
    let dp = det_polynomial_of(&sys)?;
    let mut out = Vec::new();
    for root in dp.poly.real_roots() {
        let k = polish_root(&sys, root);
        if !window.contains(k) {
            continue;
        }
        let Ok((e, sigma_min)) = sys.null_vector(k) else {
            continue;
        };
        let Ok(m) = recover_motion_scaled(&e, samples, |i| factors[i].beta(k)) else {
            continue;
        };
        out.push(AccelCandidate {
            motion: MotionEstimate { k, ..m },
            sigma_min,
        });
    }
    if out.is_empty() {
        return Err(Error::NoRealSolution);
    }
    Ok(out)
}

/// A few secant steps on the directly evaluated reduced determinant.
fn polish_root(sys: &AccelSystem, k0: f64) -> f64 {
    let mut a = k0;
    let mut fa = sys.reduced_det(a);
    let mut b = k0 + 1e-7 * (1.0 + k0.abs());
    let mut fb = sys.reduced_det(b);
    for _ in 0..4 {
        if fb == fa {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        if !c.is_finite() || (c - k0).abs() > 1e-3 * (1.0 + k0.abs()) {
            break;
        }
        a = b;
        fa = fb;
        b = c;
        fb = sys.reduced_det(b);
    }
    let best = if fb.abs() <= fa.abs() {
        (b, fb)
    } else {
        (a, fa)
    };
    if best.1.abs() <= sys.reduced_det(k0).abs() {
        best.0
    } else {
        k0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project_flow, Vec2, Vec3};
    use crate::gs::gs_row;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(gamma: f64) -> CameraConfig {
        CameraConfig::centered(gamma, 900, 900, 810.0).unwrap()
    }

    /// Exactly consistent accelerated samples by fixed-point iteration on y2.
    fn accel_samples(
        rng: &mut ChaCha8Rng,
        n: usize,
        v: &Vec3,
        w: &Vec3,
        k: f64,
        cam: &CameraConfig,
    ) -> Vec<FlowSample> {
        let mut out = Vec::new();
        while out.len() < n {
            let x = Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let z = rng.random_range(2.0..10.0);
            let base = project_flow(&x, z, v, w).unwrap();
            let y1 = cam.row_of(&x);
            let mut y2 = y1;
            let mut u = base;
            for _ in 0..50 {
                let f = ScanlineFactors {
                    alpha: 0.0,
                    a: 1.0 + cam.gamma * (y2 - y1) / cam.h as f64,
                    b: (1.0 + cam.gamma * y2 / cam.h as f64).powi(2)
                        - (cam.gamma * y1 / cam.h as f64).powi(2),
                };
                u = base * f.beta(k);
                y2 = cam.row_of(&(x + u));
            }
            if let Ok(s) = FlowSample::new(x, u, cam) {
                out.push(s);
            }
        }
        out
    }

    fn reference_motion() -> (Vec3, Vec3) {
        let v = Vec3::new(1.0, 1.0, 0.0).normalize() * 0.15;
        let w = Vec3::new(1.0, 1.0, 1.0).normalize() * 3f64.to_radians();
        (v, w)
    }

    #[test]
    fn factors_examples() {
        let c = cam(0.8);
        let s = FlowSample {
            x: Vec2::zeros(),
            u: Vec2::zeros(),
            y1: 100.0,
            y2: 100.0,
        };
        assert_eq!(scanline_factors(&s, &c).unwrap().alpha, 1.0);
        let s = FlowSample { y2: 200.0, ..s };
        let f = scanline_factors(&s, &c).unwrap();
        assert!((f.alpha - (1.0 + 0.8 * 100.0 / 900.0)).abs() < 1e-15);
        assert!((f.alpha - 1.088_888_888_888_889).abs() < 1e-12);
        assert_eq!(f.beta(0.0), f.alpha);

        let f0 = scanline_factors(&s, &cam(0.0)).unwrap();
        assert_eq!((f0.alpha, f0.a, f0.b), (1.0, 1.0, 1.0));
        for k in [-1.5, -0.2, 0.0, 0.3, 5.0] {
            assert!((f0.beta(k) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_scanline_pair() {
        let c = cam(1.0);
        let s = FlowSample {
            x: Vec2::zeros(),
            u: Vec2::zeros(),
            y1: 899.0,
            y2: -10.0,
        };
        assert!(matches!(
            scanline_factors(&s, &c),
            Err(Error::InvalidScanlinePair { .. })
        ));
    }

    #[test]
    fn beta_is_difference_of_scanline_fractions() {
        let c = cam(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let s = FlowSample {
                x: Vec2::zeros(),
                u: Vec2::zeros(),
                y1: rng.random_range(0.0..900.0),
                y2: rng.random_range(0.0..900.0),
            };
            let k = rng.random_range(-1.0..1.0);
            let f = scanline_factors(&s, &c).unwrap();
            let direct = beta2(s.y2, k, &c) - beta1(s.y1, k, &c);
            assert!((f.beta(k) - direct).abs() < 1e-14);
        }
        assert_eq!(beta1(0.0, 0.3, &c), 0.0);
        assert!((beta1(450.0, 0.0, &c) - 0.35).abs() < 1e-15);
    }

    #[test]
    fn constant_velocity_recovery() {
        let c = cam(0.8);
        let (v, w) = reference_motion();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = accel_samples(&mut rng, 8, &v, &w, 0.0, &c);
            let m = solve_const_velocity(&s, &c).unwrap();
            assert!(m.v.angle(&v) < 1e-6);
            assert!((m.w - w).norm() < 1e-8);
            assert_eq!(m.k, 0.0);
        }
    }

    #[test]
    fn zero_readout_matches_global_shutter() {
        let c = cam(0.0);
        let (v, w) = reference_motion();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = accel_samples(&mut rng, 12, &v, &w, 0.0, &c);
        let a = solve_const_velocity(&s, &c).unwrap();
        let b = gs::recover_motion(&gs::solve_linear(&s).unwrap(), &s).unwrap();
        assert!((a.v - b.v).norm() < 1e-10 && (a.w - b.w).norm() < 1e-10);
    }

    #[test]
    fn wrong_readout_biases_estimate() {
        // Global-shutter flows interpreted with γ = 0.8.
        let (v, w) = reference_motion();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = accel_samples(&mut rng, 50, &v, &w, 0.0, &cam(0.0));
        let m = solve_const_velocity(&s, &cam(0.8)).unwrap();
        assert!(m.v.angle(&v) > 1e-3);
    }

    #[test]
    fn accel_row_properties() {
        let c = cam(0.8);
        let (v, w) = reference_motion();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = EpipolarVector::from_motion(&v, &w);
        for s in accel_samples(&mut rng, 20, &v, &w, 0.1, &c) {
            let f = scanline_factors(&s, &c).unwrap();
            assert!(accel_row(&s, &f, 0.1).dot(&e.0).abs() < 1e-12);
            let gs2 = gs_row(&s.scaled_flow(1.0 / f.alpha)) * (2.0 * f.alpha);
            assert!((accel_row(&s, &f, 0.0) - gs2).norm() < 1e-14);
            let (_, z1) = accel_row_affine(&s, &f);
            let d = accel_row(&s, &f, 0.7) - accel_row(&s, &f, -0.3);
            assert!((d - z1).norm() < 1e-15);
        }
    }

    #[test]
    fn determinant_polynomial_structure() {
        let c = cam(0.8);
        let (v, w) = reference_motion();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for k_true in [0.1, 0.0, -0.2] {
            for _ in 0..10 {
                let s = accel_samples(&mut rng, 9, &v, &w, k_true, &c);
                let f: Vec<_> = s.iter().map(|x| scanline_factors(x, &c).unwrap()).collect();
                let sys = AccelSystem::new(&s, &f).unwrap();
                let dp = det_polynomial_of(&sys).unwrap();
                assert!(dp.degree() <= 6);
                assert!(dp.remainder < 1e-8);
                let probes = [-1.5, -0.5, 0.0, 0.4, 2.0];
                let scale = probes
                    .iter()
                    .fold(0.0f64, |m, &p| m.max(sys.reduced_det(p).abs()));
                for probe in probes {
                    let direct = sys.reduced_det(probe);
                    assert!((dp.eval(probe) - direct).abs() <= 1e-9 * scale);
                }
                let roots = dp.poly.real_roots();
                let best = roots
                    .iter()
                    .map(|r| polish_root(&sys, *r))
                    .fold(f64::MAX, |m, r| m.min((r - k_true).abs()));
                assert!(best < 1e-8, "root error {best}");
            }
        }
    }

    #[test]
    fn nine_point_recovery() {
        let c = cam(0.8);
        let (v, w) = reference_motion();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = accel_samples(&mut rng, 9, &v, &w, 0.1, &c);
            let cands = solve_const_accel(&s, &c).unwrap();
            assert!(cands.len() <= 6);
            let hit = cands
                .iter()
                .find(|cand| (cand.motion.k - 0.1).abs() < 1e-6)
                .expect("candidate near k_true");
            assert!(hit.motion.v.angle(&v) < 1e-5);
            assert!((hit.motion.w - w).norm() < 1e-7);
        }
    }

    #[test]
    fn nine_point_constant_velocity_data() {
        let c = cam(0.8);
        let (v, w) = reference_motion();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = accel_samples(&mut rng, 9, &v, &w, 0.0, &c);
        let cands = solve_const_accel(&s, &c).unwrap();
        assert!(cands.iter().any(|cand| cand.motion.k.abs() < 1e-6));
    }
}
