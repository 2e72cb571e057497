//! Non-linear refinement of `(k, v, w, Z)` by block coordinate descent on
//! the differential re-projection error
//!
//! ```text
//! Σ_i ‖u_i − β_i(k) (A_i v ρ_i + B_i w)‖²,   ρ_i = 1 / Z_i
//! ```
//!
//! Every block has a closed-form minimizer: the inverse depths are
//! independent 1-D least-squares problems, `v` and `w` are linear least
//! squares, and the stationarity condition in `k` is linear once `(2 + k)` is
//! cleared. Inverse depths are kept non-negative; a sample whose optimum
//! would be behind the camera is held at `ρ = 0` (rotation-only prediction)
//! and flagged, and is re-tested on the next cycle.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::{matrices_ab, CameraConfig, FlowSample, MotionEstimate, Vec2, Vec3};
use crate::raster::{DepthMap, FlowField};
use crate::rs::{MotionModel, ScanlineFactors};

/// Squared norm of `β A v` below which a sample sits on the epipole.
const EPIPOLE_TOL: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthStatus {
    Valid,
    /// Optimal inverse depth not positive; held at zero.
    Behind,
    /// Translational flow direction vanishes; depth unobservable.
    Epipole,
}

/// Closed-form inverse depth of one sample. Flagged samples return `ρ = 0`.
pub fn optimal_inverse_depth(
    sample: &FlowSample,
    factors: &ScanlineFactors,
    motion: &MotionEstimate,
) -> (f64, DepthStatus) {
    let beta = factors.beta(motion.k);
    let (a, b) = matrices_ab(&sample.x);
    let q = a * motion.v * beta;
    let c = sample.u - b * motion.w * beta;
    let qq = q.norm_squared();
    if qq < EPIPOLE_TOL {
        return (0.0, DepthStatus::Epipole);
    }
    let rho = c.dot(&q) / qq;
    if rho > 0.0 {
        (rho, DepthStatus::Valid)
    } else {
        (0.0, DepthStatus::Behind)
    }
}

fn predicted(
    sample: &FlowSample,
    factors: &ScanlineFactors,
    motion: &MotionEstimate,
    rho: f64,
) -> Vec2 {
    let (a, b) = matrices_ab(&sample.x);
    (a * motion.v * rho + b * motion.w) * factors.beta(motion.k)
}

/// Flow samples with their scanline factors under one motion model.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub samples: &'a [FlowSample],
    pub factors: Vec<ScanlineFactors>,
    pub model: MotionModel,
}

impl<'a> Problem<'a> {
    pub fn new(samples: &'a [FlowSample], model: MotionModel, cam: &CameraConfig) -> Result<Self> {
        Ok(Self {
            samples,
            factors: model.all_factors(samples, cam)?,
            model,
        })
    }

    pub fn objective(&self, motion: &MotionEstimate, inv_depths: &[f64]) -> f64 {
        self.samples
            .iter()
            .zip(&self.factors)
            .zip(inv_depths)
            .map(|((s, f), &rho)| (s.u - predicted(s, f, motion, rho)).norm_squared())
            .sum()
    }

    pub fn update_depths(&self, motion: &MotionEstimate) -> (Vec<f64>, Vec<DepthStatus>) {
        self.samples
            .iter()
            .zip(&self.factors)
            .map(|(s, f)| optimal_inverse_depth(s, f, motion))
            .unzip()
    }

    /// Least squares in `v`; returns the unit-norm `v` and rescales the
    /// inverse depths so the objective is unchanged by the gauge fix.
    pub fn update_v(&self, k: f64, w: &Vec3, inv_depths: &mut [f64]) -> Result<Vec3> {
        let mut normal = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        let mut used = 0;
        for ((s, f), &rho) in self
            .samples
            .iter()
            .zip(&self.factors)
            .zip(inv_depths.iter())
        {
            if rho == 0.0 {
                continue;
            }
            let beta = f.beta(k);
            let (a, b) = matrices_ab(&s.x);
            let m = a * (beta * rho);
            let c = s.u - b * w * beta;
            normal += m.transpose() * m;
            rhs += m.transpose() * c;
            used += 1;
        }
        if used < 3 {
            return Err(Error::SingularBlock("translation"));
        }
        let v = solve_spd(&normal, &rhs).ok_or(Error::SingularBlock("translation"))?;
        let n = v.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::SingularBlock("translation"));
        }
        for rho in inv_depths.iter_mut() {
            *rho *= n;
        }
        Ok(v / n)
    }

    pub fn update_w(&self, k: f64, v: &Vec3, inv_depths: &[f64]) -> Result<Vec3> {
        let mut normal = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for ((s, f), &rho) in self.samples.iter().zip(&self.factors).zip(inv_depths) {
            let beta = f.beta(k);
            let (a, b) = matrices_ab(&s.x);
            let m = b * beta;
            let c = s.u - a * v * (beta * rho);
            normal += m.transpose() * m;
            rhs += m.transpose() * c;
        }
        solve_spd(&normal, &rhs).ok_or(Error::SingularBlock("rotation"))
    }

    /// Closed-form minimizer in `k`. Returns `current` when the data carry
    /// no information on `k` or the stationary point does not descend.
    pub fn update_k(&self, v: &Vec3, w: &Vec3, inv_depths: &[f64], current: f64) -> f64 {
        let (mut num, mut den, mut scale) = (0.0, 0.0, 0.0);
        for ((s, f), &rho) in self.samples.iter().zip(&self.factors).zip(inv_depths) {
            let (a_m, b_m) = matrices_ab(&s.x);
            let p = a_m * v * rho + b_m * w;
            let pp = p.norm_squared();
            let up = s.u.dot(&p);
            let d = f.b - f.a;
            num += d * (2.0 * up - 2.0 * f.a * pp);
            den += d * (f.b * pp - up);
            scale += d.abs() * (f.b.abs() * pp + up.abs());
        }
        if den.abs() <= 1e-12 * scale || scale == 0.0 {
            return current;
        }
        let k = num / den;
        if !(k.is_finite() && k > -2.0) {
            return current;
        }
        let before = self.objective(&MotionEstimate::new(*v, *w, current), inv_depths);
        let after = self.objective(&MotionEstimate::new(*v, *w, k), inv_depths);
        if after <= before {
            k
        } else {
            current
        }
    }
}

fn solve_spd(normal: &Matrix3<f64>, rhs: &Vector3<f64>) -> Option<Vector3<f64>> {
    let eig = normal.symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::MAX, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(hi > 0.0) || lo <= 1e-14 * hi {
        return None;
    }
    normal.cholesky().map(|c| c.solve(rhs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    /// Stop when the relative objective decrease over a cycle falls below this.
    pub rel_tol: f64,
    pub max_cycles: usize,
    /// After each cycle, try a Gauss-Newton step on the motion with the
    /// depths eliminated; the step is kept only if it lowers the objective.
    pub accelerate: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_cycles: 100,
            accelerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    MaxCycles,
    /// A block could not be solved; the state is the last valid one.
    BlockFailure(String),
}

#[derive(Debug, Clone)]
pub struct RefineState {
    pub motion: MotionEstimate,
    pub inv_depths: Vec<f64>,
    pub status: Vec<DepthStatus>,
    pub objective: f64,
    pub cycles: usize,
    /// Objective after every accepted update, starting with the initial
    /// depth solve.
    pub history: Vec<f64>,
    pub termination: Termination,
}

struct Driver<'p, 'a> {
    problem: &'p Problem<'a>,
    motion: MotionEstimate,
    rho: Vec<f64>,
    f: f64,
    history: Vec<f64>,
}

impl Driver<'_, '_> {
    /// Keeps a candidate only if it does not raise the objective.
    fn offer(&mut self, motion: MotionEstimate, rho: Vec<f64>) {
        let f = self.problem.objective(&motion, &rho);
        if f <= self.f {
            self.motion = motion;
            self.rho = rho;
            self.f = f;
            self.history.push(f);
        }
    }
}

/// Cycles Z → v → w → k (k only for the constant-acceleration model).
pub fn refine(
    samples: &[FlowSample],
    initial: &MotionEstimate,
    model: MotionModel,
    cam: &CameraConfig,
    opts: &RefineOptions,
) -> Result<RefineState> {
    let problem = Problem::new(samples, model, cam)?;
    let mut motion = initial.normalized();
    if model != MotionModel::ConstAccel {
        motion.k = 0.0;
    }
    let (rho, _) = problem.update_depths(&motion);
    let f = problem.objective(&motion, &rho);
    let mut d = Driver {
        problem: &problem,
        motion,
        rho,
        f,
        history: vec![f],
    };
    let mut cycles = 0;
    let mut termination = Termination::MaxCycles;

    while cycles < opts.max_cycles {
        cycles += 1;
        let start = d.f;

        let (rho, _) = problem.update_depths(&d.motion);
        d.offer(d.motion, rho);

        let mut rho = d.rho.clone();
        match problem.update_v(d.motion.k, &d.motion.w, &mut rho) {
            Ok(v) => d.offer(MotionEstimate { v, ..d.motion }, rho),
            Err(e) => {
                termination = Termination::BlockFailure(e.to_string());
                break;
            }
        }

        match problem.update_w(d.motion.k, &d.motion.v, &d.rho) {
            Ok(w) => d.offer(MotionEstimate { w, ..d.motion }, d.rho.clone()),
            Err(e) => {
                termination = Termination::BlockFailure(e.to_string());
                break;
            }
        }

        if model == MotionModel::ConstAccel {
            let k = problem.update_k(&d.motion.v, &d.motion.w, &d.rho, d.motion.k);
            d.offer(MotionEstimate { k, ..d.motion }, d.rho.clone());
        }

        if opts.accelerate {
            if let Some((m, r)) = gauss_newton_step(&problem, &d.motion, d.f) {
                d.offer(m, r);
            }
        }

        if start - d.f <= opts.rel_tol * start || d.f == 0.0 {
            termination = Termination::Converged;
            break;
        }
    }

    let status = problem.update_depths(&d.motion).1;
    Ok(RefineState {
        motion: d.motion,
        inv_depths: d.rho,
        status,
        objective: d.f,
        cycles,
        history: d.history,
        termination,
    })
}

/// Gauss-Newton on the reduced objective in which every inverse depth sits
/// at its closed-form optimum. Per sample the Jacobian in the motion is
/// projected onto the complement of `β A v`, which eliminates `ρ_i`. The
/// update of `v` is restricted to the tangent plane of the unit sphere.
/// Step halving until the objective drops.
fn gauss_newton_step(
    problem: &Problem<'_>,
    motion: &MotionEstimate,
    f: f64,
) -> Option<(MotionEstimate, Vec<f64>)> {
    let with_k = problem.model == MotionModel::ConstAccel;
    let n = if with_k { 6 } else { 5 };
    let v = motion.v;
    let seed = if v.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let t1 = v.cross(&seed).normalize();
    let t2 = v.cross(&t1);

    let mut normal = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (s, fac) in problem.samples.iter().zip(&problem.factors) {
        let (rho, st) = optimal_inverse_depth(s, fac, motion);
        if st != DepthStatus::Valid {
            continue;
        }
        let beta = fac.beta(motion.k);
        let (a, b) = matrices_ab(&s.x);
        let q = a * v * beta;
        let p = a * v * rho + b * motion.w;
        let r = s.u - p * beta;
        let mut j = DMatrix::<f64>::zeros(2, n);
        j.set_column(0, &(a * t1 * (beta * rho)));
        j.set_column(1, &(a * t2 * (beta * rho)));
        j.fixed_view_mut::<2, 3>(0, 2).copy_from(&(b * beta));
        if with_k {
            let dbeta = 2.0 * (fac.b - fac.a) / (2.0 + motion.k).powi(2);
            j.set_column(5, &(p * dbeta));
        }
        let qn = q / q.norm();
        let proj = nalgebra::Matrix2::identity() - qn * qn.transpose();
        let jp = proj * j;
        normal += jp.transpose() * &jp;
        rhs += jp.transpose() * (proj * r);
    }
    let delta = normal.cholesky()?.solve(&rhs);
    if !delta.iter().all(|d| d.is_finite()) {
        return None;
    }

    let mut t = 1.0;
    for _ in 0..20 {
        let dv = (t1 * delta[0] + t2 * delta[1]) * t;
        let dw = Vec3::new(delta[2], delta[3], delta[4]) * t;
        let k = if with_k {
            motion.k + t * delta[5]
        } else {
            motion.k
        };
        if k > -2.0 {
            let cand = MotionEstimate::new((v + dv).normalize(), motion.w + dw, k);
            let (rho, _) = problem.update_depths(&cand);
            if problem.objective(&cand, &rho) < f {
                return Some((cand, rho));
            }
        }
        t *= 0.5;
    }
    None
}

/// Depth for every valid pixel of a dense flow field. Pixels whose depth
/// is unobservable or non-positive are left invalid (NaN).
pub fn dense_depth(
    flow: &FlowField,
    motion: &MotionEstimate,
    model: MotionModel,
    cam: &CameraConfig,
) -> DepthMap {
    let mut depth = DepthMap::new(flow.width, flow.height);
    for y in 0..flow.height {
        for x in 0..flow.width {
            let [du, dv] = flow.get(x, y);
            if !(du.is_finite() && dv.is_finite()) {
                continue;
            }
            let Ok(sample) = FlowSample::from_pixels(x as f64, y as f64, du, dv, cam) else {
                continue;
            };
            let Ok(factors) = model.factors(&sample, cam) else {
                continue;
            };
            let (rho, st) = optimal_inverse_depth(&sample, &factors, motion);
            if st == DepthStatus::Valid {
                depth.set(x, y, 1.0 / rho);
            }
        }
    }
    depth
}

/// Residual flow of a sample at a given inverse depth, for diagnostics.
pub fn residual_flow(
    sample: &FlowSample,
    factors: &ScanlineFactors,
    motion: &MotionEstimate,
    rho: f64,
) -> Vec2 {
    sample.u - predicted(sample, factors, motion, rho)
}
