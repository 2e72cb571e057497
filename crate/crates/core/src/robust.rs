//! RANSAC over the minimal solvers, re-projection residuals and
//! forward-backward flow filtering.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{CameraConfig, FlowSample, MotionEstimate};
use crate::gs;
use crate::raster::FlowField;
use crate::refine::{optimal_inverse_depth, residual_flow, DepthStatus};
use crate::rs::{self, MotionModel, RootWindow, ScanlineFactors};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on the residual, normalized image plane.
    pub threshold: f64,
    /// Minimal sample size; `None` uses the model's minimum.
    pub sample_size: Option<usize>,
    pub root_window: RootWindow,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            threshold: 1e-3,
            sample_size: None,
            root_window: RootWindow::default(),
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self, model: MotionModel) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.sample_size.is_some_and(|m| m < model.min_samples()) {
            return Err(Error::InvalidConfig(format!(
                "sample size below the {} minimum of {}",
                model,
                model.min_samples()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RansacStats {
    pub iterations: usize,
    /// Iterations whose minimal solve produced at least one model.
    pub solved: usize,
    /// Total hypotheses scored.
    pub hypotheses: usize,
    pub best_iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub motion: MotionEstimate,
    /// Indices into the input samples, ascending.
    pub inliers: Vec<usize>,
    /// Residual of every input sample under `motion`.
    pub residuals: Vec<f64>,
    /// Samples whose optimal depth under `motion` was not positive.
    pub cheirality_violations: usize,
    pub stats: RansacStats,
}

impl RansacResult {
    pub fn mean_inlier_residual(&self) -> f64 {
        if self.inliers.is_empty() {
            return f64::NAN;
        }
        self.inliers.iter().map(|&i| self.residuals[i]).sum::<f64>() / self.inliers.len() as f64
    }
}

/// Re-projection residual `‖u − β(k)(A v ρ* + B w)‖` at the closed-form
/// optimal inverse depth. A non-positive optimum is evaluated at `ρ = 0`
/// and reported through the returned status.
pub fn residual(
    sample: &FlowSample,
    motion: &MotionEstimate,
    factors: &ScanlineFactors,
) -> (f64, DepthStatus) {
    let (rho, status) = optimal_inverse_depth(sample, factors, motion);
    (residual_flow(sample, factors, motion, rho).norm(), status)
}

/// All motion hypotheses of one minimal solve.
pub fn minimal_solve(
    samples: &[FlowSample],
    model: MotionModel,
    cam: &CameraConfig,
    window: RootWindow,
) -> Result<Vec<MotionEstimate>> {
    match model {
        MotionModel::GlobalShutter => {
            let e = gs::solve_linear(samples)?;
            Ok(vec![gs::recover_motion(&e, samples)?])
        }
        MotionModel::ConstVelocity => Ok(vec![rs::solve_const_velocity(samples, cam)?]),
        MotionModel::ConstAccel => Ok(rs::solve_const_accel_in(samples, cam, window)?
            .into_iter()
            .map(|c| c.motion)
            .collect()),
    }
}

struct Scored {
    motion: MotionEstimate,
    inliers: usize,
    mean: f64,
    iteration: usize,
}

impl Scored {
    /// More inliers, then lower mean inlier residual, then earlier iteration.
    fn beats(&self, other: &Scored) -> bool {
        use std::cmp::Ordering::*;
        match self.inliers.cmp(&other.inliers) {
            Greater => true,
            Less => false,
            Equal => match self.mean.total_cmp(&other.mean) {
                Less => true,
                Greater => false,
                Equal => self.iteration < other.iteration,
            },
        }
    }
}

fn score(
    samples: &[FlowSample],
    factors: &[ScanlineFactors],
    motion: &MotionEstimate,
    threshold: f64,
) -> (usize, f64) {
    let (mut count, mut sum) = (0usize, 0.0);
    for (s, f) in samples.iter().zip(factors) {
        let (r, _) = residual(s, motion, f);
        if r <= threshold {
            count += 1;
            sum += r;
        }
    }
    let mean = if count > 0 {
        sum / count as f64
    } else {
        f64::INFINITY
    };
    (count, mean)
}

/// Seeded RANSAC. Iteration `i` draws its minimal sample from the ChaCha8
/// stream `i` of the seed, so results do not depend on thread scheduling.
pub fn ransac(
    samples: &[FlowSample],
    model: MotionModel,
    cam: &CameraConfig,
    config: &RansacConfig,
) -> Result<RansacResult> {
    config.validate(model)?;
    let m = config.sample_size.unwrap_or(model.min_samples());
    if samples.len() < m {
        return Err(Error::NotEnoughSamples {
            needed: m,
            got: samples.len(),
        });
    }
    let factors = model.all_factors(samples, cam)?;

    let per_iter: Vec<(usize, Option<Scored>)> = (0..config.iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(it as u64);
            let picked: Vec<FlowSample> = index::sample(&mut rng, samples.len(), m)
                .into_iter()
                .map(|i| samples[i])
                .collect();
            let Ok(hyps) = minimal_solve(&picked, model, cam, config.root_window) else {
                return (0, None);
            };
            let mut best: Option<Scored> = None;
            for motion in &hyps {
                let (inliers, mean) = score(samples, &factors, motion, config.threshold);
                let cand = Scored {
                    motion: *motion,
                    inliers,
                    mean,
                    iteration: it,
                };
                if best.as_ref().is_none_or(|b| cand.beats(b)) {
                    best = Some(cand);
                }
            }
            (hyps.len(), best)
        })
        .collect();

    let mut stats = RansacStats {
        iterations: config.iterations,
        ..Default::default()
    };
    let mut best: Option<Scored> = None;
    for (n, cand) in per_iter {
        stats.hypotheses += n;
        if let Some(c) = cand {
            stats.solved += 1;
            if best.as_ref().is_none_or(|b| c.beats(b)) {
                best = Some(c);
            }
        }
    }
    let best = best.ok_or(Error::RobustFailure)?;
    stats.best_iteration = best.iteration;

    let mut residuals = Vec::with_capacity(samples.len());
    let mut inliers = Vec::new();
    let mut cheirality_violations = 0;
    for (i, (s, f)) in samples.iter().zip(&factors).enumerate() {
        let (r, st) = residual(s, &best.motion, f);
        if st == DepthStatus::Behind {
            cheirality_violations += 1;
        }
        if r <= config.threshold {
            inliers.push(i);
        }
        residuals.push(r);
    }
    Ok(RansacResult {
        motion: best.motion,
        inliers,
        residuals,
        cheirality_violations,
        stats,
    })
}

/// A flow sample kept by [`filter_flows`], with its pixel index and
/// forward-backward error in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredSample {
    pub index: usize,
    pub fb_error: f64,
    pub sample: FlowSample,
}

/// Ranks pixels by forward-backward consistency
/// `‖u_f(p) + u_b(p + u_f(p))‖` and keeps the best `keep_fraction` of
/// them (at least one). Ties keep row-major order.
pub fn filter_flows(
    forward: &FlowField,
    backward: &FlowField,
    keep_fraction: f64,
    cam: &CameraConfig,
) -> Result<Vec<FilteredSample>> {
    if (forward.width, forward.height) != (backward.width, backward.height) {
        return Err(Error::DimensionMismatch {
            expected: (forward.width, forward.height),
            found: (backward.width, backward.height),
        });
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let mut ranked: Vec<FilteredSample> = forward
        .samples(cam)
        .into_iter()
        .filter_map(|(index, sample)| {
            let (x, y) = (index % forward.width, index / forward.width);
            let [fu, fv] = forward.get(x, y);
            let [bu, bv] = backward.bilinear(x as f64 + fu, y as f64 + fv)?;
            let fb_error = (fu + bu).hypot(fv + bv);
            fb_error.is_finite().then_some(FilteredSample {
                index,
                fb_error,
                sample,
            })
        })
        .collect();
    if ranked.is_empty() {
        return Err(Error::EmptySelection);
    }
    ranked.sort_by(|a, b| a.fb_error.total_cmp(&b.fb_error));
    let keep = ((keep_fraction * ranked.len() as f64).round() as usize).max(1);
    ranked.truncate(keep);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project_flow, Vec2, Vec3};
    use crate::rs::scanline_factors;
    use rand::Rng;

    fn cam() -> CameraConfig {
        CameraConfig::centered(0.8, 900, 900, 810.0).unwrap()
    }

    fn truth() -> (Vec3, Vec3) {
        (
            Vec3::new(1.0, 1.0, 0.0).normalize() * 0.15,
            Vec3::new(1.0, 1.0, 1.0).normalize() * 3f64.to_radians(),
        )
    }

    /// Consistent samples for `u = β(k)(A v/Z + B w)`.
    fn consistent(seed: u64, n: usize, k: f64, c: &CameraConfig) -> Vec<FlowSample> {
        let (v, w) = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let x = Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let z = rng.random_range(2.0..10.0);
            let base = project_flow(&x, z, &v, &w).unwrap();
            let mut s = FlowSample {
                x,
                u: base,
                y1: c.row_of(&x),
                y2: c.row_of(&x),
            };
            for _ in 0..50 {
                s.u = base * scanline_factors(&s, c).unwrap().beta(k);
                s.y2 = c.row_of(&(x + s.u));
            }
            if let Ok(s) = FlowSample::new(x, s.u, c) {
                out.push(s);
            }
        }
        out
    }

    fn corrupt(samples: &mut [FlowSample], frac: f64, seed: u64, c: &CameraConfig) -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_out = (frac * samples.len() as f64).round() as usize;
        let mut is_out = vec![false; samples.len()];
        for i in index::sample(&mut rng, samples.len(), n_out) {
            let s = &mut samples[i];
            let u = Vec2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            *s = FlowSample::new(s.x, u, c).unwrap();
            is_out[i] = true;
        }
        is_out
    }

    #[test]
    fn residual_cases() {
        let c = cam();
        let (v, w) = truth();
        let m = MotionEstimate::new(v.normalize(), w, 0.1);
        for s in consistent(1, 50, 0.1, &c) {
            let f = scanline_factors(&s, &c).unwrap();
            assert!(residual(&s, &m, &f).0 < 1e-12);
            // Noise along one axis: the depth absorbs only its component
            // along βAv, leaving |δ · n| with n normal to that direction.
            let mut noisy = s;
            noisy.u.x += 0.002;
            let r = residual(&noisy, &m, &f).0;
            let (a, _) = crate::geom::matrices_ab(&s.x);
            let q = a * m.v;
            let expected = 0.002 * q.y.abs() / q.norm();
            assert!(r > 0.0 && r <= 0.002 + 1e-15);
            assert!((r - expected).abs() < 1e-12);
        }
        let zero = FlowSample::new(Vec2::new(0.1, -0.2), Vec2::zeros(), &c).unwrap();
        let still = MotionEstimate::new(Vec3::zeros(), Vec3::zeros(), 0.0);
        assert_eq!(residual(&zero, &still, &ScanlineFactors::UNIT).0, 0.0);
    }

    #[test]
    fn residual_invariant_to_gauge() {
        let c = cam();
        let (v, w) = truth();
        for s in consistent(2, 20, 0.0, &c) {
            let f = scanline_factors(&s, &c).unwrap();
            let mut s2 = s;
            s2.u += Vec2::new(3e-4, -1e-4);
            let a = residual(&s2, &MotionEstimate::new(v, w, 0.0), &f).0;
            let b = residual(&s2, &MotionEstimate::new(v * 7.5, w, 0.0), &f).0;
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ransac_clean_data_keeps_everything() {
        let c = cam();
        let s = consistent(3, 120, 0.0, &c);
        let r = ransac(
            &s,
            MotionModel::ConstVelocity,
            &c,
            &RansacConfig {
                iterations: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.inliers, (0..120).collect::<Vec<_>>());
        assert!(r.residuals.iter().all(|&x| x <= 1e-3));
    }

    #[test]
    fn ransac_accel_with_outliers() {
        let c = cam();
        let mut s = consistent(4, 300, 0.1, &c);
        let is_out = corrupt(&mut s, 0.3, 44, &c);
        let r = ransac(
            &s,
            MotionModel::ConstAccel,
            &c,
            &RansacConfig {
                seed: 7,
                ..Default::default()
            },
        )
        .unwrap();
        let (v, w) = truth();
        assert!((r.motion.k - 0.1).abs() < 1e-4);
        assert!(r.motion.v.angle(&v).to_degrees() < 0.1);
        assert!((r.motion.w - w).norm() < 1e-4);
        for (i, &o) in is_out.iter().enumerate() {
            let inlier = r.inliers.binary_search(&i).is_ok();
            // A random outlier can fall within the threshold by chance;
            // every clean sample must be kept.
            if !o {
                assert!(inlier, "clean sample {i} rejected");
            } else if inlier {
                assert!(r.residuals[i] <= 1e-3);
            }
        }
    }

    #[test]
    fn ransac_is_deterministic() {
        let c = cam();
        let mut s = consistent(5, 150, 0.0, &c);
        corrupt(&mut s, 0.3, 55, &c);
        let cfg = RansacConfig {
            iterations: 60,
            seed: 99,
            ..Default::default()
        };
        let a = ransac(&s, MotionModel::ConstVelocity, &c, &cfg).unwrap();
        let b = ransac(&s, MotionModel::ConstVelocity, &c, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inliers_grow_with_threshold() {
        let c = cam();
        let mut s = consistent(6, 100, 0.0, &c);
        corrupt(&mut s, 0.5, 66, &c);
        let (v, w) = truth();
        let m = MotionEstimate::new(v, w, 0.0);
        let f: Vec<_> = s.iter().map(|x| scanline_factors(x, &c).unwrap()).collect();
        let mut last = 0;
        for t in [1e-5, 1e-4, 1e-3, 1e-2, 1e-1] {
            let (n, _) = score(&s, &f, &m, t);
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn ransac_rejects_bad_input() {
        let c = cam();
        let s = consistent(7, 5, 0.0, &c);
        assert!(matches!(
            ransac(&s, MotionModel::ConstVelocity, &c, &RansacConfig::default()),
            Err(Error::NotEnoughSamples { needed: 8, got: 5 })
        ));
        let bad = RansacConfig {
            threshold: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            ransac(&s, MotionModel::ConstVelocity, &c, &bad),
            Err(Error::InvalidConfig(_))
        ));
        // All-zero flow has no translation; every minimal solve fails.
        let zero: Vec<_> = (0..20)
            .map(|i| {
                FlowSample::new(
                    Vec2::new(-0.4 + 0.04 * i as f64, 0.3 - 0.03 * i as f64),
                    Vec2::zeros(),
                    &c,
                )
                .unwrap()
            })
            .collect();
        let cfg = RansacConfig {
            iterations: 5,
            ..Default::default()
        };
        assert!(matches!(
            ransac(&zero, MotionModel::ConstVelocity, &c, &cfg),
            Err(Error::RobustFailure)
        ));
    }

    #[test]
    fn filter_translation_field_ties_in_row_major_order() {
        let c = CameraConfig::centered(0.5, 10, 10, 20.0).unwrap();
        let fwd = FlowField::from_fn(10, 10, |_, _| [0.5, 0.25]);
        let bwd = FlowField::from_fn(10, 10, |_, _| [-0.5, -0.25]);
        let kept = filter_flows(&fwd, &bwd, 0.2, &c).unwrap();
        // Last column and row leave the image or the backward field.
        let valid = 9 * 9;
        assert_eq!(kept.len(), (0.2 * valid as f64).round() as usize);
        assert!(kept.iter().all(|k| k.fb_error == 0.0));
        let idx: Vec<_> = kept.iter().map(|k| k.index).collect();
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(idx, sorted);
        assert_eq!(idx[0], 0);
    }

    #[test]
    fn filter_drops_corrupted_pixel() {
        let c = CameraConfig::centered(0.5, 6, 6, 20.0).unwrap();
        let mut fwd = FlowField::from_fn(6, 6, |_, _| [0.0, 0.0]);
        let bwd = FlowField::from_fn(6, 6, |_, _| [0.0, 0.0]);
        fwd.set(2, 2, [0.8, 0.3]);
        let all = filter_flows(&fwd, &bwd, 1.0, &c).unwrap();
        assert_eq!(all.last().unwrap().index, 2 * 6 + 2);
        let kept = filter_flows(&fwd, &bwd, 0.9, &c).unwrap();
        assert!(kept.iter().all(|k| k.index != 14));
    }

    #[test]
    fn filter_errors() {
        let c = CameraConfig::centered(0.5, 4, 4, 20.0).unwrap();
        let a = FlowField::new(4, 4);
        assert!(matches!(
            filter_flows(&a, &a, 0.2, &c),
            Err(Error::EmptySelection)
        ));
        let b = FlowField::new(4, 3);
        assert!(matches!(
            filter_flows(&a, &b, 0.2, &c),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            filter_flows(&a, &a, 0.0, &c),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn filter_prefers_accurate_flows() {
        // Smooth field with noise on a random subset; the kept set's
        // endpoint error against the clean field is no larger on average.
        let c = CameraConfig::centered(0.5, 40, 40, 50.0).unwrap();
        let clean = FlowField::from_fn(40, 40, |x, y| {
            [0.5 + 0.01 * y as f64, -0.3 + 0.02 * x as f64]
        });
        let back = FlowField::from_fn(40, 40, |x, y| {
            // Approximate inverse: the forward flow evaluated at the same pixel, negated.
            let [u, v] = clean.get(x, y);
            [-u, -v]
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut noisy = clean.clone();
        for i in 0..noisy.data.len() {
            if rng.random_bool(0.3) {
                noisy.data[i][0] += rng.random_range(-2.0..2.0);
                noisy.data[i][1] += rng.random_range(-2.0..2.0);
            }
        }
        let epe = |set: &[FilteredSample]| {
            set.iter()
                .map(|k| {
                    let a = noisy.data[k.index];
                    let b = clean.data[k.index];
                    (a[0] - b[0]).hypot(a[1] - b[1])
                })
                .sum::<f64>()
                / set.len() as f64
        };
        let all = filter_flows(&noisy, &back, 1.0, &c).unwrap();
        let kept = filter_flows(&noisy, &back, 0.2, &c).unwrap();
        assert!(epe(&kept) <= epe(&all));
    }
}
