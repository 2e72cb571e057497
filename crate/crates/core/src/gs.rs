//! Linear 8-point solver for the global-shutter differential epipolar
//! constraint `uᵀ v̂ x − xᵀ s x = 0` and recovery of `(v, w)` from the
//! resulting epipolar vector.

use nalgebra::{DMatrix, Matrix6x3, SVector};

use crate::error::{Error, Result};
use crate::geom::{
    matrices_ab, symmetric_s, EpipolarVector, FlowSample, MotionEstimate, Vec3, Vec9,
};

/// Smallest relative singular value accepted for the 8th direction of the
/// stacked system; anything below means the null space is not 1-D.
const RANK_TOL: f64 = 1e-10;

/// Below this norm of the v-block (on a unit epipolar vector) the
/// translation direction is treated as unobservable.
const PURE_ROTATION_TOL: f64 = 1e-9;

/// The translational block `x̃ × ũ` of a constraint row.
pub(crate) fn v_block(sample: &FlowSample) -> Vec3 {
    let (x, y) = (sample.x.x, sample.x.y);
    let (ux, uy) = (sample.u.x, sample.u.y);
    Vec3::new(-uy, ux, x * uy - y * ux)
}

/// The symmetric block: `−x̃ᵀ s x̃` expanded over the upper triangle of `s`.
pub(crate) fn s_block(sample: &FlowSample) -> SVector<f64, 6> {
    let (x, y) = (sample.x.x, sample.x.y);
    SVector::<f64, 6>::from_column_slice(&[-x * x, -2.0 * x * y, -2.0 * x, -y * y, -2.0 * y, -1.0])
}

/// Coefficients of the constraint in the `[v; s]` ordering.
pub fn gs_row(sample: &FlowSample) -> Vec9 {
    let mut z = Vec9::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&v_block(sample));
    z.fixed_rows_mut::<6>(3).copy_from(&s_block(sample));
    z
}

/// Stacked constraint rows, one per sample.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub rows: DMatrix<f64>,
}

impl LinearSystem {
    pub fn from_rows<I: IntoIterator<Item = Vec9>>(rows: I) -> Self {
        let rows: Vec<Vec9> = rows.into_iter().collect();
        let mut m = DMatrix::zeros(rows.len(), 9);
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).copy_from(&r.transpose());
        }
        Self { rows: m }
    }

    pub fn from_samples(samples: &[FlowSample]) -> Self {
        Self::from_rows(samples.iter().map(gs_row))
    }

    /// Least-singular right vector of the row-normalized system.
    pub fn null_vector(&self) -> Result<(EpipolarVector, f64)> {
        let n = self.rows.nrows();
        if n < 8 {
            return Err(Error::NotEnoughSamples { needed: 8, got: n });
        }
        // Pad to at least 9 rows so the SVD exposes the full right basis.
        let mut m = DMatrix::zeros(n.max(9), 9);
        for i in 0..n {
            let row = self.rows.row(i);
            let norm = row.norm();
            if norm > 0.0 {
                m.row_mut(i).copy_from(&(row / norm));
            }
        }
        null_vector_of(&m)
    }
}

/// Null vector and least singular value of a matrix with ≥ 9 rows and
/// exactly 9 columns.
pub(crate) fn null_vector_of(m: &DMatrix<f64>) -> Result<(EpipolarVector, f64)> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let largest = svd.singular_values[order[0]];
    let smallest = *order.last().unwrap();
    if largest == 0.0 || svd.singular_values[order[7]] < RANK_TOL * largest {
        return Err(Error::DegenerateConfiguration);
    }
    let e = Vec9::from_iterator(vt.row(smallest).iter().copied());
    Ok((
        EpipolarVector(e).canonicalize(),
        svd.singular_values[smallest] / largest,
    ))
}

/// Solves the linear 8-point system over ≥ 8 samples.
pub fn solve_linear(samples: &[FlowSample]) -> Result<EpipolarVector> {
    LinearSystem::from_samples(samples)
        .null_vector()
        .map(|(e, _)| e)
}

/// Linear map `w ↦ vech(s(v, w))` for a fixed `v`, with off-diagonal rows
/// weighted by √2 so the least-squares fit is in Frobenius norm.
fn s_design(v: &Vec3) -> Matrix6x3<f64> {
    let mut m = Matrix6x3::zeros();
    for j in 0..3 {
        let s = symmetric_s(v, &Vec3::ith(j, 1.0));
        let col = vech_weighted(&s);
        m.set_column(j, &col);
    }
    m
}

fn vech_weighted(s: &crate::geom::Mat3) -> SVector<f64, 6> {
    let r2 = std::f64::consts::SQRT_2;
    SVector::<f64, 6>::from_column_slice(&[
        s[(0, 0)],
        r2 * s[(0, 1)],
        r2 * s[(0, 2)],
        s[(1, 1)],
        r2 * s[(1, 2)],
        s[(2, 2)],
    ])
}

/// Recovers `(v, w)` from an epipolar vector, choosing the sign of `v` by a
/// positive-depth vote over `samples`. Flows are taken as global shutter.
pub fn recover_motion(e: &EpipolarVector, samples: &[FlowSample]) -> Result<MotionEstimate> {
    recover_motion_scaled(e, samples, |_| 1.0)
}

/// As [`recover_motion`] with a per-sample motion scale `β_i` applied to
/// the predicted flow during the depth vote.
pub fn recover_motion_scaled<F>(
    e: &EpipolarVector,
    samples: &[FlowSample],
    beta: F,
) -> Result<MotionEstimate>
where
    F: Fn(usize) -> f64,
{
    let e = e.canonicalize();
    let v_raw = e.v();
    let n = v_raw.norm();
    if n < PURE_ROTATION_TOL {
        return Err(Error::NearPureRotation);
    }
    let mut v = v_raw / n;
    let s = e.s() / n;
    let design = s_design(&v);
    let rhs = vech_weighted(&s);
    let w = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|_| Error::DegenerateConfiguration)?;

    if cheirality_votes(samples, &v, &w, &beta) < 0 {
        v = -v;
    }
    Ok(MotionEstimate::constant_velocity(v, w))
}

/// Positive-minus-negative count of per-sample optimal depths.
fn cheirality_votes<F: Fn(usize) -> f64>(
    samples: &[FlowSample],
    v: &Vec3,
    w: &Vec3,
    beta: &F,
) -> i64 {
    samples
        .iter()
        .enumerate()
        .map(|(i, smp)| {
            let b = beta(i);
            let (a_m, b_m) = matrices_ab(&smp.x);
            let q = a_m * v * b;
            let c = smp.u - b_m * w * b;
            let d = c.dot(&q);
            if q.norm_squared() < 1e-24 || d == 0.0 {
                0
            } else if d > 0.0 {
                1
            } else {
                -1
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project_flow, CameraConfig, Vec2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraConfig {
        CameraConfig::centered(0.0, 900, 900, 810.0).unwrap()
    }

    fn random_motion(rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let w = Vec3::new(
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        );
        (v.normalize() * 0.1, w)
    }

    fn samples(rng: &mut ChaCha8Rng, n: usize, v: &Vec3, w: &Vec3) -> (Vec<FlowSample>, Vec<f64>) {
        let mut out = Vec::new();
        let mut depths = Vec::new();
        while out.len() < n {
            let x = Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let z = rng.random_range(2.0..10.0);
            let u = project_flow(&x, z, v, w).unwrap();
            if let Ok(s) = FlowSample::new(x, u, &cam()) {
                out.push(s);
                depths.push(z);
            }
        }
        (out, depths)
    }

    #[test]
    fn row_annihilates_true_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (v, w) = random_motion(&mut rng);
            let e = EpipolarVector::from_motion(&v, &w);
            let (s, _) = samples(&mut rng, 5, &v, &w);
            for smp in &s {
                assert!(gs_row(smp).dot(&e.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_structure() {
        let s = FlowSample {
            x: Vec2::zeros(),
            u: Vec2::zeros(),
            y1: 0.0,
            y2: 0.0,
        };
        assert_eq!(gs_row(&s).fixed_rows::<3>(0).into_owned(), Vec3::zeros());
        let s = FlowSample {
            x: Vec2::new(0.1, -0.3),
            u: Vec2::new(0.01, 0.02),
            y1: 0.0,
            y2: 0.0,
        };
        let d = s.scaled_flow(2.0);
        let (r, r2) = (gs_row(&s), gs_row(&d));
        for i in 0..3 {
            assert_eq!(r2[i], 2.0 * r[i]);
        }
        for i in 3..9 {
            assert_eq!(r2[i], r[i]);
        }
    }

    #[test]
    fn eight_point_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (v, w) = random_motion(&mut rng);
            let truth = EpipolarVector::from_motion(&v, &w);
            let (s, _) = samples(&mut rng, 8, &v, &w);
            let e = solve_linear(&s).unwrap();
            assert!(e.angle_to(&truth) < 1e-6);
            let (s50, _) = samples(&mut rng, 50, &v, &w);
            let e50 = solve_linear(&s50).unwrap();
            assert!(e50.angle_to(&truth) < 1e-6);
            let sys = LinearSystem::from_samples(&s50);
            for i in 0..sys.rows.nrows() {
                let row = sys.rows.row(i);
                assert!(row.dot(&e50.0.transpose()).abs() <= 1e-10 * row.norm());
            }
        }
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let s = FlowSample {
            x: Vec2::new(0.1, 0.2),
            u: Vec2::new(0.01, 0.0),
            y1: 0.0,
            y2: 0.0,
        };
        assert!(matches!(
            solve_linear(&[s; 10]),
            Err(Error::DegenerateConfiguration)
        ));
        assert!(matches!(
            solve_linear(&[s; 3]),
            Err(Error::NotEnoughSamples { .. })
        ));
    }

    #[test]
    fn round_trip_recovers_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (v, w) = random_motion(&mut rng);
            let v = v.normalize();
            let (s, _) = samples(&mut rng, 20, &v, &w);
            let e = EpipolarVector::from_motion(&v, &w).canonicalize();
            let m = recover_motion(&e, &s).unwrap();
            assert!((m.v - v).norm() < 1e-10, "{} vs {}", m.v, v);
            assert!((m.w - w).norm() < 1e-10);
            // The flipped vector resolves to the same direction.
            let m2 = recover_motion(&EpipolarVector(-e.0), &s).unwrap();
            assert!((m2.v - v).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_rotation_recovers_zero() {
        let v = Vec3::new(0.3, 0.1, -0.2);
        let e = EpipolarVector::from_motion(&v, &Vec3::zeros());
        let m = recover_motion(&e, &[]).unwrap();
        assert!(m.w.norm() < 1e-15);
    }

    #[test]
    fn pure_rotation_is_rejected() {
        let mut e = Vec9::zeros();
        e[3] = 1.0;
        assert!(matches!(
            recover_motion(&EpipolarVector(e), &[]),
            Err(Error::NearPureRotation)
        ));
    }

    #[test]
    fn depth_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (v, w) = random_motion(&mut rng);
        let (s, depths) = samples(&mut rng, 30, &v, &w);
        let m1 = recover_motion(&solve_linear(&s).unwrap(), &s).unwrap();
        // Scaling every depth by c is the same as scaling v by 1/c.
        let scaled: Vec<FlowSample> = s
            .iter()
            .zip(&depths)
            .map(|(smp, z)| FlowSample {
                u: project_flow(&smp.x, z * 3.0, &v, &w).unwrap(),
                ..*smp
            })
            .collect();
        let m2 = recover_motion(&solve_linear(&scaled).unwrap(), &scaled).unwrap();
        assert!((m1.v - m2.v).norm() < 1e-8);
        assert!((m1.w - m2.w).norm() < 1e-8);
        assert!((m1.v - v.normalize()).norm() < 1e-8);
    }
}
