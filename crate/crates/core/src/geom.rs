//! Geometric primitives shared by every solver: the instantaneous flow
//! model `u = A(x) v / Z + B(x) w`, the symmetric epipolar matrix and the
//! camera/scanline bookkeeping needed to talk about rolling-shutter rows.
//!
//! All solver math works on the normalized image plane. Pixel units only
//! appear in [`CameraConfig`] conversions and in the scanline rows carried
//! by [`FlowSample`].

use nalgebra::{Matrix2x3, Matrix3, SVector, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec9 = SVector<f64, 9>;

/// Intrinsics plus rolling-shutter readout parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    /// Readout time ratio `T_readout / (T_readout + T_delay)`.
    pub gamma: f64,
    /// Number of scanlines.
    pub h: usize,
    /// Image width in pixels.
    pub width: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraConfig {
    pub fn new(
        gamma: f64,
        width: usize,
        h: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
    ) -> Result<Self> {
        let cfg = Self {
            gamma,
            h,
            width,
            fx,
            fy,
            cx,
            cy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Square-pixel camera with the principal point at the image centre.
    pub fn centered(gamma: f64, width: usize, h: usize, focal: f64) -> Result<Self> {
        Self::new(
            gamma,
            width,
            h,
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (h as f64 - 1.0) / 2.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma = {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.h < 2 || self.width < 1 {
            return Err(Error::InvalidConfig(format!(
                "image size {}x{} too small",
                self.width, self.h
            )));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidConfig(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Same intrinsics with a different readout ratio.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..*self }
    }

    pub fn to_normalized(&self, px: f64, py: f64) -> Vec2 {
        Vec2::new((px - self.cx) / self.fx, (py - self.cy) / self.fy)
    }

    pub fn to_pixel(&self, x: &Vec2) -> (f64, f64) {
        (self.fx * x.x + self.cx, self.fy * x.y + self.cy)
    }

    /// Pixel row of a normalized point.
    pub fn row_of(&self, x: &Vec2) -> f64 {
        self.fy * x.y + self.cy
    }

    /// Normalized flow to pixel displacement.
    pub fn flow_to_pixels(&self, u: &Vec2) -> Vec2 {
        Vec2::new(u.x * self.fx, u.y * self.fy)
    }

    pub fn flow_to_normalized(&self, du: f64, dv: f64) -> Vec2 {
        Vec2::new(du / self.fx, dv / self.fy)
    }

    fn contains_row(&self, y: f64) -> bool {
        y >= 0.0 && y < self.h as f64
    }
}

/// One normalized image position with its flow and the scanline rows of
/// both endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub x: Vec2,
    pub u: Vec2,
    /// Pixel row of `x` in frame i.
    pub y1: f64,
    /// Pixel row of `x + u` in frame i+1.
    pub y2: f64,
}

impl FlowSample {
    /// Builds a sample, deriving both scanline rows through the intrinsics.
    pub fn new(x: Vec2, u: Vec2, cam: &CameraConfig) -> Result<Self> {
        let y1 = cam.row_of(&x);
        let y2 = cam.row_of(&(x + u));
        if !cam.contains_row(y1) || !cam.contains_row(y2) {
            return Err(Error::Domain(format!(
                "scanline rows ({y1}, {y2}) outside [0, {})",
                cam.h
            )));
        }
        Ok(Self { x, u, y1, y2 })
    }

    /// Builds a sample from pixel position and pixel displacement.
    pub fn from_pixels(px: f64, py: f64, du: f64, dv: f64, cam: &CameraConfig) -> Result<Self> {
        Self::new(
            cam.to_normalized(px, py),
            cam.flow_to_normalized(du, dv),
            cam,
        )
    }

    /// Homogeneous lifting `(x, y, 1)`.
    pub fn x_h(&self) -> Vec3 {
        Vec3::new(self.x.x, self.x.y, 1.0)
    }

    /// Same sample with the flow scaled by `factor`; rows are kept.
    pub fn scaled_flow(&self, factor: f64) -> Self {
        Self {
            u: self.u * factor,
            ..*self
        }
    }
}

/// Relative motion between the first scanlines of two frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionEstimate {
    /// Translation direction; unit norm once normalized.
    pub v: Vec3,
    /// Rotation vector (radians).
    pub w: Vec3,
    /// Acceleration factor; zero for constant velocity.
    pub k: f64,
}

impl MotionEstimate {
    pub fn new(v: Vec3, w: Vec3, k: f64) -> Self {
        Self { v, w, k }
    }

    pub fn constant_velocity(v: Vec3, w: Vec3) -> Self {
        Self { v, w, k: 0.0 }
    }

    /// Unit-translation copy. A zero translation is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.v.norm();
        if n > 0.0 {
            Self {
                v: self.v / n,
                ..*self
            }
        } else {
            *self
        }
    }
}

/// `[v_x, v_y, v_z, s1..s6]` with `s` stored as its upper triangle
/// `s11, s12, s13, s22, s23, s33`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarVector(pub Vec9);

impl EpipolarVector {
    pub fn from_motion(v: &Vec3, w: &Vec3) -> Self {
        let s = symmetric_s(v, w);
        Self(Vec9::from_column_slice(&[
            v.x,
            v.y,
            v.z,
            s[(0, 0)],
            s[(0, 1)],
            s[(0, 2)],
            s[(1, 1)],
            s[(1, 2)],
            s[(2, 2)],
        ]))
    }

    /// Unit norm with the first nonzero component positive.
    pub fn canonicalize(&self) -> Self {
        let n = self.0.norm();
        if n == 0.0 {
            return *self;
        }
        let mut e = self.0 / n;
        if let Some(first) = e.iter().find(|c| c.abs() > 1e-14) {
            if *first < 0.0 {
                e = -e;
            }
        }
        Self(e)
    }

    pub fn v(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn s(&self) -> Mat3 {
        let e = &self.0;
        Mat3::new(e[3], e[4], e[5], e[4], e[6], e[7], e[5], e[7], e[8])
    }

    /// Angle between the two vectors as unoriented lines.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let c = self.0.dot(&other.0).abs() / (self.0.norm() * other.0.norm());
        c.min(1.0).acos()
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// The translational and rotational flow matrices at a normalized point.
pub fn matrices_ab(x: &Vec2) -> (Matrix2x3<f64>, Matrix2x3<f64>) {
    let (px, py) = (x.x, x.y);
    let a = Matrix2x3::new(-1.0, 0.0, px, 0.0, -1.0, py);
    let b = Matrix2x3::new(px * py, -(1.0 + px * px), py, 1.0 + py * py, -px * py, -px);
    (a, b)
}

/// Instantaneous flow at `x` for depth `z` and motion `(v, w)`.
pub fn project_flow(x: &Vec2, z: f64, v: &Vec3, w: &Vec3) -> Result<Vec2> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("depth must be positive, got {z}")));
    }
    let (a, b) = matrices_ab(x);
    Ok(a * v / z + b * w)
}

/// `s = ½ (v̂ŵ + ŵv̂)`.
pub fn symmetric_s(v: &Vec3, w: &Vec3) -> Mat3 {
    let (sv, sw) = (skew(v), skew(w));
    let s = (sv * sw + sw * sv) * 0.5;
    // Symmetrize so the result is its own transpose bit for bit.
    (s + s.transpose()) * 0.5
}

/// Rodrigues' formula.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-8 {
        return Mat3::identity() + k + k * k * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + k * a + k * k * b
}

/// Inverse of [`exp_so3`] for rotation angles below π.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let axis = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-8 {
        return axis * 0.5;
    }
    axis * (theta / (2.0 * theta.sin()))
}
