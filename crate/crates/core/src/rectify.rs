//! Rolling-shutter-aware warping of the first frame onto the pose of its
//! first scanline.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{exp_so3, matrices_ab, CameraConfig, MotionEstimate, Vec2, Vec3};
use crate::raster::{DepthMap, Image};
use crate::rs::{beta1, motion_fraction};

/// Per-pixel displacement in pixels from a rolling-shutter pixel to its
/// position in the first-scanline view is `-disp`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub width: usize,
    pub height: usize,
    pub disp: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl WarpField {
    pub fn zero(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            disp: vec![[0.0; 2]; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<[f64; 2]> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.disp[i])
    }

    pub fn max_displacement(&self) -> f64 {
        self.disp
            .iter()
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(d, _)| d[0].hypot(d[1]))
            .fold(0.0, f64::max)
    }
}

fn check_depth(depth: &DepthMap, cam: &CameraConfig) -> Result<()> {
    if (depth.width, depth.height) != (cam.width, cam.h) {
        return Err(Error::DimensionMismatch {
            expected: (cam.width, cam.h),
            found: (depth.width, depth.height),
        });
    }
    Ok(())
}

fn build<F>(depth: &DepthMap, cam: &CameraConfig, f: F) -> Result<WarpField>
where
    F: Fn(&Vec2, f64, f64) -> Option<Vec2> + Sync,
{
    check_depth(depth, cam)?;
    let rows: Vec<(Vec<[f64; 2]>, Vec<bool>)> = (0..depth.height)
        .into_par_iter()
        .map(|y| {
            let mut disp = vec![[0.0; 2]; depth.width];
            let mut valid = vec![false; depth.width];
            for x in 0..depth.width {
                if !depth.is_valid_at(x, y) {
                    continue;
                }
                let xn = cam.to_normalized(x as f64, y as f64);
                if let Some(u) = f(&xn, depth.get(x, y), y as f64) {
                    let p = cam.flow_to_pixels(&u);
                    disp[x] = [p.x, p.y];
                    valid[x] = true;
                }
            }
            (disp, valid)
        })
        .collect();
    let mut out = WarpField {
        width: depth.width,
        height: depth.height,
        disp: Vec::new(),
        valid: Vec::new(),
    };
    for (d, v) in rows {
        out.disp.extend(d);
        out.valid.extend(v);
    }
    Ok(out)
}

/// Small-motion warp `u_w = β1(k; y)(A v/Z + B w)`. Pixels with invalid
/// depth are masked.
pub fn warp_field(
    depth: &DepthMap,
    motion: &MotionEstimate,
    cam: &CameraConfig,
) -> Result<WarpField> {
    build(depth, cam, |x, z, y| {
        let b1 = beta1(y, motion.k, cam);
        let (a, b) = matrices_ab(x);
        Some((a * motion.v / z + b * motion.w) * b1)
    })
}

/// Exact variant: back-project with the scanline pose and re-project into
/// the first-scanline camera.
pub fn warp_field_backprojected(
    depth: &DepthMap,
    motion: &MotionEstimate,
    cam: &CameraConfig,
) -> Result<WarpField> {
    let h = cam.h as f64;
    build(depth, cam, |x, z, y| {
        let f = motion_fraction(cam.gamma * y / h, motion.k);
        let world = motion.v * f + exp_so3(&(motion.w * f)) * (Vec3::new(x.x, x.y, 1.0) * z);
        if world.z <= 0.0 {
            return None;
        }
        Some(x - Vec2::new(world.x / world.z, world.y / world.z))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rectified {
    pub image: Image,
    /// False where no value could be produced (image borders).
    pub mask: Vec<bool>,
    /// Fraction of pixels filled by neighbour averaging.
    pub gap_fraction: f64,
}

/// Forward-splats each pixel to `p - disp(p)` with bilinear weights. Pixels
/// without a valid warp are copied through in place. Unfilled pixels that
/// lie between filled ones on their row are gaps and take the average of
/// their filled 4-neighbours; the rest are masked out.
pub fn rectify_image(image: &Image, warp: &WarpField) -> Result<Rectified> {
    if (image.width, image.height) != (warp.width, warp.height) {
        return Err(Error::DimensionMismatch {
            expected: (warp.width, warp.height),
            found: (image.width, image.height),
        });
    }
    let (w, h, ch) = (image.width, image.height, image.channels);
    let mut acc = vec![0.0f64; w * h * ch];
    let mut wsum = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = warp.get(x, y).unwrap_or([0.0; 2]);
            let (tx, ty) = (x as f64 - d[0], y as f64 - d[1]);
            if !(tx > -1.0 && ty > -1.0 && tx < w as f64 && ty < h as f64) {
                continue;
            }
            let (x0, y0) = (tx.floor(), ty.floor());
            let (fx, fy) = (tx - x0, ty - y0);
            let src = image.pixel(x, y);
            for (dx, dy, wt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                let (xi, yi) = (x0 as i64 + dx, y0 as i64 + dy);
                if wt <= 0.0 || xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
                    continue;
                }
                let i = yi as usize * w + xi as usize;
                wsum[i] += wt;
                for c in 0..ch {
                    acc[i * ch + c] += wt * src[c] as f64;
                }
            }
        }
    }

    const MIN_WEIGHT: f64 = 1e-3;
    let filled: Vec<bool> = wsum.iter().map(|&s| s > MIN_WEIGHT).collect();
    let mut out = Image::new(w, h, ch)?;
    let mut mask = filled.clone();
    for i in 0..w * h {
        if filled[i] {
            for c in 0..ch {
                out.data[i * ch + c] = (acc[i * ch + c] / wsum[i]).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let mut gaps = 0usize;
    for y in 0..h {
        let row = &filled[y * w..(y + 1) * w];
        let (Some(first), Some(last)) = (row.iter().position(|&f| f), row.iter().rposition(|&f| f))
        else {
            continue;
        };
        for x in first + 1..last {
            let i = y * w + x;
            if filled[i] {
                continue;
            }
            let mut sum = vec![0.0; ch];
            let mut n = 0;
            for (nx, ny) in [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ] {
                if nx < w && ny < h && filled[ny * w + nx] {
                    for (c, s) in sum.iter_mut().enumerate() {
                        *s += out.data[(ny * w + nx) * ch + c] as f64;
                    }
                    n += 1;
                }
            }
            if n > 0 {
                for (c, s) in sum.iter().enumerate() {
                    out.data[i * ch + c] = (s / n as f64).round() as u8;
                }
                mask[i] = true;
                gaps += 1;
            }
        }
    }
    Ok(Rectified {
        image: out,
        mask,
        gap_fraction: gaps as f64 / (w * h) as f64,
    })
}

/// Mean absolute intensity difference over pixels where `mask` holds.
pub fn mean_abs_difference(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::DimensionMismatch {
            expected: (a.width, a.height),
            found: (b.width, b.height),
        });
    }
    let ch = a.channels;
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for c in 0..ch {
            sum += (a.data[i * ch + c] as f64 - b.data[i * ch + c] as f64).abs();
        }
        n += ch;
    }
    if n == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(sum / n as f64)
}
