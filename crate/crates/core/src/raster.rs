//! Dense per-pixel containers: flow fields, depth maps and 8-bit images.

use crate::error::{Error, Result};
use crate::geom::{CameraConfig, FlowSample};

/// Dense flow in pixel units, row-major. NaN marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[f64::NAN; 2]; width * height],
        }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> [f64; 2]>(
        width: usize,
        height: usize,
        mut f: F,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f64; 2]) {
        self.data[y * self.width + x] = v;
    }

    pub fn is_valid_at(&self, x: usize, y: usize) -> bool {
        let [a, b] = self.get(x, y);
        a.is_finite() && b.is_finite()
    }

    /// Bilinear lookup at a sub-pixel position. `None` outside the field or
    /// when any contributing pixel is invalid.
    pub fn bilinear(&self, px: f64, py: f64) -> Option<[f64; 2]> {
        if !(px >= 0.0 && py >= 0.0)
            || px > (self.width - 1) as f64
            || py > (self.height - 1) as f64
        {
            return None;
        }
        let x0 = (px.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (py.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (px - x0 as f64, py - y0 as f64);
        let mut out = [0.0; 2];
        for (xi, yi, wgt) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            if wgt == 0.0 {
                continue;
            }
            let v = self.get(xi, yi);
            if !(v[0].is_finite() && v[1].is_finite()) {
                return None;
            }
            out[0] += wgt * v[0];
            out[1] += wgt * v[1];
        }
        Some(out)
    }

    /// Every valid pixel as a sample, in row-major order, paired with its
    /// linear pixel index. Pixels whose endpoint leaves the image are skipped.
    pub fn samples(&self, cam: &CameraConfig) -> Vec<(usize, FlowSample)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let [du, dv] = self.get(x, y);
                if !(du.is_finite() && dv.is_finite()) {
                    continue;
                }
                if let Ok(s) = FlowSample::from_pixels(x as f64, y as f64, du, dv, cam) {
                    out.push((y * self.width + x, s));
                }
            }
        }
        out
    }
}

/// Per-pixel depth, row-major. NaN marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![f64::NAN; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, z: f64) {
        self.data[y * self.width + x] = z;
    }

    pub fn is_valid_at(&self, x: usize, y: usize) -> bool {
        let z = self.get(x, y);
        z.is_finite() && z > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data
            .iter()
            .filter(|z| z.is_finite() && **z > 0.0)
            .count()
    }
}

/// 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!(
                "unsupported channel count {channels}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        })
    }

    pub fn gray_from_fn<F: FnMut(usize, usize) -> u8>(
        width: usize,
        height: usize,
        mut f: F,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}
