//! File formats: the `RSFLOW1` flow container, PFM depth maps, binary
//! PGM/PPM images, Middlebury `.flo` import and key=value text files for
//! motions and ground truth.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{CameraConfig, FlowSample, MotionEstimate, Vec3};
use crate::raster::{DepthMap, FlowField, Image};
use crate::rs::MotionModel;
use crate::synth::{GroundTruth, TrueMotion};

pub const FLOW_MAGIC: &[u8; 7] = b"RSFLOW1";

/// Flow payload: a dense per-pixel field or a list of
/// `(x_px, y_px, u_px, v_px)` records.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowData {
    Dense(FlowField),
    Sparse(Vec<[f32; 4]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowFile {
    pub width: usize,
    pub height: usize,
    pub camera: CameraConfig,
    pub data: FlowData,
}

impl FlowFile {
    pub fn dense(camera: CameraConfig, field: FlowField) -> Self {
        Self {
            width: field.width,
            height: field.height,
            camera,
            data: FlowData::Dense(field),
        }
    }

    /// Sparse file holding `samples` in pixel units.
    pub fn from_samples(camera: CameraConfig, height: usize, samples: &[FlowSample]) -> Self {
        let records = samples
            .iter()
            .map(|s| {
                let (px, py) = camera.to_pixel(&s.x);
                let u = camera.flow_to_pixels(&s.u);
                [px as f32, py as f32, u.x as f32, u.y as f32]
            })
            .collect();
        Self {
            width: camera.width,
            height,
            camera,
            data: FlowData::Sparse(records),
        }
    }

    /// Valid flows as samples. Records whose endpoint leaves the image are
    /// dropped.
    pub fn samples(&self) -> Vec<FlowSample> {
        match &self.data {
            FlowData::Dense(f) => f
                .samples(&self.camera)
                .into_iter()
                .map(|(_, s)| s)
                .collect(),
            FlowData::Sparse(recs) => recs
                .iter()
                .filter(|r| r.iter().all(|v| v.is_finite()))
                .filter_map(|r| {
                    FlowSample::from_pixels(
                        r[0] as f64,
                        r[1] as f64,
                        r[2] as f64,
                        r[3] as f64,
                        &self.camera,
                    )
                    .ok()
                })
                .collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.camera;
        let mut buf = Vec::new();
        buf.extend_from_slice(FLOW_MAGIC);
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&c.gamma.to_le_bytes());
        buf.extend_from_slice(&(c.h as u32).to_le_bytes());
        for v in [c.fx, c.fy, c.cx, c.cy] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        match &self.data {
            FlowData::Dense(f) => {
                if (f.width, f.height) != (self.width, self.height) {
                    return Err(Error::DimensionMismatch {
                        expected: (self.width, self.height),
                        found: (f.width, f.height),
                    });
                }
                buf.push(0);
                for p in &f.data {
                    buf.extend_from_slice(&(p[0] as f32).to_le_bytes());
                    buf.extend_from_slice(&(p[1] as f32).to_le_bytes());
                }
            }
            FlowData::Sparse(recs) => {
                buf.push(1);
                buf.extend_from_slice(&(recs.len() as u32).to_le_bytes());
                for r in recs {
                    for v in r {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(7)? != FLOW_MAGIC {
            return Err(Error::Format("not an RSFLOW1 file".into()));
        }
        let width = cur.u32()? as usize;
        let height = cur.u32()? as usize;
        let gamma = cur.f64()?;
        let h = cur.u32()? as usize;
        let (fx, fy, cx, cy) = (cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?);
        let camera = CameraConfig::new(gamma, width, h, fx, fy, cx, cy)?;
        let data = match cur.u8()? {
            0 => {
                let n = width
                    .checked_mul(height)
                    .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
                if cur.remaining() != n * 8 {
                    return Err(Error::Format(format!(
                        "dense payload is {} bytes, header needs {}",
                        cur.remaining(),
                        n * 8
                    )));
                }
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    data.push([cur.f32()? as f64, cur.f32()? as f64]);
                }
                FlowData::Dense(FlowField {
                    width,
                    height,
                    data,
                })
            }
            1 => {
                let n = cur.u32()? as usize;
                if cur.remaining() != n * 16 {
                    return Err(Error::Format(format!(
                        "sparse payload is {} bytes, header needs {}",
                        cur.remaining(),
                        n * 16
                    )));
                }
                let mut recs = Vec::with_capacity(n);
                for _ in 0..n {
                    recs.push([cur.f32()?, cur.f32()?, cur.f32()?, cur.f32()?]);
                }
                FlowData::Sparse(recs)
            }
            other => return Err(Error::Format(format!("unknown flow layout {other}"))),
        };
        Ok(Self {
            width,
            height,
            camera,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Middlebury `.flo`: magic 202021.25, width, height, then interleaved
/// `f32` pairs. Components beyond 1e9 mark unknown flow and become NaN.
pub fn read_flo<R: Read>(mut r: R) -> Result<FlowField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.f32()? != 202021.25 {
        return Err(Error::Format("bad .flo magic".into()));
    }
    let (w, h) = (cur.i32()?, cur.i32()?);
    if w <= 0 || h <= 0 {
        return Err(Error::Format(format!(".flo dimensions {w}x{h}")));
    }
    let n = w as usize * h as usize;
    if cur.remaining() != n * 8 {
        return Err(Error::Format(format!(
            ".flo payload is {} bytes, header needs {}",
            cur.remaining(),
            n * 8
        )));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let (u, v) = (cur.f32()? as f64, cur.f32()? as f64);
        if u.abs() > 1e9 || v.abs() > 1e9 || !u.is_finite() || !v.is_finite() {
            data.push([f64::NAN; 2]);
        } else {
            data.push([u, v]);
        }
    }
    Ok(FlowField {
        width: w as usize,
        height: h as usize,
        data,
    })
}

pub fn write_flo<W: Write>(field: &FlowField, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + field.data.len() * 8);
    buf.extend_from_slice(&202021.25f32.to_le_bytes());
    buf.extend_from_slice(&(field.width as i32).to_le_bytes());
    buf.extend_from_slice(&(field.height as i32).to_le_bytes());
    for p in &field.data {
        for v in p {
            let v = if v.is_finite() { *v as f32 } else { 1e10 };
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Little-endian grayscale PFM (scale −1), rows stored bottom to top.
pub fn write_pfm<W: Write>(depth: &DepthMap, mut w: W) -> Result<()> {
    let mut buf = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    for y in (0..depth.height).rev() {
        for x in 0..depth.width {
            buf.extend_from_slice(&(depth.get(x, y) as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads grayscale PFM in either byte order.
pub fn read_pfm<R: Read>(mut r: R) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = header_token(&bytes, &mut pos)?;
    if magic != "Pf" {
        return Err(Error::Format(format!("unsupported PFM type '{magic}'")));
    }
    let width: usize = parse_token(&bytes, &mut pos, "width")?;
    let height: usize = parse_token(&bytes, &mut pos, "height")?;
    let scale: f64 = parse_token(&bytes, &mut pos, "scale")?;
    pos += 1;
    let n = width * height;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != n * 4 {
        return Err(Error::Format(format!(
            "PFM payload is {} bytes, header needs {}",
            payload.len(),
            n * 4
        )));
    }
    let mut depth = DepthMap::new(width, height);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if scale < 0.0 {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (x, row) = (i % width, i / width);
        depth.set(x, height - 1 - row, v as f64);
    }
    Ok(depth)
}

/// Binary PGM (1 channel) or PPM (3 channels), maxval 255.
pub fn write_pnm<W: Write>(img: &Image, mut w: W) -> Result<()> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Format(format!("cannot write {c}-channel image"))),
    };
    w.write_all(format!("{magic}\n{} {}\n255\n", img.width, img.height).as_bytes())?;
    w.write_all(&img.data)?;
    Ok(())
}

pub fn read_pnm<R: Read>(mut r: R) -> Result<Image> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = header_token(&bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => {
            return Err(Error::Format(format!(
                "unsupported image type '{m}' (expected P5 or P6)"
            )))
        }
    };
    let width: usize = parse_token(&bytes, &mut pos, "width")?;
    let height: usize = parse_token(&bytes, &mut pos, "height")?;
    let maxval: usize = parse_token(&bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only 8-bit images are supported, maxval {maxval}"
        )));
    }
    pos += 1;
    let n = width * height * channels;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != n {
        return Err(Error::Format(format!(
            "image payload is {} bytes, header needs {n}",
            payload.len()
        )));
    }
    Ok(Image {
        width,
        height,
        channels,
        data: payload.to_vec(),
    })
}

/// Next whitespace-separated header token, skipping `#` comments. Leaves
/// `pos` on the delimiter after the token.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_token<T: std::str::FromStr>(bytes: &[u8], pos: &mut usize, what: &str) -> Result<T> {
    let t = header_token(bytes, pos)?;
    t.parse()
        .map_err(|_| Error::Format(format!("bad {what} '{t}' in header")))
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("line {}: expected key=value, got '{line}'", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Format(format!("{key}: '{v}' is not a number")))
}

pub(crate) fn parse_vec3(key: &str, v: &str) -> Result<Vec3> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Format(format!(
            "{key}: expected three numbers, got '{v}'"
        )));
    }
    Ok(Vec3::new(
        parse_f64(key, parts[0])?,
        parse_f64(key, parts[1])?,
        parse_f64(key, parts[2])?,
    ))
}

fn fmt_vec3(v: &Vec3) -> String {
    format!("{:?} {:?} {:?}", v.x, v.y, v.z)
}

/// Writes a camera as `gamma`, `width`, `h`, `fx`, `fy`, `cx`, `cy` keys.
pub fn camera_key_values(c: &CameraConfig) -> String {
    format!(
        "gamma={:?}\nwidth={}\nh={}\nfx={:?}\nfy={:?}\ncx={:?}\ncy={:?}\n",
        c.gamma, c.width, c.h, c.fx, c.fy, c.cx, c.cy
    )
}

/// Motion with its model and free-form statistics, as key=value text.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionRecord {
    pub model: MotionModel,
    pub motion: MotionEstimate,
    pub camera: Option<CameraConfig>,
    /// Extra keys kept in order, e.g. inlier counts and residual statistics.
    pub stats: Vec<(String, String)>,
}

impl MotionRecord {
    pub fn to_text(&self) -> String {
        let m = &self.motion;
        let mut s = format!(
            "model={}\nv={}\nw={}\nk={:?}\n",
            self.model,
            fmt_vec3(&m.v),
            fmt_vec3(&m.w),
            m.k
        );
        if let Some(c) = &self.camera {
            s.push_str(&camera_key_values(c));
        }
        for (k, v) in &self.stats {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let need =
            |key: &str| get(key).ok_or_else(|| Error::Format(format!("motion file lacks '{key}'")));
        let model: MotionModel = need("model")?.parse()?;
        let motion = MotionEstimate::new(
            parse_vec3("v", need("v")?)?,
            parse_vec3("w", need("w")?)?,
            parse_f64("k", need("k")?)?,
        );
        let camera = match get("gamma") {
            Some(_) => Some(camera_from_keys(&kv)?),
            None => None,
        };
        const OWN: [&str; 11] = [
            "model", "v", "w", "k", "gamma", "width", "h", "fx", "fy", "cx", "cy",
        ];
        let stats = kv
            .into_iter()
            .filter(|(k, _)| !OWN.contains(&k.as_str()))
            .collect();
        Ok(Self {
            model,
            motion,
            camera,
            stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub fn camera_from_keys(kv: &[(String, String)]) -> Result<CameraConfig> {
    let get = |key: &str| {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("missing camera key '{key}'")))
    };
    let int = |key: &str| -> Result<usize> {
        let v = get(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("{key}: '{v}' is not an integer")))
    };
    CameraConfig::new(
        parse_f64("gamma", get("gamma")?)?,
        int("width")?,
        int("h")?,
        parse_f64("fx", get("fx")?)?,
        parse_f64("fy", get("fy")?)?,
        parse_f64("cx", get("cx")?)?,
        parse_f64("cy", get("cy")?)?,
    )
}

/// Ground truth sidecar: motion keys plus one `depths` line.
pub fn truth_to_text(truth: &GroundTruth, camera: &CameraConfig) -> String {
    let m = &truth.motion;
    let mut s = format!(
        "translation={}\nrotation={}\nk={:?}\ndiscarded={}\n",
        fmt_vec3(&m.translation),
        fmt_vec3(&m.rotation),
        m.k,
        truth.discarded
    );
    s.push_str(&camera_key_values(camera));
    let rows: Vec<String> = truth
        .rows
        .iter()
        .map(|(a, b)| format!("{a:?}:{b:?}"))
        .collect();
    let depths: Vec<String> = truth.depths.iter().map(|z| format!("{z:?}")).collect();
    let _ = writeln!(s, "rows={}", rows.join(" "));
    let _ = writeln!(s, "depths={}", depths.join(" "));
    s
}

pub fn truth_from_text(text: &str) -> Result<(GroundTruth, CameraConfig)> {
    let kv = parse_key_values(text)?;
    let get = |key: &str| {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("truth file lacks '{key}'")))
    };
    let motion = TrueMotion {
        translation: parse_vec3("translation", get("translation")?)?,
        rotation: parse_vec3("rotation", get("rotation")?)?,
        k: parse_f64("k", get("k")?)?,
    };
    let discarded = get("discarded")?
        .parse()
        .map_err(|_| Error::Format("discarded: not an integer".into()))?;
    let depths = get("depths")?
        .split_whitespace()
        .map(|t| parse_f64("depths", t))
        .collect::<Result<Vec<_>>>()?;
    let rows = get("rows")?
        .split_whitespace()
        .map(|t| {
            let (a, b) = t
                .split_once(':')
                .ok_or_else(|| Error::Format(format!("rows: bad entry '{t}'")))?;
            Ok((parse_f64("rows", a)?, parse_f64("rows", b)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        GroundTruth {
            motion,
            depths,
            rows,
            discarded,
        },
        camera_from_keys(&kv)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraConfig {
        CameraConfig::new(0.8, 6, 5, 40.0, 41.0, 2.5, 2.0).unwrap()
    }

    #[test]
    fn dense_flow_round_trip() {
        let mut f = FlowField::from_fn(6, 5, |x, y| [x as f32 as f64 * 0.25, -(y as f64) * 0.5]);
        f.set(3, 2, [f64::NAN, f64::NAN]);
        let file = FlowFile::dense(cam(), f.clone());
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..7], b"RSFLOW1");
        assert_eq!(buf.len(), 7 + 4 + 4 + 8 + 4 + 32 + 1 + 6 * 5 * 8);
        let back = FlowFile::read_from(&buf[..]).unwrap();
        assert_eq!(back.camera, cam());
        let FlowData::Dense(g) = &back.data else {
            panic!()
        };
        for (a, b) in f.data.iter().zip(&g.data) {
            for c in 0..2 {
                assert!(a[c].to_bits() == b[c].to_bits() || (a[c].is_nan() && b[c].is_nan()));
            }
        }
        // Truncation and trailing bytes are both rejected.
        assert!(FlowFile::read_from(&buf[..buf.len() - 1]).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(FlowFile::read_from(&longer[..]).is_err());
        assert!(FlowFile::read_from(&b"RSFLOW2"[..]).is_err());
    }

    #[test]
    fn sparse_flow_round_trip() {
        let c = CameraConfig::centered(0.5, 100, 80, 90.0).unwrap();
        let samples: Vec<FlowSample> = (0..10)
            .map(|i| {
                FlowSample::from_pixels(5.0 + 7.0 * i as f64, 3.0 + 6.0 * i as f64, 1.5, -0.75, &c)
                    .unwrap()
            })
            .collect();
        let file = FlowFile::from_samples(c, 80, &samples);
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        let back = FlowFile::read_from(&buf[..]).unwrap();
        assert_eq!(back, file);
        let s = back.samples();
        assert_eq!(s.len(), 10);
        for (a, b) in s.iter().zip(&samples) {
            assert!((a.x - b.x).norm() < 1e-6 && (a.u - b.u).norm() < 1e-7);
        }
    }

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let mut d = DepthMap::new(4, 3);
        for (i, z) in d.data.iter_mut().enumerate() {
            *z = (1.0 + i as f32 * 0.37) as f64;
        }
        d.set(1, 1, f64::NAN);
        let mut buf = Vec::new();
        write_pfm(&d, &mut buf).unwrap();
        assert!(buf.starts_with(b"Pf\n4 3\n-1.0\n"));
        // First stored row is the bottom image row.
        let first = f32::from_le_bytes(buf[12..16].try_into().unwrap());
        assert_eq!(first as f64, d.get(0, 2));
        let back = read_pfm(&buf[..]).unwrap();
        for (a, b) in d.data.iter().zip(&back.data) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
        assert!(!back.is_valid_at(1, 1));
    }

    #[test]
    fn pnm_round_trip() {
        let g = Image::gray_from_fn(7, 3, |x, y| (x * 30 + y) as u8);
        let mut buf = Vec::new();
        write_pnm(&g, &mut buf).unwrap();
        assert_eq!(read_pnm(&buf[..]).unwrap(), g);
        let mut rgb = Image::new(2, 2, 3).unwrap();
        rgb.data
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as u8 * 20);
        let mut buf = Vec::new();
        write_pnm(&rgb, &mut buf).unwrap();
        assert_eq!(read_pnm(&buf[..]).unwrap(), rgb);
        let commented = b"P5\n# made by hand\n2 1\n255\n\x01\x02";
        assert_eq!(read_pnm(&commented[..]).unwrap().data, vec![1, 2]);
        assert!(read_pnm(&b"P2\n1 1\n255\n0"[..]).is_err());
    }

    #[test]
    fn flo_import() {
        let f = FlowField::from_fn(3, 2, |x, y| [x as f64, y as f64 - 0.5]);
        let mut g = f.clone();
        g.set(2, 1, [f64::NAN; 2]);
        let mut buf = Vec::new();
        write_flo(&g, &mut buf).unwrap();
        let back = read_flo(&buf[..]).unwrap();
        assert_eq!(back.get(1, 0), f.get(1, 0));
        assert!(!back.is_valid_at(2, 1));
        assert!(read_flo(&buf[4..]).is_err());
    }

    #[test]
    fn motion_record_round_trip() {
        let rec = MotionRecord {
            model: MotionModel::ConstAccel,
            motion: MotionEstimate::new(
                Vec3::new(0.1, -0.2, 0.97),
                Vec3::new(1e-3, 2e-3, -3e-3),
                0.1,
            ),
            camera: Some(cam()),
            stats: vec![("inliers".into(), "250".into())],
        };
        let text = rec.to_text();
        assert!(text.contains("k=0.1\n"));
        assert_eq!(MotionRecord::from_text(&text).unwrap(), rec);
        assert!(MotionRecord::from_text("model=cv\nv=1 2\nw=0 0 0\nk=0").is_err());
        assert!(MotionRecord::from_text("model=cv\nw=0 0 0\nk=0").is_err());
        assert!(parse_key_values("no equals sign").is_err());
    }

    #[test]
    fn truth_round_trip() {
        let t = GroundTruth {
            motion: TrueMotion::preset(0.15, 3.0, 0.1),
            depths: vec![2.5, 7.25],
            rows: vec![(1.0, 2.5), (100.25, 103.0)],
            discarded: 3,
        };
        let (back, c) = truth_from_text(&truth_to_text(&t, &cam())).unwrap();
        assert_eq!(back, t);
        assert_eq!(c, cam());
    }
}
