//! End-to-end estimation pipeline and synthetic benchmark sweeps.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{CameraConfig, FlowSample};
use crate::io::parse_key_values;
use crate::refine::{refine, RefineOptions, RefineState};
use crate::robust::{ransac, RansacConfig, RansacResult};
use crate::rs::MotionModel;
use crate::synth::{
    generate_discrete, generate_linearized, rotation_error, translation_error, SceneSpec,
    TrueMotion,
};

/// RANSAC followed by refinement on the inliers.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub ransac: RansacResult,
    pub refined: Option<RefineState>,
}

impl Estimate {
    pub fn motion(&self) -> crate::geom::MotionEstimate {
        self.refined
            .as_ref()
            .map_or(self.ransac.motion, |r| r.motion)
    }
}

pub fn estimate(
    samples: &[FlowSample],
    model: MotionModel,
    cam: &CameraConfig,
    ransac_cfg: &RansacConfig,
    refine_opts: Option<&RefineOptions>,
) -> Result<Estimate> {
    let rr = ransac(samples, model, cam, ransac_cfg)?;
    let refined = match refine_opts {
        Some(opts) => {
            let inliers: Vec<FlowSample> = rr.inliers.iter().map(|&i| samples[i]).collect();
            Some(refine(&inliers, &rr.motion, model, cam, opts)?)
        }
        None => None,
    };
    Ok(Estimate {
        ransac: rr,
        refined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Linearized,
    Discrete,
}

impl std::str::FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linearized" => Ok(Self::Linearized),
            "discrete" => Ok(Self::Discrete),
            o => Err(Error::InvalidConfig(format!(
                "generator: unknown value '{o}'"
            ))),
        }
    }
}

impl std::fmt::Display for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linearized => "linearized",
            Self::Discrete => "discrete",
        })
    }
}

/// Flat key=value experiment description. Axis keys hold comma-separated
/// lists; every list must be non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub models: Vec<MotionModel>,
    pub ransac: RansacConfig,
    pub refine: Option<RefineOptions>,
    pub gammas: Vec<f64>,
    pub translations: Vec<f64>,
    pub rotations_deg: Vec<f64>,
    pub ks: Vec<f64>,
    pub trials: usize,
    pub points: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub depth_range: (f64, f64),
    pub generator: Generator,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            models: vec![MotionModel::GlobalShutter, MotionModel::ConstVelocity],
            ransac: RansacConfig::default(),
            refine: Some(RefineOptions::default()),
            gammas: vec![0.8],
            translations: vec![0.025],
            rotations_deg: vec![3.0],
            ks: vec![0.0],
            trials: 20,
            points: 300,
            width: 900,
            height: 900,
            focal: 810.0,
            depth_range: SceneSpec::DEFAULT_DEPTH,
            generator: Generator::Discrete,
        }
    }
}

const KEYS: [&str; 19] = [
    "models",
    "iterations",
    "threshold",
    "seed",
    "refine",
    "rel_tol",
    "max_cycles",
    "gammas",
    "translations",
    "rotations_deg",
    "ks",
    "trials",
    "points",
    "width",
    "height",
    "focal",
    "depth_min",
    "depth_max",
    "generator",
];

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let out = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{s}'")))
        })
        .collect::<Result<Vec<T>>>()?;
    if out.is_empty() {
        return Err(Error::InvalidConfig(format!("{key}: list is empty")));
    }
    Ok(out)
}

fn one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Readout-ratio sweep 0.1…1.0 at normalized translation 0.025 and 3°.
    pub fn gamma_sweep() -> Self {
        Self {
            gammas: (1..=10).map(|i| i as f64 / 10.0).collect(),
            ..Self::default()
        }
    }

    /// Acceleration sweep −0.2…0.2 at γ = 0.8.
    pub fn k_sweep() -> Self {
        Self {
            models: vec![MotionModel::GlobalShutter, MotionModel::ConstAccel],
            ks: vec![-0.2, -0.1, 0.0, 0.1, 0.2],
            ..Self::default()
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut refine = RefineOptions::default();
        let mut use_refine = true;
        for (k, v) in parse_key_values(text)? {
            match k.as_str() {
                "models" => {
                    c.models = list::<String>(&k, &v)?
                        .iter()
                        .map(|m| m.parse())
                        .collect::<Result<_>>()?
                }
                "iterations" => c.ransac.iterations = one(&k, &v)?,
                "threshold" => c.ransac.threshold = one(&k, &v)?,
                "seed" => c.ransac.seed = one(&k, &v)?,
                "refine" => use_refine = one(&k, &v)?,
                "rel_tol" => refine.rel_tol = one(&k, &v)?,
                "max_cycles" => refine.max_cycles = one(&k, &v)?,
                "gammas" => c.gammas = list(&k, &v)?,
                "translations" => c.translations = list(&k, &v)?,
                "rotations_deg" => c.rotations_deg = list(&k, &v)?,
                "ks" => c.ks = list(&k, &v)?,
                "trials" => c.trials = one(&k, &v)?,
                "points" => c.points = one(&k, &v)?,
                "width" => c.width = one(&k, &v)?,
                "height" => c.height = one(&k, &v)?,
                "focal" => c.focal = one(&k, &v)?,
                "depth_min" => c.depth_range.0 = one(&k, &v)?,
                "depth_max" => c.depth_range.1 = one(&k, &v)?,
                "generator" => c.generator = v.parse()?,
                _ => return Err(Error::InvalidConfig(format!("unknown key '{k}'"))),
            }
        }
        c.refine = use_refine.then_some(refine);
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let names: Vec<&str> = self.models.iter().map(|m| m.name()).collect();
        let r = self.refine.unwrap_or_default();
        let mut s = String::new();
        let vals = [
            names.join(","),
            self.ransac.iterations.to_string(),
            self.ransac.threshold.to_string(),
            self.ransac.seed.to_string(),
            self.refine.is_some().to_string(),
            r.rel_tol.to_string(),
            r.max_cycles.to_string(),
            join(&self.gammas),
            join(&self.translations),
            join(&self.rotations_deg),
            join(&self.ks),
            self.trials.to_string(),
            self.points.to_string(),
            self.width.to_string(),
            self.height.to_string(),
            self.focal.to_string(),
            self.depth_range.0.to_string(),
            self.depth_range.1.to_string(),
            self.generator.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("models: list is empty".into()));
        }
        for m in &self.models {
            self.ransac.validate(*m)?;
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.points < 9 {
            return Err(Error::InvalidConfig("points must be at least 9".into()));
        }
        for &g in &self.gammas {
            self.camera(g)?;
        }
        Ok(())
    }

    pub fn camera(&self, gamma: f64) -> Result<CameraConfig> {
        CameraConfig::centered(gamma, self.width, self.height, self.focal)
    }

    /// Axis cells in row-major order `γ, translation, rotation, k`.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &gamma in &self.gammas {
            for &translation in &self.translations {
                for &rotation_deg in &self.rotations_deg {
                    for &k in &self.ks {
                        out.push(Cell {
                            gamma,
                            translation,
                            rotation_deg,
                            k,
                        });
                    }
                }
            }
        }
        out
    }

    /// Scene of one trial; all models in a cell see the same scenes.
    pub fn scene(&self, cell: &Cell, seed: u64) -> Result<SceneSpec> {
        let camera = self.camera(cell.gamma)?;
        let mean = 0.5 * (self.depth_range.0 + self.depth_range.1);
        Ok(SceneSpec {
            points: self.points,
            depth_range: self.depth_range,
            camera,
            motion: TrueMotion::preset(cell.translation * mean, cell.rotation_deg, cell.k),
            seed,
        })
    }

    pub fn generate(
        &self,
        spec: &SceneSpec,
    ) -> Result<(Vec<FlowSample>, crate::synth::GroundTruth)> {
        match self.generator {
            Generator::Linearized => generate_linearized(spec),
            Generator::Discrete => generate_discrete(spec),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub gamma: f64,
    pub translation: f64,
    pub rotation_deg: f64,
    pub k: f64,
}

/// Seed of trial `t` in cell `c`.
pub fn trial_seed(base: u64, cell: usize, trial: usize) -> u64 {
    base ^ ((cell as u64) << 32 | trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialErrors {
    pub trans_deg: f64,
    pub rot_deg: f64,
    pub trans_min_deg: f64,
    pub rot_min_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    pub model: MotionModel,
    /// Means over successful trials: after refinement, and of the RANSAC
    /// minimal-solver estimate.
    pub trans_err_deg: f64,
    pub rot_err_deg: f64,
    pub trans_err_min_deg: f64,
    pub rot_err_min_deg: f64,
    pub trials: usize,
    pub failures: usize,
}

pub fn run_trial(
    cfg: &ExperimentConfig,
    cell: &Cell,
    model: MotionModel,
    seed: u64,
) -> Result<TrialErrors> {
    let spec = cfg.scene(cell, seed)?;
    let (samples, truth) = cfg.generate(&spec)?;
    let rc = RansacConfig { seed, ..cfg.ransac };
    let est = estimate(&samples, model, &spec.camera, &rc, cfg.refine.as_ref())?;
    let t = &truth.motion;
    let m0 = est.ransac.motion;
    let m1 = est.motion();
    Ok(TrialErrors {
        trans_deg: translation_error(&m1.v, &t.translation)?,
        rot_deg: rotation_error(&m1.w, &t.rotation)?,
        trans_min_deg: translation_error(&m0.v, &t.translation)?,
        rot_min_deg: rotation_error(&m0.w, &t.rotation)?,
    })
}

/// Runs every (cell, model, trial) in parallel; rows come back in axis
/// order with models in configuration order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize, usize)> = (0..cells.len())
        .flat_map(|c| {
            (0..cfg.models.len()).flat_map(move |m| (0..cfg.trials).map(move |t| (c, m, t)))
        })
        .collect();
    let results: Vec<Option<TrialErrors>> = jobs
        .par_iter()
        .map(|&(c, m, t)| {
            run_trial(
                cfg,
                &cells[c],
                cfg.models[m],
                trial_seed(cfg.ransac.seed, c, t),
            )
            .ok()
        })
        .collect();

    let mut rows = Vec::new();
    for (chunk, (c, m)) in results
        .chunks(cfg.trials)
        .zip((0..cells.len()).flat_map(|c| (0..cfg.models.len()).map(move |m| (c, m))))
    {
        let ok: Vec<&TrialErrors> = chunk.iter().flatten().collect();
        let n = ok.len() as f64;
        let mean = |f: fn(&TrialErrors) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|e| f(e)).sum::<f64>() / n
            }
        };
        rows.push(SweepRow {
            cell: cells[c],
            model: cfg.models[m],
            trans_err_deg: mean(|e| e.trans_deg),
            rot_err_deg: mean(|e| e.rot_deg),
            trans_err_min_deg: mean(|e| e.trans_min_deg),
            rot_err_min_deg: mean(|e| e.rot_min_deg),
            trials: ok.len(),
            failures: chunk.len() - ok.len(),
        });
    }
    Ok(rows)
}

pub const CSV_HEADER: &str =
    "gamma,trans,rot_deg,k,model,trans_err_deg,rot_err_deg,trans_err_min_deg,rot_err_min_deg,trials,failures";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let c = &r.cell;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
            c.gamma,
            c.translation,
            c.rotation_deg,
            c.k,
            r.model,
            r.trans_err_deg,
            r.rot_err_deg,
            r.trans_err_min_deg,
            r.rot_err_min_deg,
            r.trials,
            r.failures
        );
    }
    s
}
