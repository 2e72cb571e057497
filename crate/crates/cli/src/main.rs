use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rssfm::experiment::{estimate, run_sweep, sweep_csv, trial_seed, ExperimentConfig};
use rssfm::geom::{CameraConfig, FlowSample};
use rssfm::io::{
    read_flo, read_pfm, read_pnm, truth_to_text, write_pfm, write_pnm, FlowData, FlowFile,
    MotionRecord,
};
use rssfm::raster::{FlowField, Image};
use rssfm::rectify::{rectify_image, warp_field};
use rssfm::refine::{dense_depth, RefineOptions, Termination};
use rssfm::robust::{filter_flows, RansacConfig};
use rssfm::rs::MotionModel;
use rssfm::synth::inject_outliers;
use rssfm::Error;

#[derive(Parser)]
#[command(
    name = "rssfm",
    version,
    about = "Rolling-shutter relative motion, depth and rectification from optical flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate relative motion from a flow file.
    Estimate {
        #[arg(long)]
        flow: PathBuf,
        /// Backward flow; enables forward-backward filtering of a dense field.
        #[arg(long)]
        flow_bwd: Option<PathBuf>,
        /// Fraction of pixels kept by the forward-backward filter.
        #[arg(long, default_value_t = 0.1)]
        keep: f64,
        /// gs, cv or ca.
        #[arg(long, default_value = "cv")]
        model: MotionModel,
        #[arg(long, default_value_t = 300)]
        ransac_iters: usize,
        /// Inlier threshold in normalized image units.
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report the RANSAC model without block-coordinate refinement.
        #[arg(long)]
        no_refine: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dense depth map (PFM) from a dense flow field and a motion file.
    Depth {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warp a rolling-shutter image to the first-scanline pose.
    Rectify {
        /// PGM or PPM image.
        #[arg(long)]
        image: PathBuf,
        /// PFM depth map of the same size.
        #[arg(long)]
        depth: PathBuf,
        /// Motion file; must carry the camera keys.
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional PGM of valid pixels (255) and masked pixels (0).
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Synthesize one scene from the first cell of an experiment config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_flow: PathBuf,
        #[arg(long)]
        out_truth: PathBuf,
        /// Fraction of flows replaced by outliers.
        #[arg(long, default_value_t = 0.0)]
        outliers: f64,
    },
    /// Run an experiment sweep and write a CSV summary.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// CSV output; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a Middlebury .flo field to the native flow format.
    Convert {
        #[arg(long)]
        flo: PathBuf,
        /// Readout ratio of the camera.
        #[arg(long)]
        gamma: f64,
        /// Focal length in pixels.
        #[arg(long)]
        focal: f64,
        /// Principal point; image center if omitted.
        #[arg(long)]
        cx: Option<f64>,
        #[arg(long)]
        cy: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Input(String),
    Estimation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::DimensionMismatch { .. }
            | Error::Format(_)
            | Error::Io(_) => Failure::Input(e.to_string()),
            _ => Failure::Estimation(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn with_path<T>(path: &Path, r: rssfm::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        f => f,
    })
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_flow(path: &Path) -> Result<FlowFile, Failure> {
    with_path(path, FlowFile::read_from(open(path)?))
}

fn dense_field(file: FlowFile, path: &Path) -> Result<FlowField, Failure> {
    match file.data {
        FlowData::Dense(f) => Ok(f),
        FlowData::Sparse(_) => Err(Failure::Input(format!(
            "{}: a dense flow field is required",
            path.display()
        ))),
    }
}

fn load_motion(path: &Path) -> Result<MotionRecord, Failure> {
    with_path(path, MotionRecord::from_text(&read_text(path)?))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    with_path(path, ExperimentConfig::from_text(&read_text(path)?))
}

fn record_camera(rec: &MotionRecord, path: &Path) -> Result<CameraConfig, Failure> {
    rec.camera.ok_or_else(|| {
        Failure::Input(format!(
            "{}: motion file carries no camera keys",
            path.display()
        ))
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    flow: &Path,
    flow_bwd: Option<&Path>,
    keep: f64,
    model: MotionModel,
    iterations: usize,
    threshold: f64,
    seed: u64,
    no_refine: bool,
    out: &Path,
) -> Outcome {
    let file = load_flow(flow)?;
    let cam = file.camera;
    let samples: Vec<FlowSample> = match flow_bwd {
        Some(bwd) => {
            let b = load_flow(bwd)?;
            let fwd = dense_field(file, flow)?;
            let bwd_field = dense_field(b, bwd)?;
            filter_flows(&fwd, &bwd_field, keep, &cam)?
                .into_iter()
                .map(|f| f.sample)
                .collect()
        }
        None => file.samples(),
    };
    let cfg = RansacConfig {
        iterations,
        threshold,
        seed,
        ..Default::default()
    };
    let opts = RefineOptions::default();
    let est = estimate(&samples, model, &cam, &cfg, (!no_refine).then_some(&opts))?;
    let mut stats = vec![
        ("samples".to_string(), samples.len().to_string()),
        ("inliers".to_string(), est.ransac.inliers.len().to_string()),
        (
            "mean_inlier_residual".to_string(),
            format!("{:?}", est.ransac.mean_inlier_residual()),
        ),
    ];
    if let Some(r) = &est.refined {
        stats.push(("objective".into(), format!("{:?}", r.objective)));
        stats.push(("cycles".into(), r.cycles.to_string()));
        let term = match &r.termination {
            Termination::Converged => "converged".to_string(),
            Termination::MaxCycles => "max_cycles".to_string(),
            Termination::BlockFailure(b) => format!("block_failure:{b}"),
        };
        stats.push(("termination".into(), term));
    }
    let rec = MotionRecord {
        model,
        motion: est.motion(),
        camera: Some(cam),
        stats,
    };
    with_path(out, rec.save(out))
}

fn cmd_depth(flow: &Path, motion: &Path, out: &Path) -> Outcome {
    let file = load_flow(flow)?;
    let cam = file.camera;
    let field = dense_field(file, flow)?;
    let rec = load_motion(motion)?;
    let depth = dense_depth(&field, &rec.motion, rec.model, &cam);
    let mut w = create(out)?;
    with_path(out, write_pfm(&depth, &mut w))?;
    w.flush().map_err(|e| Failure::Input(e.to_string()))
}

fn cmd_rectify(
    image: &Path,
    depth: &Path,
    motion: &Path,
    out: &Path,
    mask: Option<&Path>,
) -> Outcome {
    let img = with_path(image, read_pnm(open(image)?))?;
    let depth_map = with_path(depth, read_pfm(open(depth)?))?;
    let rec = load_motion(motion)?;
    let cam = record_camera(&rec, motion)?;
    // A global-shutter motion file describes no intra-frame motion.
    let m = if rec.model == MotionModel::GlobalShutter {
        rssfm::geom::MotionEstimate::new(Default::default(), Default::default(), 0.0)
    } else {
        rec.motion
    };
    let warp = warp_field(&depth_map, &m, &cam)?;
    let r = rectify_image(&img, &warp)?;
    let mut w = create(out)?;
    with_path(out, write_pnm(&r.image, &mut w))?;
    w.flush().map_err(|e| Failure::Input(e.to_string()))?;
    if let Some(p) = mask {
        let m = Image::gray_from_fn(r.image.width, r.image.height, |x, y| {
            if r.mask[y * r.image.width + x] {
                255
            } else {
                0
            }
        });
        let mut w = create(p)?;
        with_path(p, write_pnm(&m, &mut w))?;
        w.flush().map_err(|e| Failure::Input(e.to_string()))?;
    }
    eprintln!("gap fraction {:.6}", r.gap_fraction);
    Ok(())
}

fn cmd_synth(config: &Path, out_flow: &Path, out_truth: &Path, outliers: f64) -> Outcome {
    let cfg = load_config(config)?;
    let cell = cfg.cells()[0];
    let spec = cfg.scene(&cell, trial_seed(cfg.ransac.seed, 0, 0))?;
    let (mut samples, truth) = cfg.generate(&spec)?;
    if outliers > 0.0 {
        inject_outliers(
            &mut samples,
            &truth,
            outliers,
            0.1,
            0.01,
            &spec.camera,
            spec.seed ^ 0x5eed,
        )?;
    }
    let file = FlowFile::from_samples(spec.camera, spec.camera.h, &samples);
    let mut w = create(out_flow)?;
    with_path(out_flow, file.write_to(&mut w))?;
    w.flush().map_err(|e| Failure::Input(e.to_string()))?;
    std::fs::write(out_truth, truth_to_text(&truth, &spec.camera))
        .map_err(|e| Failure::Input(format!("{}: {e}", out_truth.display())))
}

fn cmd_sweep(config: &Path, out: Option<&Path>) -> Outcome {
    let cfg = load_config(config)?;
    let rows = run_sweep(&cfg)?;
    let csv = sweep_csv(&rows);
    match out {
        Some(p) => {
            std::fs::write(p, csv).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_convert(
    flo: &Path,
    gamma: f64,
    focal: f64,
    cx: Option<f64>,
    cy: Option<f64>,
    out: &Path,
) -> Outcome {
    let field = with_path(flo, read_flo(open(flo)?))?;
    let (w, h) = (field.width, field.height);
    let cam = CameraConfig::new(
        gamma,
        w,
        h,
        focal,
        focal,
        cx.unwrap_or(0.5 * (w as f64 - 1.0)),
        cy.unwrap_or(0.5 * (h as f64 - 1.0)),
    )?;
    let mut f = create(out)?;
    with_path(out, FlowFile::dense(cam, field).write_to(&mut f))?;
    f.flush().map_err(|e| Failure::Input(e.to_string()))
}

fn configure_threads() -> Outcome {
    if let Ok(v) = std::env::var("RSSFM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Failure::Input(format!("RSSFM_THREADS: '{v}' is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Input(format!("RSSFM_THREADS: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    configure_threads()?;
    match cli.command {
        Command::Estimate {
            flow,
            flow_bwd,
            keep,
            model,
            ransac_iters,
            threshold,
            seed,
            no_refine,
            out,
        } => cmd_estimate(
            &flow,
            flow_bwd.as_deref(),
            keep,
            model,
            ransac_iters,
            threshold,
            seed,
            no_refine,
            &out,
        ),
        Command::Depth { flow, motion, out } => cmd_depth(&flow, &motion, &out),
        Command::Rectify {
            image,
            depth,
            motion,
            out,
            mask,
        } => cmd_rectify(&image, &depth, &motion, &out, mask.as_deref()),
        Command::Synth {
            config,
            out_flow,
            out_truth,
            outliers,
        } => cmd_synth(&config, &out_flow, &out_truth, outliers),
        Command::Sweep { config, out } => cmd_sweep(&config, out.as_deref()),
        Command::Convert {
            flo,
            gamma,
            focal,
            cx,
            cy,
            out,
        } => cmd_convert(&flo, gamma, focal, cx, cy, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Estimation(m)) => {
            eprintln!("rssfm: estimation failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("rssfm: {m}");
            ExitCode::from(2)
        }
    }
}
