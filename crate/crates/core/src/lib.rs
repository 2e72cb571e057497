//! Relative motion, dense depth and rectification from rolling-shutter
//! optical flow, built on the differential epipolar constraint.

pub mod error;
pub mod experiment;
pub mod geom;
pub mod gs;
pub mod io;
pub mod poly;
pub mod raster;
pub mod rectify;
pub mod refine;
pub mod robust;
pub mod rs;
pub mod synth;

pub use error::{Error, Result};
