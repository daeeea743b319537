//! Aligns under-sampled panorama scans to a 2D floorplan image.
//!
//! The pipeline reduces each scan to top-down evidence rasters, searches the
//! floorplan for low-cost placement candidates with a coarse-to-fine image
//! pyramid, and selects one placement per scan by minimizing a pairwise MRF
//! energy with sequential tree-reweighted message passing.

pub mod config;
pub mod energy;
pub mod error;
pub mod floorplan;
pub mod pipeline;
pub mod raster;
pub mod scanprep;
pub mod search;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
