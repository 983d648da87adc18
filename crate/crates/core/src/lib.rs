//! Stochastic object models (SOMs) whose first-, second- and high-order rules
//! are known by construction, together with the post-hoc recovery pipelines
//! and statistical tests that check whether an image ensemble obeys them.
//!
//! Four SOMs are provided: the clustered lumpy background ([`clb`]), the
//! eight-class block grid ([`flags`]), area-shaded Voronoi tessellations
//! ([`voronoi`]) and letter rasters with prevalence rules ([`alphabet`]).
//! [`bench`] ties them together into generate / calibrate / evaluate /
//! compare workflows.

pub mod alphabet;
pub mod bench;
pub mod clb;
pub mod error;
pub mod exec;
pub mod flags;
pub mod manifest;
pub mod raster;
pub mod rng;
pub mod stats;
pub mod voronoi;

pub use error::{Error, Result};
pub use exec::Execution;
pub use manifest::{EnsembleManifest, ManifestEntry, SomName};
pub use raster::{load_image, save_image, split_tiles, GrayImage, TileGrid, SOM_SIZE};
pub use rng::{rng_stream, SomRng};
