//! Patched line segment (PaLiS) road-graph representation.
//!
//! A road graph is cut into `p × p` patches, and every patch crossed by
//! exactly one road stores that road as a single line segment. This crate
//! encodes graphs into that form ([`codec`]), renders the segments into a
//! differentiable soft mask ([`raster`]), fits segments to raster masks
//! ([`fitter`]), rebuilds vector graphs from patch grids ([`reconstruct`]),
//! and scores graphs against each other ([`metrics`]). [`formats`] holds the
//! file formats, [`synth`] a seeded scene generator and [`flat`] flat-buffer
//! views for foreign callers.

pub mod codec;
pub mod fitter;
pub mod flat;
pub mod formats;
pub mod geometry;
pub mod metrics;
pub mod raster;
pub mod reconstruct;
pub mod synth;

pub use codec::{encode_graph, Cell, PatchClass, PatchGrid, RoadGraph};
pub use geometry::{LineSegment, PatchRect, Point};
pub use raster::{RasterParams, SoftMask};
pub use reconstruct::{reconstruct_graph, ReconstructParams};
