//! Image differential privacy by pixelisation, colour quantisation and
//! Laplace noise, with a centroid-based re-identification and adverse
//! attribute-classification evaluation harness.

pub mod attribute;
pub mod ctl;
pub mod dataset;
pub mod dp;
pub mod embedding;
pub mod experiment;
pub mod raster;
pub mod report;
pub mod retrieval;
pub mod seed;
