//! Diversity benchmarking for text-to-image models.

pub mod adapters;
pub mod analysis;
pub mod catalog;
pub mod cli;
pub mod figures;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod promptgen;
pub mod scoring;
pub mod text;
