pub mod apfm;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod fmim;
pub mod image;
pub mod metrics;
pub mod network;
pub mod training;
pub mod sampling;
pub mod config;
pub mod figures;
pub mod cli;
