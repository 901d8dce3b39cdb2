//! LiDAR to pose-sensor extrinsic calibration from driving data.

pub mod data_io;
pub mod error;
pub mod geometry;
pub mod mapping;
pub mod motion_compensation;
pub mod occupancy_refinement;
pub mod pipeline;
pub mod plane_features;
pub mod rough_calibration;
pub mod spatial;
pub mod synthetic_world;
pub mod z_correction;

pub use error::{Error, Result};
