//! Reset-free quality-diversity learning.
//!
//! A simulated quadruped grows an archive of diverse gaits without ever being
//! put back in place: a learned dynamics ensemble evaluates offspring in
//! imagination, a safety filter keeps real executions inside an exploration
//! disc, and a recovery policy walks the robot back when it strays. Trained
//! archives are then used for maze navigation.

pub mod archive;
pub mod arena;
pub mod controller;
pub mod dynmodel;
mod error;
pub mod par;
pub mod navigation;
pub mod harness;
pub mod rfqd;
pub mod rng;
pub mod variation;

pub use error::{Error, Result};
