//! Printer-driven calibration for vision-based tactile sensors, end to end
//! and hardware-free.
//!
//! A vision-based tactile sensor is a camera looking at an illuminated gel;
//! contact deforms the gel and changes the image. This crate turns such a
//! sensor into a depth instrument:
//!
//! 1. [`probe_plan`] — lay out a grid of (x, y, depth) probe locations and
//!    split it into training/validation coordinates.
//! 2. [`gcode`] — turn the plan into G-code, drive a real printer over a
//!    serial link or interpret the program on a deterministic virtual
//!    printer, with M400 barriers marking when frames are captured.
//! 3. [`sensor_sim`] — a photometric simulator standing in for the physical
//!    sensor: spherical-cap indentation, surface gradients, Lambertian
//!    shading under three colored lights with spatially varying gain.
//! 4. [`dataset`] — orchestrate capture and persist (image, gradient-label)
//!    pairs with full provenance.
//! 5. [`touchnet`] — a 9-module convolutional network mapping RGB + pixel
//!    coordinates to surface gradients, trained from scratch here
//!    (hand-written backprop, AdamW).
//! 6. [`poisson`] — integrate predicted gradients into depth maps with a
//!    fast sine-transform Poisson solver.
//! 7. [`depth_gt`] — STL test objects rendered into ground-truth depth maps
//!    by ray casting.
//! 8. [`eval`] — alignment, depth-scale fitting, error taxonomy,
//!    per-coordinate MSE distributions, KDE, significance tests, and the
//!    data-ablation driver.
//! 9. [`plot`] — a dependency-free raster plotter for the report figures.

pub mod dataset;
pub mod depth_gt;
pub mod error;
pub mod eval;
pub mod fft;
pub mod gcode;
pub mod grid;
pub mod plot;
pub mod poisson;
pub mod probe_plan;
pub mod rng;
pub mod sensor_sim;
pub mod touchnet;

pub use error::{Error, Result};
pub use grid::{
    DepthMap, DivergenceField, GradientMap, GridBlob, HeightField, TactileImage, Units,
};
pub use probe_plan::{PlanSplit, ProbePlan, ProbePoint};
