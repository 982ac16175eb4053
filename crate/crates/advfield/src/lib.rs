//! Adversarially learned vector fields for sensor-aware deformation of 3D
//! point-cloud objects.
//!
//! The crate builds a lattice of learnable shift vectors inside a default
//! bounding box, trains it against a differentiable point-set scorer so that
//! deformed objects lose their detections, and keeps every moved point on its
//! original sensor ray. Alongside the field machinery it carries the classic
//! per-point baseline attacks (iterative L2, Chamfer, removal, generation),
//! an offline augmentation policy, a procedural scene generator for
//! desk-scale experiments, and the evaluation metrics (ASR, Chamfer,
//! TP/FP/FN accounting) needed to compare all of the above.
//!
//! Modules mirror the pipeline: [`geometry`] holds the core types,
//! [`vfield`] the lattice, [`detector`] the attack target, [`attack`] the
//! optimization loops, [`data`] file I/O plus the generator, [`augment`] the
//! one-object-per-scene policy, [`metrics`] the scoring of outcomes.
//!
//! With the default `parallel` feature the data-parallel inner loops run on
//! rayon; disabling it swaps in sequential equivalents with identical
//! results.

pub mod attack;
pub mod augment;
pub mod data;
pub mod detector;
mod error;
pub mod exec;
pub mod geometry;
pub mod metrics;
mod optim;
pub mod vfield;

pub use error::{Error, Result};
