//! Multi-human 3D mesh reconstruction from 2D poses.
//!
//! A scene's 2D poses become a heterogeneous graph (joint and mesh nodes per
//! human, plus inter-human joint edges). A dual-branch Chebyshev graph
//! network predicts a depth measure per human and root-relative meshes,
//! which are placed in camera space by back-projecting each root joint.

pub mod error;
pub mod body_template;
pub mod camera_depth;
pub mod features;
pub mod graph_builder;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod seed;
pub mod synthetic_data;
pub mod trainer;

pub use error::{MugError, Result};
