//! Fine registration of building point clouds to LoD2 wall models.
//!
//! The pipeline associates points with wall buffers, isolates the plinth
//! band of every wall, extracts one plane segment per wall, solves for
//! rotation and horizontal translation with a constrained Gauss–Helmert
//! adjustment, and finally lifts the cloud onto the terrain model.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assoc;
pub mod extract;
pub mod geom;
pub mod ghm;
pub mod ground;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod plinth;
pub mod ransac;
pub mod seed;
pub mod spatial;
pub mod strategy;
pub mod synth;
pub mod vertical;
