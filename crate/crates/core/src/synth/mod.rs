//! Procedural subjects: parametric specs, rendering and scoring.

pub mod corpus;
pub mod dataset;
pub mod metrics;
pub mod render;
mod spec;

pub use metrics::{condition_alignment, identity_score, IdentityReference, PanelAnalysis};
pub use render::{render_layers, render_view, Layers};
pub use spec::*;
