//! Synthetic ground-truth scenes: a procedural blendshape rig, a mesh-based
//! oracle renderer, a view-angle-dependent degradation model and complete
//! dataset generation. Stands in for the upstream coarse-video generator so
//! every pipeline property is measurable against known ground truth.

mod dataset;
mod degrade;
mod rig;
mod shade;

pub use dataset::{make_dataset, Dataset, Frame, FrameMeta, SceneSpec, Tier};
pub use degrade::{degrade, gaussian_blur, DegradationParams};
pub use rig::make_rig;
pub use shade::{ground_truth_render, ShadingConfig};
