pub mod dataset;
pub mod forward;
pub mod geometry;
pub mod inverse;
pub mod metrics;
pub mod mesh;
pub mod phantom;
pub mod protocol;
pub mod seed;
pub mod sparse;
pub mod voxel;
