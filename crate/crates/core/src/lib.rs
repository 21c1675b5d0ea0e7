pub mod error;
pub mod kinematics;
pub mod mesh;
pub mod par;
pub mod render;
pub mod se3;
pub mod harness;
pub mod optimize;
pub mod explore;
pub mod baseline;
