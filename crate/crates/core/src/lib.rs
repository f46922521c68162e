pub mod agent;
pub mod envs;
pub mod nn;
pub mod par;
pub mod sinkhorn;
pub mod theory;
