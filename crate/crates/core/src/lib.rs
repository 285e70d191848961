//! Interactive SIMP compliance minimization on voxel domains.

pub mod bc;
pub mod config;
pub mod exec;
pub mod export;
pub mod filter;
pub mod fea;
pub mod frame;
pub mod mesh;
pub mod optimizer;
pub mod session;
