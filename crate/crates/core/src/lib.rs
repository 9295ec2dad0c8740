//! Load-altering attack analysis on linearized power-grid frequency dynamics.

pub mod case_io;
pub mod defense;
pub mod eigen;
pub mod error;
pub mod grid;
pub mod lp;
pub mod ode;
pub mod qz;
pub mod response;
pub mod scalar;
pub mod sensitivity;
pub mod simulate;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

/// Double-precision aliases.
pub mod f64 {
    pub type GridCase = crate::case_io::GridCase<f64>;
    pub type DynamicParams = crate::case_io::DynamicParams<f64>;
    pub type AttackSpec = crate::grid::AttackSpec<f64>;
    pub type StatePencil = crate::grid::StatePencil<f64>;
    pub type EigenSolution = crate::eigen::EigenSolution<f64>;
}

/// Single-precision aliases.
pub mod f32 {
    pub type GridCase = crate::case_io::GridCase<f32>;
    pub type DynamicParams = crate::case_io::DynamicParams<f32>;
    pub type AttackSpec = crate::grid::AttackSpec<f32>;
    pub type StatePencil = crate::grid::StatePencil<f32>;
    pub type EigenSolution = crate::eigen::EigenSolution<f32>;
}
