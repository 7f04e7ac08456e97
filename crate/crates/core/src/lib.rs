pub mod artifact;
pub mod coupling;
pub mod eim;
pub mod error;
pub mod fem;
pub mod ffd;
pub mod mesh;
pub mod quadrature;
pub mod rb;
pub mod sparse;

pub use error::{Error, Result};
