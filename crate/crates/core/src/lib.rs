//! Elastostatic calibration of serial robots with a gravity compensator on
//! joint 2.

pub mod compensation;
pub mod design;
pub mod error;
pub mod geometry;
pub mod ident;
pub mod io;
pub mod linalg;
pub mod model;
pub mod registration;
pub mod seed;
pub mod sim;
pub mod stiffness;

pub use error::{Error, Result};
