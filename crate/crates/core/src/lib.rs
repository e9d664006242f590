//! PV-RNN: a predictive-coding variational recurrent network whose
//! complexity term is weighted per layer by a meta-prior, together with the
//! synthetic movement-primitive task, training, stand-alone analysis and a
//! dyadic active-inference interaction engine.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod interaction;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
