pub mod affective;
pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod gait;
pub mod gradcheck;
pub mod io;
pub mod params;
pub mod rng;
pub mod skeleton;
pub mod stepgen;
pub mod stgcn;
pub mod synth;
pub mod tensor;
pub mod training;

pub use autodiff::{Bindings, Expr, Gradients, Graph};
pub use error::{Error, ErrorKind, Result};
pub use gait::{Emotion, GaitSequence};
pub use tensor::Tensor;
