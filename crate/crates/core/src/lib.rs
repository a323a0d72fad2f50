pub mod bracket;
pub mod checks;
pub mod controlled;
pub mod error;
pub mod forest;
pub mod geometry;
pub mod hopf;
pub mod lift;
pub mod poly;
pub mod rough_path;

pub use error::{Error, Result};
pub use forest::{Atom, Attach, Forest, Label, Tree};
pub use hopf::{AlgElem, TensorElem, Word, WordSum, Q};
pub use rough_path::{Basis, Extension, RoughPath};
