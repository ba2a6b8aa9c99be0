//! Desk-scale OCR training and mutual-learning distillation.

pub mod datakit;
pub mod distill;
pub mod error;
pub mod evalkit;
pub mod losses;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Graph, Tensor, Var};
