//! Double-contrast semi-supervised learning engine.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: tensors, a reverse-mode tape, the feature/semantic contrast
//! losses, an exact discrete oracle for the InfoNCE mutual-information bound,
//! a small MLP encoder with a softmax head, augmentations, data splitting and
//! the SGD training loop. File formats, the CIFAR-10 reader and the command
//! line live in the `dualcon` companion crate.
#![no_std]

extern crate alloc;

pub mod augment;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod mi_oracle;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
