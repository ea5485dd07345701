//! Unsupervised bi-directional multi-modal registration with Grad-CAM
//! attention maps.
//!
//! Two images of different contrast are encoded by one shared encoder. Two
//! decoders synthesize each modality from the other, two transformation
//! networks predict an affine-plus-dense warp in each direction, and two
//! patch critics score realism. [`xai`] reads attention off the encoder, the
//! transformation networks and the critics.

pub mod error;
pub mod eval;
pub mod io;
pub mod nets;
pub mod train;
pub mod warp;
pub mod xai;

pub use error::{Error, NpyError, Result};
pub use xreg_autograd as autograd;
