//! Reference-guided super-resolution of cardiac diffusion tensor imaging:
//! phantom generation, degradation, a small autodiff substrate, the
//! generator/discriminator networks, training, image metrics and tensor
//! fitting.

pub mod degrade;
pub mod dtfit;
pub mod error;
pub mod experiment;
pub mod metrics;
mod par;
pub mod phantom;
pub mod selfcheck;
pub mod srnet;
pub mod substrate;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
