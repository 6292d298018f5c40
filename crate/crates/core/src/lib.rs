//! Cross-domain crowd counting with semantic-consistency domain adaptation.
//!
//! A labeled source domain (head points + exact crowd masks) and a target
//! domain carrying only coarse rectangular crowd masks are bridged by four
//! cooperating sub-networks: a shared feature extractor, a density estimator,
//! a pyramid-pooling crowd-mask head, and a patch discriminator trained
//! adversarially against the extractor. Counting happens by integrating
//! predicted density maps.
//!
//! Module layout:
//! - [`datamodel`]: domain types, on-disk dataset format, synthetic scene generator
//! - [`density`]: Gaussian density-map rasterization and counting
//! - [`networks`]: the four sub-networks and their parameter containers
//! - [`losses`]: density, segmentation, adversarial, and discriminator losses
//! - [`training`]: alternating two-phase optimization, checkpoints, gradient checks
//! - [`evaluation`]: MAE/MSE counting errors, PSNR/SSIM map quality, reports

pub mod datamodel;
pub mod density;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
