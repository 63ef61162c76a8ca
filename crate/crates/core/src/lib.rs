//! Volumetric coronary-vessel segmentation.
//!
//! The pipeline enhances tubular structures with a multiscale Frangi filter,
//! feeds the CT intensities and the vesselness map as two channels of 32³
//! volumes of interest into a 3D U-Net, and reconstructs whole-volume
//! predictions by aggregating overlapping patches before keeping the largest
//! connected components.
//!
//! Modules follow the data flow:
//!
//! - [`volume`]: grids, windowing, VOI extraction, NIfTI-1 I/O
//! - [`frangi`]: Gaussian-derivative Hessian and vesselness
//! - [`preprocess`]: thresholding, morphology, labeling, skeletons
//! - [`sampling`]: balanced patch manifests and cube-symmetry augmentation
//! - [`phantom`]: synthetic tubular volumes with ground truth
//! - [`net`]: the U-Net, its hand-written backward pass, Dice loss and Adam
//! - [`pipeline`]: training, sliding-window inference and evaluation

pub mod error;
pub mod frangi;
pub mod net;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod sampling;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Mask3, Volume3, WindowSpec};
