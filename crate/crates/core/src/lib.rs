//! End-to-end FMCW radar processing-chain distillation at desk scale.
//!
//! The crate covers the whole loop:
//!
//! 1. [`fmcw`] synthesizes raw ADC cubes for randomized point-target scenes
//!    with calibrated ground truth.
//! 2. [`teacher`] runs the classical chain — windowed range/Doppler DFTs,
//!    CFAR thresholding, FFT or MUSIC angle estimation — and pseudo-labels
//!    each ADC cube with its range-Doppler-azimuth (RAD) tensor.
//! 3. [`learnable`] is a differentiable re-expression of that chain:
//!    learnable windows, paired real/imaginary DFT weight matrices, a
//!    learnable angle transform, and a magnitude head, with hand-written
//!    reverse-mode gradients.
//! 4. [`trainer`] distills the teacher into the learnable module on
//!    (ADC, RAD) pairs with smooth-L1 loss and Adam, evaluates relative
//!    absolute error, and drives the initialization ablations.
//! 5. [`heads`] adds the multi-task losses, a toy per-cell detection and
//!    segmentation head, and the evaluation metrics.
//!
//! Tensor math lives in [`tensor`] and is generic over the scalar type
//! ([`scalar::Scalar`]); the pipeline runs on the `f64` aliases
//! [`RealTensor`] and [`ComplexTensor`] re-exported here.

pub mod config;
pub mod error;
pub mod fmcw;
pub mod grid;
pub mod heads;
pub mod learnable;
pub mod scalar;
pub mod teacher;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{ComplexTensor, ComplexTensorOf, RealTensor, RealTensorOf};
