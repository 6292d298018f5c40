//! Minimal NCHW tensor ops with hand-derived backward passes.
//!
//! Everything is generic over [`Scalar`] so training can run in f32 while
//! gradient verification runs in f64.

pub mod adam;
pub mod ops;

use ndarray::NdFloat;
use rand::distributions::uniform::SampleUniform;

/// Floating-point element type for all network math.
pub trait Scalar: NdFloat + SampleUniform {
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Probability clamp applied after every sigmoid.
    fn prob_eps() -> Self {
        Self::from_f64(1e-7)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}

/// Forward-pass mode: training uses batch statistics in normalization
/// layers, eval uses the accumulated running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
