//! Array types and the MRI encoding physics: centered orthonormal FFTs,
//! coil expansion and combination, line masking and the composite forward
//! operator with its adjoint.

pub mod fft;
pub mod ops;
pub mod types;

pub use fft::{fft2_centered, fft2c, ifft2_centered, ifft2c, CenteredFft2};
pub use ops::{
    adjoint_operator, apply_mask, expand_coils, forward_operator, inner, reduce_coils, rss,
    rss_image, EncodingOperator,
};
pub use types::{
    CoilSensitivities, ComplexImage, DynamicImage, DynamicKSpace, KSpaceShape, RealImage,
    SamplingMask,
};
