//! Transforms: radix-2 FFT, decimated wavelet transform pair, and a direct
//! circular-convolution reference.

pub mod conv;
pub mod dwt;
pub mod fft;

pub use conv::circular_convolve;
pub use dwt::{
    dwt2_forward, dwt2_inverse, dwt_forward, dwt_inverse, WaveletFamily, WaveletPyramid,
    WaveletPyramid2,
};
pub use fft::{fft, fft2_in_place, fft_in_place, fft_real};
