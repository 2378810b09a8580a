//! Weight initializers.

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::kernels::bilinear_filter;
use crate::tensor::Tensor;

/// He-style uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]` for conv and dense layers.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let r = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, r, rng)
}

/// Uniform in `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`, used for recurrent weights.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let r = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Tensor::uniform(shape, r, rng)
}

/// Transposed-convolution kernel `[c_in, c_out, k, k]` holding the bilinear
/// filter on the channel diagonal and zeros elsewhere.
pub fn bilinear_deconv_kernel(c_in: usize, c_out: usize, k: usize) -> Tensor {
    let filter = bilinear_filter(k);
    let mut t = Tensor::zeros(&[c_in, c_out, k, k]);
    for c in 0..c_in.min(c_out) {
        let off = (c * c_out + c) * k * k;
        t.data_mut()[off..off + k * k].copy_from_slice(&filter);
    }
    t
}

/// Kernel and padding for a bilinear upsampler by `stride`. The kernel must be
/// `2 * stride` wide; the padding crops the output to exactly `stride` times
/// the input extent.
pub fn bilinear_upsampler(c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Result<(Tensor, usize)> {
    if stride == 0 || stride % 2 == 1 || kernel != 2 * stride {
        return Err(CoreError::Config(format!(
            "bilinear upsampling needs an even stride and kernel = 2 * stride, got kernel {kernel}, stride {stride}"
        )));
    }
    Ok((bilinear_deconv_kernel(c_in, c_out, kernel), stride / 2))
}
