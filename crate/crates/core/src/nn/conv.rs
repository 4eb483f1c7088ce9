use crate::error::{Error, Result};

use super::tape::Tape;
use super::tensor::Tensor;

/// Valid cross-correlation of a single `[h, w, c_in]` input with
/// `[f, f, c_in, c_out]` kernels; returns `[h', w', c_out]`.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    bias: &Tensor,
) -> Result<Tensor> {
    if input.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "conv2d_forward: input must be h×w×c, got {:?}",
            input.shape()
        )));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let mut t = Tape::new();
    let x = t.constant(input.clone().reshape(&shape)?);
    let k = t.constant(kernels.clone());
    let b = t.constant(bias.clone());
    let y = t.conv2d(x, k, b, (stride, stride))?;
    let out = t.value(y);
    out.clone().reshape(&out.shape()[1..])
}
