//! Batched valid 1D convolution via im2col.
//!
//! Activations are stored channel-major as `[C, B * T]`: all `B` sequences
//! of one channel lie back to back in a row, each `T` frames long.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::Real;
use crate::error::{Error, Result};

/// Unfold `[C, B * T]` into `[C * w, B * T']` with `T' = T - d (w - 1)`.
/// Row `c * w + j` holds channel `c` shifted by `j * d`.
pub(crate) fn im2col<F: Real>(
    x: ArrayView2<F>,
    batch: usize,
    width: usize,
    dilation: usize,
) -> Array2<F> {
    let (c, cols) = x.dim();
    let t = cols / batch;
    let t_out = t - dilation * (width - 1);
    let mut out = Array2::zeros((c * width, batch * t_out));
    for ci in 0..c {
        let row = x.row(ci);
        for j in 0..width {
            let mut orow = out.row_mut(ci * width + j);
            for b in 0..batch {
                let src = b * t + j * dilation;
                orow.slice_mut(s![b * t_out..(b + 1) * t_out])
                    .assign(&row.slice(s![src..src + t_out]));
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add columns back onto `[C, B * T]`.
pub(crate) fn col2im<F: Real>(
    cols: ArrayView2<F>,
    channels: usize,
    batch: usize,
    t: usize,
    width: usize,
    dilation: usize,
) -> Array2<F> {
    let t_out = t - dilation * (width - 1);
    let mut out = Array2::zeros((channels, batch * t));
    for ci in 0..channels {
        let mut orow = out.row_mut(ci);
        for j in 0..width {
            let row = cols.row(ci * width + j);
            for b in 0..batch {
                let dst = b * t + j * dilation;
                let mut target = orow.slice_mut(s![dst..dst + t_out]);
                target += &row.slice(s![b * t_out..(b + 1) * t_out]);
            }
        }
    }
    out
}

/// Drop `trim` frames from both ends of every sequence.
pub(crate) fn slice_center<F: Real>(x: ArrayView2<F>, batch: usize, trim: usize) -> Array2<F> {
    let (c, cols) = x.dim();
    let t = cols / batch;
    let t_out = t - 2 * trim;
    let mut out = Array2::zeros((c, batch * t_out));
    for b in 0..batch {
        out.slice_mut(s![.., b * t_out..(b + 1) * t_out])
            .assign(&x.slice(s![.., b * t + trim..b * t + trim + t_out]));
    }
    out
}

/// Adjoint of [`slice_center`]: zero-pad every sequence by `trim` frames.
pub(crate) fn unslice_center<F: Real>(
    x: ArrayView2<F>,
    batch: usize,
    trim: usize,
) -> Array2<F> {
    let (c, cols) = x.dim();
    let t_in = cols / batch;
    let t = t_in + 2 * trim;
    let mut out = Array2::zeros((c, batch * t));
    for b in 0..batch {
        out.slice_mut(s![.., b * t + trim..b * t + trim + t_in])
            .assign(&x.slice(s![.., b * t_in..(b + 1) * t_in]));
    }
    out
}

/// `W @ cols + bias`, with `W` given as `[C_out, C_in * w]`.
pub(crate) fn affine<F: Real>(w: ArrayView2<F>, bias: ArrayView1<F>, cols: &Array2<F>) -> Array2<F> {
    let mut z = w.dot(cols);
    z += &bias.insert_axis(Axis(1));
    z
}

/// Valid (unpadded) cross-correlation of a `[C_in, T]` signal with a
/// `[C_out, C_in, w]` kernel at dilation `d`.
pub fn conv1d_valid<F: Real>(
    input: ArrayView2<F>,
    kernel: ArrayView3<F>,
    bias: ArrayView1<F>,
    dilation: usize,
) -> Result<Array2<F>> {
    let (c_out, c_in, width) = kernel.dim();
    if input.nrows() != c_in || bias.len() != c_out {
        return Err(Error::InvalidInput(format!(
            "kernel expects {c_in} input and {c_out} output channels, got input {:?} and bias {}",
            input.dim(),
            bias.len()
        )));
    }
    let required = dilation * (width - 1) + 1;
    if input.ncols() < required {
        return Err(Error::SequenceTooShort {
            required,
            actual: input.ncols(),
        });
    }
    let w = kernel
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c_out, c_in * width))
        .expect("contiguous kernel");
    let cols = im2col(input.as_standard_layout().view(), 1, width, dilation);
    Ok(affine(w.view(), bias, &cols))
}

/// Frames seen by one output of a stack of two-convolution blocks.
pub fn receptive_field(width: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| 2 * d * (width - 1)).sum::<usize>()
}
