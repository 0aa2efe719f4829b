use crate::nncore::{NdArray, Scalar};
use crate::Result;

/// Concatenates `[B, n_i]` matrices along axis 1.
pub(crate) fn concat_cols<F: Scalar>(parts: &[&NdArray<F>]) -> Result<NdArray<F>> {
    let batch = parts[0].shape()[0];
    let widths: Vec<usize> = parts.iter().map(|p| p.row_len()).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(batch * total);
    for b in 0..batch {
        for p in parts {
            out.extend_from_slice(p.row(b));
        }
    }
    NdArray::new([batch, total], out)
}

/// Inverse of [`concat_cols`].
pub(crate) fn split_cols<F: Scalar>(x: &NdArray<F>, widths: &[usize]) -> Result<Vec<NdArray<F>>> {
    let batch = x.shape()[0];
    let mut parts: Vec<Vec<F>> = widths.iter().map(|w| Vec::with_capacity(batch * w)).collect();
    for b in 0..batch {
        let row = x.row(b);
        let mut off = 0;
        for (p, &w) in parts.iter_mut().zip(widths) {
            p.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(p, &w)| NdArray::new([batch, w], p))
        .collect()
}

/// `[B, T, C]` ↔ `[B, C, T]`.
pub(crate) fn swap_last_two<F: Scalar>(x: &NdArray<F>) -> Result<NdArray<F>> {
    let [b, t, c] = x.dims("swap_last_two", "input")?;
    let mut out = vec![F::zero(); x.len()];
    let d = x.data();
    for bi in 0..b {
        for ti in 0..t {
            for ci in 0..c {
                out[(bi * c + ci) * t + ti] = d[(bi * t + ti) * c + ci];
            }
        }
    }
    NdArray::new([b, c, t], out)
}

/// Images `[N, H, W, C]` to `[N, C, H, W]`.
pub(crate) fn hwc_to_chw<F: Scalar>(x: &NdArray<F>) -> Result<NdArray<F>> {
    let [n, h, w, c] = x.dims("hwc_to_chw", "images")?;
    let mut out = vec![F::zero(); x.len()];
    let d = x.data();
    for ni in 0..n {
        for yi in 0..h {
            for xi in 0..w {
                for ci in 0..c {
                    out[((ni * c + ci) * h + yi) * w + xi] = d[((ni * h + yi) * w + xi) * c + ci];
                }
            }
        }
    }
    NdArray::new([n, c, h, w], out)
}
