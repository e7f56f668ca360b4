//! Shape broadcasting helpers shared by elementwise and shape operations.
//!
//! Broadcasting follows the usual right-aligned rule: trailing dimensions are
//! compared pairwise and must either match or be 1 on one side; missing
//! leading dimensions are treated as 1.

use crate::error::{Error, Result};
use alloc::vec::Vec;

/// Broadcast shape of `a` and `b`, or an error naming both shapes.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = alloc::vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::shape(
                op,
                alloc::format!("cannot broadcast {a:?} with {b:?} (dim {i}: {da} vs {db})"),
            ));
        };
    }
    Ok(out)
}

/// For every flat index of `out_shape`, the flat index of the element of
/// `src_shape` it reads under broadcasting. `src_shape` must be
/// broadcast-compatible with (and no longer than) `out_shape`.
pub(crate) fn index_map(out_shape: &[usize], src_shape: &[usize]) -> Vec<usize> {
    let on = out_shape.len();
    let sn = src_shape.len();
    debug_assert!(sn <= on);
    // Right-aligned source strides; broadcast dimensions get stride 0.
    let mut strides = alloc::vec![0usize; on];
    let mut stride = 1usize;
    for i in (0..sn).rev() {
        if src_shape[i] != 1 {
            strides[on - sn + i] = stride;
        }
        stride *= src_shape[i];
    }
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut coord = alloc::vec![0usize; on];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for d in (0..on).rev() {
            coord[d] += 1;
            src += strides[d];
            if coord[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            coord[d] = 0;
        }
    }
    map
}

/// Values of a source tensor materialized at the broadcast shape.
pub(crate) fn expand(src: &[f64], src_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if src_shape == out_shape {
        return src.to_vec();
    }
    index_map(out_shape, src_shape).iter().map(|&i| src[i]).collect()
}

/// Sum a gradient at the broadcast shape back down to the source shape.
pub(crate) fn reduce_to_shape(grad: &[f64], out_shape: &[usize], src_shape: &[usize]) -> Vec<f64> {
    if src_shape == out_shape {
        return grad.to_vec();
    }
    let mut out = alloc::vec![0.0; src_shape.iter().product()];
    for (g, &i) in grad.iter().zip(index_map(out_shape, src_shape).iter()) {
        out[i] += g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[2, 3]).unwrap(), alloc::vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[3, 1]).unwrap(), alloc::vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[5], &[2, 5]).unwrap(), alloc::vec![2, 5]);
        assert!(broadcast_shape("t", &[2, 3], &[4]).is_err());
    }

    #[test]
    fn expand_row_across_matrix() {
        // [1, 3] broadcast to [2, 3] repeats the row.
        let v = expand(&[1.0, 2.0, 3.0], &[1, 3], &[2, 3]);
        assert_eq!(v, alloc::vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn reduce_sums_broadcast_dims() {
        // Gradient at [2, 3] reduced to [1, 3] sums over rows.
        let g = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[1, 3]), alloc::vec![11.0, 22.0, 33.0]);
        // ... and to [2, 1] sums over columns.
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[2, 1]), alloc::vec![6.0, 60.0]);
        // Scalar source collects everything.
        assert_eq!(reduce_to_shape(&g, &[2, 3], &[1]), alloc::vec![66.0]);
    }
}
