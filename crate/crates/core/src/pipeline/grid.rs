//! Canonical coordinate lattices.

use crate::error::{DdmiError, Result};
use crate::field::CoordinateBatch;
use crate::tensor::{Element, Tensor};

/// Align-corners lattice over [-1, 1]^m in row-major order: component j
/// runs over axis j, the last axis fastest. Extents of 2 or 3 axes.
pub fn make_grid<E: Element>(extents: &[usize]) -> Result<CoordinateBatch<E>> {
    if extents.len() != 2 && extents.len() != 3 {
        return Err(DdmiError::RankMismatch { expected: 2, got: extents.to_vec() });
    }
    for &e in extents {
        if e < 2 {
            return Err(DdmiError::GridExtent(e));
        }
    }
    let m = extents.len();
    let total: usize = extents.iter().product();
    let axes: Vec<Vec<E>> = extents
        .iter()
        .map(|&e| {
            (0..e)
                .map(|i| E::from_f64(-1.0 + 2.0 * i as f64 / (e - 1) as f64))
                .collect()
        })
        .collect();

    let mut data = Vec::with_capacity(total * m);
    let mut idx = vec![0usize; m];
    for _ in 0..total {
        for d in 0..m {
            data.push(axes[d][idx[d]]);
        }
        for d in (0..m).rev() {
            idx[d] += 1;
            if idx[d] < extents[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    CoordinateBatch::new(Tensor::from_vec(data, &[total, m])?)
}
