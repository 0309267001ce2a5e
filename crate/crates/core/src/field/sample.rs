//! Bilinear field sampling and tri-plane projection.

use super::{BasisFieldPlane, BasisFieldSet, CoordinateBatch, FieldLayout};
use crate::error::{DdmiError, Result};
use crate::tensor::{Element, Tensor};

/// Map a coordinate in [-1, 1] to node space [0, extent-1] and split it
/// into a base index in [0, extent-2] plus a fraction in [0, 1].
fn node_split<E: Element>(c: E, extent: usize) -> (usize, E) {
    let half = E::from_f64(0.5);
    let u = (c + E::ONE) * half * E::from_f64((extent - 1) as f64);
    let mut i = u.to_f64().floor() as usize;
    if i >= extent - 1 {
        i = extent - 2;
    }
    (i, u - E::from_f64(i as f64))
}

/// Interpolate a basis-field plane at 2D coordinates.
///
/// Returns `[I, C]`: the distance-weighted average of the four grid
/// nodes enclosing each coordinate. Differentiable w.r.t. the grid.
pub fn bilinear_sample<E: Element>(
    plane: &BasisFieldPlane<E>,
    coords: &CoordinateBatch<E>,
) -> Result<Tensor<E>> {
    if coords.dim() != 2 {
        return Err(DdmiError::LayoutMismatch { layout: "plane", dim: coords.dim() });
    }
    let grid = &plane.grid;
    let (c, h, w) = (grid.shape()[0], grid.shape()[1], grid.shape()[2]);
    let rows = coords.len();
    let cd = coords.tensor().data();

    // Channel-last copy so each gather touches one contiguous slice.
    let src = grid.data();
    let hw = h * w;
    let mut cl = vec![E::ZERO; hw * c];
    for ch in 0..c {
        let plane_src = &src[ch * hw..(ch + 1) * hw];
        for i in 0..hw {
            cl[i * c + ch] = plane_src[i];
        }
    }

    // (corner offsets, weights) per coordinate row; reused by the VJP.
    let mut corners = Vec::with_capacity(rows);
    let mut out = vec![E::ZERO; rows * c];
    for r in 0..rows {
        let (i0, fu) = node_split(cd[r * 2], h);
        let (j0, fv) = node_split(cd[r * 2 + 1], w);
        let base00 = (i0 * w + j0) * c;
        let base01 = base00 + c;
        let base10 = base00 + w * c;
        let base11 = base10 + c;
        let w00 = (E::ONE - fu) * (E::ONE - fv);
        let w01 = (E::ONE - fu) * fv;
        let w10 = fu * (E::ONE - fv);
        let w11 = fu * fv;
        corners.push(([base00, base01, base10, base11], [w00, w01, w10, w11]));
        let dst = &mut out[r * c..(r + 1) * c];
        for ch in 0..c {
            dst[ch] = cl[base00 + ch] * w00
                + cl[base01 + ch] * w01
                + cl[base10 + ch] * w10
                + cl[base11 + ch] * w11;
        }
    }

    let (gid, gn, need) = (grid.id(), grid.numel(), grid.requires_grad());
    Ok(Tensor::from_op(
        out,
        vec![rows, c],
        vec![grid.clone()],
        move |g, sink| {
            if !need {
                return;
            }
            // Accumulate channel-last, then fold back to [C, H, W].
            let mut acc = vec![E::ZERO; hw * c];
            for (r, (bases, weights)) in corners.iter().enumerate() {
                let gr = &g[r * c..(r + 1) * c];
                for k in 0..4 {
                    let base = bases[k];
                    let wgt = weights[k];
                    let slot = &mut acc[base..base + c];
                    for ch in 0..c {
                        slot[ch] += gr[ch] * wgt;
                    }
                }
            }
            let buf = sink.buf(gid, gn);
            for ch in 0..c {
                let dst = &mut buf[ch * hw..(ch + 1) * hw];
                for i in 0..hw {
                    dst[i] += acc[i * c + ch];
                }
            }
        },
    ))
}

/// Drop one axis per plane: `(x, y, z) -> (x, y), (y, z), (x, z)`.
pub fn project_triplane<E: Element>(coords3: &Tensor<E>) -> Result<[Tensor<E>; 3]> {
    if coords3.rank() != 2 || coords3.shape()[1] != 3 {
        return Err(DdmiError::RankMismatch { expected: 2, got: coords3.shape().to_vec() });
    }
    let rows = coords3.shape()[0];
    let d = coords3.data();
    for (row, chunk) in d.chunks(3).enumerate() {
        for &v in chunk {
            let vf = v.to_f64();
            if !(-1.0..=1.0).contains(&vf) {
                return Err(DdmiError::CoordinateOutOfRange { value: vf, row });
            }
        }
    }
    let mut xy = Vec::with_capacity(rows * 2);
    let mut yz = Vec::with_capacity(rows * 2);
    let mut xz = Vec::with_capacity(rows * 2);
    for r in 0..rows {
        let (x, y, z) = (d[r * 3], d[r * 3 + 1], d[r * 3 + 2]);
        xy.extend_from_slice(&[x, y]);
        yz.extend_from_slice(&[y, z]);
        xz.extend_from_slice(&[x, z]);
    }
    Ok([
        Tensor::from_vec(xy, &[rows, 2])?,
        Tensor::from_vec(yz, &[rows, 2])?,
        Tensor::from_vec(xz, &[rows, 2])?,
    ])
}

/// Multi-scale positional embeddings: one `[I, C]` tensor per scale,
/// coarse to fine. Tri-plane layouts sum the three orientation samples.
pub fn sample_hdbf<E: Element>(
    set: &BasisFieldSet<E>,
    coords: &CoordinateBatch<E>,
) -> Result<Vec<Tensor<E>>> {
    if coords.dim() != set.layout().coord_dim() {
        return Err(DdmiError::LayoutMismatch { layout: set.layout().name(), dim: coords.dim() });
    }
    let mut embeddings = Vec::with_capacity(set.num_scales());
    match set.layout() {
        FieldLayout::SinglePlane => {
            for s in 1..=set.num_scales() {
                let plane = &set.scale(s)?[0];
                embeddings.push(bilinear_sample(plane, coords)?);
            }
        }
        FieldLayout::TriPlane => {
            let projected = project_triplane(coords.tensor())?;
            let batches: Vec<CoordinateBatch<E>> = projected
                .into_iter()
                .map(CoordinateBatch::new)
                .collect::<Result<_>>()?;
            for s in 1..=set.num_scales() {
                let planes = set.scale(s)?;
                let mut acc = bilinear_sample(&planes[0], &batches[0])?;
                for (plane, batch) in planes[1..].iter().zip(&batches[1..]) {
                    acc = acc.add(&bilinear_sample(plane, batch)?)?;
                }
                embeddings.push(acc);
            }
        }
    }
    Ok(embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{BasisFieldSet, Orientation, NUM_SCALES};
    use crate::rng::Rng;
    use crate::tensor::grad_check;

    fn plane_from(vals: Vec<f64>, c: usize, h: usize, w: usize) -> BasisFieldPlane<f64> {
        BasisFieldPlane::new(
            Tensor::from_vec(vals, &[c, h, w]).unwrap(),
            1,
            Orientation::Single,
        )
        .unwrap()
    }

    fn coords(vals: Vec<f64>, m: usize) -> CoordinateBatch<f64> {
        let rows = vals.len() / m;
        CoordinateBatch::new(Tensor::from_vec(vals, &[rows, m]).unwrap()).unwrap()
    }

    /// Direct bilinear formula over a 2x2 scalar grid: the independent
    /// oracle for interpolated values under the axis-order convention
    /// (first coordinate component walks the first grid axis).
    fn bilinear_2x2_oracle(g: [f64; 4], c0: f64, c1: f64) -> f64 {
        let u = (c0 + 1.0) / 2.0;
        let v = (c1 + 1.0) / 2.0;
        (1.0 - u) * (1.0 - v) * g[0]
            + (1.0 - u) * v * g[1]
            + u * (1.0 - v) * g[2]
            + u * v * g[3]
    }

    #[test]
    fn corner_coordinates_return_corner_values() {
        let plane = plane_from(vec![10.0, 20.0, 30.0, 40.0], 1, 2, 2);
        let cb = coords(vec![-1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0], 2);
        let out = bilinear_sample(&plane, &cb).unwrap();
        assert_eq!(out.to_vec(), vec![10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn center_is_mean_of_corners() {
        let plane = plane_from(vec![1.0, 2.0, 3.0, 4.0], 1, 2, 2);
        let out = bilinear_sample(&plane, &coords(vec![0.0, 0.0], 2)).unwrap();
        assert!((out.item() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_formula_oracle() {
        // Grid [[0,1],[2,3]], coordinate (0.5, -0.5): node coordinates
        // u=0.75 along axis 0, v=0.25 along axis 1. Oracle value 1.75.
        let g = [0.0, 1.0, 2.0, 3.0];
        let expect = bilinear_2x2_oracle(g, 0.5, -0.5);
        assert!((expect - 1.75).abs() < 1e-12);

        let plane = plane_from(g.to_vec(), 1, 2, 2);
        let out = bilinear_sample(&plane, &coords(vec![0.5, -0.5], 2)).unwrap();
        assert!((out.item() - expect).abs() < 1e-12);
    }

    #[test]
    fn node_exactness_on_larger_grids() {
        let mut rng = Rng::seed_from(9);
        let (h, w) = (5, 7);
        let vals: Vec<f64> = (0..2 * h * w).map(|_| rng.normal()).collect();
        let plane = plane_from(vals.clone(), 2, h, w);
        for i in 0..h {
            for j in 0..w {
                let c0 = -1.0 + 2.0 * i as f64 / (h - 1) as f64;
                let c1 = -1.0 + 2.0 * j as f64 / (w - 1) as f64;
                let out = bilinear_sample(&plane, &coords(vec![c0, c1], 2)).unwrap();
                for ch in 0..2 {
                    let stored = vals[ch * h * w + i * w + j];
                    assert!(
                        (out.data()[ch] - stored).abs() < 1e-5,
                        "node ({i},{j}) channel {ch}"
                    );
                }
            }
        }
    }

    #[test]
    fn linear_precision() {
        // Grid values affine in (u, v) are reproduced exactly anywhere.
        let (h, w) = (4, 6);
        let affine = |u: f64, v: f64| 0.7 * u - 1.3 * v + 0.25;
        let mut vals = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                vals.push(affine(i as f64 / (h - 1) as f64, j as f64 / (w - 1) as f64));
            }
        }
        let plane = plane_from(vals, 1, h, w);
        let mut rng = Rng::seed_from(12);
        for _ in 0..200 {
            let c0 = rng.uniform_in(-1.0, 1.0);
            let c1 = rng.uniform_in(-1.0, 1.0);
            let out = bilinear_sample(&plane, &coords(vec![c0, c1], 2)).unwrap();
            let expect = affine((c0 + 1.0) / 2.0, (c1 + 1.0) / 2.0);
            assert!((out.item() - expect).abs() < 1e-5, "at ({c0},{c1})");
        }
    }

    #[test]
    fn grid_gradient_matches_finite_differences() {
        let mut rng = Rng::seed_from(15);
        let grid = Tensor::<f64>::from_vec((0..3 * 3 * 4).map(|_| rng.normal()).collect(), &[3, 3, 4]).unwrap();
        let query: Vec<f64> = (0..10).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let err = grad_check(
            |g| {
                let plane = BasisFieldPlane::new(g.clone(), 1, Orientation::Single).unwrap();
                bilinear_sample(&plane, &coords(query.clone(), 2))
                    .unwrap()
                    .square()
                    .sum()
            },
            &grid,
            1e-5,
        );
        assert!(err < 1e-4, "bilinear grad error {err}");
    }

    #[test]
    fn projection_drops_one_axis_per_plane() {
        let c = Tensor::from_vec(vec![0.0, 0.0, 0.0, 1.0, -1.0, 0.5], &[2, 3]).unwrap();
        let [xy, yz, xz] = project_triplane(&c).unwrap();
        assert_eq!(xy.to_vec(), vec![0.0, 0.0, 1.0, -1.0]);
        assert_eq!(yz.to_vec(), vec![0.0, 0.0, -1.0, 0.5]);
        assert_eq!(xz.to_vec(), vec![0.0, 0.0, 1.0, 0.5]);
    }

    #[test]
    fn projection_idempotent_per_output_pair() {
        // Lifting an output pair back to 3D (dropped axis set to 0) and
        // projecting again leaves that pair unchanged.
        let mut rng = Rng::seed_from(33);
        let vals: Vec<f64> = (0..30).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let c = Tensor::from_vec(vals, &[10, 3]).unwrap();
        let [xy, yz, xz] = project_triplane(&c).unwrap();

        let lift = |pair: &Tensor<f64>, axes: (usize, usize)| {
            let rows = pair.shape()[0];
            let mut out = vec![0.0; rows * 3];
            for r in 0..rows {
                out[r * 3 + axes.0] = pair.data()[r * 2];
                out[r * 3 + axes.1] = pair.data()[r * 2 + 1];
            }
            Tensor::from_vec(out, &[rows, 3]).unwrap()
        };
        let [xy2, _, _] = project_triplane(&lift(&xy, (0, 1))).unwrap();
        assert_eq!(xy2.to_vec(), xy.to_vec());
        let [_, yz2, _] = project_triplane(&lift(&yz, (1, 2))).unwrap();
        assert_eq!(yz2.to_vec(), yz.to_vec());
        let [_, _, xz2] = project_triplane(&lift(&xz, (0, 2))).unwrap();
        assert_eq!(xz2.to_vec(), xz.to_vec());
    }

    #[test]
    fn projection_rejects_out_of_range() {
        let c = Tensor::from_vec(vec![0.0, 0.0, 1.01], &[1, 3]).unwrap();
        assert!(matches!(
            project_triplane(&c),
            Err(DdmiError::CoordinateOutOfRange { .. })
        ));
    }

    fn const_single_set(v: f64, c: usize) -> BasisFieldSet<f64> {
        BasisFieldSet::single_plane([
            Tensor::full(v, &[c, 2, 2]),
            Tensor::full(v, &[c, 4, 4]),
            Tensor::full(v, &[c, 8, 8]),
        ])
        .unwrap()
    }

    #[test]
    fn zero_fields_give_zero_embeddings() {
        let set = const_single_set(0.0, 3);
        let pes = sample_hdbf(&set, &coords(vec![0.3, -0.8, 0.0, 0.0], 2)).unwrap();
        assert_eq!(pes.len(), NUM_SCALES);
        for pe in pes {
            assert!(pe.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_fields_preserved_at_any_coordinate() {
        let set = const_single_set(1.75, 2);
        let mut rng = Rng::seed_from(77);
        let q: Vec<f64> = (0..16).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let pes = sample_hdbf(&set, &coords(q, 2)).unwrap();
        for pe in pes {
            for &v in pe.data() {
                assert!((v - 1.75).abs() < 1e-12);
            }
        }
        // Tri-plane constant fields: the three orientation samples sum.
        let tri = BasisFieldSet::tri_plane([
            [Tensor::full(0.5, &[1, 2, 2]), Tensor::full(0.5, &[1, 2, 2]), Tensor::full(0.5, &[1, 2, 2])],
            [Tensor::full(0.5, &[1, 4, 4]), Tensor::full(0.5, &[1, 4, 4]), Tensor::full(0.5, &[1, 4, 4])],
            [Tensor::full(0.5, &[1, 8, 8]), Tensor::full(0.5, &[1, 8, 8]), Tensor::full(0.5, &[1, 8, 8])],
        ])
        .unwrap();
        let pes = sample_hdbf(&tri, &coords(vec![0.1, -0.4, 0.9], 3)).unwrap();
        for pe in pes {
            assert!((pe.data()[0] - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn triplane_with_only_xy_matches_plain_2d_sampling() {
        let mut rng = Rng::seed_from(55);
        let mut mk = |h: usize| -> Tensor<f64> {
            Tensor::from_vec((0..2 * h * h).map(|_| rng.normal()).collect(), &[2, h, h]).unwrap()
        };
        let xy = [mk(2), mk(4), mk(8)];
        let tri = BasisFieldSet::tri_plane([
            [xy[0].clone(), Tensor::zeros(&[2, 2, 2]), Tensor::zeros(&[2, 2, 2])],
            [xy[1].clone(), Tensor::zeros(&[2, 4, 4]), Tensor::zeros(&[2, 4, 4])],
            [xy[2].clone(), Tensor::zeros(&[2, 8, 8]), Tensor::zeros(&[2, 8, 8])],
        ])
        .unwrap();
        let flat = BasisFieldSet::single_plane([xy[0].clone(), xy[1].clone(), xy[2].clone()]).unwrap();

        // Varying z must not matter once yz/xz planes are zero.
        for z in [-1.0, -0.25, 0.6, 1.0] {
            let c3 = coords(vec![0.3, -0.7, z, -0.9, 0.2, z], 3);
            let c2 = coords(vec![0.3, -0.7, -0.9, 0.2], 2);
            let tri_pes = sample_hdbf(&tri, &c3).unwrap();
            let flat_pes = sample_hdbf(&flat, &c2).unwrap();
            for (a, b) in tri_pes.iter().zip(&flat_pes) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn layout_dimension_mismatch_rejected() {
        let set = const_single_set(0.0, 1);
        let c3 = coords(vec![0.0, 0.0, 0.0], 3);
        assert!(matches!(
            sample_hdbf(&set, &c3),
            Err(DdmiError::LayoutMismatch { .. })
        ));
    }
}
