//! Basis fields and coordinate sampling.
//!
//! A basis field is a dense grid of learned vectors; positional
//! embeddings are produced by bilinear interpolation over it. Fields
//! come in three spatial scales (coarse to fine), either as a single
//! plane (2D signals) or as three axis-aligned planes per scale
//! (tri-plane, 3D signals).
//!
//! Coordinate convention: all components live in [-1, 1], and the j-th
//! component of a coordinate indexes the j-th spatial axis of the grid
//! it samples (align-corners: -1 maps to node 0, +1 to node extent-1).

mod sample;

pub use sample::{bilinear_sample, project_triplane, sample_hdbf};

use crate::error::{DdmiError, Result};
use crate::tensor::{Element, Tensor};

pub const NUM_SCALES: usize = 3;

/// Which axis pair of 3D space a plane spans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Sole plane of a 2D (single-plane) field.
    Single,
    Xy,
    Yz,
    Xz,
}

/// One dense grid of basis vectors: `grid` is `[C, H, W]`.
#[derive(Clone, Debug)]
pub struct BasisFieldPlane<E: Element = f32> {
    pub grid: Tensor<E>,
    pub scale_index: usize,
    pub orientation: Orientation,
}

impl<E: Element> BasisFieldPlane<E> {
    pub fn new(grid: Tensor<E>, scale_index: usize, orientation: Orientation) -> Result<Self> {
        if grid.rank() != 3 {
            return Err(DdmiError::RankMismatch { expected: 3, got: grid.shape().to_vec() });
        }
        if grid.shape()[1] < 2 || grid.shape()[2] < 2 {
            return Err(DdmiError::ShapeMismatch {
                expected: vec![grid.shape()[0], 2, 2],
                got: grid.shape().to_vec(),
            });
        }
        Ok(BasisFieldPlane { grid, scale_index, orientation })
    }

    pub fn channels(&self) -> usize {
        self.grid.shape()[0]
    }

    pub fn extents(&self) -> (usize, usize) {
        (self.grid.shape()[1], self.grid.shape()[2])
    }
}

/// Spatial layout of a [`BasisFieldSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldLayout {
    SinglePlane,
    TriPlane,
}

impl FieldLayout {
    pub fn coord_dim(self) -> usize {
        match self {
            FieldLayout::SinglePlane => 2,
            FieldLayout::TriPlane => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldLayout::SinglePlane => "single-plane",
            FieldLayout::TriPlane => "tri-plane",
        }
    }
}

/// Basis fields at [`NUM_SCALES`] scales; per scale either one plane or
/// the {xy, yz, xz} triple.
#[derive(Clone, Debug)]
pub struct BasisFieldSet<E: Element = f32> {
    layout: FieldLayout,
    /// scales[i] holds the planes of scale i+1 (coarsest first).
    scales: Vec<Vec<BasisFieldPlane<E>>>,
}

impl<E: Element> BasisFieldSet<E> {
    /// Single-plane set from three grids ordered coarse to fine.
    pub fn single_plane(grids: [Tensor<E>; NUM_SCALES]) -> Result<Self> {
        let mut scales = Vec::with_capacity(NUM_SCALES);
        for (i, grid) in grids.into_iter().enumerate() {
            scales.push(vec![BasisFieldPlane::new(grid, i + 1, Orientation::Single)?]);
        }
        let set = BasisFieldSet { layout: FieldLayout::SinglePlane, scales };
        set.validate()?;
        Ok(set)
    }

    /// Tri-plane set: per scale the grids for {xy, yz, xz}, coarse to fine.
    pub fn tri_plane(grids: [[Tensor<E>; 3]; NUM_SCALES]) -> Result<Self> {
        let mut scales = Vec::with_capacity(NUM_SCALES);
        for (i, [xy, yz, xz]) in grids.into_iter().enumerate() {
            scales.push(vec![
                BasisFieldPlane::new(xy, i + 1, Orientation::Xy)?,
                BasisFieldPlane::new(yz, i + 1, Orientation::Yz)?,
                BasisFieldPlane::new(xz, i + 1, Orientation::Xz)?,
            ]);
        }
        let set = BasisFieldSet { layout: FieldLayout::TriPlane, scales };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        let channels = self.scales[0][0].channels();
        let mut prev_extent = 0usize;
        for group in &self.scales {
            for plane in group {
                if plane.channels() != channels {
                    return Err(DdmiError::ShapeMismatch {
                        expected: vec![channels],
                        got: vec![plane.channels()],
                    });
                }
            }
            let (h, _) = group[0].extents();
            if h <= prev_extent {
                return Err(DdmiError::ShapeMismatch {
                    expected: vec![prev_extent + 1],
                    got: vec![h],
                });
            }
            prev_extent = h;
        }
        Ok(())
    }

    pub fn layout(&self) -> FieldLayout {
        self.layout
    }

    pub fn channels(&self) -> usize {
        self.scales[0][0].channels()
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    /// Planes of scale `index` (1-based, 1 = coarsest).
    pub fn scale(&self, index: usize) -> Result<&[BasisFieldPlane<E>]> {
        if index == 0 || index > self.scales.len() {
            return Err(DdmiError::InvalidScaleIndex { index, scales: self.scales.len() });
        }
        Ok(&self.scales[index - 1])
    }

    /// Copy with every grid outside scale `keep` zeroed; shapes preserved.
    pub fn zero_scales(&self, keep: usize) -> Result<BasisFieldSet<E>> {
        if keep == 0 || keep > self.scales.len() {
            return Err(DdmiError::InvalidScaleIndex { index: keep, scales: self.scales.len() });
        }
        let scales = self
            .scales
            .iter()
            .enumerate()
            .map(|(i, group)| {
                group
                    .iter()
                    .map(|plane| BasisFieldPlane {
                        grid: if i + 1 == keep {
                            plane.grid.clone()
                        } else {
                            Tensor::zeros(plane.grid.shape())
                        },
                        scale_index: plane.scale_index,
                        orientation: plane.orientation,
                    })
                    .collect()
            })
            .collect();
        Ok(BasisFieldSet { layout: self.layout, scales })
    }
}

/// Batch of query coordinates `[I, m]`, every component in [-1, 1].
#[derive(Clone, Debug)]
pub struct CoordinateBatch<E: Element = f32> {
    coords: Tensor<E>,
}

impl<E: Element> CoordinateBatch<E> {
    pub fn new(coords: Tensor<E>) -> Result<Self> {
        if coords.rank() != 2 || coords.shape()[0] == 0 {
            return Err(DdmiError::RankMismatch { expected: 2, got: coords.shape().to_vec() });
        }
        let m = coords.shape()[1];
        if m != 2 && m != 3 {
            return Err(DdmiError::RankMismatch { expected: 2, got: coords.shape().to_vec() });
        }
        for (row, chunk) in coords.data().chunks(m).enumerate() {
            for &v in chunk {
                let vf = v.to_f64();
                if !(-1.0..=1.0).contains(&vf) {
                    return Err(DdmiError::CoordinateOutOfRange { value: vf, row });
                }
            }
        }
        Ok(CoordinateBatch { coords })
    }

    pub fn tensor(&self) -> &Tensor<E> {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.shape()[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3(c: usize, h: usize, w: usize, fill: f64) -> Tensor<f64> {
        Tensor::full(fill, &[c, h, w])
    }

    #[test]
    fn scales_must_increase() {
        let err = BasisFieldSet::single_plane([
            grid3(2, 4, 4, 0.0),
            grid3(2, 4, 4, 0.0),
            grid3(2, 8, 8, 0.0),
        ]);
        assert!(err.is_err());
        let ok = BasisFieldSet::single_plane([
            grid3(2, 2, 2, 0.0),
            grid3(2, 4, 4, 0.0),
            grid3(2, 8, 8, 0.0),
        ]);
        assert!(ok.is_ok());
    }

    #[test]
    fn channel_width_must_match_across_planes() {
        let err = BasisFieldSet::single_plane([
            grid3(2, 2, 2, 0.0),
            grid3(3, 4, 4, 0.0),
            grid3(2, 8, 8, 0.0),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn bilinear_needs_two_nodes_per_axis() {
        let g = Tensor::<f64>::zeros(&[2, 1, 4]);
        assert!(BasisFieldPlane::new(g, 1, Orientation::Single).is_err());
    }

    #[test]
    fn coordinates_validated_on_construction() {
        let bad = Tensor::<f64>::from_vec(vec![0.0, 1.5], &[1, 2]).unwrap();
        match CoordinateBatch::new(bad) {
            Err(DdmiError::CoordinateOutOfRange { value, row }) => {
                assert_eq!(value, 1.5);
                assert_eq!(row, 0);
            }
            other => panic!("expected coordinate error, got {other:?}"),
        }
    }

    #[test]
    fn zero_scales_keeps_exactly_one_scale() {
        let set = BasisFieldSet::single_plane([
            grid3(1, 2, 2, 1.0),
            grid3(1, 4, 4, 2.0),
            grid3(1, 8, 8, 3.0),
        ])
        .unwrap();
        let kept = set.zero_scales(2).unwrap();
        assert!(kept.scale(1).unwrap()[0].grid.data().iter().all(|&v| v == 0.0));
        assert_eq!(kept.scale(2).unwrap()[0].grid.to_vec(), set.scale(2).unwrap()[0].grid.to_vec());
        assert!(kept.scale(3).unwrap()[0].grid.data().iter().all(|&v| v == 0.0));
        assert!(set.zero_scales(4).is_err());
        assert!(set.zero_scales(0).is_err());
    }

    #[test]
    fn zero_scales_idempotent_when_others_already_zero() {
        let set = BasisFieldSet::single_plane([
            grid3(1, 2, 2, 5.0),
            grid3(1, 4, 4, 0.0),
            grid3(1, 8, 8, 0.0),
        ])
        .unwrap();
        let kept = set.zero_scales(1).unwrap();
        for s in 1..=3 {
            assert_eq!(
                kept.scale(s).unwrap()[0].grid.to_vec(),
                set.scale(s).unwrap()[0].grid.to_vec()
            );
        }
    }
}
