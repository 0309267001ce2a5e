//! Training data: seeded procedural images, synthetic occupancy
//! shapes, and on-disk image folders.

use std::path::Path;

use crate::error::{DdmiError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::imageio::read_image;

/// Analytic description of one procedural image: a linear color
/// gradient, optional stripe pattern, and a few soft-edged ellipses.
/// Renderable at any resolution.
#[derive(Clone, Debug)]
pub struct SyntheticImageSpec {
    bg0: [f64; 3],
    bg1: [f64; 3],
    grad_dir: (f64, f64),
    stripes: Option<Stripes>,
    ellipses: Vec<Ellipse>,
}

#[derive(Clone, Debug)]
struct Stripes {
    dir: (f64, f64),
    freq: f64,
    phase: f64,
    color: [f64; 3],
    weight: f64,
}

#[derive(Clone, Debug)]
struct Ellipse {
    center: (f64, f64),
    radii: (f64, f64),
    rot: (f64, f64), // cos, sin
    color: [f64; 3],
}

/// Hue anchors used for class-conditional variants.
const CLASS_HUES: [[f64; 3]; 4] =
    [[0.9, 0.15, 0.15], [0.15, 0.8, 0.2], [0.2, 0.3, 0.95], [0.9, 0.85, 0.2]];

impl SyntheticImageSpec {
    /// Draw a random spec. With `class` given, the background palette is
    /// pulled toward that class's hue anchor.
    pub fn random(rng: &mut Rng, class: Option<usize>) -> SyntheticImageSpec {
        fn color(rng: &mut Rng, class: Option<usize>, strength: f64) -> [f64; 3] {
            let base = match class {
                Some(c) => CLASS_HUES[c % CLASS_HUES.len()],
                None => [rng.uniform(), rng.uniform(), rng.uniform()],
            };
            let mut out = [0.0; 3];
            for (o, b) in out.iter_mut().zip(base) {
                let jitter = rng.uniform_in(-0.18, 0.18);
                *o = (b * strength + jitter).clamp(0.02, 0.98);
            }
            out
        }
        let theta = rng.uniform_in(0.0, std::f64::consts::TAU);
        let stripes = if rng.uniform() < 0.5 {
            let phi = rng.uniform_in(0.0, std::f64::consts::TAU);
            Some(Stripes {
                dir: (phi.cos(), phi.sin()),
                freq: rng.uniform_in(1.5, 5.0),
                phase: rng.uniform_in(0.0, std::f64::consts::TAU),
                color: color(rng, class, 0.8),
                weight: rng.uniform_in(0.15, 0.4),
            })
        } else {
            None
        };
        let n_ellipses = 1 + rng.below(3);
        let ellipses = (0..n_ellipses)
            .map(|_| {
                let alpha = rng.uniform_in(0.0, std::f64::consts::PI);
                Ellipse {
                    center: (rng.uniform_in(-0.5, 0.5), rng.uniform_in(-0.5, 0.5)),
                    radii: (rng.uniform_in(0.15, 0.45), rng.uniform_in(0.15, 0.45)),
                    rot: (alpha.cos(), alpha.sin()),
                    color: color(rng, class, 0.9),
                }
            })
            .collect();
        SyntheticImageSpec {
            bg0: color(rng, class, 1.0),
            bg1: color(rng, class, 1.0),
            grad_dir: (theta.cos(), theta.sin()),
            stripes,
            ellipses,
        }
    }

    /// RGB in [-1, 1] at a continuous coordinate (components in [-1, 1],
    /// axis order (y, x) matching image row-major layout).
    pub fn color_at(&self, y: f64, x: f64) -> [f64; 3] {
        let proj = (y * self.grad_dir.0 + x * self.grad_dir.1) / std::f64::consts::SQRT_2;
        let t = (proj + 1.0) / 2.0;
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            rgb[c] = self.bg0[c] * (1.0 - t) + self.bg1[c] * t;
        }
        if let Some(s) = &self.stripes {
            let wave =
                0.5 + 0.5 * (std::f64::consts::PI * s.freq * (y * s.dir.0 + x * s.dir.1) + s.phase).sin();
            for c in 0..3 {
                rgb[c] = rgb[c] * (1.0 - s.weight * wave) + s.color[c] * s.weight * wave;
            }
        }
        for e in &self.ellipses {
            let dy = y - e.center.0;
            let dx = x - e.center.1;
            let u = (dy * e.rot.0 + dx * e.rot.1) / e.radii.0;
            let v = (-dy * e.rot.1 + dx * e.rot.0) / e.radii.1;
            let dist = (u * u + v * v).sqrt();
            // soft edge over ~0.08 in ellipse-metric units
            let cover = ((1.0 - dist) / 0.08).clamp(0.0, 1.0);
            if cover > 0.0 {
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - cover) + e.color[c] * cover;
                }
            }
        }
        // [0,1] palette onto the [-1,1] signal convention
        [rgb[0] * 2.0 - 1.0, rgb[1] * 2.0 - 1.0, rgb[2] * 2.0 - 1.0]
    }

    /// Render `[3, res, res]` at align-corners node positions.
    pub fn render(&self, res: usize) -> Tensor<f32> {
        let mut data = vec![0.0f32; 3 * res * res];
        let hw = res * res;
        for i in 0..res {
            let y = -1.0 + 2.0 * i as f64 / (res - 1) as f64;
            for j in 0..res {
                let x = -1.0 + 2.0 * j as f64 / (res - 1) as f64;
                let rgb = self.color_at(y, x);
                for c in 0..3 {
                    data[c * hw + i * res + j] = rgb[c] as f32;
                }
            }
        }
        Tensor::from_vec(data, &[3, res, res]).expect("render shape")
    }
}

/// Superellipsoid occupancy shape, fully contained in [-1, 1]^3.
#[derive(Clone, Debug)]
pub struct SyntheticOccupancyShape {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub exponent: f64,
}

impl SyntheticOccupancyShape {
    pub fn random(rng: &mut Rng) -> SyntheticOccupancyShape {
        let mut center = [0.0; 3];
        let mut radii = [0.0; 3];
        for d in 0..3 {
            center[d] = rng.uniform_in(-0.2, 0.2);
            let max_r = 0.95 - center[d].abs();
            radii[d] = rng.uniform_in(0.3, max_r.min(0.7));
        }
        SyntheticOccupancyShape { center, radii, exponent: rng.uniform_in(1.5, 4.0) }
    }

    /// Analytic inside/outside query, the ground-truth oracle for both
    /// voxelization and arbitrary-coordinate supervision.
    pub fn occupancy(&self, c: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for d in 0..3 {
            acc += ((c[d] - self.center[d]).abs() / self.radii[d]).powf(self.exponent);
        }
        if acc <= 1.0 {
            1.0
        } else {
            0.0
        }
    }

    /// Voxelize at `res^3` align-corners nodes, layout `[X, Y, Z]`.
    pub fn voxelize(&self, res: usize) -> Result<Tensor<f32>> {
        if res < 16 {
            return Err(DdmiError::Data(format!("occupancy resolution {res} below 16")));
        }
        let node = |i: usize| -> f64 { -1.0 + 2.0 * i as f64 / (res - 1) as f64 };
        let mut data = vec![0.0f32; res * res * res];
        for ix in 0..res {
            for iy in 0..res {
                for iz in 0..res {
                    data[(ix * res + iy) * res + iz] =
                        self.occupancy([node(ix), node(iy), node(iz)]) as f32;
                }
            }
        }
        Tensor::from_vec(data, &[res, res, res])
    }
}

/// A loaded dataset with optional class labels.
pub enum Dataset {
    /// Procedural image specs rendered on demand at 2r for multi-scale
    /// training.
    SyntheticImages { specs: Vec<SyntheticImageSpec>, labels: Option<Vec<usize>> },
    /// User images, pre-loaded, each at least 2r x 2r.
    ImageFolder { sources: Vec<Tensor<f32>> },
    /// Superellipsoid shapes voxelized on demand.
    Occupancy { shapes: Vec<SyntheticOccupancyShape> },
}

impl Dataset {
    /// Build from config. Synthetic sets are derived from the config
    /// seed only, so every run regenerates identical data.
    pub fn from_config(cfg: &super::Config) -> Result<Dataset> {
        let mut rng = Rng::seed_from(cfg.seed ^ 0x5eed_da7a);
        match cfg.kind()? {
            super::DatasetKind::SyntheticImages => {
                let labels = (cfg.num_classes > 0).then(|| {
                    (0..cfg.dataset_size).map(|i| i % cfg.num_classes).collect::<Vec<usize>>()
                });
                let specs = (0..cfg.dataset_size)
                    .map(|i| {
                        SyntheticImageSpec::random(
                            &mut rng,
                            labels.as_ref().map(|ls| ls[i]),
                        )
                    })
                    .collect();
                Ok(Dataset::SyntheticImages { specs, labels })
            }
            super::DatasetKind::ImageFolder => {
                let sources = load_image_folder(Path::new(&cfg.dataset_path), cfg.base_resolution)?;
                Ok(Dataset::ImageFolder { sources })
            }
            super::DatasetKind::SyntheticOccupancy => {
                let shapes =
                    (0..cfg.dataset_size).map(|_| SyntheticOccupancyShape::random(&mut rng)).collect();
                Ok(Dataset::Occupancy { shapes })
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::SyntheticImages { specs, .. } => specs.len(),
            Dataset::ImageFolder { sources } => sources.len(),
            Dataset::Occupancy { shapes } => shapes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, index: usize) -> Option<usize> {
        match self {
            Dataset::SyntheticImages { labels, .. } => labels.as_ref().map(|ls| ls[index]),
            _ => None,
        }
    }

    /// Source image at 2r (multi-scale input), `[3, 2r, 2r]`.
    pub fn source_image(&self, index: usize, base_r: usize) -> Result<Tensor<f32>> {
        match self {
            Dataset::SyntheticImages { specs, .. } => Ok(specs[index].render(2 * base_r)),
            Dataset::ImageFolder { sources } => Ok(sources[index].detach()),
            Dataset::Occupancy { .. } => Err(DdmiError::Data("occupancy set has no images".into())),
        }
    }

    pub fn shape(&self, index: usize) -> Result<&SyntheticOccupancyShape> {
        match self {
            Dataset::Occupancy { shapes } => Ok(&shapes[index]),
            _ => Err(DdmiError::Data("not an occupancy dataset".into())),
        }
    }
}

/// Load every readable 8-bit PNG/PPM under `path` (lexicographic
/// order); files below 2r x 2r or unreadable are skipped with a warning
/// on stderr. An empty result is fatal.
pub fn load_image_folder(path: &Path, base_r: usize) -> Result<Vec<Tensor<f32>>> {
    let mut entries: Vec<std::path::PathBuf> = std::fs::read_dir(path)
        .map_err(|e| DdmiError::Data(format!("cannot read {}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let mut sources = Vec::new();
    for entry in entries {
        match read_image(&entry) {
            Ok(img) => {
                let (h, w) = (img.shape()[1], img.shape()[2]);
                let need = 2 * base_r;
                if h < need || w < need {
                    eprintln!(
                        "warning: skipping {} ({h}x{w} below {need}x{need})",
                        entry.display()
                    );
                    continue;
                }
                sources.push(img);
            }
            Err(e) => eprintln!("warning: skipping {}: {e}", entry.display()),
        }
    }
    if sources.is_empty() {
        return Err(DdmiError::Data(format!("no usable images in {}", path.display())));
    }
    Ok(sources)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_images_are_seed_deterministic_and_in_range() {
        let mut r1 = Rng::seed_from(5);
        let mut r2 = Rng::seed_from(5);
        let a = SyntheticImageSpec::random(&mut r1, None).render(32);
        let b = SyntheticImageSpec::random(&mut r2, None).render(32);
        assert_eq!(a.to_vec(), b.to_vec());
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn class_palettes_separate_in_mean_color() {
        let mut rng = Rng::seed_from(9);
        let mut means = [[0.0f64; 3]; 4];
        for class in 0..4 {
            let mut acc = [0.0f64; 3];
            for _ in 0..20 {
                let img = SyntheticImageSpec::random(&mut rng, Some(class)).render(16);
                let d = img.data();
                for c in 0..3 {
                    let ch = &d[c * 256..(c + 1) * 256];
                    acc[c] += ch.iter().map(|&v| v as f64).sum::<f64>() / 256.0;
                }
            }
            for c in 0..3 {
                means[class][c] = acc[c] / 20.0;
            }
        }
        // each class mean should be closest to its own anchor direction
        for a in 0..4 {
            for b in 0..4 {
                if a == b {
                    continue;
                }
                let d_own: f64 = (0..3)
                    .map(|c| (means[a][c] - (CLASS_HUES[a][c] * 2.0 - 1.0)).powi(2))
                    .sum();
                let d_other: f64 = (0..3)
                    .map(|c| (means[a][c] - (CLASS_HUES[b][c] * 2.0 - 1.0)).powi(2))
                    .sum();
                assert!(d_own < d_other, "class {a} confused with {b}");
            }
        }
    }

    #[test]
    fn occupancy_known_points() {
        let ball = SyntheticOccupancyShape {
            center: [0.0; 3],
            radii: [0.7, 0.7, 0.7],
            exponent: 2.0,
        };
        assert_eq!(ball.occupancy([0.0, 0.0, 0.0]), 1.0);
        assert_eq!(ball.occupancy([1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn voxel_grid_matches_analytic_query_at_all_nodes() {
        let mut rng = Rng::seed_from(11);
        let shape = SyntheticOccupancyShape::random(&mut rng);
        let res = 16;
        let vox = shape.voxelize(res).unwrap();
        let node = |i: usize| -> f64 { -1.0 + 2.0 * i as f64 / (res - 1) as f64 };
        for ix in 0..res {
            for iy in 0..res {
                for iz in 0..res {
                    let expect = shape.occupancy([node(ix), node(iy), node(iz)]) as f32;
                    assert_eq!(vox.data()[(ix * res + iy) * res + iz], expect);
                }
            }
        }
        assert!(shape.voxelize(8).is_err());
    }

    #[test]
    fn shapes_fit_inside_the_domain() {
        let mut rng = Rng::seed_from(13);
        for _ in 0..50 {
            let s = SyntheticOccupancyShape::random(&mut rng);
            for d in 0..3 {
                assert!(s.center[d].abs() + s.radii[d] <= 0.95 + 1e-12);
            }
            // boundary nodes are always empty
            assert_eq!(s.occupancy([1.0, 0.0, 0.0].map(|v| v as f64)), 0.0);
        }
    }

    #[test]
    fn folder_loading_skips_junk_and_errors_when_empty() {
        let dir = std::env::temp_dir().join("ddmikit-folder-test");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("junk.png"), b"not a png").unwrap();
        assert!(load_image_folder(&dir, 8).is_err());

        // one valid ppm at 16x16 (2r for r=8)
        let mut ppm = b"P6\n16 16\n255\n".to_vec();
        ppm.extend(std::iter::repeat_n([10u8, 200, 30], 256).flatten());
        std::fs::write(dir.join("ok.ppm"), &ppm).unwrap();
        let sources = load_image_folder(&dir, 8).unwrap();
        assert_eq!(sources.len(), 1);
        assert_eq!(sources[0].shape(), &[3, 16, 16]);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
