//! Data ingestion, configuration, checkpoints, training drivers,
//! generation, and evaluation.

mod checkpoint;
mod config;
mod dataset;
mod generate;
mod grid;
mod imageio;
mod metrics;
mod train;

pub use checkpoint::{Checkpoint, TensorPayload, MAGIC, VERSION};
pub use config::{Config, DatasetKind};
pub use dataset::{load_image_folder, Dataset, SyntheticImageSpec, SyntheticOccupancyShape};
pub use generate::{
    decompose, generate_images, generate_occupancy, reconstruct_image, render_latent_image,
    render_occupancy_logits, render_sets_image, write_image_samples, write_occupancy_samples,
    DecompositionReport, GeneratedSample,
};
pub use grid::make_grid;
pub use imageio::{read_image, write_pgm, write_png};
pub use metrics::{fft_band_energy, iou_at_half, psnr, MetricsWriter};
pub use train::{params_fingerprint, split_indices, PipelineState};
