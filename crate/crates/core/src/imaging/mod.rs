//! Wide-field imaging: camera frame stacks, per-pixel spectra and fits,
//! and rendering of the resulting parameter maps.
//!
//! A measurement produces two phase-channel images per pulse-sequence
//! delay. [`pixel_spectra`] turns the stack into one contrast spectrum
//! per pixel (ν = 1/2τ), [`fit_map`] fits each pixel against a shared
//! model template in parallel, and [`gaussian_blur`] applies optical
//! resolution to the result. Frames round-trip through 16-bit PGM files
//! with a JSON manifest; maps are saved as CSV grids with an optional
//! false-color PNG.

pub mod frames;
pub mod map;
pub mod pipeline;

pub use frames::{
    contrast_from_counts, corner_mask, load_frames, save_frames, synthesize_scene, FrameStack,
    NoiseModel, Scene,
};
pub use map::{gaussian_blur, save_heatmap, save_pixel_map, PixelMap};
pub use pipeline::{fit_map, pixel_spectra, pixel_spectra_binned, SpectrumGrid};
