//! `nvnmr image`: the wide-field pipeline. Frames come from a directory
//! or from scene synthesis (the `[scene]` section, seeded by the run
//! seed); they are turned into per-pixel spectra, baseline corrected,
//! fitted in parallel, blurred to the optical resolution, and exported as
//! CSV grids plus PNG heat maps. The pre-blur maps are kept alongside the
//! blurred ones.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use nvnmr::fitting::{bandwidth_at, baseline_correct, free_parameter_names, Param};
use nvnmr::fitting::{FitDataset, FitProblem, LayerTemplate};
use nvnmr::imaging::{
    corner_mask, fit_map, gaussian_blur, load_frames, pixel_spectra_binned, save_frames,
    save_heatmap, save_pixel_map, synthesize_scene, FrameStack, PixelMap, Scene, SpectrumGrid,
};

use crate::config::{frequency_grid, to_stack, RunConfig, SceneCfg};
use crate::output::Outputs;

pub fn run(cfg: &RunConfig, outputs: &mut Outputs, config_dir: &Path, seed: u64) -> Result<()> {
    let Some(img) = &cfg.image else {
        bail!("the image command needs an [image] section in the config");
    };
    let blur_fwhm = img.blur_fwhm_px.unwrap_or(3.0);
    if !blur_fwhm.is_finite() || blur_fwhm <= 0.0 {
        bail!("blur_fwhm_px must be positive, got {blur_fwhm}");
    }
    if img.template.layers.is_empty() {
        bail!("[image.template] needs at least one [[image.template.layer]]");
    }

    let stack = match (&cfg.scene, &img.frames) {
        (Some(_), Some(_)) => {
            bail!("give either a [scene] to synthesize or `frames` to load, not both")
        }
        (Some(scene_cfg), None) => {
            let scene = build_scene(scene_cfg)?;
            let stack = synthesize_scene(&scene, &mut ChaCha12Rng::seed_from_u64(seed))
                .context("scene synthesis")?;
            let dir = outputs.path("frames/manifest.json")?;
            let dir = dir.parent().expect("frames dir").to_path_buf();
            save_frames(&dir, &stack).context("writing frames")?;
            outputs.record_dir(&dir)?;
            stack
        }
        (None, Some(dir)) => {
            let full = if dir.is_absolute() { dir.clone() } else { config_dir.join(dir) };
            load_frames(&full).with_context(|| format!("loading frames from {}", full.display()))?
        }
        (None, None) => bail!("the image command needs `frames` or a [scene] section"),
    };

    let templates = img
        .template
        .layers
        .iter()
        .map(|l| l.to_template())
        .collect::<Result<Vec<LayerTemplate>>>()?;
    let grid = pixel_spectra_binned(&stack, img.bin.unwrap_or(1)).context("pixel spectra")?;
    let grid = if img.baseline.unwrap_or(true) {
        apply_baseline(grid, &templates, &stack)?
    } else {
        grid
    };

    let template = FitProblem {
        datasets: vec![FitDataset {
            spectrum: grid.spectra[0].clone(),
            depth: img.template.depth.to_param(),
            layers: templates,
        }],
    };
    let map = fit_map(&grid, &template).context("per-pixel fits")?;
    let raw_dir = outputs.path("map_raw/map.json")?.parent().expect("dir").to_path_buf();
    save_pixel_map(&raw_dir, &map).context("writing raw maps")?;
    outputs.record_dir(&raw_dir)?;

    let blurred = gaussian_blur(&map, blur_fwhm).context("blurring maps")?;
    let blur_dir = outputs.path("map_blur/map.json")?.parent().expect("dir").to_path_buf();
    save_pixel_map(&blur_dir, &blurred).context("writing blurred maps")?;
    outputs.record_dir(&blur_dir)?;

    let channels = match &img.heatmap {
        Some(list) => list.clone(),
        None => free_parameter_names(&template)?,
    };
    for channel in &channels {
        let Some((lo, hi)) = channel_range(&blurred, channel)? else { continue };
        let path = outputs.path(&format!("map_blur/{channel}.png"))?;
        save_heatmap(&path, &blurred, channel, lo, hi)
            .with_context(|| format!("rendering {channel}"))?;
        outputs.record(&path);
    }
    Ok(())
}

/// Baseline windows implied by the fit template: ±2 filter bandwidths
/// around each modeled resonance. The filter response is negligible past
/// two bandwidths, and a wider window starves the baseline fit when the
/// sweep hugs the dips.
fn template_windows(templates: &[LayerTemplate], b0: f64, k: u32) -> Vec<(f64, f64)> {
    templates
        .iter()
        .map(|t| {
            let omega_l = match &t.larmor {
                Some(Param::Fixed(w)) => *w,
                Some(Param::Free(f)) => f.init,
                None => t.gamma_n.abs() * b0,
            };
            let center = omega_l / (2.0 * std::f64::consts::PI);
            let half = 2.0 * bandwidth_at(center, k);
            (center - half, center + half)
        })
        .collect()
}

fn apply_baseline(
    grid: SpectrumGrid,
    templates: &[LayerTemplate],
    stack: &FrameStack,
) -> Result<SpectrumGrid> {
    let windows = template_windows(templates, stack.sensor.b0, stack.k);
    let spectra = grid
        .spectra
        .iter()
        .map(|s| baseline_correct(s, &windows))
        .collect::<Result<Vec<_>, _>>()
        .context("per-pixel baseline correction")?;
    Ok(SpectrumGrid { spectra, ..grid })
}

/// Unmasked finite range of a channel, widened when it is constant;
/// `None` when nothing is left to render.
fn channel_range(map: &PixelMap, channel: &str) -> Result<Option<(f64, f64)>> {
    let values = map
        .channel(channel)
        .ok_or_else(|| anyhow::anyhow!("no fitted channel named `{channel}`"))?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (&v, &m) in values.iter().zip(&map.mask) {
        if m && v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Ok(None);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    Ok(Some((lo, hi)))
}

fn build_scene(sc: &SceneCfg) -> Result<Scene> {
    let n = sc.width * sc.height;
    let mask = match sc.mask.as_deref().unwrap_or("corner") {
        "corner" => corner_mask(sc.width, sc.height),
        "none" => vec![false; n],
        other => bail!("mask must be `corner` or `none`, got `{other}`"),
    };
    let grid = frequency_grid(sc.nu_start.si(), sc.nu_stop.si(), sc.n_points)?;
    Ok(Scene {
        width: sc.width,
        height: sc.height,
        mask,
        masked_stack: to_stack(&sc.masked_layers).context("[scene] masked layers")?,
        bare_stack: to_stack(&sc.bare_layers).context("[scene] bare layers")?,
        sensor: sc.sensor.to_sensor()?,
        k: sc.k,
        delays_s: grid.iter().map(|nu| 1.0 / (2.0 * nu)).collect(),
        pixel_pitch_m: sc.pixel_pitch.si(),
        mean_counts: sc.mean_counts,
        noise: sc.noise.to_noise()?,
    })
}
