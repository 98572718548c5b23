//! `nvnmr simulate`: forward-model contrast spectra for a configured
//! sample stack, optionally sweeping the static field or the pulse-block
//! count. One CSV/JSON spectrum pair per (field, k) combination.

use anyhow::{bail, Context, Result};

use nvnmr::io::save_spectrum;
use nvnmr::lineshape::contrast_spectrum;
use nvnmr::sequence::sequence_for_frequency;
use nvnmr::spin::SensorConfig;

use crate::config::{frequency_grid, to_stack, RunConfig};
use crate::output::Outputs;

pub fn run(cfg: &RunConfig, outputs: &mut Outputs) -> Result<()> {
    let Some(sim) = &cfg.simulate else {
        bail!("the simulate command needs a [simulate] section in the config");
    };
    let Some(sensor_cfg) = &cfg.sensor else {
        bail!("the simulate command needs a [sensor] section in the config");
    };
    let stack = to_stack(&cfg.layers)?;

    let ks = sim.k.to_vec();
    let fields = sim
        .b0
        .as_ref()
        .map_or_else(|| vec![sensor_cfg.b0.si()], |b| b.to_vec().iter().map(|q| q.si()).collect());
    if ks.is_empty() || fields.is_empty() {
        bail!("k and b0 sweeps must be non-empty");
    }
    let grid = frequency_grid(sim.nu_start.si(), sim.nu_stop.si(), sim.n_points)?;

    for &b0 in &fields {
        let sensor = SensorConfig::new(sensor_cfg.depth.si(), b0).context("sensor")?;
        for &k in &ks {
            let sweep = grid
                .iter()
                .map(|&nu| sequence_for_frequency(nu, k))
                .collect::<Result<Vec<_>, _>>()
                .context("frequency sweep")?;
            let spectrum = contrast_spectrum(&stack, &sensor, &sweep).context("forward model")?;
            let base = outputs.path(&spectrum_name(&fields, &ks, b0, k))?;
            let (csv, json) = save_spectrum(&base, &spectrum, Some(&stack))
                .with_context(|| format!("writing {}", base.display()))?;
            outputs.record(&csv);
            outputs.record(&json);
        }
    }
    Ok(())
}

/// Base file name for one sweep member: just "spectrum" for a single run,
/// with the swept quantities in the name otherwise.
fn spectrum_name(fields: &[f64], ks: &[u32], b0: f64, k: u32) -> String {
    let mut name = String::from("spectrum");
    if fields.len() > 1 {
        name.push_str(&format!("_b0_{}mT", b0 * 1e3));
    }
    if ks.len() > 1 {
        name.push_str(&format!("_k{k}"));
    }
    name
}
