//! `nvnmr verify`: run the numerical cross-check suite and write the
//! report. Exits nonzero if any check misses its tolerance.

use anyhow::{bail, Result};

use nvnmr::verify::{run_all, VerifyOptions};

use crate::config::RunConfig;
use crate::output::Outputs;

pub fn run(cfg: &RunConfig, outputs: &mut Outputs, seed: u64) -> Result<()> {
    let vcfg = cfg.verify.clone().unwrap_or_default();
    let opts = VerifyOptions {
        quick: vcfg.quick,
        seed,
        corrupt_prefactor: vcfg.corrupt_prefactor,
    };
    let report = run_all(&opts);
    outputs.write_json("verify_report.json", &report)?;

    for check in &report.checks {
        let verdict = if check.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {}: measured {:.3e} against tolerance {:.3e} ({})",
            check.name, check.measured, check.tolerance, check.detail
        );
    }
    if !report.all_passed {
        let failed: Vec<&str> =
            report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        bail!("verification failed: {}", failed.join(", "));
    }
    println!("all {} checks passed", report.checks.len());
    Ok(())
}
