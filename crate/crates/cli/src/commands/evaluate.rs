use std::path::Path;

use vitalcast_core::forecast::read_forecasts;
use vitalcast_core::metrics::{evaluate_forecasts, write_histograms, write_per_sample_table, write_report};

use crate::config::RunConfig;
use crate::CliError;

pub fn run(config: &RunConfig, forecasts: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    super::ensure_dir(out)?;
    let catalog = super::read_catalog(data)?;
    let loaded = read_forecasts(forecasts, &catalog)?;
    if loaded.is_empty() {
        return Err(CliError::new(
            "data.empty",
            format!("{}: no forecasts to score", forecasts.display()),
        ));
    }
    let report = evaluate_forecasts(&loaded, &catalog)?;

    write_report(
        &out.join("metrics.txt"),
        &report,
        &[
            ("config_hash", config.hash()),
            ("seed", config.seed.to_string()),
            ("catalog_hash", catalog.hash()),
            ("forecast_file", forecasts.display().to_string()),
        ],
    )?;
    write_per_sample_table(&out.join("per_sample.csv"), &report)?;
    write_histograms(&out.join("histograms.csv"), &report, 30)?;

    println!("global_sacrps = {:.6}", report.global_sacrps);
    println!("global_mse = {:.6}", report.global_mse);
    println!("n_samples = {}", report.n_samples);
    println!("n_slots = {}", report.n_slots);
    println!("wrote {}", out.join("metrics.txt").display());
    Ok(())
}
