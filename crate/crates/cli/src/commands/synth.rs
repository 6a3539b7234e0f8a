use std::path::Path;

use vitalcast_core::catalog::FeatureCatalog;
use vitalcast_core::synth;

use crate::config::RunConfig;
use crate::CliError;

pub fn run(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::ensure_dir(parent)?;
    }
    let catalog = FeatureCatalog::reference();
    let report = synth::generate(
        &config.synth_config(),
        &catalog,
        config.seed,
        out,
        &[
            ("config_hash", config.hash()),
            ("seed", config.seed.to_string()),
        ],
    )?;
    println!("wrote {}", out.display());
    println!("subjects = {}", report.n_subjects);
    println!("stays = {}", report.n_stays);
    println!("rows = {}", report.n_rows);
    println!("planted_minor_stays = {}", report.n_minor_stays);
    println!(
        "planted_empty_conditional_stays = {}",
        report.n_empty_conditional_stays
    );
    println!("planted_empty_target_stays = {}", report.n_empty_target_stays);
    println!("planted_outlier_events = {}", report.n_outlier_events);
    Ok(())
}
