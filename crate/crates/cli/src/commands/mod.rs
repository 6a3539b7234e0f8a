pub mod evaluate;
pub mod preprocess;
pub mod report;
pub mod sample;
pub mod synth;
pub mod train;

use std::path::Path;

use vitalcast_core::catalog::FeatureCatalog;

use crate::CliError;

pub(crate) fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

pub(crate) fn read_catalog(data_dir: &Path) -> Result<FeatureCatalog, CliError> {
    let path = data_dir.join("catalog.csv");
    if !path.exists() {
        return Err(CliError::new(
            "dataset",
            format!("{}: no fitted catalog (run preprocess first)", path.display()),
        ));
    }
    Ok(FeatureCatalog::read_file(&path)?)
}
