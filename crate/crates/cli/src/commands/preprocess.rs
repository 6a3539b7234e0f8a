use std::fmt::Write as _;
use std::path::Path;

use vitalcast_core::catalog::FeatureCatalog;
use vitalcast_core::dataset::write_dataset;
use vitalcast_core::events::load_events;
use vitalcast_core::pipeline::run_pipeline;

use crate::config::RunConfig;
use crate::CliError;

pub fn run(config: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    if !input.exists() {
        return Err(CliError::new(
            "io",
            format!("{}: input event log does not exist", input.display()),
        ));
    }
    super::ensure_dir(out)?;

    let catalog = FeatureCatalog::reference();
    let records = load_events(input, &catalog)?;
    let output = run_pipeline(
        records,
        catalog,
        config.pipeline.capacity,
        config.pipeline.target_capacity,
        config.seed,
    )?;

    let catalog_path = out.join("catalog.csv");
    output.catalog.write_file(&catalog_path)?;
    let catalog_hash = output.catalog.hash();

    for (name, samples) in [
        ("train.bin", &output.train),
        ("valid.bin", &output.valid),
        ("test.bin", &output.test),
    ] {
        write_dataset(
            &out.join(name),
            samples,
            &catalog_hash,
            config.pipeline.capacity,
            config.pipeline.target_capacity,
        )?;
    }

    let mut manifest = String::new();
    writeln!(manifest, "config_hash = {}", config.hash()).expect("string write");
    writeln!(manifest, "seed = {}", config.seed).expect("string write");
    writeln!(manifest, "catalog_hash = {catalog_hash}").expect("string write");
    writeln!(manifest, "capacity = {}", config.pipeline.capacity).expect("string write");
    writeln!(manifest, "target_capacity = {}", config.pipeline.target_capacity)
        .expect("string write");
    writeln!(manifest, "n_train = {}", output.train.len()).expect("string write");
    writeln!(manifest, "n_valid = {}", output.valid.len()).expect("string write");
    writeln!(manifest, "n_test = {}", output.test.len()).expect("string write");
    writeln!(manifest, "split_degenerate = {}", output.manifest.degenerate)
        .expect("string write");
    for line in output.accounting.report_lines() {
        writeln!(manifest, "{line}").expect("string write");
    }
    let join = |s: &std::collections::BTreeSet<String>| {
        s.iter().cloned().collect::<Vec<_>>().join(",")
    };
    writeln!(manifest, "subjects_train = {}", join(&output.manifest.train)).expect("string write");
    writeln!(manifest, "subjects_valid = {}", join(&output.manifest.valid)).expect("string write");
    writeln!(manifest, "subjects_test = {}", join(&output.manifest.test)).expect("string write");
    std::fs::write(out.join("manifest.txt"), &manifest)
        .map_err(|e| CliError::new("io", format!("{}: {e}", out.display())))?;

    println!("wrote {}", out.display());
    println!(
        "samples: train {} / valid {} / test {}",
        output.train.len(),
        output.valid.len(),
        output.test.len()
    );
    if output.manifest.degenerate {
        eprintln!("warning: subject pool too small for a full split; some splits are empty");
    }
    for line in output.accounting.report_lines() {
        println!("{line}");
    }
    Ok(())
}
