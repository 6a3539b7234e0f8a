use std::path::Path;
use std::time::Instant;

use vitalcast_core::dataset::read_dataset;
use vitalcast_core::forecast::{forecast_sample, write_forecasts};
use vitalcast_core::hash::file_hash;
use vitalcast_core::schedule::{DiffusionSchedule, ScheduleKind};
use vitalcast_core::{Denoiser, DenoiserConfig, Topology};
use vitalcast_numeric::checkpoint::read_manifest;
use vitalcast_numeric::rng::{derive_rng, stream_index};
use vitalcast_numeric::Checkpoint;

use crate::config::RunConfig;
use crate::CliError;

/// Model architecture and schedule are read from the checkpoint
/// manifest: the checkpoint, not the current config, knows its shape.
fn manifest_config(
    manifest: &[(String, String)],
    n_features: usize,
) -> Result<(DenoiserConfig, DiffusionSchedule), CliError> {
    let get = |key: &str| -> Result<&str, CliError> {
        manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CliError::new("checkpoint", format!("manifest lacks '{key}'")))
    };
    let parse_usize = |key: &str| -> Result<usize, CliError> {
        get(key)?
            .parse()
            .map_err(|_| CliError::new("checkpoint", format!("bad '{key}' in manifest")))
    };
    let parse_f64 = |key: &str| -> Result<f64, CliError> {
        get(key)?
            .parse()
            .map_err(|_| CliError::new("checkpoint", format!("bad '{key}' in manifest")))
    };
    let config = DenoiserConfig {
        d_model: parse_usize("d_model")?,
        n_heads: parse_usize("n_heads")?,
        d_ff: parse_usize("d_ff")?,
        d_step: parse_usize("d_step")?,
        n_features,
        n_steps: parse_usize("schedule_steps")?,
        cond_capacity: parse_usize("capacity")?,
        target_capacity: parse_usize("target_capacity")?,
        topology: Topology::parse(get("topology")?)
            .ok_or_else(|| CliError::new("checkpoint", "bad topology in manifest"))?,
        ln_eps: 1e-5,
    };
    let schedule = DiffusionSchedule::new(
        parse_usize("schedule_steps")?,
        parse_f64("beta1")?,
        parse_f64("beta_t")?,
        ScheduleKind::parse(get("schedule_kind")?)
            .ok_or_else(|| CliError::new("checkpoint", "bad schedule kind in manifest"))?,
    )?;
    Ok((config, schedule))
}

pub fn run(
    config: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    split: &str,
    out: &Path,
    limit: Option<usize>,
) -> Result<(), CliError> {
    let catalog = super::read_catalog(data)?;
    let (header, mut samples) = read_dataset(&data.join(format!("{split}.bin")))?;
    if header.catalog_hash != catalog.hash() {
        return Err(CliError::new(
            "dataset",
            format!("{split}.bin was built against a different catalog"),
        ));
    }
    if let Some(n) = limit {
        samples.truncate(n);
    }

    let manifest_path = checkpoint.with_extension("manifest");
    let manifest = read_manifest(&manifest_path)
        .map_err(|e| CliError::new("checkpoint", format!("{}: {e}", manifest_path.display())))?;
    let (model_config, schedule) = manifest_config(&manifest, catalog.len())?;
    let ckpt = Checkpoint::<f32>::read_file(checkpoint)?;
    let model = Denoiser::from_checkpoint(model_config, &ckpt)?;

    let s_paths = config.evaluation.samples.max(1);
    let mut forecasts = Vec::with_capacity(samples.len());
    let started = Instant::now();
    for sample in &samples {
        let mut rng = derive_rng(config.seed, "forecast", stream_index(&sample.stay_id));
        forecasts.push(forecast_sample(
            &model,
            sample,
            s_paths,
            &schedule,
            &catalog,
            &mut rng,
            |_| {},
        )?);
    }
    let elapsed = started.elapsed().as_secs_f64();
    let per_sample = if samples.is_empty() { 0.0 } else { elapsed / samples.len() as f64 };

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        super::ensure_dir(parent)?;
    }
    write_forecasts(
        out,
        &forecasts,
        &[
            ("config_hash", config.hash()),
            ("seed", config.seed.to_string()),
            ("catalog_hash", catalog.hash()),
            ("checkpoint_hash", file_hash(checkpoint).unwrap_or_default()),
            ("split", split.to_string()),
            ("s_paths", s_paths.to_string()),
            ("n_samples", samples.len().to_string()),
            ("total_seconds", format!("{elapsed:.4}")),
            ("seconds_per_sample", format!("{per_sample:.4}")),
        ],
    )?;

    if samples.is_empty() {
        eprintln!("warning: split '{split}' is empty; wrote an empty forecast file");
    }
    println!(
        "forecast {} samples with S={s_paths} in {elapsed:.2}s ({per_sample:.3} s/sample)",
        samples.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}
