use std::fmt::Write as _;
use std::path::Path;

use vitalcast_core::dataset::read_dataset;
use vitalcast_core::schedule::DiffusionSchedule;
use vitalcast_core::train::{train_loop, TrainSettings};
use vitalcast_core::Denoiser;
use vitalcast_numeric::adam::{Adam, AdamConfig};
use vitalcast_numeric::checkpoint::{read_manifest, write_manifest};
use vitalcast_numeric::tensor::Tensor;
use vitalcast_numeric::Checkpoint;

use crate::config::RunConfig;
use crate::CliError;

pub fn run(
    config: &RunConfig,
    data: &Path,
    out: &Path,
    overfit: Option<usize>,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    super::ensure_dir(out)?;
    let catalog = super::read_catalog(data)?;
    let (train_header, mut train_samples) = read_dataset(&data.join("train.bin"))?;
    let (_, mut valid_samples) = read_dataset(&data.join("valid.bin"))?;
    if train_header.catalog_hash != catalog.hash() {
        return Err(CliError::new(
            "dataset",
            "train.bin was built against a different catalog",
        ));
    }

    if let Some(n) = overfit {
        train_samples.truncate(n);
        valid_samples.clear();
    }

    let schedule = DiffusionSchedule::new(
        config.schedule.steps,
        config.schedule.beta1,
        config.schedule.beta_t,
        config.schedule_kind()?,
    )?;
    schedule.dump(&out.join("schedule.csv"))?;

    let model_config = config.denoiser_config(catalog.len())?;
    let mut model;
    let mut opt;
    if let Some(resume_dir) = resume {
        let ckpt = Checkpoint::<f32>::read_file(&resume_dir.join("final.bin"))?;
        model = Denoiser::from_checkpoint(model_config, &ckpt)?;
        opt = Adam::new(AdamConfig::with_lr(config.training.lr), model.params());
        let opt_ckpt = Checkpoint::<f32>::read_file(&resume_dir.join("optimizer.bin"))?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, _) in model.params() {
            m.push(
                opt_ckpt
                    .get(&format!("m.{name}"))
                    .ok_or_else(|| CliError::new("checkpoint", format!("missing moment m.{name}")))?
                    .clone(),
            );
            v.push(
                opt_ckpt
                    .get(&format!("v.{name}"))
                    .ok_or_else(|| CliError::new("checkpoint", format!("missing moment v.{name}")))?
                    .clone(),
            );
        }
        opt.restore_moments(m, v)?;
        let manifest = read_manifest(&resume_dir.join("checkpoint.manifest"))?;
        let steps: u64 = manifest
            .iter()
            .find(|(k, _)| k == "steps_run")
            .and_then(|(_, v)| v.parse().ok())
            .ok_or_else(|| CliError::new("checkpoint", "manifest lacks steps_run"))?;
        opt.set_step_count(steps);
        println!("resuming at step {steps}");
    } else {
        model = Denoiser::init(model_config, config.seed)?;
        opt = Adam::new(AdamConfig::with_lr(config.training.lr), model.params());
    }

    let settings = TrainSettings {
        batch_size: config.training.batch_size,
        lr: config.training.lr,
        max_steps: config.training.max_steps,
        eval_interval: config.training.eval_interval,
        patience: config.training.patience,
        seed: config.seed,
    };

    println!(
        "training: {} samples, {} validation, {} parameters, topology {}",
        train_samples.len(),
        valid_samples.len(),
        model.param_count(),
        config.model.topology
    );

    let mut loss_curve = format!(
        "# config_hash = {}\n# seed = {}\nstep,loss\n",
        config.hash(),
        config.seed
    );
    let started = std::time::Instant::now();
    let outcome = train_loop(
        &mut model,
        &mut opt,
        &train_samples,
        &valid_samples,
        &schedule,
        &settings,
        |step, loss| {
            writeln!(loss_curve, "{step},{loss:.9}").expect("string write");
        },
    )?;
    let elapsed = started.elapsed().as_secs_f64();
    std::fs::write(out.join("loss_curve.csv"), &loss_curve)
        .map_err(|e| CliError::new("io", format!("loss_curve.csv: {e}")))?;

    let mut val_curve = format!(
        "# config_hash = {}\n# seed = {}\nstep,val_loss\n",
        config.hash(),
        config.seed
    );
    for (step, loss) in &outcome.val_history {
        writeln!(val_curve, "{step},{loss:.9}").expect("string write");
    }
    std::fs::write(out.join("val_curve.csv"), &val_curve)
        .map_err(|e| CliError::new("io", format!("val_curve.csv: {e}")))?;

    // best parameters for sampling, final state for resuming
    Checkpoint::new(outcome.best_params.clone()).write_file(&out.join("checkpoint.bin"))?;
    model.to_checkpoint().write_file(&out.join("final.bin"))?;
    let (m, v) = opt.moments();
    let mut opt_entries: Vec<(String, Tensor<f32>)> = Vec::with_capacity(2 * m.len());
    for (i, (name, _)) in model.params().iter().enumerate() {
        opt_entries.push((format!("m.{name}"), m[i].clone()));
        opt_entries.push((format!("v.{name}"), v[i].clone()));
    }
    Checkpoint::new(opt_entries).write_file(&out.join("optimizer.bin"))?;

    let (best_step, best_val) = outcome.best_val.unwrap_or((outcome.steps_run, f64::NAN));
    write_manifest(
        &out.join("checkpoint.manifest"),
        &[
            ("config_hash", config.hash()),
            ("seed", config.seed.to_string()),
            ("catalog_hash", catalog.hash()),
            ("steps_run", outcome.steps_run.to_string()),
            ("best_step", best_step.to_string()),
            ("best_val_loss", format!("{best_val:.9}")),
            ("stopped_early", outcome.stopped_early.to_string()),
            ("param_count", model.param_count().to_string()),
            ("train_seconds", format!("{elapsed:.3}")),
            ("d_model", config.model.d_model.to_string()),
            ("n_heads", config.model.n_heads.to_string()),
            ("d_ff", config.model.d_ff.to_string()),
            ("d_step", config.model.d_step.to_string()),
            ("topology", config.model.topology.clone()),
            ("schedule_steps", config.schedule.steps.to_string()),
            ("beta1", format!("{}", config.schedule.beta1)),
            ("beta_t", format!("{}", config.schedule.beta_t)),
            ("schedule_kind", config.schedule.kind.clone()),
            ("capacity", config.pipeline.capacity.to_string()),
            ("target_capacity", config.pipeline.target_capacity.to_string()),
        ],
    )?;

    let first_loss = outcome.loss_history.first().map(|(_, l)| *l).unwrap_or(f64::NAN);
    let last_loss = outcome.loss_history.last().map(|(_, l)| *l).unwrap_or(f64::NAN);
    println!(
        "trained {} steps in {elapsed:.1}s (loss {first_loss:.4} -> {last_loss:.4}, best val {best_val:.4} @ {best_step}{})",
        outcome.steps_run,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    println!("wrote {}", out.join("checkpoint.bin").display());
    Ok(())
}
