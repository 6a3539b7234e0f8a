//! Training: one optimizer step per mini-batch over the noise-prediction
//! objective, with validation-loss checkpointing and early stopping.

use rand::Rng as _;
use vitalcast_numeric::adam::Adam;
use vitalcast_numeric::element::Element;
use vitalcast_numeric::graph::Graph;
use vitalcast_numeric::rng::{derive_rng, standard_normal, Rng};
use vitalcast_numeric::tensor::Tensor;

use crate::denoiser::{Denoiser, PackedBatch};
use crate::diffusion::{forward_noise, readout_scale};
use crate::error::CoreError;
use crate::schedule::DiffusionSchedule;
use crate::triplet::IcuSample;

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub lr: f64,
    /// Exponential learning-rate decay: the lr is multiplied down to
    /// `lr * floor` as training progresses. `1.0` keeps it constant.
    pub lr_decay_floor: f64,
    pub max_steps: u64,
    /// Validation cadence in steps.
    pub eval_interval: u64,
    /// Early stop after this many evaluations without improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: 32,
            lr: 1e-3,
            lr_decay_floor: 1.0,
            max_steps: 2000,
            eval_interval: 50,
            patience: 10,
            seed: 0,
        }
    }
}

pub struct TrainOutcome<T: Element> {
    pub loss_history: Vec<(u64, f64)>,
    pub val_history: Vec<(u64, f64)>,
    pub best_val: Option<(u64, f64)>,
    /// Parameters at the best validation loss (final parameters when no
    /// validation set was given).
    pub best_params: Vec<(String, Tensor<T>)>,
    pub steps_run: u64,
    pub stopped_early: bool,
}

/// Draw per-sample diffusion steps and per-slot noise, compute the noisy
/// targets, run the model, and apply one Adam update. Returns the batch
/// loss (mean squared error over valid slots).
pub fn train_step<T: Element>(
    model: &mut Denoiser<T>,
    opt: &mut Adam<T>,
    samples: &[&IcuSample],
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<f64, CoreError> {
    let batch = PackedBatch::<T>::pack(samples);
    let (lt, b) = (batch.target_len, batch.batch);

    let steps: Vec<usize> = (0..b)
        .map(|_| rng.random_range(1..=schedule.t_count()))
        .collect();
    let eps: Vec<T> = standard_normal(rng, b * lt);

    let mut noisy = vec![T::zero(); b * lt];
    for (si, &t) in steps.iter().enumerate() {
        let span = si * lt..(si + 1) * lt;
        let noised = forward_noise(
            &batch.x0[span.clone()],
            t,
            &eps[span.clone()],
            &batch.target_mask[span.clone()],
            schedule,
        )?;
        noisy[span].copy_from_slice(&noised);
    }

    let n_valid = batch.valid_target_count();
    if n_valid == 0 {
        return Err(CoreError::NoValidSlots("batch has no valid target slots".into()));
    }

    let scales: Vec<_> = steps
        .iter()
        .map(|&t| readout_scale(schedule, t))
        .collect::<Result<_, _>>()?;
    let mut g = Graph::<T>::new();
    let (eps_hat, _bound) = model.forward(&mut g, &batch, &noisy, &steps, &scales)?;
    let eps_in = g.input(Tensor::new(vec![b * lt], eps.clone())?);
    let mask_in = g.input(Tensor::new(
        vec![b * lt],
        batch
            .target_mask
            .iter()
            .map(|&m| if m { T::one() } else { T::zero() })
            .collect(),
    )?);
    let diff = g.sub(eps_hat, eps_in)?;
    let sq = g.mul(diff, diff)?;
    let masked = g.mul(sq, mask_in)?;
    let total = g.sum(masked)?;
    let loss = g.scale(total, T::from_f64(1.0 / n_valid as f64))?;

    let loss_value = g.value(loss).item().as_f64();
    let grads = g.backward(loss)?;
    opt.step(model.params_mut(), &grads)?;
    Ok(loss_value)
}

/// Noise-prediction loss over a sample set with draws fixed by `seed`,
/// so successive evaluations are comparable. No parameters change.
pub fn evaluate_loss<T: Element>(
    model: &Denoiser<T>,
    samples: &[IcuSample],
    schedule: &DiffusionSchedule,
    batch_size: usize,
    seed: u64,
) -> Result<f64, CoreError> {
    let mut sq_sum = 0.0f64;
    let mut n_total = 0usize;
    for (chunk_idx, chunk) in samples.chunks(batch_size.max(1)).enumerate() {
        let refs: Vec<&IcuSample> = chunk.iter().collect();
        let batch = PackedBatch::<T>::pack(&refs);
        let (lt, b) = (batch.target_len, batch.batch);
        let mut rng = derive_rng(seed, "eval-loss", chunk_idx as u64);
        let steps: Vec<usize> = (0..b)
            .map(|_| rng.random_range(1..=schedule.t_count()))
            .collect();
        let eps: Vec<T> = standard_normal(&mut rng, b * lt);
        let mut noisy = vec![T::zero(); b * lt];
        for (si, &t) in steps.iter().enumerate() {
            let span = si * lt..(si + 1) * lt;
            let noised = forward_noise(
                &batch.x0[span.clone()],
                t,
                &eps[span.clone()],
                &batch.target_mask[span.clone()],
                schedule,
            )?;
            noisy[span].copy_from_slice(&noised);
        }
        let scales: Vec<_> = steps
            .iter()
            .map(|&t| readout_scale(schedule, t))
            .collect::<Result<_, _>>()?;
        let mut g = Graph::<T>::new();
        let (eps_hat, _) = model.forward(&mut g, &batch, &noisy, &steps, &scales)?;
        let pred = g.value(eps_hat).data();
        for i in 0..b * lt {
            if batch.target_mask[i] {
                let d = pred[i].as_f64() - eps[i].as_f64();
                sq_sum += d * d;
                n_total += 1;
            }
        }
    }
    if n_total == 0 {
        return Err(CoreError::NoValidSlots("evaluation set has no valid slots".into()));
    }
    Ok(sq_sum / n_total as f64)
}

/// Shuffled mini-batch training with early stopping on validation loss.
/// The optimizer is caller-owned so a resumed run continues its step
/// counter and moments; `settings.max_steps` is an absolute step count.
pub fn train_loop<T: Element>(
    model: &mut Denoiser<T>,
    opt: &mut Adam<T>,
    train: &[IcuSample],
    valid: &[IcuSample],
    schedule: &DiffusionSchedule,
    settings: &TrainSettings,
    mut on_step: impl FnMut(u64, f64),
) -> Result<TrainOutcome<T>, CoreError> {
    if train.is_empty() {
        return Err(CoreError::Dataset("training set is empty".into()));
    }
    let mut noise_rng = derive_rng(settings.seed, "train-noise", opt.step_count());

    let mut outcome = TrainOutcome {
        loss_history: Vec::new(),
        val_history: Vec::new(),
        best_val: None,
        best_params: model.params().to_vec(),
        steps_run: 0,
        stopped_early: false,
    };
    let mut evals_since_best = 0usize;
    let mut step = opt.step_count();
    let mut epoch = step / (train.len().max(1) as u64).max(1);
    if step >= settings.max_steps {
        outcome.steps_run = step;
        return Ok(outcome);
    }

    'outer: loop {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = derive_rng(settings.seed, "train-shuffle", epoch);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch_idx in order.chunks(settings.batch_size.max(1)) {
            if settings.lr_decay_floor < 1.0 {
                // hold the base rate for the first quarter, then decay
                // exponentially to lr * floor at the step budget
                let progress = (step as f64 / settings.max_steps.max(1) as f64).min(1.0);
                let decay_progress = ((progress - 0.25) / 0.75).max(0.0);
                opt.set_lr(settings.lr * settings.lr_decay_floor.powf(decay_progress));
            }
            let refs: Vec<&IcuSample> = batch_idx.iter().map(|&i| &train[i]).collect();
            let loss = train_step(model, opt, &refs, schedule, &mut noise_rng)?;
            step += 1;
            outcome.loss_history.push((step, loss));
            on_step(step, loss);

            if !valid.is_empty() && step % settings.eval_interval == 0 {
                let val = evaluate_loss(model, valid, schedule, settings.batch_size, settings.seed)?;
                outcome.val_history.push((step, val));
                let improved = outcome.best_val.map(|(_, b)| val < b).unwrap_or(true);
                if improved {
                    outcome.best_val = Some((step, val));
                    outcome.best_params = model.params().to_vec();
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                    if evals_since_best > settings.patience {
                        outcome.stopped_early = true;
                        break 'outer;
                    }
                }
            }
            if step >= settings.max_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }

    if valid.is_empty() || outcome.best_val.is_none() {
        outcome.best_params = model.params().to_vec();
    }
    outcome.steps_run = step;
    Ok(outcome)
}
