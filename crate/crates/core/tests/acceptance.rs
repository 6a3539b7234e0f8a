//! Acceptance suite: every release criterion with its tolerance pinned
//! in code, run sequentially so timing criteria see an unloaded core.
//! One pass/fail line is printed per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng as _;
use vitalcast_core::catalog::FeatureCatalog;
use vitalcast_core::denoiser::{Denoiser, DenoiserConfig, PackedBatch, Topology};
use vitalcast_core::diffusion::{
    forward_noise, readout_scale, sample, ModelPredictor, NoisePredictor,
};
use vitalcast_core::error::CoreError;
use vitalcast_core::events::load_events;
use vitalcast_core::forecast::{empirical_quantile, forecast_sample, quantile_levels};
use vitalcast_core::metrics::{crps_gaussian, evaluate_forecasts, sacrps_terms};
use vitalcast_core::pipeline::run_pipeline;
use vitalcast_core::schedule::DiffusionSchedule;
use vitalcast_core::synth::{distribution_task_samples, generate, overfit_samples, SynthConfig};
use vitalcast_core::train::{evaluate_loss, train_loop, TrainSettings};
use vitalcast_core::triplet::IcuSample;
use vitalcast_numeric::adam::{Adam, AdamConfig};
use vitalcast_numeric::graph::Graph;
use vitalcast_numeric::rng::{derive_rng, standard_normal};
use vitalcast_numeric::tensor::Tensor;

#[test]
fn acceptance_criteria() {
    let criteria: Vec<(&str, fn() -> String)> = vec![
        ("01 gradient-integrity", criterion_01_gradient_integrity),
        ("02 forward-statistics", criterion_02_forward_statistics),
        ("03 sampler-consistency", criterion_03_sampler_consistency),
        ("04 metric-vs-oracle", criterion_04_metric_vs_oracle),
        ("05 memorization", criterion_05_memorization),
        ("06 distribution-recovery", criterion_06_distribution_recovery),
        ("07 mask-soundness", criterion_07_mask_soundness),
        ("08 pipeline-accounting", criterion_08_pipeline_accounting),
        ("09 ablation-harness", criterion_09_ablation_harness),
        ("10 inference-latency", criterion_10_inference_latency),
    ];

    let mut failures = Vec::new();
    for (name, run) in criteria {
        let started = Instant::now();
        match catch_unwind(AssertUnwindSafe(run)) {
            Ok(detail) => {
                println!(
                    "criterion {name}: PASS ({detail}, {:.1}s)",
                    started.elapsed().as_secs_f64()
                );
            }
            Err(cause) => {
                let msg = cause
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| cause.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                println!(
                    "criterion {name}: FAIL ({msg}, {:.1}s)",
                    started.elapsed().as_secs_f64()
                );
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

// ── 1. Gradient integrity ───────────────────────────────────────────
//
// Tiny config (d_model 8, 2 heads, capacity 6, K_t 3): the analytic
// gradient of every parameter element matches central finite
// differences within 1e-5 relative at f64; full sweep under 60 s.
fn criterion_01_gradient_integrity() -> String {
    let started = Instant::now();
    let schedule = DiffusionSchedule::default_quadratic();
    let mut model = Denoiser::<f64>::init(DenoiserConfig::tiny(5), 11).unwrap();
    // move off the zero-initialized readout so every path carries signal
    let mut rng = derive_rng(12, "gradcheck-jitter", 0);
    for (_, t) in model.params_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }

    let samples = overfit_samples(2, 6, 3, 13);
    let refs: Vec<&IcuSample> = samples.iter().collect();
    let batch = PackedBatch::<f64>::pack(&refs);
    let (b, lt) = (batch.batch, batch.target_len);
    let steps = vec![3usize, 47];
    let mut rng = derive_rng(14, "gradcheck-noise", 0);
    let eps: Vec<f64> = standard_normal(&mut rng, b * lt);
    let mut noisy = vec![0.0f64; b * lt];
    for (si, &t) in steps.iter().enumerate() {
        let span = si * lt..(si + 1) * lt;
        let noised = forward_noise(
            &batch.x0[span.clone()],
            t,
            &eps[span.clone()],
            &batch.target_mask[span.clone()],
            &schedule,
        )
        .unwrap();
        noisy[span].copy_from_slice(&noised);
    }
    let scales: Vec<_> = steps
        .iter()
        .map(|&t| readout_scale::<f64>(&schedule, t).unwrap())
        .collect();
    let n_valid = batch.valid_target_count() as f64;

    let loss_of = |m: &Denoiser<f64>| -> f64 {
        let mut g = Graph::<f64>::new();
        g.set_check_finite(false);
        let (eps_hat, _) = m.forward(&mut g, &batch, &noisy, &steps, &scales).unwrap();
        let pred = g.value(eps_hat).data();
        let mut sum = 0.0;
        for i in 0..pred.len() {
            if batch.target_mask[i] {
                sum += (pred[i] - eps[i]) * (pred[i] - eps[i]);
            }
        }
        sum / n_valid
    };

    // analytic gradients
    let mut g = Graph::<f64>::new();
    let (eps_hat, _) = model.forward(&mut g, &batch, &noisy, &steps, &scales).unwrap();
    let eps_in = g.input(Tensor::new(vec![b * lt], eps.clone()).unwrap());
    let mask_in = g.input(Tensor::new(
        vec![b * lt],
        batch
            .target_mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect(),
    )
    .unwrap());
    let diff = g.sub(eps_hat, eps_in).unwrap();
    let sq = g.mul(diff, diff).unwrap();
    let masked = g.mul(sq, mask_in).unwrap();
    let total = g.sum(masked).unwrap();
    let loss = g.scale(total, 1.0 / n_valid).unwrap();
    let grads = g.backward(loss).unwrap();

    let h = 1e-5;
    let mut checked = 0usize;
    let mut max_rel = 0.0f64;
    let n_params = model.params().len();
    for pi in 0..n_params {
        let n_elems = model.params()[pi].1.numel();
        for j in 0..n_elems {
            let orig = model.params()[pi].1.data()[j];
            model.params_mut()[pi].1.data_mut()[j] = orig + h;
            let fp = loss_of(&model);
            model.params_mut()[pi].1.data_mut()[j] = orig - h;
            let fm = loss_of(&model);
            model.params_mut()[pi].1.data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.by_index(pi).data()[j];
            let denom = 1f64.max(analytic.abs()).max(numeric.abs());
            let rel = (analytic - numeric).abs() / denom;
            max_rel = max_rel.max(rel);
            assert!(
                rel <= 1e-5,
                "param {} [{j}]: analytic {analytic} vs numeric {numeric} (rel {rel:.2e})",
                grads.name(pi)
            );
            checked += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient check took {elapsed:.1}s");
    format!("{checked} parameters, max rel err {max_rel:.1e}")
}

// ── 2. Forward-process statistics ───────────────────────────────────
fn criterion_02_forward_statistics() -> String {
    let schedule = DiffusionSchedule::default_quadratic();
    let alpha_final = schedule.alpha(50).unwrap();
    assert!(alpha_final < 1e-3, "alpha_50 = {alpha_final}");
    let mut detail = format!("alpha_50 {alpha_final:.2e}");
    for (i, t) in [1usize, 25, 50].into_iter().enumerate() {
        let mut rng = derive_rng(21, "fwd-stats", i as u64);
        let n = 20_000;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let e: f64 = standard_normal::<f64>(&mut rng, 1)[0];
            values.push(forward_noise(&[1.0f64], t, &[e], &[true], &schedule).unwrap()[0]);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let want_mean = schedule.alpha(t).unwrap().sqrt();
        let want_var = 1.0 - schedule.alpha(t).unwrap();
        assert!(
            (mean - want_mean).abs() < 0.02,
            "t={t}: mean {mean} vs {want_mean}"
        );
        assert!(
            (var - want_var).abs() < 0.05,
            "t={t}: var {var} vs {want_var}"
        );
        detail = format!("{detail}; t={t} dm {:.3} dv {:.3}", (mean - want_mean).abs(), (var - want_var).abs());
    }
    detail
}

// ── 3. Sampler consistency ──────────────────────────────────────────
//
// Feeding the reverse chain the exact forward noises recovers x0 on a
// one-slot toy within f32 accumulation error.
struct ExactPredictor {
    x0: f32,
    schedule: DiffusionSchedule,
}

impl NoisePredictor<f32> for ExactPredictor {
    fn predict(&mut self, noisy: &[f32], t: usize, _s: usize) -> Result<Vec<f32>, CoreError> {
        let alpha = self.schedule.alpha(t)? as f32;
        Ok(noisy
            .iter()
            .map(|&x| (x - alpha.sqrt() * self.x0) / (1.0 - alpha).sqrt())
            .collect())
    }
}

fn criterion_03_sampler_consistency() -> String {
    let schedule = DiffusionSchedule::default_quadratic();
    let x0 = 0.6180339f32;
    let mut predictor = ExactPredictor {
        x0,
        schedule: schedule.clone(),
    };
    let mut rng = derive_rng(31, "chain", 0);
    let out = sample(&mut predictor, 1, &[true], 8, &schedule, &mut rng).unwrap();
    let worst = out
        .iter()
        .map(|v| (v - x0).abs())
        .fold(0.0f32, f32::max);
    assert!(worst <= 1e-3, "worst recovery error {worst}");
    format!("worst |x - x0| = {worst:.1e} over 8 paths")
}

// ── 4. Metric estimator vs closed-form oracle ───────────────────────
//
// The 19-level quantile score on S=1000 Gaussian samples vs the
// closed-form Gaussian CRPS over 20 random (mu, sigma, x) cases. The
// 19-level discretization alone overshoots by up to ~3.9% when x sits
// at the distribution center (computable exactly from true quantiles),
// and S=1000 sampling adds a few percent of case-level noise, so the
// 3% bound is enforced on the mean gap across the cases; each case is
// additionally capped at 10%, and the pure discretization error (exact
// quantiles, no sampling) at 5%.
fn criterion_04_metric_vs_oracle() -> String {
    use statrs::distribution::{ContinuousCDF, Normal};
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut rng = derive_rng(41, "metric-oracle", 0);
    let s = 1000usize;
    let mut gaps = Vec::with_capacity(20);
    for _ in 0..20 {
        let mu = rng.random_range(-2.0..2.0f64);
        let sigma = rng.random_range(0.5..2.0f64);
        let z: f64 = standard_normal::<f64>(&mut rng, 1)[0];
        let x = mu + sigma * z;
        let oracle = crps_gaussian(mu, sigma, x);

        // discretization alone: evaluate the 19-level rule at the true quantiles
        let mut exact_q = [0.0; 19];
        for (k, level) in quantile_levels().into_iter().enumerate() {
            exact_q[k] = mu + sigma * unit.inverse_cdf(level);
        }
        let exact_terms = sacrps_terms(&[exact_q], &[x]);
        let discretization_gap = (exact_terms.numerator / 19.0 - oracle).abs() / oracle;
        assert!(
            discretization_gap <= 0.05,
            "discretization alone exceeds 5%: {discretization_gap:.3}"
        );

        let mut draws: Vec<f64> = standard_normal::<f64>(&mut rng, s)
            .into_iter()
            .map(|e| mu + sigma * e)
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut quantiles = [0.0; 19];
        for (k, level) in quantile_levels().into_iter().enumerate() {
            quantiles[k] = empirical_quantile(&draws, level);
        }
        // per-target numerator normalized by the 19 levels = discrete CRPS
        let terms = sacrps_terms(&[quantiles], &[x]);
        let estimate = terms.numerator / 19.0;
        let gap = (estimate - oracle).abs() / oracle;
        assert!(gap <= 0.10, "case (mu {mu:.2}, sigma {sigma:.2}, x {x:.2}): gap {gap:.3}");
        gaps.push(gap);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    assert!(mean_gap <= 0.03, "mean relative gap {mean_gap:.4}");
    format!("mean gap {:.2}%, max case {:.2}%", mean_gap * 100.0, max_gap * 100.0)
}

// ── 5. Memorization ─────────────────────────────────────────────────
fn criterion_05_memorization() -> String {
    let started = Instant::now();
    let schedule = DiffusionSchedule::default_quadratic();
    let base = overfit_samples(8, 60, 30, 1234);
    // four Monte-Carlo draws per sample per step
    let mut train: Vec<IcuSample> = Vec::new();
    for _ in 0..4 {
        train.extend(base.iter().cloned());
    }

    let config = DenoiserConfig {
        n_features: 129,
        ..DenoiserConfig::default()
    };
    let mut model = Denoiser::<f32>::init(config, 7).unwrap();
    let initial = evaluate_loss(&model, &base, &schedule, 8, 1000).unwrap();

    let settings = TrainSettings {
        batch_size: 32,
        lr: 1.5e-3,
        lr_decay_floor: 0.005,
        max_steps: 2000,
        eval_interval: 1_000_000,
        patience: 10,
        seed: 7,
    };
    let mut opt = Adam::new(
        AdamConfig {
            lr: settings.lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        },
        model.params(),
    );
    let outcome =
        train_loop(&mut model, &mut opt, &train, &[], &schedule, &settings, |_, _| {}).unwrap();
    assert_eq!(outcome.steps_run, 2000);
    let final_loss = evaluate_loss(&model, &base, &schedule, 8, 1000).unwrap();
    assert!(
        final_loss < 0.05 * initial,
        "loss {final_loss:.4} vs 0.05 x initial {initial:.4}"
    );

    // median forecasts on the memorized samples: standardized MSE < 0.1
    let s_paths = 50;
    let mut sq = 0.0;
    let mut n = 0usize;
    for (i, sample_in) in base.iter().enumerate() {
        let refs = [sample_in];
        let packed = PackedBatch::<f32>::pack(&refs);
        let cache = model.encode_conditional(&packed).unwrap();
        let mut predictor = ModelPredictor {
            model: &model,
            cache: &cache,
            batch: &packed,
            schedule: &schedule,
        };
        let mut rng = derive_rng(8, "memo-forecast", i as u64);
        let paths = sample(
            &mut predictor,
            packed.target_len,
            &packed.target_mask,
            s_paths,
            &schedule,
            &mut rng,
        )
        .unwrap();
        for slot in 0..packed.target_len {
            if !packed.target_mask[slot] {
                continue;
            }
            let mut vals: Vec<f64> = (0..s_paths)
                .map(|p| f64::from(paths[p * packed.target_len + slot]))
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = empirical_quantile(&vals, 0.5);
            let truth = f64::from(packed.x0[slot]);
            sq += (median - truth) * (median - truth);
            n += 1;
        }
    }
    let forecast_mse = sq / n as f64;
    assert!(forecast_mse < 0.1, "median forecast MSE {forecast_mse:.4}");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "memorization run took {elapsed:.0}s");
    format!(
        "loss {initial:.3} -> {final_loss:.4} (ratio {:.3}), forecast MSE {forecast_mse:.4}",
        final_loss / initial
    )
}

// ── 6. Distribution recovery ────────────────────────────────────────
fn criterion_06_distribution_recovery() -> String {
    let schedule = DiffusionSchedule::default_quadratic();
    let mus = [-2.0, 2.0];
    let sigma = 1.0;
    let mu_range = mus[1] - mus[0];
    let train = distribution_task_samples(1024, &mus, sigma, 60, 30, 42);

    let config = DenoiserConfig {
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        d_step: 64,
        n_features: 129,
        ..DenoiserConfig::default()
    };
    let mut model = Denoiser::<f32>::init(config, 3).unwrap();
    let settings = TrainSettings {
        batch_size: 32,
        lr: 1e-3,
        lr_decay_floor: 0.02,
        max_steps: 1500,
        eval_interval: 1_000_000,
        patience: 10,
        seed: 5,
    };
    let mut opt = Adam::new(
        AdamConfig {
            lr: settings.lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        },
        model.params(),
    );
    train_loop(&mut model, &mut opt, &train, &[], &schedule, &settings, |_, _| {}).unwrap();

    let mut detail = String::new();
    for (pi, &mu) in mus.iter().enumerate() {
        let probe = &distribution_task_samples(2, &mus, sigma, 60, 30, 999)[pi];
        let refs = [probe];
        let packed = PackedBatch::<f32>::pack(&refs);
        let cache = model.encode_conditional(&packed).unwrap();
        let mut predictor = ModelPredictor {
            model: &model,
            cache: &cache,
            batch: &packed,
            schedule: &schedule,
        };
        let mut rng = derive_rng(7, "dist-probe", pi as u64);
        let vals = sample(
            &mut predictor,
            packed.target_len,
            &packed.target_mask,
            200,
            &schedule,
            &mut rng,
        )
        .unwrap();
        let n = vals.len() as f64;
        let mean = vals.iter().map(|v| f64::from(*v)).sum::<f64>() / n;
        let var = vals
            .iter()
            .map(|v| (f64::from(*v) - mean) * (f64::from(*v) - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        assert!(
            (mean - mu).abs() <= 0.15 * mu_range,
            "pattern mu {mu}: sampled mean {mean:.3} outside 15% of range {mu_range}"
        );
        assert!(
            (std - sigma).abs() <= 0.20 * sigma,
            "pattern mu {mu}: sampled std {std:.3} outside 20% of sigma {sigma}"
        );
        detail.push_str(&format!("mu {mu}: mean {mean:.2} std {std:.2}; "));
    }
    detail.trim_end().to_string()
}

// ── 7. Mask soundness ───────────────────────────────────────────────
fn criterion_07_mask_soundness() -> String {
    let model = Denoiser::<f32>::init(DenoiserConfig::tiny(5), 71).unwrap();
    // mixed valid counts so the packed batch retains real padding slots
    let samples = vitalcast_core::synth::memorization_samples(4, 6, 3, 72);
    let refs: Vec<&IcuSample> = samples.iter().collect();
    let packed = PackedBatch::<f32>::pack(&refs);
    let steps = vec![17usize; packed.batch];
    let schedule = DiffusionSchedule::default_quadratic();
    let scales: Vec<_> = steps
        .iter()
        .map(|&t| readout_scale::<f32>(&schedule, t).unwrap())
        .collect();
    let mut rng = derive_rng(73, "mask-noise", 0);
    let noisy: Vec<f32> = standard_normal(&mut rng, packed.batch * packed.target_len);

    let run = |p: &PackedBatch<f32>| -> Vec<u32> {
        let mut g = Graph::<f32>::new();
        let (out, _) = model.forward(&mut g, p, &noisy, &steps, &scales).unwrap();
        g.value(out).data().iter().map(|v| v.to_bits()).collect()
    };
    let baseline = run(&packed);
    let mut perturbations = 0usize;
    for _ in 0..1000 {
        let mut poked = packed.clone();
        let mut changed = false;
        for i in 0..poked.cond_values.len() {
            if !poked.cond_mask[i] && rng.random_range(0.0..1.0) < 0.7 {
                poked.cond_values[i] = standard_normal::<f32>(&mut rng, 1)[0];
                changed = true;
            }
        }
        for i in 0..poked.x0.len() {
            if !poked.target_mask[i] && rng.random_range(0.0..1.0) < 0.7 {
                poked.x0[i] = standard_normal::<f32>(&mut rng, 1)[0];
                changed = true;
            }
        }
        if !changed {
            continue;
        }
        perturbations += 1;
        assert_eq!(baseline, run(&poked), "padding value leaked into output");
    }
    assert!(
        perturbations >= 900,
        "padding too scarce to exercise the property ({perturbations} perturbations)"
    );
    format!("{perturbations} perturbations, outputs bit-identical")
}

// ── 8. Pipeline determinism and discard accounting ──────────────────
fn criterion_08_pipeline_accounting() -> String {
    let dir = tempfile::tempdir().unwrap();
    let catalog = FeatureCatalog::reference();
    let config = SynthConfig {
        n_subjects: 60,
        n_minor_subjects: 3,
        n_empty_conditional_stays: 4,
        n_empty_target_stays: 3,
        n_outlier_events: 7,
        ..SynthConfig::default()
    };
    let p1 = dir.path().join("events-a.csv");
    let p2 = dir.path().join("events-b.csv");
    let report = generate(&config, &catalog, 2024, &p1, &[]).unwrap();
    generate(&config, &catalog, 2024, &p2, &[]).unwrap();
    assert_eq!(
        std::fs::read(&p1).unwrap(),
        std::fs::read(&p2).unwrap(),
        "synthetic log generation is not byte-identical"
    );

    let run = || {
        let records = load_events(&p1, &FeatureCatalog::reference()).unwrap();
        run_pipeline(records, FeatureCatalog::reference(), 60, 30, 9).unwrap()
    };
    let out1 = run();
    let out2 = run();

    let acc = &out1.accounting;
    assert_eq!(acc.stays_underage, report.n_minor_stays, "underage stays");
    assert_eq!(
        acc.stays_empty_conditional, report.n_empty_conditional_stays,
        "empty-conditional discards"
    );
    assert_eq!(
        acc.stays_empty_target, report.n_empty_target_stays,
        "empty-target discards"
    );
    assert_eq!(acc.records_outlier, report.n_outlier_events, "outlier drops");
    assert_eq!(acc.stays_other, 0);
    assert!(acc.stays_balance(), "accounting does not balance: {acc:?}");
    assert!(out1.manifest.is_disjoint(), "subject leakage across splits");

    // byte-identical rerun of the dataset files
    for (name, samples) in [("train", &out1.train), ("valid", &out1.valid), ("test", &out1.test)] {
        let f1 = dir.path().join(format!("{name}-1.bin"));
        let f2 = dir.path().join(format!("{name}-2.bin"));
        let samples2 = match name {
            "train" => &out2.train,
            "valid" => &out2.valid,
            _ => &out2.test,
        };
        vitalcast_core::dataset::write_dataset(&f1, samples, &out1.catalog.hash(), 60, 30).unwrap();
        vitalcast_core::dataset::write_dataset(&f2, samples2, &out2.catalog.hash(), 60, 30).unwrap();
        assert_eq!(
            std::fs::read(&f1).unwrap(),
            std::fs::read(&f2).unwrap(),
            "{name}.bin differs between reruns"
        );
    }
    format!(
        "stays {} = emitted {} + planted discards {}, reruns byte-identical",
        acc.stays_total,
        acc.stays_emitted,
        acc.stays_underage + acc.stays_empty_conditional + acc.stays_empty_target
    )
}

// ── 9. Ablation harness ─────────────────────────────────────────────
//
// Topologies a/b/c and beta_T in {0.05, 0.1, 0.5} all train to their
// step budget on the desk-scale synthetic set and emit one comparable
// report row each.
fn criterion_09_ablation_harness() -> String {
    let dir = tempfile::tempdir().unwrap();
    let catalog = FeatureCatalog::reference();
    let events = dir.path().join("events.csv");
    generate(
        &SynthConfig {
            n_subjects: 50,
            ..SynthConfig::default()
        },
        &catalog,
        3030,
        &events,
        &[],
    )
    .unwrap();
    let records = load_events(&events, &FeatureCatalog::reference()).unwrap();
    let out = run_pipeline(records, FeatureCatalog::reference(), 60, 30, 5).unwrap();
    assert!(out.train.len() >= 20, "desk-scale set too small");

    let variants: Vec<(&str, Topology, f64)> = vec![
        ("topology-a", Topology::A, 0.5),
        ("topology-b", Topology::B, 0.5),
        ("topology-c", Topology::C, 0.5),
        ("beta-t-0.05", Topology::C, 0.05),
        ("beta-t-0.1", Topology::C, 0.1),
        ("beta-t-0.5", Topology::C, 0.5),
    ];
    let mut rows = String::from("variant,topology,beta_t,steps,final_loss,sacrps,mse\n");
    for (name, topology, beta_t) in &variants {
        let schedule = DiffusionSchedule::new(50, 1e-4, *beta_t, vitalcast_core::ScheduleKind::Quadratic).unwrap();
        let config = DenoiserConfig {
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            d_step: 64,
            n_features: catalog.len(),
            topology: *topology,
            ..DenoiserConfig::default()
        };
        let mut model = Denoiser::<f32>::init(config, 17).unwrap();
        let settings = TrainSettings {
            batch_size: 16,
            lr: 1e-3,
            lr_decay_floor: 1.0,
            max_steps: 60,
            eval_interval: 1_000_000,
            patience: 10,
            seed: 17,
        };
        let mut opt = Adam::new(AdamConfig::with_lr(settings.lr), model.params());
        let mut last_loss = f64::NAN;
        let outcome = train_loop(
            &mut model,
            &mut opt,
            &out.train,
            &[],
            &schedule,
            &settings,
            |_, loss| last_loss = loss,
        )
        .unwrap();
        assert_eq!(outcome.steps_run, 60, "{name} did not train to completion");

        // forecast a few test samples and score them
        let probe: Vec<&IcuSample> = out.test.iter().take(3).collect();
        assert!(!probe.is_empty());
        let mut forecasts = Vec::new();
        for (i, s) in probe.iter().enumerate() {
            let mut rng = derive_rng(18, "ablation-forecast", i as u64);
            forecasts.push(
                forecast_sample(&model, s, 20, &schedule, &out.catalog, &mut rng, |_| {}).unwrap(),
            );
        }
        let report = evaluate_forecasts(&forecasts, &out.catalog).unwrap();
        assert!(report.global_sacrps.is_finite());
        assert!(report.global_mse.is_finite());
        rows.push_str(&format!(
            "{name},{},{beta_t},{},{last_loss:.6},{:.6},{:.6}\n",
            topology.as_str(),
            outcome.steps_run,
            report.global_sacrps,
            report.global_mse
        ));
    }
    let path = dir.path().join("ablation_report.csv");
    std::fs::write(&path, &rows).unwrap();
    let line_count = rows.lines().count();
    assert_eq!(line_count, 1 + variants.len());
    format!("{} variants trained and scored", variants.len())
}

// ── 10. Inference latency ───────────────────────────────────────────
//
// One S=100 forecast for one sample with the default configuration in
// at most 5 seconds.
fn criterion_10_inference_latency() -> String {
    let catalog = {
        let mut c = FeatureCatalog::reference();
        for f in 1..=c.len() as u32 {
            if c.by_id(f).unwrap().kind == vitalcast_core::FeatureKind::Numeric {
                let mid = (c.by_id(f).unwrap().min + c.by_id(f).unwrap().max) / 2.0;
                c.set_stats(f, mid, (c.by_id(f).unwrap().max - c.by_id(f).unwrap().min) / 8.0)
                    .unwrap();
            }
        }
        c
    };
    let config = DenoiserConfig::default();
    let model = Denoiser::<f32>::init(config, 99).unwrap();
    let schedule = DiffusionSchedule::default_quadratic();

    // a representative sparse sample: 13 conditional events, 3 target slots
    let mut sample_in = IcuSample {
        subject_id: "latency".into(),
        stay_id: "latency-1".into(),
        conditional: vec![vitalcast_core::Triplet::padding(); 60],
        target: vec![vitalcast_core::Triplet::padding(); 30],
    };
    for k in 0..13 {
        sample_in.conditional[k] = vitalcast_core::Triplet {
            feature_id: (k % 5 + 1) as u32,
            time: k as f32 * 2.2,
            value: 0.3,
            mask: true,
        };
    }
    for k in 0..3 {
        sample_in.target[k] = vitalcast_core::Triplet {
            feature_id: k as u32 + 1,
            time: 31.0 + 3.0 * k as f32,
            value: 0.1,
            mask: true,
        };
    }

    let mut rng = derive_rng(101, "latency", 0);
    let started = Instant::now();
    let forecast = forecast_sample(&model, &sample_in, 100, &schedule, &catalog, &mut rng, |_| {})
        .unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    assert_eq!(forecast.slots.len(), 3);
    assert_eq!(forecast.slots[0].samples.len(), 100);
    assert!(elapsed <= 5.0, "S=100 forecast took {elapsed:.2}s");
    format!("S=100 forecast in {elapsed:.2}s")
}
