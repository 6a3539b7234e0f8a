//! Forecast results: per-slot Monte-Carlo samples, derived quantiles,
//! and the forecast CSV format.

use std::fmt::Write as _;
use std::path::Path;

use vitalcast_numeric::rng::Rng;

use crate::catalog::FeatureCatalog;
use crate::denoiser::{Denoiser, PackedBatch};
use crate::diffusion::{sample, ModelPredictor};
use crate::error::CoreError;
use crate::schedule::DiffusionSchedule;
use crate::triplet::{destandardize, IcuSample};

/// The 19 evaluation quantile levels, 0.05 .. 0.95.
pub fn quantile_levels() -> [f64; 19] {
    let mut q = [0.0; 19];
    for (i, v) in q.iter_mut().enumerate() {
        *v = 0.05 * (i + 1) as f64;
    }
    q
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample set");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = level.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone)]
pub struct SlotForecast {
    pub feature_id: u32,
    pub feature_name: String,
    pub time: f32,
    /// Ground-truth value, destandardized.
    pub target: f64,
    /// All generated values, destandardized. Empty when loaded from file.
    pub samples: Vec<f64>,
    pub quantiles: [f64; 19],
    pub median: f64,
    /// 95% interval: empirical 0.025 and 0.975 quantiles.
    pub lo95: f64,
    pub hi95: f64,
}

impl SlotForecast {
    pub fn quantiles_nondecreasing(&self) -> bool {
        self.quantiles.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone)]
pub struct SampleForecast {
    pub subject_id: String,
    pub stay_id: String,
    pub slots: Vec<SlotForecast>,
}

/// Generate an S-path forecast for one sample: encode the conditional
/// once, run the reverse chains batched over paths, destandardize, and
/// derive quantiles.
pub fn forecast_sample<TPred: FnMut(u64)>(
    model: &Denoiser<f32>,
    sample_in: &IcuSample,
    s_paths: usize,
    schedule: &DiffusionSchedule,
    catalog: &FeatureCatalog,
    rng: &mut Rng,
    mut on_progress: TPred,
) -> Result<SampleForecast, CoreError> {
    let refs = [sample_in];
    let batch = PackedBatch::<f32>::pack(&refs);
    let n_slots = batch.target_len;
    let cache = model.encode_conditional(&batch)?;
    let mut predictor = ModelPredictor {
        model,
        cache: &cache,
        batch: &batch,
        schedule,
    };
    let mask = batch.target_mask.clone();
    let paths = sample(&mut predictor, n_slots, &mask, s_paths, schedule, rng)?;
    on_progress(schedule.t_count() as u64);

    let mut slots = Vec::with_capacity(n_slots);
    for (i, trip) in sample_in.target.iter().filter(|t| t.mask).enumerate().take(n_slots) {
        let feature = catalog
            .by_id(trip.feature_id)
            .ok_or_else(|| CoreError::UnknownFeature(format!("id {}", trip.feature_id)))?;
        let mut values: Vec<f64> = (0..s_paths)
            .map(|p| {
                destandardize(f64::from(paths[p * n_slots + i]), trip.feature_id, catalog)
            })
            .collect::<Result<_, _>>()?;
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut quantiles = [0.0; 19];
        for (k, level) in quantile_levels().into_iter().enumerate() {
            quantiles[k] = empirical_quantile(&values, level);
        }
        slots.push(SlotForecast {
            feature_id: trip.feature_id,
            feature_name: feature.name.clone(),
            time: trip.time,
            target: destandardize(f64::from(trip.value), trip.feature_id, catalog)?,
            median: empirical_quantile(&values, 0.5),
            lo95: empirical_quantile(&values, 0.025),
            hi95: empirical_quantile(&values, 0.975),
            samples: values,
            quantiles,
        });
    }
    Ok(SampleForecast {
        subject_id: sample_in.subject_id.clone(),
        stay_id: sample_in.stay_id.clone(),
        slots,
    })
}

/// Write forecasts as CSV. Header comments carry run provenance.
pub fn write_forecasts(
    path: &Path,
    forecasts: &[SampleForecast],
    provenance: &[(&str, String)],
) -> Result<(), CoreError> {
    let mut out = String::new();
    for (k, v) in provenance {
        writeln!(out, "# {k} = {v}").expect("string write");
    }
    out.push_str("subject_id,stay_id,slot,feature,time,target,median,lo95,hi95");
    for level in quantile_levels() {
        write!(out, ",q{:02}", (level * 100.0).round() as u32).expect("string write");
    }
    out.push('\n');
    for f in forecasts {
        for (slot, s) in f.slots.iter().enumerate() {
            write!(
                out,
                "{},{},{},{},{},{:.9},{:.9},{:.9},{:.9}",
                f.subject_id, f.stay_id, slot, s.feature_name, s.time, s.target, s.median, s.lo95, s.hi95
            )
            .expect("string write");
            for q in s.quantiles {
                write!(out, ",{q:.9}").expect("string write");
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Read a forecast CSV back (without raw samples).
pub fn read_forecasts(
    path: &Path,
    catalog: &FeatureCatalog,
) -> Result<Vec<SampleForecast>, CoreError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut out: Vec<SampleForecast> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("subject_id") || line.trim().is_empty() {
            continue;
        }
        let err = |message: String| CoreError::Parse {
            path: path.display().to_string(),
            line: lineno as u64 + 1,
            message,
        };
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 + 19 {
            return Err(err(format!("expected 28 fields, got {}", parts.len())));
        }
        let feature_name = parts[3].to_string();
        let feature_id = catalog
            .id_of(&feature_name)
            .ok_or_else(|| err(format!("unknown feature '{feature_name}'")))?;
        let fnum = |s: &str| -> Result<f64, CoreError> {
            s.parse::<f64>().map_err(|_| err(format!("bad number '{s}'")))
        };
        let mut quantiles = [0.0; 19];
        for (k, q) in quantiles.iter_mut().enumerate() {
            *q = fnum(parts[9 + k])?;
        }
        let slot = SlotForecast {
            feature_id,
            feature_name,
            time: fnum(parts[4])? as f32,
            target: fnum(parts[5])?,
            median: fnum(parts[6])?,
            lo95: fnum(parts[7])?,
            hi95: fnum(parts[8])?,
            samples: Vec::new(),
            quantiles,
        };
        let subject = parts[0].to_string();
        let stay = parts[1].to_string();
        match out.last_mut() {
            Some(last) if last.stay_id == stay && last.subject_id == subject => {
                last.slots.push(slot)
            }
            _ => out.push(SampleForecast {
                subject_id: subject,
                stay_id: stay,
                slots: vec![slot],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolation_matches_hand_computation() {
        let sorted = vec![1.0, 2.0, 4.0, 8.0];
        // h = 0.5 * 3 = 1.5 -> between 2 and 4
        assert!((empirical_quantile(&sorted, 0.5) - 3.0).abs() < 1e-12);
        assert_eq!(empirical_quantile(&sorted, 0.0), 1.0);
        assert_eq!(empirical_quantile(&sorted, 1.0), 8.0);
        // h = 0.25 * 3 = 0.75 -> 1 + 0.75
        assert!((empirical_quantile(&sorted, 0.25) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn quantile_levels_are_the_19_ventiles() {
        let q = quantile_levels();
        assert_eq!(q.len(), 19);
        assert!((q[0] - 0.05).abs() < 1e-12);
        assert!((q[9] - 0.5).abs() < 1e-12);
        assert!((q[18] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn forecast_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forecasts.csv");
        let cat = FeatureCatalog::tiny();
        let mut quantiles = [0.0; 19];
        for (i, q) in quantiles.iter_mut().enumerate() {
            *q = i as f64;
        }
        let fc = vec![SampleForecast {
            subject_id: "s1".into(),
            stay_id: "s1-1".into(),
            slots: vec![SlotForecast {
                feature_id: 1,
                feature_name: "HR".into(),
                time: 33.5,
                target: 92.25,
                samples: vec![],
                quantiles,
                median: 9.0,
                lo95: -1.0,
                hi95: 19.5,
            }],
        }];
        write_forecasts(&path, &fc, &[("config_hash", "beef".into())]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash = beef"));
        let back = read_forecasts(&path, &cat).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].slots[0].feature_name, "HR");
        assert!((back[0].slots[0].target - 92.25).abs() < 1e-9);
        assert!((back[0].slots[0].quantiles[18] - 18.0).abs() < 1e-9);
    }
}
