//! Probabilistic forecast scoring: MSE on medians, the 19-level
//! quantile-based standardized average CRPS, per-sample metric tables,
//! and the closed-form Gaussian CRPS oracle used to validate the
//! estimator.
//!
//! All scores are computed in standardized space; destandardized values
//! exist only in forecast output files.

use std::fmt::Write as _;
use std::path::Path;

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::catalog::FeatureCatalog;
use crate::error::CoreError;
use crate::forecast::{quantile_levels, SampleForecast};
use crate::triplet::standardize;

/// Pinball (quantile) loss `(alpha - I[q >= x]) * (x - q)`.
pub fn pinball(q: f64, x: f64, alpha: f64) -> f64 {
    let indicator = if q >= x { 1.0 } else { 0.0 };
    (alpha - indicator) * (x - q)
}

/// Sum of squared errors and the slot count; the reported MSE is the
/// slot-average.
pub fn mse_parts(predictions: &[f64], targets: &[f64]) -> (f64, usize) {
    let sum = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (sum, predictions.len())
}

/// Raw accumulators of the standardized average CRPS: the double sum of
/// pinball terms and the sum of absolute targets. The score is
/// `numerator / (19 * abs_target_sum)`, and the parts regroup exactly
/// across samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SacrpsTerms {
    pub numerator: f64,
    pub abs_target_sum: f64,
}

impl SacrpsTerms {
    pub fn add(&mut self, other: SacrpsTerms) {
        self.numerator += other.numerator;
        self.abs_target_sum += other.abs_target_sum;
    }

    pub fn score(&self) -> Result<f64, CoreError> {
        if self.abs_target_sum == 0.0 {
            return Err(CoreError::Metrics(
                "sum of absolute targets is zero; the standardized score is undefined".into(),
            ));
        }
        Ok(self.numerator / (19.0 * self.abs_target_sum))
    }
}

/// Accumulate pinball terms for one set of slots: `quantiles[s]` holds
/// the 19 forecast quantiles of slot `s`, `targets[s]` its standardized
/// ground truth.
pub fn sacrps_terms(quantiles: &[[f64; 19]], targets: &[f64]) -> SacrpsTerms {
    let levels = quantile_levels();
    let mut terms = SacrpsTerms::default();
    for (qs, &x) in quantiles.iter().zip(targets) {
        for (q, alpha) in qs.iter().zip(levels) {
            terms.numerator += 2.0 * pinball(*q, x, alpha);
        }
        terms.abs_target_sum += x.abs();
    }
    terms
}

/// Closed-form CRPS of a Gaussian forecast:
/// `sigma * (z * (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi))`, `z = (x - mu)/sigma`.
pub fn crps_gaussian(mu: f64, sigma: f64, x: f64) -> f64 {
    if sigma == 0.0 {
        return (x - mu).abs();
    }
    let z = (x - mu) / sigma;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    sigma * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

#[derive(Debug, Clone)]
pub struct PerSampleRow {
    pub subject_id: String,
    pub stay_id: String,
    pub n_slots: usize,
    pub terms: SacrpsTerms,
    pub sacrps: f64,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub global_sacrps: f64,
    pub global_mse: f64,
    pub n_samples: usize,
    pub n_slots: usize,
    pub rows: Vec<PerSampleRow>,
}

impl EvalReport {
    pub fn summary(&self, values: impl Fn(&PerSampleRow) -> f64) -> (f64, f64, f64) {
        let mut v: Vec<f64> = self.rows.iter().map(values).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (
            crate::forecast::empirical_quantile(&v, 0.25),
            crate::forecast::empirical_quantile(&v, 0.5),
            crate::forecast::empirical_quantile(&v, 0.75),
        )
    }
}

/// Score forecasts against their embedded targets in standardized space.
pub fn evaluate_forecasts(
    forecasts: &[SampleForecast],
    catalog: &FeatureCatalog,
) -> Result<EvalReport, CoreError> {
    let mut global = SacrpsTerms::default();
    let mut mse_sum = 0.0;
    let mut n_slots = 0usize;
    let mut rows = Vec::with_capacity(forecasts.len());
    for f in forecasts {
        let mut quantiles = Vec::with_capacity(f.slots.len());
        let mut targets = Vec::with_capacity(f.slots.len());
        let mut medians = Vec::with_capacity(f.slots.len());
        for s in &f.slots {
            let mut std_q = [0.0; 19];
            for (k, q) in s.quantiles.iter().enumerate() {
                std_q[k] = standardize(*q, s.feature_id, catalog)?;
            }
            quantiles.push(std_q);
            targets.push(standardize(s.target, s.feature_id, catalog)?);
            medians.push(standardize(s.median, s.feature_id, catalog)?);
        }
        let terms = sacrps_terms(&quantiles, &targets);
        let (sq, n) = mse_parts(&medians, &targets);
        global.add(terms);
        mse_sum += sq;
        n_slots += n;
        rows.push(PerSampleRow {
            subject_id: f.subject_id.clone(),
            stay_id: f.stay_id.clone(),
            n_slots: n,
            terms,
            sacrps: terms.score().unwrap_or(f64::NAN),
            mse: if n > 0 { sq / n as f64 } else { f64::NAN },
        });
    }
    if n_slots == 0 {
        return Err(CoreError::Metrics("no slots to score".into()));
    }
    Ok(EvalReport {
        global_sacrps: global.score()?,
        global_mse: mse_sum / n_slots as f64,
        n_samples: rows.len(),
        n_slots,
        rows,
    })
}

/// Fixed-width histogram; bins cover `[min, max]`, counts sum to `values.len()`.
pub fn histogram(values: &[f64], n_bins: usize) -> Vec<(f64, f64, usize)> {
    assert!(n_bins > 0);
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut bins = vec![0usize; n_bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(n_bins - 1);
        bins[idx] += 1;
    }
    bins.into_iter()
        .enumerate()
        .map(|(i, count)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, count))
        .collect()
}

/// Write the per-sample metric table as CSV.
pub fn write_per_sample_table(path: &Path, report: &EvalReport) -> Result<(), CoreError> {
    let mut out = String::from("subject_id,stay_id,n_slots,sacrps,mse\n");
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{:.9},{:.9}",
            r.subject_id, r.stay_id, r.n_slots, r.sacrps, r.mse
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Write histogram CSVs of per-sample SACRPS and MSE (violin-plot input).
pub fn write_histograms(path: &Path, report: &EvalReport, n_bins: usize) -> Result<(), CoreError> {
    let mut out = String::from("metric,bin_lo,bin_hi,count\n");
    let sacrps: Vec<f64> = report.rows.iter().map(|r| r.sacrps).collect();
    let mse: Vec<f64> = report.rows.iter().map(|r| r.mse).collect();
    for (name, values) in [("sacrps", sacrps), ("mse", mse)] {
        for (lo, hi, count) in histogram(&values, n_bins) {
            writeln!(out, "{name},{lo:.9},{hi:.9},{count}").expect("string write");
        }
    }
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Write the flat metrics report (`key = value` lines).
pub fn write_report(
    path: &Path,
    report: &EvalReport,
    provenance: &[(&str, String)],
) -> Result<(), CoreError> {
    let mut out = String::new();
    for (k, v) in provenance {
        writeln!(out, "{k} = {v}").expect("string write");
    }
    writeln!(out, "aggregation = pooled-slots (sacrps summed per target, mse slot-averaged)")
        .expect("string write");
    writeln!(out, "global_sacrps = {:.9}", report.global_sacrps).expect("string write");
    writeln!(out, "global_mse = {:.9}", report.global_mse).expect("string write");
    writeln!(out, "n_samples = {}", report.n_samples).expect("string write");
    writeln!(out, "n_slots = {}", report.n_slots).expect("string write");
    let (q1, med, q3) = report.summary(|r| r.sacrps);
    writeln!(out, "per_sample_sacrps_quartiles = {q1:.9},{med:.9},{q3:.9}").expect("string write");
    let (q1, med, q3) = report.summary(|r| r.mse);
    writeln!(out, "per_sample_mse_quartiles = {q1:.9},{med:.9},{q3:.9}").expect("string write");
    std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_trivial_cases() {
        assert_eq!(pinball(1.5, 1.5, 0.3), 0.0);
        assert!((pinball(0.0, 1.0, 0.05) - 0.05).abs() < 1e-12);
        assert!((pinball(1.0, 0.0, 0.95) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn mse_trivial_and_oracle() {
        let (sum, n) = mse_parts(&[1.0, 2.0], &[0.0, 0.0]);
        assert!((sum - 5.0).abs() < 1e-12);
        assert_eq!(n, 2);
        assert!((sum / n as f64 - 2.5).abs() < 1e-12);

        // random case against an explicit scalar loop
        let mut rng = vitalcast_numeric::rng::derive_rng(2, "mse", 0);
        let a: Vec<f64> = vitalcast_numeric::rng::standard_normal(&mut rng, 100);
        let b: Vec<f64> = vitalcast_numeric::rng::standard_normal(&mut rng, 100);
        let (sum, _) = mse_parts(&a, &b);
        let mut oracle = 0.0;
        for i in 0..100 {
            oracle += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((sum - oracle).abs() < 1e-9);
    }

    #[test]
    fn sacrps_point_mass_at_target_is_zero() {
        let quantiles = [[2.5; 19], [-1.0; 19]];
        let targets = [2.5, -1.0];
        let terms = sacrps_terms(&quantiles, &targets);
        assert_eq!(terms.numerator, 0.0);
        assert!((terms.score().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sacrps_all_zero_quantiles_single_unit_target() {
        // sum_i 2 * 0.05 i * (1 - 0) = 2 * 0.05 * 190 = 19; / (19 * 1) = 1
        let quantiles = [[0.0; 19]];
        let terms = sacrps_terms(&quantiles, &[1.0]);
        assert!((terms.numerator - 19.0).abs() < 1e-9, "{}", terms.numerator);
        assert!((terms.score().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sacrps_zero_denominator_is_rejected() {
        let terms = sacrps_terms(&[[0.5; 19]], &[0.0]);
        assert!(terms.score().is_err());
    }

    #[test]
    fn gaussian_crps_reference_values() {
        // x = mu: sigma * (2 phi(0) - 1/sqrt(pi)) ~= 0.23370 sigma
        let v = crps_gaussian(0.0, 1.0, 0.0);
        let expected = 2.0 * (1.0 / (2.0 * std::f64::consts::PI).sqrt())
            - 1.0 / std::f64::consts::PI.sqrt();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.2337).abs() < 1e-4);

        for sigma in [0.5, 2.0] {
            assert!((crps_gaussian(0.0, sigma, 0.0) - sigma * expected).abs() < 1e-12);
        }

        // translation invariance
        let a = crps_gaussian(3.0, 1.5, 4.2);
        let b = crps_gaussian(0.0, 1.5, 1.2);
        assert!((a - b).abs() < 1e-12);

        // point-mass limit
        assert_eq!(crps_gaussian(2.0, 0.0, 2.0), 0.0);
    }

    #[test]
    fn histogram_counts_sum_to_input_len() {
        let values: Vec<f64> = (0..137).map(|i| (i as f64 * 0.37).sin()).collect();
        let bins = histogram(&values, 12);
        let total: usize = bins.iter().map(|(_, _, c)| c).sum();
        assert_eq!(total, 137);
    }
}
