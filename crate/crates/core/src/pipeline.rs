//! The preprocessing chain: adult filter, outlier removal, 40-minute
//! window extraction with non-emptiness screening, subject-level splits,
//! and training-split standardization statistics.

use std::collections::{BTreeMap, BTreeSet};

use vitalcast_numeric::rng::{derive_rng, stream_index};

use crate::catalog::{FeatureCatalog, FeatureKind};
use crate::error::CoreError;
use crate::events::EventRecord;
use crate::triplet::{
    events_to_triplets, select_conditional, IcuSample, Triplet, CONDITIONAL_MINUTES,
    WINDOW_MINUTES,
};

/// Raw (unstandardized) events of one eligible stay window.
#[derive(Debug, Clone)]
pub struct RawWindow {
    pub subject_id: String,
    pub stay_id: String,
    /// `(feature_id, minute, raw_value)`, minutes in `[0, 30)`. Yes-or-no
    /// events carry 1.0.
    pub cond_events: Vec<(u32, f64, f64)>,
    /// Target-feature events with minutes in `[30, 40)`.
    pub target_events: Vec<(u32, f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accounting {
    pub records_total: usize,
    pub records_underage: usize,
    pub records_missing_age: usize,
    pub records_outlier: usize,
    pub records_null_numeric: usize,
    pub records_unstandardizable: usize,
    pub stays_total: usize,
    pub stays_underage: usize,
    pub stays_other: usize,
    pub stays_empty_conditional: usize,
    pub stays_empty_target: usize,
    pub stays_emitted: usize,
    pub target_overflow_truncated: usize,
    pub features_rejected_zero_std: usize,
    pub features_unobserved: usize,
}

impl Accounting {
    /// Stays in = emitted + empty-window discards + underage + other.
    pub fn stays_balance(&self) -> bool {
        self.stays_total
            == self.stays_emitted
                + self.stays_empty_conditional
                + self.stays_empty_target
                + self.stays_underage
                + self.stays_other
    }

    pub fn report_lines(&self) -> Vec<String> {
        vec![
            format!("records_total = {}", self.records_total),
            format!("records_underage = {}", self.records_underage),
            format!("records_missing_age = {}", self.records_missing_age),
            format!("records_outlier = {}", self.records_outlier),
            format!("records_null_numeric = {}", self.records_null_numeric),
            format!("records_unstandardizable = {}", self.records_unstandardizable),
            format!("stays_total = {}", self.stays_total),
            format!("stays_underage = {}", self.stays_underage),
            format!("stays_other = {}", self.stays_other),
            format!("stays_empty_conditional = {}", self.stays_empty_conditional),
            format!("stays_empty_target = {}", self.stays_empty_target),
            format!("stays_emitted = {}", self.stays_emitted),
            format!("target_overflow_truncated = {}", self.target_overflow_truncated),
            format!("features_rejected_zero_std = {}", self.features_rejected_zero_std),
            format!("features_unobserved = {}", self.features_unobserved),
        ]
    }
}

/// Keep records of adult subjects (age >= 18); missing ages drop the record.
pub fn filter_adults(records: Vec<EventRecord>, acc: &mut Accounting) -> Vec<EventRecord> {
    records
        .into_iter()
        .filter(|r| match r.age {
            Some(a) if a >= 18.0 => true,
            Some(_) => {
                acc.records_underage += 1;
                false
            }
            None => {
                acc.records_missing_age += 1;
                false
            }
        })
        .collect()
}

/// Keep numeric values inside the catalog range and non-null yes-or-no
/// events; everything else is dropped and counted.
pub fn filter_outliers(
    records: Vec<EventRecord>,
    catalog: &FeatureCatalog,
    acc: &mut Accounting,
) -> Vec<EventRecord> {
    records
        .into_iter()
        .filter(|r| {
            let f = catalog.by_id(r.feature_id).expect("ids resolved at load");
            match f.kind {
                FeatureKind::Numeric => match r.value {
                    Some(v) if v >= f.min && v <= f.max => true,
                    Some(_) => {
                        acc.records_outlier += 1;
                        false
                    }
                    None => {
                        acc.records_null_numeric += 1;
                        false
                    }
                },
                FeatureKind::YesNo => true,
            }
        })
        .collect()
}

/// Count distinct stays in a record set.
pub fn distinct_stays(records: &[EventRecord]) -> usize {
    let mut keys: BTreeSet<(&str, &str)> = BTreeSet::new();
    for r in records {
        keys.insert((&r.subject_id, &r.stay_id));
    }
    keys.len()
}

/// Group records by stay and cut the initial 40-minute window: conditional
/// events in `[0, 30)` (all features), target-feature events in `[30, 40)`.
/// Stays with an empty side are discarded and counted.
pub fn extract_windows(
    records: &[EventRecord],
    catalog: &FeatureCatalog,
    acc: &mut Accounting,
) -> Vec<RawWindow> {
    let mut by_stay: BTreeMap<(String, String), Vec<&EventRecord>> = BTreeMap::new();
    for r in records {
        by_stay
            .entry((r.subject_id.clone(), r.stay_id.clone()))
            .or_default()
            .push(r);
    }

    let mut windows = Vec::new();
    for ((subject_id, stay_id), recs) in by_stay {
        let mut cond = Vec::new();
        let mut target = Vec::new();
        for r in recs {
            if r.minute >= WINDOW_MINUTES {
                continue;
            }
            let raw = r.value.unwrap_or(1.0);
            if r.minute < CONDITIONAL_MINUTES {
                cond.push((r.feature_id, r.minute, raw));
            } else if catalog.is_target_id(r.feature_id) {
                target.push((r.feature_id, r.minute, raw));
            }
        }
        if cond.is_empty() {
            acc.stays_empty_conditional += 1;
            continue;
        }
        if target.is_empty() {
            acc.stays_empty_target += 1;
            continue;
        }
        acc.stays_emitted += 1;
        windows.push(RawWindow {
            subject_id,
            stay_id,
            cond_events: cond,
            target_events: target,
        });
    }
    windows
}

/// Subject-disjoint train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: BTreeSet<String>,
    pub valid: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
    /// Set when the subject pool was too small for a real split.
    pub degenerate: bool,
}

impl SplitManifest {
    pub fn split_of(&self, subject: &str) -> Option<&'static str> {
        if self.train.contains(subject) {
            Some("train")
        } else if self.valid.contains(subject) {
            Some("valid")
        } else if self.test.contains(subject) {
            Some("test")
        } else {
            None
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.train.intersection(&self.valid).count() == 0
            && self.train.intersection(&self.test).count() == 0
            && self.valid.intersection(&self.test).count() == 0
    }
}

/// 20% of subjects to test, then 20% of the remainder to validation.
pub fn split_by_subject(windows: &[RawWindow], seed: u64) -> SplitManifest {
    let mut subjects: Vec<String> = windows
        .iter()
        .map(|w| w.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut rng = derive_rng(seed, "subject-split", 0);
    // Fisher-Yates over the sorted subject list.
    use rand::Rng as _;
    let n = subjects.len();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        subjects.swap(i, j);
    }

    let n_test = n / 5;
    let n_valid = (n - n_test) / 5;
    let degenerate = n_test == 0 || n_valid == 0;
    let test: BTreeSet<String> = subjects[..n_test].iter().cloned().collect();
    let valid: BTreeSet<String> = subjects[n_test..n_test + n_valid].iter().cloned().collect();
    let train: BTreeSet<String> = subjects[n_test + n_valid..].iter().cloned().collect();
    SplitManifest {
        train,
        valid,
        test,
        seed,
        degenerate,
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub observed: usize,
    pub rejected_zero_std: Vec<String>,
    pub unobserved: Vec<String>,
}

/// Fit per-feature mean and population std from the raw values of the
/// given (training-split) windows. Observed numeric features with zero
/// variance are rejected: they keep no stats and their events are later
/// dropped with accounting.
pub fn fit_catalog_stats(
    windows: &[&RawWindow],
    catalog: &mut FeatureCatalog,
    acc: &mut Accounting,
) -> FitReport {
    let n_features = catalog.len();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_features + 1];
    for w in windows {
        for &(fid, _, v) in w.cond_events.iter().chain(&w.target_events) {
            values[fid as usize].push(v);
        }
    }

    let mut report = FitReport::default();
    for fid in 1..=n_features as u32 {
        let f = catalog.by_id(fid).unwrap();
        if f.kind != FeatureKind::Numeric {
            continue;
        }
        let name = f.name.clone();
        let vals = &values[fid as usize];
        if vals.is_empty() {
            report.unobserved.push(name);
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 0.0 {
            catalog.set_stats(fid, mean, std).expect("std checked positive");
            report.observed += 1;
        } else {
            report.rejected_zero_std.push(name);
        }
    }
    acc.features_rejected_zero_std = report.rejected_zero_std.len();
    acc.features_unobserved = report.unobserved.len();
    report
}

/// Build fixed-capacity samples from raw windows using the fitted catalog.
/// Events whose feature carries no stats are dropped with accounting; a
/// window emptied this way is discarded under the matching counter.
pub fn build_samples(
    windows: &[&RawWindow],
    catalog: &FeatureCatalog,
    capacity: usize,
    target_capacity: usize,
    seed: u64,
    acc: &mut Accounting,
) -> Result<Vec<IcuSample>, CoreError> {
    let target_ids = catalog.target_ids();
    let mut samples = Vec::with_capacity(windows.len());
    for w in windows {
        let usable = |evs: &[(u32, f64, f64)]| -> Vec<(u32, f64, f64)> {
            evs.iter()
                .filter(|(fid, _, _)| {
                    let f = catalog.by_id(*fid).expect("resolved");
                    f.kind == FeatureKind::YesNo || f.stats.is_some()
                })
                .copied()
                .collect()
        };
        let cond_events = usable(&w.cond_events);
        let target_events = usable(&w.target_events);
        acc.records_unstandardizable +=
            (w.cond_events.len() - cond_events.len()) + (w.target_events.len() - target_events.len());

        if cond_events.is_empty() {
            acc.stays_emitted -= 1;
            acc.stays_empty_conditional += 1;
            continue;
        }
        if target_events.is_empty() {
            acc.stays_emitted -= 1;
            acc.stays_empty_target += 1;
            continue;
        }

        let cond_triplets = events_to_triplets(&cond_events, catalog)?;
        let mut rng = derive_rng(seed, "conditional-select", stream_index(&w.stay_id));
        let conditional = select_conditional(&cond_triplets, &target_ids, capacity, &mut rng);

        let mut target = events_to_triplets(&target_events, catalog)?;
        if target.len() > target_capacity {
            acc.target_overflow_truncated += target.len() - target_capacity;
            target.truncate(target_capacity);
        }
        target.resize(target_capacity, Triplet::padding());

        let sample = IcuSample {
            subject_id: w.subject_id.clone(),
            stay_id: w.stay_id.clone(),
            conditional,
            target,
        };
        sample.validate(catalog)?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Full chain from loaded records to per-split samples and a fitted catalog.
pub struct PipelineOutput {
    pub train: Vec<IcuSample>,
    pub valid: Vec<IcuSample>,
    pub test: Vec<IcuSample>,
    pub manifest: SplitManifest,
    pub catalog: FeatureCatalog,
    pub accounting: Accounting,
}

pub fn run_pipeline(
    records: Vec<EventRecord>,
    mut catalog: FeatureCatalog,
    capacity: usize,
    target_capacity: usize,
    seed: u64,
) -> Result<PipelineOutput, CoreError> {
    let mut acc = Accounting {
        records_total: records.len(),
        stays_total: distinct_stays(&records),
        ..Accounting::default()
    };

    let stays_before = distinct_stays(&records);
    let records = filter_adults(records, &mut acc);
    acc.stays_underage = stays_before - distinct_stays(&records);

    let stays_before = distinct_stays(&records);
    let records = filter_outliers(records, &catalog, &mut acc);
    acc.stays_other = stays_before - distinct_stays(&records);

    let windows = extract_windows(&records, &catalog, &mut acc);
    let manifest = split_by_subject(&windows, seed);

    fn of_split<'a>(
        manifest: &SplitManifest,
        name: &str,
        windows: &'a [RawWindow],
    ) -> Vec<&'a RawWindow> {
        windows
            .iter()
            .filter(|w| manifest.split_of(&w.subject_id) == Some(name))
            .collect()
    }
    let train_windows = of_split(&manifest, "train", &windows);
    let valid_windows = of_split(&manifest, "valid", &windows);
    let test_windows = of_split(&manifest, "test", &windows);

    fit_catalog_stats(&train_windows, &mut catalog, &mut acc);

    let train = build_samples(&train_windows, &catalog, capacity, target_capacity, seed, &mut acc)?;
    let valid = build_samples(&valid_windows, &catalog, capacity, target_capacity, seed, &mut acc)?;
    let test = build_samples(&test_windows, &catalog, capacity, target_capacity, seed, &mut acc)?;

    debug_assert!(acc.stays_balance(), "discard accounting must balance: {acc:?}");

    Ok(PipelineOutput {
        train,
        valid,
        test,
        manifest,
        catalog,
        accounting: acc,
    })
}
