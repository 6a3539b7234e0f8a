//! The triplet data model: sparse events as (feature, time, value, mask)
//! records, per-feature standardization, and capacity-limited selection
//! of conditional inputs.

use vitalcast_numeric::rng::{sample_without_replacement, Rng};

use crate::catalog::{FeatureCatalog, FeatureKind, PADDING_FEATURE_ID};
use crate::error::CoreError;

/// Window length in minutes; the first part is conditional history, the
/// remainder the forecast horizon.
pub const WINDOW_MINUTES: f64 = 40.0;
pub const CONDITIONAL_MINUTES: f64 = 30.0;

/// One observed event (or a padding slot when `mask` is false).
///
/// Padding slots carry the reserved feature id 0, time 0, and value 0
/// (the standardized mean).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub feature_id: u32,
    /// Minutes relative to window start, in `[0, 40)`.
    pub time: f32,
    /// Standardized value; 0 when `mask` is false.
    pub value: f32,
    pub mask: bool,
}

impl Triplet {
    pub fn padding() -> Self {
        Triplet {
            feature_id: PADDING_FEATURE_ID,
            time: 0.0,
            value: 0.0,
            mask: false,
        }
    }
}

/// One 40-minute window: a fixed-capacity conditional triplet array
/// (first 30 minutes, any feature) and a fixed-capacity target array
/// (last 10 minutes, target features only).
#[derive(Debug, Clone, PartialEq)]
pub struct IcuSample {
    pub subject_id: String,
    pub stay_id: String,
    /// Exactly `capacity` triplets; valid ones first in time order, padding last.
    pub conditional: Vec<Triplet>,
    /// Exactly `target_capacity` triplets, same layout.
    pub target: Vec<Triplet>,
}

impl IcuSample {
    pub fn valid_conditional(&self) -> impl Iterator<Item = &Triplet> {
        self.conditional.iter().filter(|t| t.mask)
    }

    pub fn valid_target(&self) -> impl Iterator<Item = &Triplet> {
        self.target.iter().filter(|t| t.mask)
    }

    pub fn valid_conditional_count(&self) -> usize {
        self.valid_conditional().count()
    }

    pub fn valid_target_count(&self) -> usize {
        self.valid_target().count()
    }

    /// Every structural invariant a sample must satisfy.
    pub fn validate(&self, catalog: &FeatureCatalog) -> Result<(), CoreError> {
        let check = |t: &Triplet, conditional: bool| -> Result<(), CoreError> {
            if t.mask {
                let f = catalog.by_id(t.feature_id).ok_or_else(|| {
                    CoreError::Dataset(format!(
                        "stay {}: triplet references unknown feature id {}",
                        self.stay_id, t.feature_id
                    ))
                })?;
                let (lo, hi) = if conditional {
                    (0.0, CONDITIONAL_MINUTES)
                } else {
                    (CONDITIONAL_MINUTES, WINDOW_MINUTES)
                };
                if (f64::from(t.time)) < lo || f64::from(t.time) >= hi {
                    return Err(CoreError::Dataset(format!(
                        "stay {}: time {} outside [{lo}, {hi})",
                        self.stay_id, t.time
                    )));
                }
                if !conditional && !f.is_target {
                    return Err(CoreError::Dataset(format!(
                        "stay {}: non-target feature '{}' in target window",
                        self.stay_id, f.name
                    )));
                }
            } else {
                if t.value != 0.0 || t.feature_id != PADDING_FEATURE_ID {
                    return Err(CoreError::Dataset(format!(
                        "stay {}: padding triplet carries data",
                        self.stay_id
                    )));
                }
            }
            Ok(())
        };
        for t in &self.conditional {
            check(t, true)?;
        }
        for t in &self.target {
            check(t, false)?;
        }
        if self.valid_target_count() == 0 {
            return Err(CoreError::Dataset(format!(
                "stay {}: no valid target slots",
                self.stay_id
            )));
        }
        Ok(())
    }
}

/// Standardize a raw value for a feature: `(raw - mean) / std` for
/// numeric features, fixed 1.0 for present yes-or-no events.
pub fn standardize(raw: f64, feature_id: u32, catalog: &FeatureCatalog) -> Result<f64, CoreError> {
    let f = catalog
        .by_id(feature_id)
        .ok_or_else(|| CoreError::UnknownFeature(format!("id {feature_id}")))?;
    match f.kind {
        FeatureKind::YesNo => Ok(1.0),
        FeatureKind::Numeric => {
            let (mean, std) = f.stats.ok_or_else(|| {
                CoreError::Catalog(format!("feature '{}' has no fitted stats", f.name))
            })?;
            Ok((raw - mean) / std)
        }
    }
}

/// Inverse of [`standardize`] for numeric features.
pub fn destandardize(value: f64, feature_id: u32, catalog: &FeatureCatalog) -> Result<f64, CoreError> {
    let f = catalog
        .by_id(feature_id)
        .ok_or_else(|| CoreError::UnknownFeature(format!("id {feature_id}")))?;
    match f.kind {
        FeatureKind::YesNo => Ok(value),
        FeatureKind::Numeric => {
            let (mean, std) = f.stats.ok_or_else(|| {
                CoreError::Catalog(format!("feature '{}' has no fitted stats", f.name))
            })?;
            Ok(value * std + mean)
        }
    }
}

/// Convert raw events into mask=1 triplets, standardizing values and
/// ordering by `(time, feature_id)` (stable for exact ties).
pub fn events_to_triplets(
    events: &[(u32, f64, f64)],
    catalog: &FeatureCatalog,
) -> Result<Vec<Triplet>, CoreError> {
    let mut out = Vec::with_capacity(events.len());
    for &(feature_id, time, raw) in events {
        if catalog.by_id(feature_id).is_none() {
            return Err(CoreError::UnknownFeature(format!("id {feature_id}")));
        }
        out.push(Triplet {
            feature_id,
            time: time as f32,
            value: standardize(raw, feature_id, catalog)? as f32,
            mask: true,
        });
    }
    out.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then(a.feature_id.cmp(&b.feature_id))
    });
    Ok(out)
}

/// Fill the fixed-capacity conditional array.
///
/// When the triplets overflow `capacity`, every triplet of a target
/// feature is kept first; remaining slots are filled by a uniform draw
/// without replacement from the rest. If target-feature triplets alone
/// exceed the capacity, the most recent ones win. Valid triplets are
/// emitted time-ascending, padding last.
pub fn select_conditional(
    triplets: &[Triplet],
    target_ids: &[u32],
    capacity: usize,
    rng: &mut Rng,
) -> Vec<Triplet> {
    let mut kept: Vec<Triplet> = if triplets.len() <= capacity {
        triplets.to_vec()
    } else {
        let (mut targets, others): (Vec<Triplet>, Vec<Triplet>) = triplets
            .iter()
            .copied()
            .partition(|t| target_ids.contains(&t.feature_id));
        if targets.len() >= capacity {
            // keep the most recent target-feature triplets
            targets.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
            targets.split_off(targets.len() - capacity)
        } else {
            let picks =
                sample_without_replacement(rng, others.len(), capacity - targets.len());
            let mut sorted_picks = picks;
            sorted_picks.sort_unstable();
            for i in sorted_picks {
                targets.push(others[i]);
            }
            targets
        }
    };
    kept.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then(a.feature_id.cmp(&b.feature_id))
    });
    kept.resize(capacity, Triplet::padding());
    kept
}
