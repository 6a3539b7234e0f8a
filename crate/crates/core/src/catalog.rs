//! Feature catalog: ids, kinds, valid ranges, target flags, and the
//! per-feature standardization statistics fitted on the training split.

use std::collections::HashMap;
use std::path::Path;

use crate::error::CoreError;
use crate::hash::short_hash;

/// Feature id 0 is reserved for padding triplets; real features start at 1.
pub const PADDING_FEATURE_ID: u32 = 0;

pub const TARGET_FEATURE_NAMES: [&str; 3] = ["HR", "SBP", "DBP"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numeric,
    /// Presence-only events; standardized value is fixed at 1.0 when present.
    YesNo,
}

impl FeatureKind {
    fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::YesNo => "yes-or-no",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "numeric" => Some(FeatureKind::Numeric),
            "yes-or-no" => Some(FeatureKind::YesNo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Feature {
    pub id: u32,
    pub name: String,
    pub kind: FeatureKind,
    pub min: f64,
    pub max: f64,
    pub is_target: bool,
    /// `(mean, std)` fitted on the training split; `None` until fitted.
    pub stats: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct FeatureCatalog {
    features: Vec<Feature>,
    by_name: HashMap<String, u32>,
}

impl FeatureCatalog {
    /// Features must carry contiguous ids starting at 1, include exactly
    /// the three targets (HR, SBP, DBP), and any fitted std must be > 0.
    pub fn new(features: Vec<Feature>) -> Result<Self, CoreError> {
        if features.is_empty() {
            return Err(CoreError::Catalog("catalog has no features".into()));
        }
        for (i, f) in features.iter().enumerate() {
            if f.id != (i + 1) as u32 {
                return Err(CoreError::Catalog(format!(
                    "feature '{}' has id {}, expected {} (ids must be contiguous from 1)",
                    f.name,
                    f.id,
                    i + 1
                )));
            }
            if f.kind == FeatureKind::Numeric && !(f.min < f.max) {
                return Err(CoreError::Catalog(format!(
                    "feature '{}' has empty range [{}, {}]",
                    f.name, f.min, f.max
                )));
            }
            if let Some((_, std)) = f.stats {
                if !(std > 0.0) {
                    return Err(CoreError::Catalog(format!(
                        "feature '{}' has non-positive std {std}",
                        f.name
                    )));
                }
            }
        }
        let targets: Vec<&str> = features
            .iter()
            .filter(|f| f.is_target)
            .map(|f| f.name.as_str())
            .collect();
        if targets != TARGET_FEATURE_NAMES {
            return Err(CoreError::Catalog(format!(
                "targets must be exactly {TARGET_FEATURE_NAMES:?} in order, got {targets:?}"
            )));
        }
        let mut by_name = HashMap::with_capacity(features.len());
        for f in &features {
            if by_name.insert(f.name.clone(), f.id).is_some() {
                return Err(CoreError::Catalog(format!(
                    "duplicate feature name '{}'",
                    f.name
                )));
            }
        }
        Ok(FeatureCatalog { features, by_name })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn by_id(&self, id: u32) -> Option<&Feature> {
        if id == PADDING_FEATURE_ID {
            return None;
        }
        self.features.get(id as usize - 1)
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.by_name.get(name).copied()
    }

    pub fn target_ids(&self) -> Vec<u32> {
        self.features
            .iter()
            .filter(|f| f.is_target)
            .map(|f| f.id)
            .collect()
    }

    pub fn is_target_id(&self, id: u32) -> bool {
        self.by_id(id).map(|f| f.is_target).unwrap_or(false)
    }

    /// Install fitted `(mean, std)` stats; rejects non-positive std.
    pub fn set_stats(&mut self, id: u32, mean: f64, std: f64) -> Result<(), CoreError> {
        if !(std > 0.0) {
            let name = self.by_id(id).map(|f| f.name.clone()).unwrap_or_default();
            return Err(CoreError::Catalog(format!(
                "feature '{name}': fitted std must be > 0, got {std}"
            )));
        }
        let f = self
            .features
            .get_mut(id as usize - 1)
            .ok_or_else(|| CoreError::Catalog(format!("no feature with id {id}")))?;
        f.stats = Some((mean, std));
        Ok(())
    }

    /// Content hash covering definitions and any fitted stats.
    pub fn hash(&self) -> String {
        short_hash(self.serialize().as_bytes())
    }

    fn serialize(&self) -> String {
        let mut out = String::from("id,name,kind,min,max,is_target,mean,std\n");
        for f in &self.features {
            let (mean, std) = match f.stats {
                Some((m, s)) => (format!("{m}"), format!("{s}")),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                f.id,
                f.name,
                f.kind.as_str(),
                f.min,
                f.max,
                if f.is_target { 1 } else { 0 },
                mean,
                std
            ));
        }
        out
    }

    pub fn write_file(&self, path: &Path) -> Result<(), CoreError> {
        std::fs::write(path, self.serialize()).map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn read_file(path: &Path) -> Result<Self, CoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let mut features = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let err = |message: String| CoreError::Parse {
                path: path.display().to_string(),
                line: lineno as u64 + 1,
                message,
            };
            if parts.len() < 6 {
                return Err(err(format!("expected at least 6 fields, got {}", parts.len())));
            }
            let id: u32 = parts[0]
                .parse()
                .map_err(|_| err(format!("bad id '{}'", parts[0])))?;
            let kind = FeatureKind::parse(parts[2])
                .ok_or_else(|| err(format!("bad kind '{}'", parts[2])))?;
            let min: f64 = parts[3]
                .parse()
                .map_err(|_| err(format!("bad min '{}'", parts[3])))?;
            let max: f64 = parts[4]
                .parse()
                .map_err(|_| err(format!("bad max '{}'", parts[4])))?;
            let is_target = parts[5] == "1";
            let stats = if parts.len() >= 8 && !parts[6].is_empty() && !parts[7].is_empty() {
                let mean: f64 = parts[6]
                    .parse()
                    .map_err(|_| err(format!("bad mean '{}'", parts[6])))?;
                let std: f64 = parts[7]
                    .parse()
                    .map_err(|_| err(format!("bad std '{}'", parts[7])))?;
                Some((mean, std))
            } else {
                None
            };
            features.push(Feature {
                id,
                name: parts[1].to_string(),
                kind,
                min,
                max,
                is_target,
                stats,
            });
        }
        FeatureCatalog::new(features)
    }

    /// The reference catalog: 129 features — the 3 vital-sign targets,
    /// 114 further numeric features (vitals, labs, medication doses),
    /// and 12 yes-or-no care items.
    pub fn reference() -> Self {
        let mut features = Vec::with_capacity(129);

        push_feature(&mut features, "HR", FeatureKind::Numeric, 0.0, 300.0, true);
        push_feature(&mut features, "SBP", FeatureKind::Numeric, 0.0, 300.0, true);
        push_feature(&mut features, "DBP", FeatureKind::Numeric, 0.0, 250.0, true);

        let numeric: [(&str, f64, f64); 34] = [
            ("RR", 0.0, 70.0),
            ("SpO2", 0.0, 100.0),
            ("Temp", 25.0, 45.0),
            ("MAP", 0.0, 250.0),
            ("CVP", -5.0, 40.0),
            ("GCS", 3.0, 15.0),
            ("glucose", 10.0, 2000.0),
            ("lactate", 0.0, 30.0),
            ("ph", 6.5, 8.0),
            ("pco2", 5.0, 200.0),
            ("po2", 10.0, 700.0),
            ("hemoglobin", 2.0, 25.0),
            ("hematocrit", 5.0, 70.0),
            ("wbc", 0.0, 200.0),
            ("platelets", 0.0, 2000.0),
            ("sodium", 100.0, 180.0),
            ("potassium", 1.0, 10.0),
            ("chloride", 60.0, 140.0),
            ("bicarbonate", 5.0, 50.0),
            ("bun", 0.0, 250.0),
            ("creatinine", 0.0, 30.0),
            ("magnesium", 0.5, 6.0),
            ("calcium", 4.0, 16.0),
            ("phosphate", 0.5, 12.0),
            ("albumin", 0.5, 6.0),
            ("bilirubin", 0.0, 50.0),
            ("inr", 0.5, 15.0),
            ("fio2", 21.0, 100.0),
            ("peep", 0.0, 30.0),
            ("tidal_volume", 0.0, 1500.0),
            ("urine_output", 0.0, 2000.0),
            ("weight", 20.0, 300.0),
            ("losartan", 0.0, 1000.0),
            ("insulin_rate", 0.0, 50.0),
        ];
        for (name, min, max) in numeric {
            push_feature(&mut features, name, FeatureKind::Numeric, min, max, false);
        }

        let meds: [&str; 20] = [
            "morphine", "fentanyl", "propofol", "midazolam", "heparin", "furosemide",
            "norepinephrine", "epinephrine", "vasopressin", "dopamine", "dobutamine",
            "amiodarone", "metoprolol", "diltiazem", "nitroglycerin", "potassium_chloride",
            "vancomycin", "piperacillin", "cefepime", "dexmedetomidine",
        ];
        for name in meds {
            push_feature(&mut features, &format!("med_{name}"), FeatureKind::Numeric, 0.0, 5000.0, false);
        }

        // remaining numeric labs up to 117 numeric features total
        let n_numeric_so_far = features.len();
        for i in 0..(117 - n_numeric_so_far) {
            push_feature(&mut features, &format!("lab_{:03}", i + 1), FeatureKind::Numeric, 0.0, 1000.0, false);
        }

        let yes_no: [&str; 12] = [
            "mechanical_ventilation", "dialysis", "sedation_hold", "restraints",
            "foley_catheter", "central_line", "arterial_line", "npo_status",
            "contact_isolation", "telemetry", "supplemental_oxygen", "chest_tube",
        ];
        for name in yes_no {
            push_feature(&mut features, name, FeatureKind::YesNo, 0.0, 1.0, false);
        }

        FeatureCatalog::new(features).expect("reference catalog is well-formed")
    }

    /// Small catalog for tests and tiny-model gradient checks: the three
    /// targets plus a couple of extra features.
    pub fn tiny() -> Self {
        let mut features = Vec::new();
        push_feature(&mut features, "HR", FeatureKind::Numeric, 0.0, 300.0, true);
        push_feature(&mut features, "SBP", FeatureKind::Numeric, 0.0, 300.0, true);
        push_feature(&mut features, "DBP", FeatureKind::Numeric, 0.0, 250.0, true);
        push_feature(&mut features, "glucose", FeatureKind::Numeric, 10.0, 2000.0, false);
        push_feature(&mut features, "mechanical_ventilation", FeatureKind::YesNo, 0.0, 1.0, false);
        FeatureCatalog::new(features).expect("tiny catalog is well-formed")
    }

    /// Identity stats (mean 0, std 1) for every numeric feature; used by
    /// synthetic tasks that operate directly in standardized space.
    pub fn with_identity_stats(mut self) -> Self {
        for f in &mut self.features {
            if f.kind == FeatureKind::Numeric {
                f.stats = Some((0.0, 1.0));
            }
        }
        self
    }
}

fn push_feature(
    features: &mut Vec<Feature>,
    name: &str,
    kind: FeatureKind,
    min: f64,
    max: f64,
    is_target: bool,
) {
    features.push(Feature {
        id: features.len() as u32 + 1,
        name: name.to_string(),
        kind,
        min,
        max,
        is_target,
        stats: None,
    });
}
