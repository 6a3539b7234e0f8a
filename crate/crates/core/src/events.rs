//! Event-log records and CSV ingestion.
//!
//! Schema: header `subject_id,stay_id,age,feature,minute,value`; the
//! `feature` column holds the catalog name, `minute` is a decimal >= 0
//! relative to admission, `age` and `value` may be empty.

use std::path::Path;

use crate::catalog::FeatureCatalog;
use crate::error::CoreError;

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub subject_id: String,
    pub stay_id: String,
    /// Years; `None` when the source row had no age.
    pub age: Option<f64>,
    pub feature_id: u32,
    /// Minutes from ICU admission.
    pub minute: f64,
    /// Raw value; `None` for null entries (allowed for yes-or-no features).
    pub value: Option<f64>,
}

const EXPECTED_HEADER: [&str; 6] = ["subject_id", "stay_id", "age", "feature", "minute", "value"];

/// Parse an event CSV. Every row parses or the error names the line.
/// Records are returned stably ordered by `(subject_id, stay_id, minute)`.
pub fn load_events(path: &Path, catalog: &FeatureCatalog) -> Result<Vec<EventRecord>, CoreError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CoreError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;

    let err_at = |line: u64, message: String| CoreError::Parse {
        path: path.display().to_string(),
        line,
        message,
    };

    {
        let headers = reader.headers().map_err(|e| err_at(1, e.to_string()))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != EXPECTED_HEADER {
            return Err(err_at(
                1,
                format!("unknown columns {got:?}, expected {EXPECTED_HEADER:?}"),
            ));
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| err_at(0, e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 6 {
            return Err(err_at(line, format!("expected 6 fields, got {}", row.len())));
        }
        let subject_id = row[0].to_string();
        let stay_id = row[1].to_string();
        if subject_id.is_empty() || stay_id.is_empty() {
            return Err(err_at(line, "empty subject_id or stay_id".into()));
        }
        let age = if row[2].is_empty() {
            None
        } else {
            Some(
                row[2]
                    .parse::<f64>()
                    .map_err(|_| err_at(line, format!("non-numeric age '{}'", &row[2])))?,
            )
        };
        let feature_id = catalog
            .id_of(&row[3])
            .ok_or_else(|| err_at(line, format!("unknown feature '{}'", &row[3])))?;
        let minute = row[4]
            .parse::<f64>()
            .map_err(|_| err_at(line, format!("non-numeric minute '{}'", &row[4])))?;
        if minute < 0.0 {
            return Err(err_at(line, format!("negative timestamp {minute}")));
        }
        let value = if row[5].is_empty() {
            None
        } else {
            Some(
                row[5]
                    .parse::<f64>()
                    .map_err(|_| err_at(line, format!("non-numeric value '{}'", &row[5])))?,
            )
        };
        records.push(EventRecord {
            subject_id,
            stay_id,
            age,
            feature_id,
            minute,
            value,
        });
    }

    records.sort_by(|a, b| {
        a.subject_id
            .cmp(&b.subject_id)
            .then_with(|| a.stay_id.cmp(&b.stay_id))
            .then_with(|| a.minute.partial_cmp(&b.minute).unwrap())
    });
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(path: &Path, body: &str) {
        std::fs::write(path, body).unwrap();
    }

    #[test]
    fn well_formed_rows_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.csv");
        write(
            &p,
            "subject_id,stay_id,age,feature,minute,value\n\
             s1,s1-1,67,HR,3.5,92\n\
             s1,s1-1,67,SBP,1.0,120\n\
             s2,s2-1,45,mechanical_ventilation,2.0,\n",
        );
        let cat = FeatureCatalog::tiny();
        let recs = load_events(&p, &cat).unwrap();
        assert_eq!(recs.len(), 3);
        // sorted by (subject, stay, minute)
        assert_eq!(recs[0].minute, 1.0);
        assert_eq!(recs[2].value, None);
    }

    #[test]
    fn leading_comment_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.csv");
        write(
            &p,
            "# config_hash = abc\n\
             subject_id,stay_id,age,feature,minute,value\n\
             s1,s1-1,67,HR,3.5,92\n",
        );
        let recs = load_events(&p, &FeatureCatalog::tiny()).unwrap();
        assert_eq!(recs.len(), 1);
    }

    #[test]
    fn negative_timestamp_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.csv");
        write(
            &p,
            "subject_id,stay_id,age,feature,minute,value\n\
             s1,s1-1,67,HR,3.5,92\n\
             s1,s1-1,67,HR,-2,92\n",
        );
        let err = load_events(&p, &FeatureCatalog::tiny()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "{msg}");
        assert!(msg.contains("negative timestamp"), "{msg}");
    }

    #[test]
    fn unknown_column_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.csv");
        write(&p, "subject_id,stay_id,age,item,minute,value\n");
        let err = load_events(&p, &FeatureCatalog::tiny()).unwrap_err();
        assert!(err.to_string().contains("unknown columns"));
    }

    #[test]
    fn unknown_feature_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.csv");
        write(
            &p,
            "subject_id,stay_id,age,feature,minute,value\ns1,s1-1,67,pulse,1,90\n",
        );
        let err = load_events(&p, &FeatureCatalog::tiny()).unwrap_err();
        assert!(err.to_string().contains("unknown feature 'pulse'"));
    }

    #[test]
    fn non_numeric_value_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.csv");
        write(
            &p,
            "subject_id,stay_id,age,feature,minute,value\ns1,s1-1,67,HR,1,fast\n",
        );
        let err = load_events(&p, &FeatureCatalog::tiny()).unwrap_err();
        assert!(err.to_string().contains("non-numeric value"));
    }
}
