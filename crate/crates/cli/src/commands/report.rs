use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// Digest a run directory: human-readable summary plus plot-ready CSV
/// series (fan chart from forecasts, loss curve passthrough).
pub fn run(run_dir: &Path) -> Result<(), CliError> {
    if !run_dir.is_dir() {
        return Err(CliError::new(
            "io",
            format!("{}: run directory does not exist", run_dir.display()),
        ));
    }

    let mut summary = String::new();
    writeln!(summary, "run_dir = {}", run_dir.display()).expect("string write");

    let manifest = run_dir.join("checkpoint.manifest");
    if manifest.exists() {
        let text = std::fs::read_to_string(&manifest)
            .map_err(|e| CliError::new("io", format!("{}: {e}", manifest.display())))?;
        for line in text.lines() {
            writeln!(summary, "train.{line}").expect("string write");
        }
    }

    let loss_curve = run_dir.join("loss_curve.csv");
    if loss_curve.exists() {
        let text = std::fs::read_to_string(&loss_curve)
            .map_err(|e| CliError::new("io", format!("{}: {e}", loss_curve.display())))?;
        let rows: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("step"))
            .collect();
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            writeln!(summary, "loss.first = {first}").expect("string write");
            writeln!(summary, "loss.last = {last}").expect("string write");
            writeln!(summary, "loss.steps = {}", rows.len()).expect("string write");
        }
    }

    let metrics = run_dir.join("metrics.txt");
    if metrics.exists() {
        let text = std::fs::read_to_string(&metrics)
            .map_err(|e| CliError::new("io", format!("{}: {e}", metrics.display())))?;
        for line in text.lines() {
            writeln!(summary, "eval.{line}").expect("string write");
        }
    }

    // fan-chart data: per (stay, feature) time series with the median and
    // all 19 quantile columns, straight from the forecast file
    let forecasts = run_dir.join("forecasts.csv");
    if forecasts.exists() {
        let text = std::fs::read_to_string(&forecasts)
            .map_err(|e| CliError::new("io", format!("{}: {e}", forecasts.display())))?;
        let mut fan = String::from("stay_id,feature,time,target,median");
        for i in 1..=19 {
            write!(fan, ",q{:02}", i * 5).expect("string write");
        }
        fan.push('\n');
        let mut rows: Vec<Vec<String>> = Vec::new();
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("subject_id") || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 28 {
                continue;
            }
            // stay, feature, time, target, median, 19 quantiles
            let mut row = vec![
                parts[1].to_string(),
                parts[3].to_string(),
                parts[4].to_string(),
                parts[5].to_string(),
                parts[6].to_string(),
            ];
            row.extend(parts[9..28].iter().map(|s| s.to_string()));
            rows.push(row);
        }
        rows.sort_by(|a, b| {
            (&a[0], &a[1], a[2].parse::<f64>().unwrap_or(0.0))
                .partial_cmp(&(&b[0], &b[1], b[2].parse::<f64>().unwrap_or(0.0)))
                .unwrap()
        });
        for row in &rows {
            fan.push_str(&row.join(","));
            fan.push('\n');
        }
        std::fs::write(run_dir.join("fan_chart.csv"), fan)
            .map_err(|e| CliError::new("io", format!("fan_chart.csv: {e}")))?;
        writeln!(summary, "fan_chart = fan_chart.csv ({} rows)", rows.len())
            .expect("string write");
    }

    for artifact in [
        "schedule.csv",
        "per_sample.csv",
        "histograms.csv",
        "val_curve.csv",
    ] {
        if run_dir.join(artifact).exists() {
            writeln!(summary, "artifact = {artifact}").expect("string write");
        }
    }

    std::fs::write(run_dir.join("run_summary.txt"), &summary)
        .map_err(|e| CliError::new("io", format!("run_summary.txt: {e}")))?;
    print!("{summary}");
    println!("wrote {}", run_dir.join("run_summary.txt").display());
    Ok(())
}
