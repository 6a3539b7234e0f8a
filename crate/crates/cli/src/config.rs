//! Run configuration: plain-text `key = value` sections with every
//! published setting as a default, so variant runs are pure config (or
//! flag) changes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use vitalcast_core::hash::short_hash;
use vitalcast_core::synth::SynthConfig;
use vitalcast_core::{DenoiserConfig, ScheduleKind, Topology};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub pipeline: PipelineSection,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            pipeline: PipelineSection::default(),
            schedule: ScheduleSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
            synth: SynthSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub capacity: usize,
    pub target_capacity: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            capacity: 60,
            target_capacity: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta1: f64,
    pub beta_t: f64,
    pub kind: String,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            steps: 50,
            beta1: 1e-4,
            beta_t: 0.5,
            kind: "quadratic".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_step: usize,
    pub topology: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_model: 64,
            n_heads: 8,
            d_ff: 128,
            d_step: 128,
            topology: "c".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: u64,
    pub eval_interval: u64,
    pub patience: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            batch_size: 32,
            lr: 1e-3,
            max_steps: 2000,
            eval_interval: 50,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Sample paths per forecast.
    pub samples: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { samples: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_subjects: usize,
    pub n_minor_subjects: usize,
    pub n_empty_conditional_stays: usize,
    pub n_empty_target_stays: usize,
    pub n_outlier_events: usize,
    pub vitals_per_minute: f64,
    pub nontarget_per_minute: f64,
    pub sudden_change_prob: f64,
    pub max_stays_per_subject: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            n_subjects: d.n_subjects,
            n_minor_subjects: d.n_minor_subjects,
            n_empty_conditional_stays: d.n_empty_conditional_stays,
            n_empty_target_stays: d.n_empty_target_stays,
            n_outlier_events: d.n_outlier_events,
            vitals_per_minute: d.vitals_per_minute,
            nontarget_per_minute: d.nontarget_per_minute,
            sudden_change_prob: d.sudden_change_prob,
            max_stays_per_subject: d.max_stays_per_subject,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::new("config.io", format!("{}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::new("config.parse", format!("{}: {e}", p.display())))
            }
        }
    }

    /// Hash of the fully resolved configuration (after flag overrides),
    /// embedded in every output file.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        short_hash(canonical.as_bytes())
    }

    pub fn schedule_kind(&self) -> Result<ScheduleKind, CliError> {
        ScheduleKind::parse(&self.schedule.kind).ok_or_else(|| {
            CliError::new(
                "config.schedule",
                format!("unknown schedule kind '{}'", self.schedule.kind),
            )
        })
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        Topology::parse(&self.model.topology).ok_or_else(|| {
            CliError::new(
                "config.model",
                format!("unknown topology '{}'", self.model.topology),
            )
        })
    }

    pub fn denoiser_config(&self, n_features: usize) -> Result<DenoiserConfig, CliError> {
        Ok(DenoiserConfig {
            d_model: self.model.d_model,
            n_heads: self.model.n_heads,
            d_ff: self.model.d_ff,
            d_step: self.model.d_step,
            n_features,
            n_steps: self.schedule.steps,
            cond_capacity: self.pipeline.capacity,
            target_capacity: self.pipeline.target_capacity,
            topology: self.topology()?,
            ln_eps: 1e-5,
        })
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_subjects: self.synth.n_subjects,
            n_minor_subjects: self.synth.n_minor_subjects,
            n_empty_conditional_stays: self.synth.n_empty_conditional_stays,
            n_empty_target_stays: self.synth.n_empty_target_stays,
            n_outlier_events: self.synth.n_outlier_events,
            vitals_per_minute: self.synth.vitals_per_minute,
            nontarget_per_minute: self.synth.nontarget_per_minute,
            sudden_change_prob: self.synth.sudden_change_prob,
            max_stays_per_subject: self.synth.max_stays_per_subject,
        }
    }
}
