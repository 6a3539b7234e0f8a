//! Diffusion noise schedule: per-step variances and derived quantities.

use std::path::Path;

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Linear interpolation between `sqrt(beta1)` and `sqrt(betaT)`, squared.
    Quadratic,
    Linear,
}

impl ScheduleKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quadratic" => Some(ScheduleKind::Quadratic),
            "linear" => Some(ScheduleKind::Linear),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Quadratic => "quadratic",
            ScheduleKind::Linear => "linear",
        }
    }
}

/// Per-step quantities, 1-indexed by diffusion step `t`:
/// `alpha_hat[t] = 1 - beta[t]`, `alpha[t] = prod_{i<=t} alpha_hat[i]`,
/// `sigma[t] = sqrt(((1 - alpha[t-1]) / (1 - alpha[t])) * beta[t])` with
/// `alpha[0] = 1` (so `sigma[1] = 0`).
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    t_count: usize,
    beta: Vec<f64>,
    alpha_hat: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(t_count: usize, beta1: f64, beta_t: f64, kind: ScheduleKind) -> Result<Self, CoreError> {
        if t_count < 2 {
            return Err(CoreError::Schedule(format!("need T >= 2, got {t_count}")));
        }
        if !(0.0 < beta1 && beta1 < beta_t && beta_t < 1.0) {
            return Err(CoreError::Schedule(format!(
                "need 0 < beta1 < betaT < 1, got beta1={beta1}, betaT={beta_t}"
            )));
        }
        let mut beta = Vec::with_capacity(t_count);
        for t in 1..=t_count {
            let frac = (t - 1) as f64 / (t_count - 1) as f64;
            let b = match kind {
                ScheduleKind::Quadratic => {
                    let root = beta1.sqrt() + frac * (beta_t.sqrt() - beta1.sqrt());
                    root * root
                }
                ScheduleKind::Linear => beta1 + frac * (beta_t - beta1),
            };
            beta.push(b);
        }
        let alpha_hat: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha = Vec::with_capacity(t_count);
        let mut prod = 1.0;
        for &ah in &alpha_hat {
            prod *= ah;
            alpha.push(prod);
        }
        let mut sigma = Vec::with_capacity(t_count);
        for t in 1..=t_count {
            let alpha_prev = if t == 1 { 1.0 } else { alpha[t - 2] };
            sigma.push((((1.0 - alpha_prev) / (1.0 - alpha[t - 1])) * beta[t - 1]).sqrt());
        }
        Ok(DiffusionSchedule {
            t_count,
            beta,
            alpha_hat,
            alpha,
            sigma,
        })
    }

    /// The configuration used throughout: T=50, quadratic from 1e-4 to 0.5.
    pub fn default_quadratic() -> Self {
        DiffusionSchedule::new(50, 1e-4, 0.5, ScheduleKind::Quadratic).expect("valid defaults")
    }

    pub fn t_count(&self) -> usize {
        self.t_count
    }

    fn index(&self, t: usize) -> Result<usize, CoreError> {
        if t < 1 || t > self.t_count {
            return Err(CoreError::StepOutOfRange {
                t,
                t_max: self.t_count,
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64, CoreError> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha_hat(&self, t: usize) -> Result<f64, CoreError> {
        Ok(self.alpha_hat[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64, CoreError> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn sigma(&self, t: usize) -> Result<f64, CoreError> {
        Ok(self.sigma[self.index(t)?])
    }

    /// Text dump for audit: one row per step.
    pub fn dump(&self, path: &Path) -> Result<(), CoreError> {
        let mut out = String::from("t,beta,alpha_hat,alpha,sigma\n");
        for t in 1..=self.t_count {
            out.push_str(&format!(
                "{t},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                self.beta[t - 1],
                self.alpha_hat[t - 1],
                self.alpha[t - 1],
                self.sigma[t - 1]
            ));
        }
        std::fs::write(path, out).map_err(|e| CoreError::io(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let s = DiffusionSchedule::default_quadratic();
        assert!((s.beta(1).unwrap() - 1e-4).abs() < 1e-18);
        assert!((s.beta(50).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_steps_yield_just_the_endpoints() {
        let s = DiffusionSchedule::new(2, 1e-4, 0.5, ScheduleKind::Quadratic).unwrap();
        assert_eq!(s.t_count(), 2);
        assert!((s.beta(1).unwrap() - 1e-4).abs() < 1e-18);
        assert!((s.beta(2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn default_alpha_final_matches_product_oracle_and_is_near_zero() {
        // recompute the cumulative product independently from the formula
        let s = DiffusionSchedule::default_quadratic();
        let mut prod = 1.0f64;
        for t in 1..=50 {
            let frac = (t - 1) as f64 / 49.0;
            let root = (1e-4f64).sqrt() + frac * ((0.5f64).sqrt() - (1e-4f64).sqrt());
            prod *= 1.0 - root * root;
        }
        let alpha_t = s.alpha(50).unwrap();
        assert!((alpha_t - prod).abs() < 1e-15);
        assert!(alpha_t < 1e-3, "alpha_50 = {alpha_t}");
    }

    #[test]
    fn monotonicity_invariants() {
        for (t_count, beta1, beta_t, kind) in [
            (50, 1e-4, 0.5, ScheduleKind::Quadratic),
            (50, 1e-4, 0.05, ScheduleKind::Quadratic),
            (50, 1e-4, 0.1, ScheduleKind::Quadratic),
            (50, 1e-4, 0.5, ScheduleKind::Linear),
            (13, 3e-3, 0.7, ScheduleKind::Quadratic),
            (2, 1e-5, 0.9, ScheduleKind::Linear),
        ] {
            let s = DiffusionSchedule::new(t_count, beta1, beta_t, kind).unwrap();
            for t in 1..=t_count {
                assert!(s.beta(t).unwrap() > 0.0 && s.beta(t).unwrap() < 1.0);
                assert!(s.alpha(t).unwrap() > 0.0 && s.alpha(t).unwrap() < 1.0);
                if t > 1 {
                    assert!(s.beta(t).unwrap() > s.beta(t - 1).unwrap());
                    assert!(s.alpha(t).unwrap() < s.alpha(t - 1).unwrap());
                    assert!(s.sigma(t).unwrap() > 0.0);
                }
            }
            assert_eq!(s.sigma(1).unwrap(), 0.0);
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(DiffusionSchedule::new(1, 1e-4, 0.5, ScheduleKind::Quadratic).is_err());
        assert!(DiffusionSchedule::new(50, 0.5, 1e-4, ScheduleKind::Quadratic).is_err());
        assert!(DiffusionSchedule::new(50, 0.0, 0.5, ScheduleKind::Quadratic).is_err());
        assert!(DiffusionSchedule::new(50, 1e-4, 1.0, ScheduleKind::Quadratic).is_err());
    }

    #[test]
    fn dump_has_one_row_per_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schedule.csv");
        DiffusionSchedule::default_quadratic().dump(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 51);
        assert!(text.starts_with("t,beta,alpha_hat,alpha,sigma"));
    }
}
