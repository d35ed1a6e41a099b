//! Run settings: defaults, TOML file, command-line overrides (in rising precedence).

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::evaluator::EvalConfig;
use crate::sandbox::Limits;
use crate::stgen::StgenConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    /// Measurement repetitions per (program, test).
    pub runs: usize,
    /// Stressful cases kept per problem.
    pub top_k_cases: usize,
    /// Stressful cases generated per problem before selection.
    pub generated_cases: usize,
    pub judge_threshold: u32,
    pub contract_max_iters: usize,
    /// Seconds per correctness run.
    pub correctness_time_limit: f64,
    /// Seconds per stressful run, including each single measurement.
    pub measurement_time_limit: f64,
    pub memory_limit_mb: u64,
    pub provider: ProviderSettings,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    /// Scripted replies instead of a live endpoint.
    pub mock_script: Option<PathBuf>,
    pub model: Option<String>,
    pub prompts_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 12,
            top_k_cases: 5,
            generated_cases: 20,
            judge_threshold: 5,
            contract_max_iters: 8,
            correctness_time_limit: 10.0,
            measurement_time_limit: 5.0,
            memory_limit_mb: 1024,
            provider: ProviderSettings::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub top_k_cases: Option<usize>,
    pub generated_cases: Option<usize>,
    pub judge_threshold: Option<u32>,
    pub contract_max_iters: Option<usize>,
    pub correctness_time_limit: Option<f64>,
    pub measurement_time_limit: Option<f64>,
    pub memory_limit_mb: Option<u64>,
    pub mock_script: Option<PathBuf>,
    pub model: Option<String>,
    pub prompts_dir: Option<PathBuf>,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let s: Settings = toml::from_str(text).map_err(|e| e.to_string())?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// File (if any) then overrides on top of the defaults.
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self, String> {
        let mut s = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = o.$f.clone() { s.$f = v; } )* };
        }
        take!(seed, runs, top_k_cases, generated_cases, judge_threshold, contract_max_iters,
              correctness_time_limit, measurement_time_limit, memory_limit_mb);
        if let Some(m) = &o.mock_script {
            s.provider.mock_script = Some(m.clone());
        }
        if let Some(m) = &o.model {
            s.provider.model = Some(m.clone());
        }
        if let Some(d) = &o.prompts_dir {
            s.provider.prompts_dir = Some(d.clone());
        }
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.runs < 3 {
            return Err(format!("runs must be at least 3 (got {})", self.runs));
        }
        if self.top_k_cases == 0 || self.generated_cases < self.top_k_cases {
            return Err(format!(
                "need 0 < top_k_cases <= generated_cases (got {} and {})",
                self.top_k_cases, self.generated_cases
            ));
        }
        if self.top_k_cases > crate::assembly::SUITE_SIZE {
            return Err(format!(
                "top_k_cases is at most {} (got {})",
                crate::assembly::SUITE_SIZE,
                self.top_k_cases
            ));
        }
        if self.judge_threshold == 0 || self.contract_max_iters == 0 {
            return Err("judge_threshold and contract_max_iters must be positive".into());
        }
        for (name, v) in [
            ("correctness_time_limit", self.correctness_time_limit),
            ("measurement_time_limit", self.measurement_time_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be a positive number of seconds"));
            }
        }
        if self.memory_limit_mb == 0 {
            return Err("memory_limit_mb must be positive".into());
        }
        Ok(())
    }

    pub fn correctness_limits(&self) -> Limits {
        Limits {
            time_limit: Duration::from_secs_f64(self.correctness_time_limit),
            memory_limit: self.memory_limit_mb << 20,
        }
    }

    pub fn measurement_limits(&self) -> Limits {
        Limits {
            time_limit: Duration::from_secs_f64(self.measurement_time_limit),
            memory_limit: self.memory_limit_mb << 20,
        }
    }

    pub fn stgen_config(&self) -> StgenConfig {
        StgenConfig {
            target_count: self.generated_cases,
            max_iters: self.contract_max_iters,
            judge_threshold: self.judge_threshold,
            seed: self.seed,
            validation_limits: self.measurement_limits(),
            ..StgenConfig::default()
        }
    }

    pub fn eval_config(&self, ks: Vec<u64>) -> EvalConfig {
        EvalConfig {
            ks,
            runs: self.runs,
            correctness_limits: self.correctness_limits(),
            stressful_limits: self.measurement_limits(),
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = Settings::default();
        assert_eq!((s.runs, s.top_k_cases, s.generated_cases), (12, 5, 20));
        assert_eq!((s.judge_threshold, s.contract_max_iters), (5, 8));
        assert_eq!(s.measurement_limits(), Limits::MEASUREMENT);
        assert_eq!(s.correctness_limits(), Limits::CORRECTNESS);
        let g = s.stgen_config();
        assert_eq!((g.target_count, g.max_iters, g.judge_threshold), (20, 8, 5));
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "runs = 7\nseed = 3\n[provider]\nmodel = \"m1\"\n").unwrap();
        let o = Overrides { runs: Some(9), ..Default::default() };
        let s = Settings::resolve(Some(&path), &o).unwrap();
        assert_eq!((s.runs, s.seed, s.top_k_cases), (9, 3, 5));
        assert_eq!(s.provider.model.as_deref(), Some("m1"));
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(Settings::from_toml("runs = 2").is_err());
        assert!(Settings::from_toml("unknown_key = 1").is_err());
        assert!(Settings::from_toml("top_k_cases = 30").is_err());
    }
}
