//! Full configuration × phase × seed sweeps.

use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;

use super::report::{scatter_rows, write_scatter, ScatterRow};
use super::{
    algorithm_for, run_experiment, ClockMode, ExperimentConfig, ExperimentResult, HarnessError,
    CONFIG_IDS, DEFAULT_WINDOW,
};
use crate::workload::{PhaseShift, WorkloadConfig, DESK_PERIOD};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSpec {
    pub config_ids: Vec<String>,
    pub phases: Vec<PhaseShift>,
    pub seeds: Vec<u64>,
    pub duration: Duration,
    pub period: Duration,
    pub clock_mode: ClockMode,
    pub window: Duration,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            config_ids: CONFIG_IDS.iter().map(|s| s.to_string()).collect(),
            phases: PhaseShift::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            duration: DESK_PERIOD,
            period: DESK_PERIOD,
            clock_mode: ClockMode::Virtual,
            window: DEFAULT_WINDOW,
        }
    }
}

impl SuiteSpec {
    /// Parses a matrix file: one config ID per line, plus optional
    /// `phases=`, `seeds=`, `duration_s=`, `period_s=`, `window_s=` and
    /// `clock=` lines. `#` starts a comment. Without config lines the
    /// whole predefined matrix is used; `period_s` defaults to `duration_s`.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut spec = SuiteSpec::default();
        let mut ids = Vec::new();
        let mut period = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |why: String| HarnessError::BadConfig(format!("matrix line {}: {why}", i + 1));
            let list = |v: &str| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect::<Vec<_>>();
            let secs = |v: &str| {
                v.parse::<u64>()
                    .ok()
                    .filter(|&s| s > 0)
                    .map(Duration::from_secs)
                    .ok_or_else(|| bad(format!("{v:?} is not a positive whole number of seconds")))
            };
            match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("phases", v)) => {
                    spec.phases = list(v)
                        .iter()
                        .map(|p| p.parse().map_err(|e: crate::workload::WorkloadError| bad(e.to_string())))
                        .collect::<Result<_, _>>()?;
                }
                Some(("seeds", v)) => {
                    spec.seeds = list(v)
                        .iter()
                        .map(|s| s.parse().map_err(|_| bad(format!("bad seed {s:?}"))))
                        .collect::<Result<_, _>>()?;
                }
                Some(("duration_s", v)) => spec.duration = secs(v)?,
                Some(("period_s", v)) => period = Some(secs(v)?),
                Some(("window_s", v)) => spec.window = secs(v)?,
                Some(("clock", v)) => spec.clock_mode = v.parse()?,
                Some((k, _)) => return Err(bad(format!("unknown key {k:?}"))),
                None => {
                    algorithm_for(line).map_err(|e| bad(e.to_string()))?;
                    ids.push(line.to_owned());
                }
            }
        }
        if !ids.is_empty() {
            spec.config_ids = ids;
        }
        spec.period = period.unwrap_or(spec.duration);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.config_ids.is_empty() || self.phases.is_empty() || self.seeds.is_empty() {
            return Err(HarnessError::BadConfig(
                "matrix needs at least one config, phase and seed".into(),
            ));
        }
        for id in &self.config_ids {
            algorithm_for(id)?;
        }
        Ok(())
    }

    pub fn workload(&self, phase: PhaseShift, seed: u64) -> WorkloadConfig {
        let mut wl = WorkloadConfig::standard(self.duration, phase, seed);
        wl.query.period = self.period;
        wl.update.period = self.period;
        wl
    }

    /// Every run in deterministic order: config, then phase, then seed.
    pub fn experiments(&self, out_dir: Option<&Path>) -> Result<Vec<ExperimentConfig>, HarnessError> {
        let mut out = Vec::new();
        for id in &self.config_ids {
            for &phase in &self.phases {
                for &seed in &self.seeds {
                    let mut cfg = ExperimentConfig::new(id, self.workload(phase, seed))?;
                    cfg.clock_mode = self.clock_mode;
                    cfg.window = self.window;
                    if let Some(root) = out_dir {
                        cfg.output_dir = Some(run_dir(root, id, phase, seed));
                    }
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}

pub fn run_dir(root: &Path, config_id: &str, phase: PhaseShift, seed: u64) -> PathBuf {
    root.join("runs")
        .join(config_id)
        .join(phase.label())
        .join(format!("seed-{seed}"))
}

#[derive(Debug)]
pub struct SuiteOutcome {
    pub results: Vec<ExperimentResult>,
    pub failures: Vec<(String, HarnessError)>,
    pub scatter: Vec<ScatterRow>,
}

impl SuiteOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn label(cfg: &ExperimentConfig) -> String {
    format!(
        "{} phase={} seed={}",
        cfg.config_id, cfg.workload.phase_shift, cfg.workload.seed
    )
}

/// Runs the whole cross product; a failed run is recorded and skipped.
///
/// Virtual-clock runs share nothing and execute in parallel. With an output
/// directory, each run gets its own directory and `scatter.csv` is written
/// at the top level.
pub fn run_suite(spec: &SuiteSpec, out_dir: Option<&Path>) -> Result<SuiteOutcome, HarnessError> {
    spec.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let experiments = spec.experiments(out_dir)?;
    let outcomes: Vec<(String, Result<ExperimentResult, HarnessError>)> = match spec.clock_mode {
        ClockMode::Virtual => experiments
            .par_iter()
            .map(|cfg| (label(cfg), run_experiment(cfg)))
            .collect(),
        ClockMode::Real => experiments
            .iter()
            .map(|cfg| (label(cfg), run_experiment(cfg)))
            .collect(),
    };

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (label, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push((label, e)),
        }
    }
    let scatter = scatter_rows(&results);
    if let (Some(dir), false) = (out_dir, scatter.is_empty()) {
        write_scatter(&dir.join("scatter.csv"), &scatter)?;
    }
    Ok(SuiteOutcome {
        results,
        failures,
        scatter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_file_parses() {
        let spec = SuiteSpec::parse(
            "# quick\nstatic-1\ndynamic-adaptive-0.1\nphases=0, pi\nseeds=7\nduration_s=60\n",
        )
        .unwrap();
        assert_eq!(spec.config_ids, ["static-1", "dynamic-adaptive-0.1"]);
        assert_eq!(spec.phases, [PhaseShift::Zero, PhaseShift::Pi]);
        assert_eq!(spec.seeds, [7]);
        assert_eq!(spec.period, Duration::from_secs(60));
        assert_eq!(spec.experiments(None).unwrap().len(), 4);
    }

    #[test]
    fn default_matrix_has_144_runs() {
        let spec = SuiteSpec::parse("").unwrap();
        assert_eq!(spec.experiments(None).unwrap().len(), 144);
    }

    #[test]
    fn bad_matrix_lines() {
        for text in ["static-q\n", "phases=tau\n", "seeds=x\n", "duration_s=0\n", "frobs=1\n"] {
            assert_eq!(SuiteSpec::parse(text).unwrap_err().exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn scatter_row_is_mean_over_seeds() {
        let spec = SuiteSpec {
            config_ids: vec!["static-1".into()],
            phases: vec![PhaseShift::Pi],
            duration: Duration::from_secs(60),
            period: Duration::from_secs(60),
            ..SuiteSpec::default()
        };
        let out = run_suite(&spec, None).unwrap();
        assert!(out.all_succeeded());
        assert_eq!(out.results.len(), 3);
        assert_eq!(out.scatter.len(), 1);
        let mean = out.results.iter().map(|r| r.traffic_reduction).sum::<f64>() / 3.0;
        assert!((out.scatter[0].traffic_reduction - mean).abs() < 1e-12);
    }
}
