//! Horizon sweeps with log-log regret slope fits.
//!
//! Replication `r` of every horizon runs on seed `seed + r`, so horizons are
//! compared on paired environments.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{run_experiment, write_summary, RunSummary};
use super::{worker_count, write_atomic, HarnessError};

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub horizon: usize,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub mean_regret_per_round: f64,
    /// Final regret of each replication, in replication order.
    pub finals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub algorithm: String,
    pub horizons: Vec<usize>,
    pub reps: usize,
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `log(mean regret)` against `log T`.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of that fit.
    pub residual: f64,
    pub runs_completed: usize,
    pub error: Option<String>,
}

/// `(slope, intercept, rms residual)` of the least-squares line through
/// `(xs, ys)`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (slope, intercept, (sse / n).sqrt())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

fn summarize(cfg: &ExperimentConfig, horizons: &[usize], reps: usize, runs: &[Option<RunSummary>]) -> SweepSummary {
    let mut points = Vec::new();
    for (hi, &h) in horizons.iter().enumerate() {
        let finals: Vec<f64> = runs[hi * reps..(hi + 1) * reps].iter().flatten().map(|r| r.final_regret).collect();
        if finals.len() != reps {
            continue;
        }
        let (mean, std) = mean_std(&finals);
        points.push(SweepPoint { horizon: h, mean_regret: mean, std_regret: std, mean_regret_per_round: mean / h as f64, finals });
    }
    let (slope, intercept, residual) = if points.len() >= 2 {
        let xs: Vec<f64> = points.iter().map(|p| (p.horizon as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mean_regret.ln()).collect();
        fit_slope(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    SweepSummary {
        algorithm: cfg.algorithm.as_str().into(),
        horizons: horizons.to_vec(),
        reps,
        points,
        slope,
        intercept,
        residual,
        runs_completed: runs.iter().flatten().count(),
        error: None,
    }
}

/// Runs `reps` replications at each horizon on `BTRADE_WORKERS` threads.
/// With `out`, each run's summary lands in `out/T<h>/rep<r>/` and the merged
/// result in `out/sweep.json`, which is written even when a run fails.
pub fn sweep(cfg: &ExperimentConfig, horizons: &[usize], reps: usize, out: Option<&Path>) -> Result<SweepSummary, HarnessError> {
    if horizons.len() < 3 {
        return Err(HarnessError::config(format!("a sweep needs at least 3 horizons, got {}", horizons.len())));
    }
    if reps == 0 {
        return Err(HarnessError::config("`reps` must be at least 1"));
    }
    if let Some(&h) = horizons.iter().find(|&&h| h < 2) {
        return Err(HarnessError::config(format!("horizon {h} is below 2")));
    }
    let jobs: Vec<(usize, usize)> = horizons.iter().flat_map(|&h| (0..reps).map(move |r| (h, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| HarnessError::config(format!("worker pool: {e}")))?;
    let results: Vec<Result<RunSummary, HarnessError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(h, r)| {
                let run_cfg = cfg.with_run(h, cfg.seed.wrapping_add(r as u64));
                let output = run_experiment(&run_cfg)?;
                if let Some(dir) = out {
                    write_summary(&dir.join(format!("T{h}")).join(format!("rep{r}")), &output.summary)?;
                }
                Ok(output.summary)
            })
            .collect()
    });
    let mut first_error = None;
    let runs: Vec<Option<RunSummary>> = results
        .into_iter()
        .map(|r| match r {
            Ok(s) => Some(s),
            Err(e) => {
                first_error.get_or_insert(e);
                None
            }
        })
        .collect();
    let mut summary = summarize(cfg, horizons, reps, &runs);
    summary.error = first_error.as_ref().map(|e| e.to_string());
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&summary).expect("sweep summary serializes");
        write_atomic(&dir.join("sweep.json"), json.as_bytes())?;
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn slope_of_exact_power_law() {
        let xs: Vec<f64> = [1e3f64, 1e4, 1e5].iter().map(|x| x.ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.75 * x + 2.0).collect();
        let (s, i, r) = fit_slope(&xs, &ys);
        assert_relative_eq!(s, 0.75, epsilon = 1e-12);
        assert_relative_eq!(i, 2.0, epsilon = 1e-10);
        assert!(r < 1e-12);
    }

    #[test]
    fn rejects_short_horizon_lists() {
        let cfg = ExperimentConfig::parse("T = 10\nd = 1\nalgorithm = fixed\n", Path::new(".")).unwrap();
        assert!(matches!(sweep(&cfg, &[10, 20], 1, None), Err(HarnessError::Config(_))));
    }

    #[test]
    fn partial_results_survive_a_failing_run() {
        let dir = tempfile::tempdir().unwrap();
        let replay = dir.path().join("ctx.txt");
        std::fs::write(&replay, "1.0\n".repeat(100)).unwrap();
        let text = "T = 10\nd = 1\nalgorithm = fixed\ncontext.generator = replay\ncontext.file = ctx.txt\n";
        let cfg = ExperimentConfig::parse(text, dir.path()).unwrap();
        let err = sweep(&cfg, &[10, 50, 200], 2, Some(dir.path())).unwrap_err();
        assert!(matches!(err, HarnessError::Trade(_)));
        let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
        assert_eq!(saved["runs_completed"], 4);
        assert!(saved["error"].is_string());
        assert!(dir.path().join("T50/rep1/summary.json").exists());
    }
}
