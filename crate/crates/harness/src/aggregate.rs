//! Statistics across independent runs.

use deep2bsde_core::MetricsRow;
use serde::{Deserialize, Serialize};

/// The metric stream of one run and how it ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    /// The error that stopped the run early, if any.
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }

    pub fn at(&self, step: u64) -> Option<&MetricsRow> {
        self.rows.binary_search_by_key(&step, |r| r.step).ok().map(|i| &self.rows[i])
    }
}

/// Mean and unbiased standard deviation; the deviation of a single value is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Moments { mean, std })
    }
}

/// One row of the across-run table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: u64,
    /// Successful runs that reached `step`.
    pub runs_ok: usize,
    /// Runs that failed, at any step.
    pub runs_failed: usize,
    pub u: Moments,
    pub rel_l1_error: Option<Moments>,
    pub mean_loss: f64,
    pub mean_seconds: f64,
}

/// Aggregates the successful runs at each of `steps`. Runs are visited in
/// index order, so the result does not depend on the order of `runs`.
/// Steps no successful run reached are skipped.
pub fn aggregate(runs: &[RunRecord], steps: &[u64]) -> Vec<AggregateRow> {
    let mut ordered: Vec<&RunRecord> = runs.iter().collect();
    ordered.sort_by_key(|r| r.run);
    let runs_failed = ordered.iter().filter(|r| !r.ok()).count();
    steps
        .iter()
        .filter_map(|&step| {
            let rows: Vec<&MetricsRow> = ordered.iter().filter(|r| r.ok()).filter_map(|r| r.at(step)).collect();
            let column = |f: &dyn Fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let u = Moments::of(&column(&|r| r.u_estimate))?;
            let errors: Option<Vec<f64>> = rows.iter().map(|r| r.rel_l1_error).collect();
            Some(AggregateRow {
                step,
                runs_ok: rows.len(),
                runs_failed,
                u,
                rel_l1_error: errors.and_then(|e| Moments::of(&e)),
                mean_loss: Moments::of(&column(&|r| r.loss))?.mean,
                mean_seconds: Moments::of(&column(&|r| r.seconds))?.mean,
            })
        })
        .collect()
}

/// Every step emitted by the first successful run.
pub fn emitted_steps(runs: &[RunRecord]) -> Vec<u64> {
    runs.iter()
        .filter(|r| r.ok())
        .min_by_key(|r| r.run)
        .map(|r| r.rows.iter().map(|row| row.step).collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(run: usize, step: u64, u: f64) -> MetricsRow {
        MetricsRow { run, step, u_estimate: u, loss: u * u, rel_l1_error: Some((u - 1.0).abs()), seconds: step as f64 }
    }

    fn record(run: usize, values: &[f64]) -> RunRecord {
        let rows = values.iter().enumerate().map(|(m, &u)| row(run, m as u64, u)).collect();
        RunRecord { run, seed: run as u64, rows, failure: None }
    }

    #[test]
    fn single_run_has_zero_spread() {
        let rows = aggregate(&[record(0, &[0.5])], &[0]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].u, Moments { mean: 0.5, std: 0.0 });
        assert_eq!(rows[0].rel_l1_error.unwrap().std, 0.0);
    }

    #[test]
    fn unbiased_deviation() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(Moments::of(&[]).is_none());
    }

    #[test]
    fn failed_runs_are_counted_not_averaged() {
        let mut bad = record(1, &[9.0, 9.0]);
        bad.failure = Some("rollout diverged".into());
        let rows = aggregate(&[record(0, &[1.0, 2.0]), bad, record(2, &[3.0, 4.0])], &[0, 1]);
        assert_eq!(rows[1].runs_ok, 2);
        assert_eq!(rows[1].runs_failed, 1);
        assert_eq!(rows[1].u.mean, 3.0);
    }

    #[test]
    fn missing_steps_are_skipped() {
        let rows = aggregate(&[record(0, &[1.0, 2.0])], &[0, 1, 5]);
        assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), [0, 1]);
    }

    proptest! {
        #[test]
        fn permutation_invariant(values in proptest::collection::vec(-10.0f64..10.0, 2..8), shift in 0usize..8) {
            let runs: Vec<RunRecord> = values.iter().enumerate().map(|(i, &v)| record(i, &[v, v * 0.5])).collect();
            let mut rotated = runs.clone();
            rotated.rotate_left(shift % runs.len());
            prop_assert_eq!(aggregate(&runs, &[0, 1]), aggregate(&rotated, &[0, 1]));
        }
    }
}
