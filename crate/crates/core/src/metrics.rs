//! Tracking metrics: NRMSE, Pearson correlation, settle time, the
//! overall/post-convergence windows and aggregation over repeated runs.

use std::fmt;

use crate::aic::TrajectoryLog;
use crate::error::{AicError, Result};

/// Rows are time samples, columns are states.
pub type Series = [Vec<f64>];

fn check_shapes(actual: &Series, desired: &Series) -> Result<usize> {
    if actual.len() != desired.len() {
        return Err(AicError::MetricUndefined(format!(
            "length mismatch: {} vs {}",
            actual.len(),
            desired.len()
        )));
    }
    if actual.len() < 2 {
        return Err(AicError::MetricUndefined(
            "need at least two samples".into(),
        ));
    }
    let n = actual[0].len();
    if n == 0 || actual.iter().chain(desired).any(|row| row.len() != n) {
        return Err(AicError::MetricUndefined("ragged or empty rows".into()));
    }
    Ok(n)
}

fn column_range(rows: &Series, j: usize) -> f64 {
    let (lo, hi) = rows
        .iter()
        .map(|r| r[j])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

/// RMS error over all states and samples, divided by the mean per-state
/// range of `actual`.
pub fn nrmse(actual: &Series, desired: &Series) -> Result<f64> {
    let n_x = check_shapes(actual, desired)?;
    let n = actual.len();
    let sq: f64 = actual
        .iter()
        .zip(desired)
        .flat_map(|(a, d)| a.iter().zip(d).map(|(y, yh)| (y - yh) * (y - yh)))
        .sum();
    let mut range_sum = 0.0;
    for j in 0..n_x {
        let r = column_range(actual, j);
        if r <= 0.0 {
            return Err(AicError::MetricUndefined(format!(
                "state {j} has zero range"
            )));
        }
        range_sum += r;
    }
    Ok((sq / (n_x * n) as f64).sqrt() / (range_sum / n_x as f64))
}

/// Pearson correlation of two scalar series.
pub fn pcc_scalar(actual: &[f64], desired: &[f64]) -> Result<f64> {
    if actual.len() != desired.len() || actual.len() < 2 {
        return Err(AicError::MetricUndefined(
            "pcc needs two equal series of length ≥ 2".into(),
        ));
    }
    let n = actual.len() as f64;
    let ma = actual.iter().sum::<f64>() / n;
    let md = desired.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sdd) = (0.0, 0.0, 0.0);
    for (a, d) in actual.iter().zip(desired) {
        let (da, dd) = (a - ma, d - md);
        sab += da * dd;
        saa += da * da;
        sdd += dd * dd;
    }
    if saa == 0.0 || sdd == 0.0 {
        return Err(AicError::MetricUndefined("constant series".into()));
    }
    Ok((sab / (saa * sdd).sqrt()).clamp(-1.0, 1.0))
}

/// Per-state correlation, averaged with equal weights.
pub fn pcc(actual: &Series, desired: &Series) -> Result<f64> {
    let n_x = check_shapes(actual, desired)?;
    let mut total = 0.0;
    for j in 0..n_x {
        let a: Vec<f64> = actual.iter().map(|r| r[j]).collect();
        let d: Vec<f64> = desired.iter().map(|r| r[j]).collect();
        total += pcc_scalar(&a, &d)?;
    }
    Ok(total / n_x as f64)
}

/// Earliest time after which `‖e‖∞ ≤ band · mean desired range` holds to the
/// end of the log.
pub fn settle_time(log: &TrajectoryLog, band_fraction: f64) -> Option<f64> {
    assert!(
        band_fraction > 0.0 && band_fraction < 1.0,
        "band fraction must be in (0, 1)"
    );
    if log.is_empty() {
        return None;
    }
    let desired: Vec<Vec<f64>> = log
        .records
        .iter()
        .map(|r| r.x_d.iter().copied().collect())
        .collect();
    let mean_range = (0..log.n_x).map(|j| column_range(&desired, j)).sum::<f64>() / log.n_x as f64;
    let band = band_fraction * mean_range;
    let mut settled_from = None;
    for (k, r) in log.records.iter().enumerate().rev() {
        if r.error().amax() <= band {
            settled_from = Some(k);
        } else {
            break;
        }
    }
    settled_from.map(|k| log.records[k].t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Window {
    /// The whole horizon.
    Ote,
    /// From the settle time (or the horizon midpoint) to the end.
    Pcte,
}

impl Window {
    pub fn as_str(self) -> &'static str {
        match self {
            Window::Ote => "OTE",
            Window::Pcte => "PCTE",
        }
    }
}

/// Index ranges of the OTE and PCTE windows in `log.records`.
pub fn split_windows(
    log: &TrajectoryLog,
    settle: Option<f64>,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let n = log.len();
    let start_t = settle.unwrap_or(0.5 * log.horizon());
    let start = log
        .records
        .iter()
        .position(|r| r.t >= start_t - 1e-9 * log.dt)
        .unwrap_or(n);
    (0..n, start..n)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub window: Window,
    pub nrmse: f64,
    pub pcc: f64,
    pub settle_time: Option<f64>,
}

/// OTE and PCTE reports for one run.
pub fn evaluate(log: &TrajectoryLog, band_fraction: f64) -> Result<[MetricReport; 2]> {
    let settle = settle_time(log, band_fraction);
    let (ote, pcte) = split_windows(log, settle);
    let actual: Vec<Vec<f64>> = log
        .records
        .iter()
        .map(|r| r.x_true.iter().copied().collect())
        .collect();
    let desired: Vec<Vec<f64>> = log
        .records
        .iter()
        .map(|r| r.x_d.iter().copied().collect())
        .collect();
    let report = |window, range: std::ops::Range<usize>| -> Result<MetricReport> {
        Ok(MetricReport {
            window,
            nrmse: nrmse(&actual[range.clone()], &desired[range.clone()])?,
            pcc: pcc(&actual[range.clone()], &desired[range])?,
            settle_time: settle,
        })
    };
    Ok([report(Window::Ote, ote)?, report(Window::Pcte, pcte)?])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max={:.4} mean={:.4} std={:.4}",
            self.max, self.mean, self.std
        )
    }
}

/// # Panics
/// On an empty slice.
pub fn aggregate(values: &[f64]) -> Aggregate {
    assert!(!values.is_empty(), "aggregate needs at least one value");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Aggregate {
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std: var.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aic::StepRecord;
    use crate::dynamics::BenchmarkKind;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn rows(cols: &[&[f64]]) -> Vec<Vec<f64>> {
        (0..cols[0].len())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect()
    }

    fn sine_rows(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.01;
                vec![t.sin(), t.cos() + t.sin()]
            })
            .collect()
    }

    fn log_from_errors(errors: &[f64], dt: f64) -> TrajectoryLog {
        let records = errors
            .iter()
            .enumerate()
            .map(|(k, &err)| {
                let t = k as f64 * dt;
                let x_d = DVector::from_vec(vec![t.sin(), t.cos()]);
                StepRecord {
                    t,
                    x_true: &x_d + DVector::from_vec(vec![err, 0.0]),
                    x_d,
                    gamma_s: 1,
                    gamma_c: 1,
                    x_used: DVector::zeros(2),
                    e_hat: DVector::zeros(2),
                    u_c: DVector::zeros(1),
                    u_applied: DVector::zeros(1),
                    td: 0.0,
                    value: 0.0,
                    x_tilde_norm: None,
                    w_i_norm: 0.0,
                    v_i_norm: 0.0,
                    w_c_norm: 0.0,
                    w_a_norm: 0.0,
                    v_a_norm: 0.0,
                    actor_grad_mean: 0.0,
                }
            })
            .collect();
        TrajectoryLog {
            benchmark: BenchmarkKind::Simo,
            seed: 0,
            config_hash: 0,
            dt,
            n_x: 2,
            n_u: 1,
            records,
            critic_weights: DVector::zeros(3),
        }
    }

    #[test]
    fn nrmse_examples() {
        let d = sine_rows(500);
        assert_eq!(nrmse(&d, &d).unwrap(), 0.0);

        let y = rows(&[&[0.0, 1.0], &[0.0, 1.0]]);
        let yh = rows(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert_abs_diff_eq!(nrmse(&y, &yh).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);

        let shifted: Vec<Vec<f64>> = d
            .iter()
            .map(|r| r.iter().map(|v| v + 0.3).collect())
            .collect();
        let mean_range = (column_range(&d, 0) + column_range(&d, 1)) / 2.0;
        assert_abs_diff_eq!(
            nrmse(&shifted, &d).unwrap(),
            0.3 / mean_range,
            epsilon = 1e-12
        );
    }

    #[test]
    fn nrmse_zero_range_is_undefined() {
        let flat = rows(&[&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]]);
        assert!(matches!(
            nrmse(&flat, &flat),
            Err(AicError::MetricUndefined(_))
        ));
        let one = rows(&[&[1.0], &[0.0]]);
        assert!(nrmse(&one, &one).is_err());
    }

    #[test]
    fn pcc_examples() {
        let d = sine_rows(300);
        assert_abs_diff_eq!(pcc(&d, &d).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        assert_abs_diff_eq!(pcc(&neg, &d).unwrap(), -1.0, epsilon = 1e-12);
        let aff: Vec<Vec<f64>> = d
            .iter()
            .map(|r| r.iter().map(|v| 2.0 * v + 5.0).collect())
            .collect();
        assert_abs_diff_eq!(pcc(&aff, &d).unwrap(), 1.0, epsilon = 1e-12);
        assert!(pcc_scalar(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn settle_examples() {
        assert_eq!(
            settle_time(&log_from_errors(&[0.0; 100], 0.1), 0.05),
            Some(0.0)
        );

        let errs: Vec<f64> = (0..100).map(|k| if k < 20 { 1.0 } else { 0.0 }).collect();
        let t = settle_time(&log_from_errors(&errs, 0.1), 0.05).unwrap();
        assert_abs_diff_eq!(t, 2.0, epsilon = 1e-12);

        let mut late = errs.clone();
        late[99] = 1.0;
        assert_eq!(settle_time(&log_from_errors(&late, 0.1), 0.05), None);
    }

    #[test]
    fn window_examples() {
        let log = log_from_errors(&[0.0; 200], 0.1);
        let (ote, pcte) = split_windows(&log, Some(0.0));
        assert_eq!((ote.clone(), pcte), (0..200, 0..200));
        let (_, pcte) = split_windows(&log, None);
        assert_abs_diff_eq!(log.records[pcte.start].t, 10.0, epsilon = 1e-9);
        let (_, pcte) = split_windows(&log, Some(2.2));
        assert_abs_diff_eq!(log.records[pcte.start].t, 2.2, epsilon = 1e-9);
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[0.7]);
        assert_eq!((one.max, one.mean, one.std), (0.7, 0.7, 0.0));
        let a = aggregate(&[1.0, 2.0, 3.0]);
        assert_eq!((a.max, a.mean), (3.0, 2.0));
        assert_abs_diff_eq!(a.std, (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(aggregate(&[4.0; 5]).std, 0.0);
    }

    #[test]
    fn evaluate_nests_windows() {
        let errs: Vec<f64> = (0..2000)
            .map(|k| 0.8 * (-(k as f64) * 0.005).exp())
            .collect();
        let [ote, pcte] = evaluate(&log_from_errors(&errs, 0.01), 0.05).unwrap();
        assert_eq!((ote.window, pcte.window), (Window::Ote, Window::Pcte));
        assert!(pcte.nrmse <= ote.nrmse);
        assert!(ote.settle_time.is_some());
    }

    proptest! {
        #[test]
        fn nrmse_scale_covariant(c in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64], shift in -1.0..1.0f64) {
            let d = sine_rows(200);
            let y: Vec<Vec<f64>> = d.iter().map(|r| vec![r[0] + shift, 0.9 * r[1]]).collect();
            let scale = |m: &[Vec<f64>]| -> Vec<Vec<f64>> { m.iter().map(|r| r.iter().map(|v| c * v).collect()).collect() };
            let base = nrmse(&y, &d).unwrap();
            prop_assert!((nrmse(&scale(&y), &scale(&d)).unwrap() - base).abs() < 1e-9 * base.max(1.0));
        }

        #[test]
        fn pcc_affine_invariant(a in prop_oneof![-10.0..-0.1f64, 0.1..10.0f64], b in -10.0..10.0f64, noise in 0.0..0.5f64) {
            let d = sine_rows(200);
            let y: Vec<Vec<f64>> = d.iter().enumerate().map(|(i, r)| vec![r[0] + noise * (i as f64).cos(), r[1]]).collect();
            let ya: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|v| a * v + b).collect()).collect();
            let lhs = pcc(&ya, &d).unwrap();
            prop_assert!((lhs - a.signum() * pcc(&y, &d).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&lhs));
        }
    }
}
