//! Experiment plumbing: trajectory CSV, repeated-run sweeps and their
//! report table, critic value surfaces and the VSM frequency summary.

use std::fmt::{self, Write as _};
use std::io::{self, Write};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::aic::{run_episode, StepRecord, TrajectoryLog};
use crate::config::RunConfig;
use crate::critic::{CriticNet, QuadraticBasis};
use crate::error::{AicError, Result};
use crate::metrics::{aggregate, evaluate, Aggregate, MetricReport};

/// The five reference dropout scenarios `(γ̄_s, γ̄_c)`.
pub const STANDARD_SCENARIOS: [(f64, f64); 5] =
    [(1.0, 1.0), (1.0, 0.8), (0.8, 1.0), (0.9, 0.9), (0.8, 0.7)];

pub fn csv_header(n_x: usize, n_u: usize) -> Vec<String> {
    let idx = |p: &'static str, n: usize| (1..=n).map(move |i| format!("{p}{i}"));
    let mut cols = vec!["t".to_string()];
    cols.extend(idx("x", n_x));
    cols.extend(idx("xd", n_x));
    cols.push("gamma_s".into());
    cols.push("gamma_c".into());
    cols.extend(idx("x_used", n_x));
    cols.extend(idx("e", n_x));
    cols.extend(idx("u", n_u));
    cols.extend(idx("u_applied", n_u));
    for c in [
        "td",
        "value",
        "x_tilde_norm",
        "w_i_norm",
        "v_i_norm",
        "w_c_norm",
        "w_a_norm",
        "v_a_norm",
        "actor_grad_mean",
    ] {
        cols.push(c.into());
    }
    cols
}

/// Nine significant digits.
fn num(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn csv_row(r: &StepRecord) -> String {
    let mut fields = vec![num(r.t)];
    fields.extend(r.x_true.iter().map(|&v| num(v)));
    fields.extend(r.x_d.iter().map(|&v| num(v)));
    fields.push(r.gamma_s.to_string());
    fields.push(r.gamma_c.to_string());
    fields.extend(r.x_used.iter().map(|&v| num(v)));
    fields.extend(r.error().iter().map(|&v| num(v)));
    fields.extend(r.u_c.iter().map(|&v| num(v)));
    fields.extend(r.u_applied.iter().map(|&v| num(v)));
    fields.push(num(r.td));
    fields.push(num(r.value));
    fields.push(r.x_tilde_norm.map_or_else(|| "nan".to_string(), num));
    for v in [
        r.w_i_norm,
        r.v_i_norm,
        r.w_c_norm,
        r.w_a_norm,
        r.v_a_norm,
        r.actor_grad_mean,
    ] {
        fields.push(num(v));
    }
    fields.join(",")
}

pub fn write_csv<W: Write>(log: &TrajectoryLog, mut out: W) -> io::Result<()> {
    writeln!(out, "{}", csv_header(log.n_x, log.n_u).join(","))?;
    for r in &log.records {
        writeln!(out, "{}", csv_row(r))?;
    }
    out.flush()
}

/// Parses `"1,1;0.8,0.7"` or `standard`.
pub fn parse_scenarios(s: &str) -> Result<Vec<(f64, f64)>> {
    if s.trim() == "standard" {
        return Ok(STANDARD_SCENARIOS.to_vec());
    }
    let bad = || {
        AicError::config(
            "sweep.scenarios",
            format!("expected `gs,gc;gs,gc;...`, got `{s}`"),
        )
    };
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (a, b) = pair.split_once(',').ok_or_else(bad)?;
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
                return Err(AicError::config(
                    "sweep.scenarios",
                    format!("probability outside [0, 1] in `{pair}`"),
                ));
            }
            Ok((a, b))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Completed([MetricReport; 2]),
    Diverged(String),
    /// The run finished but a metric was undefined on it.
    Undefined(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub scenario: (f64, f64),
    pub seed: u64,
    pub outcome: RunOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub benchmark: String,
    pub preset: String,
    pub scenarios: Vec<(f64, f64)>,
    pub repeats: usize,
    pub settle_band: f64,
    /// Ordered by scenario, then seed.
    pub runs: Vec<SweepRun>,
}

/// Runs `repeats` seeds `base.seed, base.seed + 1, …` for every scenario.
pub fn run_sweep(base: &RunConfig, scenarios: &[(f64, f64)], repeats: usize) -> SweepReport {
    let jobs: Vec<((f64, f64), u64)> = scenarios
        .iter()
        .flat_map(|&sc| (0..repeats as u64).map(move |k| (sc, k)))
        .map(|(sc, k)| (sc, base.seed.wrapping_add(k)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(scenario, seed)| {
            let cfg = base
                .clone()
                .with_scenario(scenario.0, scenario.1)
                .with_seed(seed);
            let outcome = match run_episode(&cfg) {
                Ok(log) => match evaluate(&log, cfg.settle_band) {
                    Ok(r) => RunOutcome::Completed(r),
                    Err(e) => RunOutcome::Undefined(e.to_string()),
                },
                Err(f) => RunOutcome::Diverged(f.to_string()),
            };
            SweepRun {
                scenario,
                seed,
                outcome,
            }
        })
        .collect();
    SweepReport {
        benchmark: base.benchmark.to_string(),
        preset: base.preset.to_string(),
        scenarios: scenarios.to_vec(),
        repeats,
        settle_band: base.settle_band,
        runs,
    }
}

impl SweepReport {
    pub fn runs_for(&self, scenario: (f64, f64)) -> impl Iterator<Item = &SweepRun> {
        self.runs.iter().filter(move |r| r.scenario == scenario)
    }

    pub fn completed(&self, scenario: (f64, f64)) -> Vec<[MetricReport; 2]> {
        self.runs_for(scenario)
            .filter_map(|r| match &r.outcome {
                RunOutcome::Completed(m) => Some(*m),
                _ => None,
            })
            .collect()
    }

    pub fn all_failed(&self) -> bool {
        self.runs
            .iter()
            .all(|r| !matches!(r.outcome, RunOutcome::Completed(_)))
    }

    /// Aggregate of one window (0 = OTE, 1 = PCTE) and metric.
    pub fn stat(
        &self,
        scenario: (f64, f64),
        window: usize,
        pick: fn(&MetricReport) -> f64,
    ) -> Option<Aggregate> {
        let vals: Vec<f64> = self
            .completed(scenario)
            .iter()
            .map(|m| pick(&m[window]))
            .collect();
        (!vals.is_empty()).then(|| aggregate(&vals))
    }
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# {} ({} preset), {} repeats per scenario\n",
            self.benchmark, self.preset, self.repeats
        )?;
        let mut head = "| Window | Stat | Metric |".to_string();
        let mut rule = "|---|---|---|".to_string();
        for (s, c) in &self.scenarios {
            let _ = write!(head, " γ̄s={s} γ̄c={c} |");
            rule.push_str("---|");
        }
        writeln!(f, "{head}\n{rule}")?;
        let metrics: [(&str, fn(&MetricReport) -> f64); 2] =
            [("NRMSE", |m| m.nrmse), ("PCC", |m| m.pcc)];
        for (w, wname) in ["OTE", "PCTE"].iter().enumerate() {
            for stat in ["MAX", "MEAN", "STD"] {
                for (mname, pick) in metrics {
                    let mut line = format!("| {wname} | {stat} | {mname} |");
                    for &sc in &self.scenarios {
                        let cell = match self.stat(sc, w, pick) {
                            Some(a) => format!(
                                "{:.4}",
                                match stat {
                                    "MAX" => a.max,
                                    "MEAN" => a.mean,
                                    _ => a.std,
                                }
                            ),
                            None => "DIVERGED".into(),
                        };
                        let _ = write!(line, " {cell} |");
                    }
                    writeln!(f, "{line}")?;
                }
            }
        }
        let mut settle = "| Settle | MEAN | seconds |".to_string();
        let mut failed = "| Runs | DIVERGED | count |".to_string();
        for &sc in &self.scenarios {
            let times: Vec<f64> = self
                .completed(sc)
                .iter()
                .filter_map(|m| m[0].settle_time)
                .collect();
            let cell = if times.is_empty() {
                "none".to_string()
            } else {
                let a = aggregate(&times);
                format!(
                    "{:.3} ({} of {})",
                    a.mean,
                    times.len(),
                    self.runs_for(sc).count()
                )
            };
            let _ = write!(settle, " {cell} |");
            let n_fail = self
                .runs_for(sc)
                .filter(|r| !matches!(r.outcome, RunOutcome::Completed(_)))
                .count();
            let _ = write!(failed, " {n_fail} |");
        }
        writeln!(f, "{settle}\n{failed}\n")?;
        for r in &self.runs {
            match &r.outcome {
                RunOutcome::Diverged(msg) => {
                    writeln!(f, "- DIVERGED {:?} seed {}: {msg}", r.scenario, r.seed)?
                }
                RunOutcome::Undefined(msg) => {
                    writeln!(f, "- UNDEFINED {:?} seed {}: {msg}", r.scenario, r.seed)?
                }
                RunOutcome::Completed(_) => {}
            }
        }
        writeln!(
            f,
            "Settle time: first t after which max|e_j| stays within {}% of the mean reference range. \
             PCTE runs from the settle time to the end, or over the final half when a run never settles. \
             STD is the population standard deviation.",
            self.settle_band * 100.0
        )
    }
}

/// Critic value on a `points × points` grid over `[lo, hi]²`, row-major in
/// `(e1, e2)`.
pub fn value_surface(
    weights: &DVector<f64>,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Vec<(f64, f64, f64)>> {
    let basis = QuadraticBasis::new(2);
    if weights.len() != basis.len() {
        return Err(AicError::config(
            "surface.weights",
            format!(
                "expected {} critic weights for a two-state error, got {}",
                basis.len(),
                weights.len()
            ),
        ));
    }
    if points < 2 || !(lo < hi) {
        return Err(AicError::config(
            "surface.grid",
            "need at least two points and lo < hi",
        ));
    }
    let critic = CriticNet::new(weights.clone(), basis, 0.0);
    let step = (hi - lo) / (points - 1) as f64;
    let mut out = Vec::with_capacity(points * points);
    for i in 0..points {
        for j in 0..points {
            let (e1, e2) = (lo + i as f64 * step, lo + j as f64 * step);
            out.push((e1, e2, critic.value(&DVector::from_vec(vec![e1, e2]))));
        }
    }
    Ok(out)
}

pub fn write_surface<W: Write>(grid: &[(f64, f64, f64)], mut out: W) -> io::Result<()> {
    writeln!(out, "e1,e2,value")?;
    for (e1, e2, v) in grid {
        writeln!(out, "{},{},{}", num(*e1), num(*e2), num(*v))?;
    }
    out.flush()
}

/// Frequency deviation from nominal, in Hz, of a VSM log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencySummary {
    pub max_abs_hz: f64,
    /// Over the final half of the simulated horizon.
    pub final_half_max_abs_hz: f64,
    pub final_hz: f64,
}

pub fn frequency_summary(log: &TrajectoryLog) -> Option<FrequencySummary> {
    let hz = |r: &StepRecord| r.x_true[1] / std::f64::consts::TAU;
    let last = log.records.last()?;
    let half = log.horizon() / 2.0;
    let max_of =
        |it: &mut dyn Iterator<Item = &StepRecord>| it.map(|r| hz(r).abs()).fold(0.0, f64::max);
    Some(FrequencySummary {
        max_abs_hz: max_of(&mut log.records.iter()),
        final_half_max_abs_hz: max_of(&mut log.records.iter().filter(|r| r.t >= half)),
        final_hz: hz(last),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PresetTag;
    use crate::dynamics::BenchmarkKind;

    #[test]
    fn header_layout() {
        let simo = csv_header(2, 1).join(", ");
        assert_eq!(
            simo,
            "t, x1, x2, xd1, xd2, gamma_s, gamma_c, x_used1, x_used2, e1, e2, u1, u_applied1, td, value, \
             x_tilde_norm, w_i_norm, v_i_norm, w_c_norm, w_a_norm, v_a_norm, actor_grad_mean"
        );
        let mimo = csv_header(2, 2);
        assert_eq!(&mimo[11..15], ["u1", "u2", "u_applied1", "u_applied2"]);
        assert_eq!(mimo.len(), 24);
    }

    #[test]
    fn number_format_has_nine_significant_digits() {
        assert_eq!(num(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(num(-12345.678901), "-1.23456789e4");
    }

    #[test]
    fn rows_match_header_width() {
        let cfg = RunConfig::preset(BenchmarkKind::Mimo, PresetTag::Tuned);
        let cfg = RunConfig {
            horizon: 0.05,
            ..cfg
        };
        let log = run_episode(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let widths: Vec<usize> = text.lines().map(|l| l.split(',').count()).collect();
        assert_eq!(widths.len(), 51);
        assert!(widths.iter().all(|&w| w == 24));
        assert!(text.lines().nth(1).unwrap().contains(",nan,"));
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!(
            parse_scenarios("standard").unwrap(),
            STANDARD_SCENARIOS.to_vec()
        );
        assert_eq!(
            parse_scenarios("1,1; 0.8,0.7").unwrap(),
            vec![(1.0, 1.0), (0.8, 0.7)]
        );
        assert!(parse_scenarios("1,1.5").is_err());
        assert!(parse_scenarios("0.3").is_err());
    }

    #[test]
    fn surface_of_identity_form() {
        let grid = value_surface(&DVector::from_vec(vec![1.0, 0.0, 1.0]), -1.0, 1.0, 101).unwrap();
        assert_eq!(grid.len(), 101 * 101);
        for (e1, e2, v) in &grid {
            assert_eq!(*v, e1 * e1 + e2 * e2);
        }
        let (lo, hi) = grid
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p.0), b.max(p.1))
            });
        assert_eq!((lo, hi), (-1.0, 1.0));
        let small = value_surface(&DVector::from_vec(vec![1.0, 0.0, 1.0]), -0.5, 0.5, 3).unwrap();
        assert_eq!(small.first().unwrap().0, -0.5);
        assert_eq!(small.last().unwrap().1, 0.5);
    }

    #[test]
    fn sweep_orders_by_scenario_then_seed() {
        let base = RunConfig {
            horizon: 0.5,
            seed: 7,
            ..RunConfig::preset(BenchmarkKind::Simo, PresetTag::Tuned)
        };
        let scen = [(1.0, 1.0), (0.8, 0.7)];
        let report = run_sweep(&base, &scen, 3);
        let keys: Vec<_> = report.runs.iter().map(|r| (r.scenario, r.seed)).collect();
        assert_eq!(
            keys,
            vec![
                ((1.0, 1.0), 7),
                ((1.0, 1.0), 8),
                ((1.0, 1.0), 9),
                ((0.8, 0.7), 7),
                ((0.8, 0.7), 8),
                ((0.8, 0.7), 9)
            ]
        );
        assert_eq!(report, run_sweep(&base, &scen, 3));
        let text = report.to_string();
        assert_eq!(
            text.lines()
                .filter(|l| l.starts_with("| OTE") || l.starts_with("| PCTE"))
                .count(),
            12
        );
    }

    #[test]
    fn single_repeat_has_zero_std() {
        let base = RunConfig {
            horizon: 1.0,
            ..RunConfig::preset(BenchmarkKind::Simo, PresetTag::Tuned)
        };
        let report = run_sweep(&base, &[(1.0, 1.0)], 1);
        assert_eq!(report.stat((1.0, 1.0), 0, |m| m.nrmse).unwrap().std, 0.0);
        assert_eq!(report.stat((1.0, 1.0), 1, |m| m.pcc).unwrap().std, 0.0);
    }
}
