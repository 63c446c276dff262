//! Affine nonlinear plants `ẋ = f(x) + g(x)u`, their reference trajectories and
//! the forward-Euler step used by every simulation.
//!
//! Three benchmarks are provided: a single-input two-state plant (`simo`), a
//! two-input two-state plant (`mimo`) and a virtual synchronous machine swing
//! model (`vsm`).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{AicError, Result};

/// Plant states with a Euclidean norm above this abort the run.
pub const STATE_ENVELOPE: f64 = 1e6;

/// An affine nonlinear plant. Implementations need not check finiteness; the
/// free functions [`eval_f`], [`eval_g`] and [`step_euler`] do.
pub trait Plant: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_gain(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Desired state and its time derivative as analytic functions of time.
pub trait Reference: Send + Sync + fmt::Debug {
    fn at(&self, t: f64) -> (DVector<f64>, DVector<f64>);
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for (component, &value) in values.into_iter().enumerate() {
        if !value.is_finite() {
            return Err(AicError::DynamicsBlowup { component, value });
        }
    }
    Ok(())
}

pub fn eval_f(plant: &dyn Plant, x: &DVector<f64>) -> Result<DVector<f64>> {
    debug_assert_eq!(x.len(), plant.n_x());
    let fx = plant.drift(x);
    check_finite(fx.iter())?;
    Ok(fx)
}

pub fn eval_g(plant: &dyn Plant, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    debug_assert_eq!(x.len(), plant.n_x());
    let gx = plant.input_gain(x);
    check_finite(gx.iter())?;
    Ok(gx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: DVector<f64>,
}

impl SimState {
    pub fn new(t: f64, x: DVector<f64>) -> Self {
        Self { t, x }
    }
}

/// One forward-Euler step: `x' = x + dt (f(x) + g(x) u)`, `t' = t + dt`.
pub fn step_euler(plant: &dyn Plant, s: &SimState, u: &DVector<f64>, dt: f64) -> Result<SimState> {
    debug_assert!(dt > 0.0);
    debug_assert_eq!(u.len(), plant.n_u());
    let xdot = eval_f(plant, &s.x)? + eval_g(plant, &s.x)? * u;
    let x = &s.x + xdot * dt;
    check_finite(x.iter())?;
    let norm = x.norm();
    if norm > STATE_ENVELOPE {
        return Err(AicError::StateEnvelope { norm });
    }
    Ok(SimState { t: s.t + dt, x })
}

/// Diagonal Hurwitz matrix `A_c` split out of the drift, `f(x) = A_c x + f_c(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HurwitzDecomposition {
    diag: DVector<f64>,
}

impl HurwitzDecomposition {
    pub fn new(diag: DVector<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(AicError::config("a_c", "empty diagonal"));
        }
        if let Some(bad) = diag.iter().find(|d| !(d.is_finite() && **d < 0.0)) {
            return Err(AicError::config(
                "a_c",
                format!("diagonal entries must be strictly negative, got {bad}"),
            ));
        }
        Ok(Self { diag })
    }

    /// `A_c = -I`.
    pub fn negative_identity(n: usize) -> Self {
        Self {
            diag: DVector::from_element(n, -1.0),
        }
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag.map(|d| 1.0 / d))
    }

    /// `A_c x`
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.diag.component_mul(x)
    }

    /// `A_c⁻¹ v` (equal to `A_c⁻ᵀ v` since `A_c` is diagonal)
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        v.component_div(&self.diag)
    }

    /// `f_c(x) = f(x) - A_c x`
    pub fn residual(&self, plant: &dyn Plant, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(eval_f(plant, x)? - self.apply(x))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimoPlant;

impl Plant for SimoPlant {
    fn name(&self) -> &'static str {
        "simo"
    }
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let (x1, x2) = (x[0], x[1]);
        let c = (2.0 * x1).cos() + 2.0;
        DVector::from_vec(vec![-x1 + x2, -0.5 * x1 - 0.5 * x2 * (1.0 - c * c)])
    }
    fn input_gain(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, (2.0 * x[0]).cos() + 2.0])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MimoPlant;

impl Plant for MimoPlant {
    fn name(&self) -> &'static str {
        "mimo"
    }
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        2
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let (x1, x2) = (x[0], x[1]);
        DVector::from_vec(vec![x2 - x1, 0.5 * (x1 * x2 - x1)])
    }
    fn input_gain(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 3.0 + x[1], 1.0 + x[0], 0.0])
    }
}

/// Parameters of the virtual synchronous machine. The defaults are stand-ins
/// chosen to give an unstable open loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VsmParams {
    /// Nominal grid frequency, rad/s.
    pub omega_nom: f64,
    /// Damping factor `D_p`, p.u.
    pub damping: f64,
    /// Virtual inertia `H`, s.
    pub inertia: f64,
    /// Maximum dispatchable power `P_max = E V_c / X_eq`, p.u.
    pub p_max: f64,
    /// Power imbalance applied as a step at `t = 0`, p.u.
    pub disturbance: f64,
    /// Load angle the controller regulates to, rad.
    pub delta_eq: f64,
}

impl Default for VsmParams {
    fn default() -> Self {
        Self {
            omega_nom: 2.0 * PI * 50.0,
            damping: 0.5,
            inertia: 0.1,
            p_max: 1.0,
            disturbance: 5.0,
            delta_eq: 0.0,
        }
    }
}

/// Swing dynamics of a virtual synchronous machine.
///
/// State is `(δ, ω - ω_nom)`: the second component is the frequency deviation
/// in rad/s, so the absolute frequency is `ω_nom + x₂`. The dynamics are
/// otherwise the textbook ones:
/// `δ̇ = ω - ω_nom`, `ω̇ = (P_d - D_p (ω - ω_nom) - P_max sin δ + u) / H`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VsmPlant {
    pub params: VsmParams,
}

impl VsmPlant {
    pub fn frequency_hz(&self, x: &DVector<f64>) -> f64 {
        (self.params.omega_nom + x[1]) / (2.0 * PI)
    }
}

impl Plant for VsmPlant {
    fn name(&self) -> &'static str {
        "vsm"
    }
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        1
    }
    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let (delta, dw) = (x[0], x[1]);
        DVector::from_vec(vec![
            dw,
            (p.disturbance - p.damping * dw - p.p_max * delta.sin()) / p.inertia,
        ])
    }
    fn input_gain(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0 / self.params.inertia])
    }
}

/// `x_d(t) = [sin t, cos t + sin t]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SinusoidReference;

impl Reference for SinusoidReference {
    fn at(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let (s, c) = t.sin_cos();
        (
            DVector::from_vec(vec![s, c + s]),
            DVector::from_vec(vec![c, -s + c]),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantReference {
    pub value: DVector<f64>,
}

impl Reference for ConstantReference {
    fn at(&self, _t: f64) -> (DVector<f64>, DVector<f64>) {
        (self.value.clone(), DVector::zeros(self.value.len()))
    }
}

pub fn reference_at(traj: &dyn Reference, t: f64) -> (DVector<f64>, DVector<f64>) {
    debug_assert!(t >= 0.0);
    traj.at(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    Simo,
    Mimo,
    Vsm,
}

impl BenchmarkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkKind::Simo => "simo",
            BenchmarkKind::Mimo => "mimo",
            BenchmarkKind::Vsm => "vsm",
        }
    }

    pub fn dims(self) -> (usize, usize) {
        match self {
            BenchmarkKind::Simo | BenchmarkKind::Vsm => (2, 1),
            BenchmarkKind::Mimo => (2, 2),
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkKind {
    type Err = AicError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simo" => Ok(BenchmarkKind::Simo),
            "mimo" => Ok(BenchmarkKind::Mimo),
            "vsm" => Ok(BenchmarkKind::Vsm),
            other => Err(AicError::config(
                "benchmark",
                format!("unknown benchmark `{other}` (expected simo, mimo or vsm)"),
            )),
        }
    }
}

pub type Benchmark = (Box<dyn Plant>, Box<dyn Reference>);

/// Builds a benchmark plant and its reference. The MIMO plant reuses the
/// sinusoidal SIMO reference.
pub fn make_benchmark(kind: BenchmarkKind, vsm: Option<VsmParams>) -> Benchmark {
    match kind {
        BenchmarkKind::Simo => (Box::new(SimoPlant), Box::new(SinusoidReference)),
        BenchmarkKind::Mimo => (Box::new(MimoPlant), Box::new(SinusoidReference)),
        BenchmarkKind::Vsm => {
            let params = vsm.unwrap_or_default();
            (
                Box::new(VsmPlant { params }),
                Box::new(ConstantReference {
                    value: DVector::from_vec(vec![params.delta_eq, 0.0]),
                }),
            )
        }
    }
}

pub fn make_benchmark_named(name: &str, vsm: Option<VsmParams>) -> Result<Benchmark> {
    Ok(make_benchmark(name.parse()?, vsm))
}

/// Largest spectral norm of `g(x)` over a regular `n × n` grid on
/// `[lo, hi]²`. Only meaningful for two-state plants.
pub fn max_gain_norm(plant: &dyn Plant, lo: f64, hi: f64, n: usize) -> Result<f64> {
    let step = (hi - lo) / (n.max(2) - 1) as f64;
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let x = DVector::from_vec(vec![lo + i as f64 * step, lo + j as f64 * step]);
            let g = eval_g(plant, &x)?;
            worst = worst.max(g.norm());
        }
    }
    Ok(worst)
}
