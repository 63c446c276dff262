//! Finite-difference oracles for every analytic derivative on the actor's
//! chain rule: identifier input Jacobian, critic value gradient, and the
//! gradient of the actor's one-step objective with respect to its weights.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::actor::{ActorNet, ActorRates};
use crate::channels::{stream_rng, Stream};
use crate::critic::{CostWeights, CriticNet, QuadraticBasis};
use crate::dynamics::HurwitzDecomposition;
use crate::identifier::{IdentifierNet, IdentifierRates};
use crate::nn::uniform_matrix;

pub const IDENTIFIER_JACOBIAN_TOL: f64 = 1e-5;
pub const CRITIC_GRADIENT_TOL: f64 = 1e-6;
pub const ACTOR_GRADIENT_TOL: f64 = 1e-4;

pub fn central_difference_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut probe = x.clone();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = f(&probe);
        probe[k] = x[k] - h;
        let minus = f(&probe);
        probe[k] = x[k];
        jac.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    jac
}

pub fn central_difference_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = f(&probe);
        probe[k] = x[k] - h;
        let minus = f(&probe);
        probe[k] = x[k];
        grad[k] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)` over all entries; zero when both vanish.
pub fn relative_error<'a, 'b>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'b f64>,
) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = f64::max(na, nb).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub worst: f64,
    pub threshold: f64,
    pub points: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst < self.threshold
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradcheck seed={}", self.seed)?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<22} worst_rel_err={:.3e} threshold={:.0e} points={} {}",
                c.name,
                c.worst,
                c.threshold,
                c.points,
                if c.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradcheckOptions {
    pub points: usize,
    /// Negative control: read the control Jacobian one column too early.
    pub corrupt_control_slice: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            points: 100,
            corrupt_control_slice: false,
        }
    }
}

fn random_vector<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..=scale))
}

fn random_identifier<R: Rng>(rng: &mut R, n_x: usize, n_u: usize, hidden: usize) -> IdentifierNet {
    let rates = IdentifierRates {
        eta_w: 1.0,
        eta_v: 1.0,
        rho: 0.0,
    };
    let a_c = HurwitzDecomposition::new(DVector::from_fn(n_x, |_, _| -rng.random_range(0.5..2.0)))
        .expect("negative diagonal");
    IdentifierNet::from_weights(
        uniform_matrix(rng, n_x, hidden, 1.0),
        uniform_matrix(rng, hidden, n_x + n_u, 1.0),
        n_u,
        rates,
        a_c,
    )
}

fn random_critic<R: Rng>(rng: &mut R, n_x: usize) -> CriticNet {
    let basis = QuadraticBasis::new(n_x);
    CriticNet::new(random_vector(rng, basis.len(), 1.0), basis, 0.1)
}

fn control_slice(
    identifier: &IdentifierNet,
    x: &DVector<f64>,
    u: &DVector<f64>,
    corrupt: bool,
) -> DMatrix<f64> {
    if corrupt {
        identifier
            .input_jacobian(x, u)
            .columns(identifier.n_x() - 1, identifier.n_u())
            .into_owned()
    } else {
        identifier.control_jacobian(x, u)
    }
}

pub fn run_gradcheck(seed: u64, opts: GradcheckOptions) -> GradcheckReport {
    let mut rng = stream_rng(seed, Stream::Gradcheck);
    let (n_x, hidden) = (2, 6);
    let mut id_worst = 0.0_f64;
    let mut critic_worst = 0.0_f64;
    let mut actor_worst = 0.0_f64;

    for k in 0..opts.points {
        let n_u = 1 + k % 2;

        let identifier = random_identifier(&mut rng, n_x, n_u, hidden);
        let x = random_vector(&mut rng, n_x, 2.0);
        let u = random_vector(&mut rng, n_u, 2.0);
        let analytic = identifier.input_jacobian(&x, &u);
        let numeric = central_difference_jacobian(
            |xb| identifier.forward_bar(xb),
            &identifier.input(&x, &u),
            1e-6,
        );
        id_worst = id_worst.max(relative_error(&analytic, &numeric));

        let critic = random_critic(&mut rng, n_x);
        let e = random_vector(&mut rng, n_x, 2.0);
        let numeric = central_difference_gradient(|p| critic.value(p), &e, 1e-5);
        critic_worst = critic_worst.max(relative_error(&critic.value_gradient(&e), &numeric));

        let rates = ActorRates {
            eta_w: 1.0,
            eta_v: 1.0,
        };
        let actor = ActorNet::from_weights(
            uniform_matrix(&mut rng, n_u, hidden, 1.0),
            uniform_matrix(&mut rng, hidden, n_x, 1.0),
            rates,
        );
        let cost = CostWeights::diagonal(&[0.5, 1.0], &vec![0.1; n_u]).expect("positive weights");
        let x_d_next = random_vector(&mut rng, n_x, 1.5);
        let e_hat = random_vector(&mut rng, n_x, 1.5);
        let dt = 0.05;

        let objective = |a: &ActorNet| {
            let u = a.act(&e_hat);
            let e_next = identifier.predict_tracking_error(&x, &u, &x_d_next, dt);
            dt * u.dot(&(&cost.r * &u)) + critic.value(&e_next)
        };
        let u_c = actor.act(&e_hat);
        let e_next = identifier.predict_tracking_error(&x, &u_c, &x_d_next, dt);
        let jac = control_slice(&identifier, &x, &u_c, opts.corrupt_control_slice);
        let bracket = actor
            .bracket_term(&critic.value_gradient(&e_next), &jac, &cost.r, &u_c, dt)
            .expect("consistent shapes");
        let grad = actor.gradient(&bracket, &e_hat);

        let w0 = DVector::from_column_slice(actor.w().as_slice());
        let numeric_w = central_difference_gradient(
            |w| {
                let mut a = actor.clone();
                a.set_weights(
                    DMatrix::from_column_slice(n_u, hidden, w.as_slice()),
                    actor.v().clone(),
                );
                objective(&a)
            },
            &w0,
            1e-6,
        );
        let v0 = DVector::from_column_slice(actor.v().as_slice());
        let numeric_v = central_difference_gradient(
            |v| {
                let mut a = actor.clone();
                a.set_weights(
                    actor.w().clone(),
                    DMatrix::from_column_slice(hidden, n_x, v.as_slice()),
                );
                objective(&a)
            },
            &v0,
            1e-6,
        );
        actor_worst = actor_worst
            .max(relative_error(&grad.w, &numeric_w))
            .max(relative_error(&grad.v, &numeric_v));
    }

    GradcheckReport {
        seed,
        checks: vec![
            CheckResult {
                name: "identifier_jacobian",
                worst: id_worst,
                threshold: IDENTIFIER_JACOBIAN_TOL,
                points: opts.points,
            },
            CheckResult {
                name: "critic_gradient",
                worst: critic_worst,
                threshold: CRITIC_GRADIENT_TOL,
                points: opts.points,
            },
            CheckResult {
                name: "actor_objective",
                worst: actor_worst,
                threshold: ACTOR_GRADIENT_TOL,
                points: opts.points,
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_helpers() {
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let g = central_difference_gradient(|p| p[0] * p[0] + 3.0 * p[1], &x, 1e-5);
        assert!((g - DVector::from_vec(vec![0.6, 3.0])).amax() < 1e-9);
        let j =
            central_difference_jacobian(|p| DVector::from_vec(vec![p[0] * p[1], p[1]]), &x, 1e-5);
        assert!((j - DMatrix::from_row_slice(2, 2, &[-1.2, 0.3, 0.0, 1.0])).amax() < 1e-9);
    }

    #[test]
    fn relative_error_edge_cases() {
        let z = DVector::<f64>::zeros(3);
        assert_eq!(relative_error(&z, &z), 0.0);
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        assert!((relative_error(&a, &b) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn all_checks_pass_on_fresh_nets() {
        let report = run_gradcheck(0, GradcheckOptions::default());
        assert!(report.passed(), "{report}");
        assert_eq!(report.checks.len(), 3);
    }

    #[test]
    fn deterministic_per_seed() {
        let opts = GradcheckOptions {
            points: 10,
            ..Default::default()
        };
        assert_eq!(run_gradcheck(4, opts), run_gradcheck(4, opts));
    }

    #[test]
    fn corrupted_slice_fails_actor_check() {
        let opts = GradcheckOptions {
            points: 20,
            corrupt_control_slice: true,
        };
        let report = run_gradcheck(1, opts);
        let failed: Vec<_> = report.failures().map(|c| c.name).collect();
        assert_eq!(failed, vec!["actor_objective"]);
    }
}
