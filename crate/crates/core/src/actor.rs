//! Two-layer policy network `û = W σ(V ê)` trained by the chain rule through
//! the identifier and critic.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{AicError, Result};
use crate::nn::{bipolar_sigmoid_vec, sigmoid_slope, uniform_matrix};

pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorRates {
    /// Output-layer rate `η_a1`.
    pub eta_w: f64,
    /// Hidden-layer rate `η_a2`.
    pub eta_v: f64,
}

/// Gradient of the one-step actor objective with respect to both layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorGradient {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl ActorGradient {
    /// Mean absolute entry over both layers.
    pub fn mean_abs(&self) -> f64 {
        let n = self.w.len() + self.v.len();
        let sum: f64 = self.w.iter().chain(self.v.iter()).map(|g| g.abs()).sum();
        sum / n as f64
    }
}

#[derive(Clone, Debug)]
pub struct ActorNet {
    w: DMatrix<f64>,
    v: DMatrix<f64>,
    rates: ActorRates,
    command_limit: Option<f64>,
}

impl ActorNet {
    /// Weights drawn uniformly from `[-init_scale, init_scale]`.
    pub fn new<R: Rng + ?Sized>(
        n_x: usize,
        n_u: usize,
        hidden: usize,
        rates: ActorRates,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let v = uniform_matrix(rng, hidden, n_x, init_scale);
        let w = uniform_matrix(rng, n_u, hidden, init_scale);
        Self::from_weights(w, v, rates)
    }

    pub fn from_weights(w: DMatrix<f64>, v: DMatrix<f64>, rates: ActorRates) -> Self {
        assert_eq!(w.ncols(), v.nrows(), "hidden widths of W and V differ");
        Self {
            w,
            v,
            rates,
            command_limit: None,
        }
    }

    /// Clamp every command component to `[-limit, limit]`. Off by default.
    pub fn with_command_limit(mut self, limit: Option<f64>) -> Self {
        self.command_limit = limit;
        self
    }

    pub fn n_u(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.v.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.v.nrows()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn w_norm(&self) -> f64 {
        self.w.norm()
    }

    pub fn v_norm(&self) -> f64 {
        self.v.norm()
    }

    pub fn set_weights(&mut self, w: DMatrix<f64>, v: DMatrix<f64>) {
        assert_eq!(w.shape(), self.w.shape());
        assert_eq!(v.shape(), self.v.shape());
        self.w = w;
        self.v = v;
    }

    pub fn act(&self, e_hat: &DVector<f64>) -> DVector<f64> {
        let u = &self.w * bipolar_sigmoid_vec(&(&self.v * e_hat));
        match self.command_limit {
            Some(limit) => u.map(|ui| ui.clamp(-limit, limit)),
            None => u,
        }
    }

    /// `∂/∂û [Δt ûᵀRû + V̂(ê(t+Δt))] = Δt (J_uᵀ ∇V̂ + 2Rû)`, where `J_u` is
    /// the identifier's control Jacobian and `∇V̂` the critic gradient at the
    /// predicted next error.
    pub fn bracket_term(
        &self,
        critic_grad: &DVector<f64>,
        id_control_jac: &DMatrix<f64>,
        r: &DMatrix<f64>,
        u: &DVector<f64>,
        dt: f64,
    ) -> Result<DVector<f64>> {
        let n_u = self.n_u();
        if id_control_jac.shape() != (critic_grad.len(), n_u) {
            return Err(AicError::config(
                "identifier",
                format!(
                    "control Jacobian is {:?}, expected ({}, {n_u})",
                    id_control_jac.shape(),
                    critic_grad.len()
                ),
            ));
        }
        if r.shape() != (n_u, n_u) || u.len() != n_u {
            return Err(AicError::config("r", format!("R must be {n_u}×{n_u}")));
        }
        Ok((id_control_jac.tr_mul(critic_grad) + r * u * 2.0) * dt)
    }

    /// Gradient of the objective with respect to `W` and `V`, given its
    /// gradient `bracket` with respect to the command.
    pub fn gradient(&self, bracket: &DVector<f64>, e_hat: &DVector<f64>) -> ActorGradient {
        let s = bipolar_sigmoid_vec(&(&self.v * e_hat));
        let back = self.w.tr_mul(bracket).component_mul(&sigmoid_slope(&s));
        ActorGradient {
            w: bracket * s.transpose(),
            v: back * e_hat.transpose(),
        }
    }

    /// One descent step: `W ← W - Δt η_w ∂/∂W`, `V ← V - Δt η_v ∂/∂V`.
    pub fn update(
        &mut self,
        bracket: &DVector<f64>,
        e_hat: &DVector<f64>,
        dt: f64,
    ) -> Result<ActorGradient> {
        debug_assert!(dt > 0.0);
        let grad = self.gradient(bracket, e_hat);
        self.w -= &grad.w * (dt * self.rates.eta_w);
        self.v -= &grad.v * (dt * self.rates.eta_v);
        if self.w.iter().chain(self.v.iter()).all(|x| x.is_finite()) {
            Ok(grad)
        } else {
            Err(AicError::ActorDiverged)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{CostWeights, CriticNet, QuadraticBasis};
    use crate::dynamics::HurwitzDecomposition;
    use crate::gradcheck::{central_difference_gradient, relative_error};
    use crate::identifier::{IdentifierNet, IdentifierRates};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const RATES: ActorRates = ActorRates {
        eta_w: 1.0,
        eta_v: 1.0,
    };

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn random_actor(rng: &mut ChaCha8Rng, n_u: usize, hidden: usize) -> ActorNet {
        let w = uniform_matrix(rng, n_u, hidden, 1.0);
        let vv = uniform_matrix(rng, hidden, 2, 1.0);
        ActorNet::from_weights(w, vv, RATES)
    }

    #[test]
    fn act_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_actor(&mut rng, 2, 5);
        assert_eq!(a.act(&v(&[0.0, 0.0])), v(&[0.0, 0.0]));
        let zero = ActorNet::from_weights(
            DMatrix::zeros(1, 4),
            uniform_matrix(&mut rng, 4, 2, 1.0),
            RATES,
        );
        assert_eq!(zero.act(&v(&[0.3, 2.0])), v(&[0.0]));
    }

    #[test]
    fn act_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_actor(&mut rng, 2, 3);
        let e = [0.4, -1.2];
        let mut expected = [0.0; 2];
        for j in 0..3 {
            let z = a.v[(j, 0)] * e[0] + a.v[(j, 1)] * e[1];
            let s = 2.0 / (1.0 + (-z).exp()) - 1.0;
            for (i, out) in expected.iter_mut().enumerate() {
                *out += a.w[(i, j)] * s;
            }
        }
        let u = a.act(&v(&e));
        assert_abs_diff_eq!(u[0], expected[0], epsilon = 1e-14);
        assert_abs_diff_eq!(u[1], expected[1], epsilon = 1e-14);
    }

    #[test]
    fn command_bounded_by_output_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_actor(&mut rng, 2, 6);
            let e = uniform_matrix(&mut rng, 2, 1, 50.0).column(0).into_owned();
            assert!(a.act(&e).norm() <= a.w_norm() * (a.hidden() as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn command_limit_clamps() {
        let w = DMatrix::from_element(1, 2, 10.0);
        let vv = DMatrix::from_element(2, 2, 10.0);
        let a = ActorNet::from_weights(w, vv, RATES).with_command_limit(Some(1.5));
        assert_eq!(a.act(&v(&[1.0, 1.0])), v(&[1.5]));
    }

    #[test]
    fn bracket_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_actor(&mut rng, 1, 4);
        let r = DMatrix::from_element(1, 1, 0.3);
        let jac = DMatrix::from_column_slice(2, 1, &[0.7, -0.2]);
        let b = a
            .bracket_term(&v(&[0.0, 0.0]), &jac, &r, &v(&[0.0]), 0.01)
            .unwrap();
        assert_eq!(b, v(&[0.0]));

        // critic gradient [1, 0] with the true g column and R = 0 picks g's first row
        let g = DMatrix::from_column_slice(2, 1, &[1.5, 3.0]);
        let b = a
            .bracket_term(&v(&[1.0, 0.0]), &g, &DMatrix::zeros(1, 1), &v(&[0.8]), 0.01)
            .unwrap();
        assert_abs_diff_eq!(b[0], 0.015, epsilon = 1e-15);

        let wrong = DMatrix::zeros(3, 1);
        assert!(a
            .bracket_term(&v(&[1.0, 0.0]), &wrong, &r, &v(&[0.8]), 0.01)
            .is_err());
    }

    #[test]
    fn quiescent_at_zero_error_or_zero_bracket() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = random_actor(&mut rng, 1, 4);
        let before = a.clone();
        a.update(&v(&[0.0]), &v(&[0.3, -0.4]), 0.01).unwrap();
        assert_eq!((a.w(), a.v()), (before.w(), before.v()));
        a.update(&v(&[2.5]), &v(&[0.0, 0.0]), 0.01).unwrap();
        assert_eq!((a.w(), a.v()), (before.w(), before.v()));
    }

    struct Fixture {
        identifier: IdentifierNet,
        critic: CriticNet,
        cost: CostWeights,
        x: DVector<f64>,
        x_d_next: DVector<f64>,
        e_hat: DVector<f64>,
        dt: f64,
    }

    impl Fixture {
        fn random(rng: &mut ChaCha8Rng) -> Self {
            let id_rates = IdentifierRates {
                eta_w: 1.0,
                eta_v: 1.0,
                rho: 0.0,
            };
            let identifier = IdentifierNet::from_weights(
                uniform_matrix(rng, 2, 5, 1.0),
                uniform_matrix(rng, 5, 3, 1.0),
                1,
                id_rates,
                HurwitzDecomposition::negative_identity(2),
            );
            let critic = CriticNet::new(
                DVector::from_fn(3, |_, _| rng.random_range(0.1..2.0)),
                QuadraticBasis::new(2),
                0.1,
            );
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.5..1.5));
            let x_d_now = DVector::from_fn(2, |_, _| rng.random_range(-1.5..1.5));
            let x_d_next = DVector::from_fn(2, |_, _| rng.random_range(-1.5..1.5));
            Self {
                identifier,
                critic,
                cost: CostWeights::diagonal(&[0.5, 1.0], &[0.2]).unwrap(),
                e_hat: &x - x_d_now,
                x,
                x_d_next,
                dt: 0.1,
            }
        }

        /// `Δt ûᵀRû + V̂(ê(t+Δt))` with `û` produced by `actor`
        fn objective(&self, actor: &ActorNet) -> f64 {
            let u = actor.act(&self.e_hat);
            let e_next =
                self.identifier
                    .predict_tracking_error(&self.x, &u, &self.x_d_next, self.dt);
            self.dt * u.dot(&(&self.cost.r * &u)) + self.critic.value(&e_next)
        }

        fn bracket(&self, actor: &ActorNet) -> DVector<f64> {
            let u = actor.act(&self.e_hat);
            let e_next =
                self.identifier
                    .predict_tracking_error(&self.x, &u, &self.x_d_next, self.dt);
            let grad = self.critic.value_gradient(&e_next);
            let jac = self.identifier.control_jacobian(&self.x, &u);
            actor
                .bracket_term(&grad, &jac, &self.cost.r, &u, self.dt)
                .unwrap()
        }
    }

    fn flatten(m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_column_slice(m.as_slice())
    }

    #[test]
    fn assembled_gradient_matches_objective_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let fx = Fixture::random(&mut rng);
            let actor = random_actor(&mut rng, 1, 4);
            let grad = actor.gradient(&fx.bracket(&actor), &fx.e_hat);

            let fd_w = central_difference_gradient(
                |w| {
                    let mut a = actor.clone();
                    let wm = DMatrix::from_column_slice(1, 4, w.as_slice());
                    a.set_weights(wm, actor.v().clone());
                    fx.objective(&a)
                },
                &flatten(actor.w()),
                1e-6,
            );
            assert!(relative_error(&flatten(&grad.w), &fd_w) < 1e-4);

            let fd_v = central_difference_gradient(
                |vv| {
                    let mut a = actor.clone();
                    let vm = DMatrix::from_column_slice(4, 2, vv.as_slice());
                    a.set_weights(actor.w().clone(), vm);
                    fx.objective(&a)
                },
                &flatten(actor.v()),
                1e-6,
            );
            assert!(relative_error(&flatten(&grad.v), &fd_v) < 1e-4);
        }
    }

    #[test]
    fn small_descent_step_does_not_increase_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let fx = Fixture::random(&mut rng);
            let actor = random_actor(&mut rng, 1, 4);
            let before = fx.objective(&actor);
            let bracket = fx.bracket(&actor);
            let mut stepped = actor.clone();
            stepped.update(&bracket, &fx.e_hat, 1e-3).unwrap();
            assert!(fx.objective(&stepped) <= before + 1e-15);
        }
    }
}
