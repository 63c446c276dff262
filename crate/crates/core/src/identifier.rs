//! Online neural identifier of the residual dynamics `f_c(x) + g(x)u`.
//!
//! The network is `F_i(x, u) = W σ(V [x; u])`. Together with the Hurwitz part
//! `A_c` it gives the one-step state prediction
//! `x̂(t+Δt) = x + Δt (A_c x + F_i(x, u))`, and its input Jacobian carries the
//! critic gradient back to the actor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dynamics::HurwitzDecomposition;
use crate::error::{AicError, Result};
pub use crate::nn::bipolar_sigmoid;
use crate::nn::{bipolar_sigmoid_vec, sigmoid_slope, uniform_matrix};

/// Default half-width of the uniform weight initialisation.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentifierRates {
    /// Output-layer rate `η_i1`.
    pub eta_w: f64,
    /// Hidden-layer rate `η_i2`.
    pub eta_v: f64,
    /// e-modification gain `ρ`.
    pub rho: f64,
}

#[derive(Clone, Debug)]
pub struct IdentifierNet {
    w: DMatrix<f64>,
    v: DMatrix<f64>,
    n_x: usize,
    n_u: usize,
    rates: IdentifierRates,
    a_c: HurwitzDecomposition,
}

impl IdentifierNet {
    pub fn new<R: Rng + ?Sized>(
        n_x: usize,
        n_u: usize,
        hidden: usize,
        rates: IdentifierRates,
        a_c: HurwitzDecomposition,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let v = uniform_matrix(rng, hidden, n_x + n_u, init_scale);
        let w = uniform_matrix(rng, n_x, hidden, init_scale);
        Self::from_weights(w, v, n_u, rates, a_c)
    }

    /// # Panics
    /// On inconsistent shapes.
    pub fn from_weights(
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        n_u: usize,
        rates: IdentifierRates,
        a_c: HurwitzDecomposition,
    ) -> Self {
        let n_x = w.nrows();
        assert_eq!(w.ncols(), v.nrows(), "hidden widths of W and V differ");
        assert_eq!(v.ncols(), n_x + n_u, "V must have n_x + n_u columns");
        assert_eq!(a_c.dim(), n_x, "A_c dimension must equal n_x");
        Self {
            w,
            v,
            n_x,
            n_u,
            rates,
            a_c,
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
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

    pub fn rates(&self) -> IdentifierRates {
        self.rates
    }

    pub fn a_c(&self) -> &HurwitzDecomposition {
        &self.a_c
    }

    pub fn w_norm(&self) -> f64 {
        self.w.norm()
    }

    pub fn v_norm(&self) -> f64 {
        self.v.norm()
    }

    /// `[x; u]`
    pub fn input(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.n_x);
        debug_assert_eq!(u.len(), self.n_u);
        let mut x_bar = DVector::zeros(self.n_x + self.n_u);
        x_bar.rows_mut(0, self.n_x).copy_from(x);
        x_bar.rows_mut(self.n_x, self.n_u).copy_from(u);
        x_bar
    }

    fn hidden_activation(&self, x_bar: &DVector<f64>) -> DVector<f64> {
        bipolar_sigmoid_vec(&(&self.v * x_bar))
    }

    pub fn forward_bar(&self, x_bar: &DVector<f64>) -> DVector<f64> {
        &self.w * self.hidden_activation(x_bar)
    }

    /// `F_i(x, u) = W σ(V [x; u])`
    pub fn forward(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.forward_bar(&self.input(x, u))
    }

    /// `x̂(t+Δt) = x + Δt (A_c x + F_i(x, u))`
    pub fn predict_state(&self, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
        debug_assert!(dt > 0.0);
        x + (self.a_c.apply(x) + self.forward(x, u)) * dt
    }

    /// `ê(t+Δt) = x̂(t+Δt) - x_d(t+Δt)`
    pub fn predict_tracking_error(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_d_next: &DVector<f64>,
        dt: f64,
    ) -> DVector<f64> {
        self.predict_state(x, u, dt) - x_d_next
    }

    /// Expected next state when the command only arrives with probability
    /// `gamma_bar_c` and the plant otherwise sees zero input.
    pub fn mixture_prediction(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        gamma_bar_c: f64,
        dt: f64,
    ) -> DVector<f64> {
        debug_assert!((0.0..=1.0).contains(&gamma_bar_c));
        let with_u = self.predict_state(x, u, dt);
        let without = self.predict_state(x, &DVector::zeros(self.n_u), dt);
        with_u * gamma_bar_c + without * (1.0 - gamma_bar_c)
    }

    /// `∂F_i/∂[x; u] = W σ'(V x̄) V`, shape `n_x × (n_x + n_u)`.
    pub fn input_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let s = self.hidden_activation(&self.input(x, u));
        let slope = sigmoid_slope(&s);
        let mut scaled_v = self.v.clone();
        for (mut row, d) in scaled_v.row_iter_mut().zip(slope.iter()) {
            row *= *d;
        }
        &self.w * scaled_v
    }

    /// Columns of [`input_jacobian`](Self::input_jacobian) belonging to the
    /// control input, shape `n_x × n_u`.
    pub fn control_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.input_jacobian(x, u)
            .columns(self.n_x, self.n_u)
            .into_owned()
    }

    /// Weight increments for one step of the tuning law, given the state
    /// estimation error `x̃ = x - x̂` and the input `x̄` that produced `x̂`.
    ///
    /// `ΔW = -Δt [η_w (A_c⁻ᵀ x̃) σᵀ + ρ‖x̃‖ W]`,
    /// `ΔV = -Δt [η_v (σ' ∘ Wᵀ A_c⁻ᵀ x̃) x̄ᵀ + ρ‖x̃‖ V]`.
    ///
    /// With a Hurwitz `A_c`, `-A_c⁻ᵀ x̃` points along `x̃`, so both terms move
    /// the prediction towards the measurement.
    pub fn weight_increments(
        &self,
        x_tilde: &DVector<f64>,
        x_bar: &DVector<f64>,
        dt: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let s = self.hidden_activation(x_bar);
        let slope = sigmoid_slope(&s);
        let r = self.a_c.solve(x_tilde);
        let leak = self.rates.rho * x_tilde.norm();

        let dw = -(&r * s.transpose() * self.rates.eta_w + &self.w * leak) * dt;
        let back = (self.w.transpose() * &r).component_mul(&slope);
        let dv = -(back * x_bar.transpose() * self.rates.eta_v + &self.v * leak) * dt;
        (dw, dv)
    }

    pub fn update(&mut self, x_tilde: &DVector<f64>, x_bar: &DVector<f64>, dt: f64) -> Result<()> {
        debug_assert!(dt > 0.0);
        let (dw, dv) = self.weight_increments(x_tilde, x_bar, dt);
        self.w += dw;
        self.v += dv;
        if self.w.iter().chain(self.v.iter()).all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(AicError::IdentifierDiverged)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{stream_rng, Stream};
    use crate::gradcheck::{central_difference_jacobian, relative_error};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RATES: IdentifierRates = IdentifierRates {
        eta_w: 0.5,
        eta_v: 0.5,
        rho: 0.0,
    };

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn random_net(seed: u64, n_u: usize, hidden: usize) -> IdentifierNet {
        let mut rng = stream_rng(seed, Stream::Identifier);
        let w = uniform_matrix(&mut rng, 2, hidden, 1.0);
        let vv = uniform_matrix(&mut rng, hidden, 2 + n_u, 1.0);
        IdentifierNet::from_weights(
            w,
            vv,
            n_u,
            RATES,
            HurwitzDecomposition::negative_identity(2),
        )
    }

    fn zero_output_net() -> IdentifierNet {
        let mut net = random_net(1, 1, 4);
        net.w.fill(0.0);
        net
    }

    #[test]
    fn forward_trivial_cases() {
        let net = zero_output_net();
        assert_eq!(net.forward(&v(&[1.0, -2.0]), &v(&[3.0])), v(&[0.0, 0.0]));
        let net = random_net(2, 1, 4);
        assert_eq!(net.forward(&v(&[0.0, 0.0]), &v(&[0.0])), v(&[0.0, 0.0]));
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let net = random_net(3, 2, 5);
        let x = v(&[0.3, -0.7]);
        let u = v(&[1.1, -0.4]);
        let xb = [0.3, -0.7, 1.1, -0.4];
        let mut expected = [0.0; 2];
        for j in 0..5 {
            let z: f64 = (0..4).map(|k| net.v[(j, k)] * xb[k]).sum();
            let s = 2.0 / (1.0 + (-z).exp()) - 1.0;
            for (i, e) in expected.iter_mut().enumerate() {
                *e += net.w[(i, j)] * s;
            }
        }
        let out = net.forward(&x, &u);
        assert_abs_diff_eq!(out[0], expected[0], epsilon = 1e-14);
        assert_abs_diff_eq!(out[1], expected[1], epsilon = 1e-14);
    }

    #[test]
    fn prediction_examples() {
        let net = zero_output_net();
        let p = net.predict_state(&v(&[1.0, 0.0]), &v(&[5.0]), 0.1);
        assert_abs_diff_eq!(p[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0);
        assert_eq!(
            net.predict_state(&v(&[0.0, 0.0]), &v(&[0.0]), 0.1),
            v(&[0.0, 0.0])
        );

        let e = net.predict_tracking_error(&v(&[0.0, 0.0]), &v(&[2.0]), &v(&[0.1, 0.0]), 0.01);
        assert_abs_diff_eq!(e[0], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], 0.0);
    }

    #[test]
    fn mixture_endpoints_and_linearity() {
        let net = random_net(4, 1, 6);
        let x = v(&[0.4, -0.2]);
        let u = v(&[1.5]);
        let dt = 0.01;
        assert_eq!(
            net.mixture_prediction(&x, &u, 1.0, dt),
            net.predict_state(&x, &u, dt)
        );
        assert_eq!(
            net.mixture_prediction(&x, &u, 0.0, dt),
            net.predict_state(&x, &v(&[0.0]), dt)
        );
        let p0 = net.mixture_prediction(&x, &u, 0.0, dt);
        let p1 = net.mixture_prediction(&x, &u, 1.0, dt);
        for g in [0.2, 0.55, 0.9] {
            let pg = net.mixture_prediction(&x, &u, g, dt);
            let line = &p0 + (&p1 - &p0) * g;
            assert!((pg - line).amax() < 1e-15);
        }
    }

    #[test]
    fn zero_error_update_is_identity() {
        let mut net = random_net(5, 1, 6);
        net.rates.rho = 0.3;
        let before = net.clone();
        net.update(&v(&[0.0, 0.0]), &v(&[0.2, 0.1, -1.0]), 0.01)
            .unwrap();
        assert_eq!(net.w, before.w);
        assert_eq!(net.v, before.v);
    }

    #[test]
    fn output_update_is_rank_one_outer_product() {
        let net = random_net(6, 1, 6);
        let x_tilde = v(&[0.3, -0.8]);
        let x_bar = v(&[0.2, 0.1, -1.0]);
        let dt = 0.01;
        let (dw, _) = net.weight_increments(&x_tilde, &x_bar, dt);
        let s = bipolar_sigmoid_vec(&(net.v() * &x_bar));
        let expected = -(net.a_c().solve(&x_tilde) * s.transpose()) * (RATES.eta_w * dt);
        assert!((&dw - expected).amax() < 1e-15);
        let sv = dw.clone().svd(false, false).singular_values;
        assert!(sv[1] <= 1e-12 * sv[0]);
    }

    #[test]
    fn frozen_sample_error_decreases() {
        let mut net = random_net(7, 1, 8);
        net.rates = IdentifierRates {
            eta_w: 50.0,
            eta_v: 50.0,
            rho: 0.0,
        };
        let x = v(&[0.5, -0.3]);
        let u = v(&[0.8]);
        let dt = 0.1;
        let target = v(&[0.7, 0.1]);
        let x_bar = net.input(&x, &u);
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            let x_tilde = &target - net.predict_state(&x, &u, dt);
            let err = x_tilde.norm();
            if err < 1e-12 {
                break;
            }
            assert!(err < last, "error rose from {last} to {err}");
            last = err;
            net.update(&x_tilde, &x_bar, dt).unwrap();
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let net = random_net(100 + trial, 1 + (trial as usize % 2), 6);
            let n_u = net.n_u();
            let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let u = DVector::from_fn(n_u, |_, _| rng.random_range(-2.0..2.0));
            let analytic = net.input_jacobian(&x, &u);
            let numeric =
                central_difference_jacobian(|xb| net.forward_bar(xb), &net.input(&x, &u), 1e-6);
            assert!(relative_error(&analytic, &numeric) < 1e-5);
            let cj = net.control_jacobian(&x, &u);
            assert_eq!(cj.ncols(), n_u);
            assert_eq!(cj, analytic.columns(2, n_u).into_owned());
        }
    }

    #[test]
    fn zero_output_weights_zero_jacobian() {
        let net = zero_output_net();
        assert_eq!(
            net.input_jacobian(&v(&[1.0, 2.0]), &v(&[3.0])),
            DMatrix::zeros(2, 3)
        );
    }

    #[test]
    fn pi_entries_in_unit_interval() {
        let net = random_net(8, 1, 16);
        for k in 0..50 {
            let xb = v(&[k as f64 - 25.0, 0.3 * k as f64, -2.0]);
            let s = bipolar_sigmoid_vec(&(net.v() * xb));
            assert!(s.iter().all(|si| (0.0..=1.0).contains(&(si * si))));
        }
    }

    #[test]
    fn non_finite_error_is_reported() {
        let mut net = random_net(9, 1, 4);
        let err = net
            .update(&v(&[f64::NAN, 0.0]), &v(&[0.1, 0.1, 0.1]), 0.01)
            .unwrap_err();
        assert!(matches!(err, AicError::IdentifierDiverged));
    }
}
