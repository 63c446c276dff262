//! Linear-in-basis value function over the tracking error and its
//! Bernoulli-mixture temporal-difference update.

use nalgebra::{DMatrix, DVector};

use crate::error::{AicError, Result};

/// All degree-two monomials `e_i e_j` with `i ≤ j`, in row-major order.
/// For two states this is `[e₁², e₁e₂, e₂²]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuadraticBasis {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl QuadraticBasis {
    pub fn new(n: usize) -> Self {
        let pairs = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        Self { n, pairs }
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn psi(&self, e: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(e.len(), self.n);
        DVector::from_iterator(self.len(), self.pairs.iter().map(|&(i, j)| e[i] * e[j]))
    }

    /// `∂Ψ/∂e`, shape `m × n`.
    pub fn psi_jacobian(&self, e: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.len(), self.n);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            jac[(k, i)] += e[j];
            jac[(k, j)] += e[i];
        }
        jac
    }

    /// Critic weights for which `W Ψ(e) = eᵀ M e`, `M` symmetric.
    pub fn weights_for_quadratic_form(&self, m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.pairs.iter().map(|&(i, j)| {
                if i == j {
                    m[(i, i)]
                } else {
                    m[(i, j)] + m[(j, i)]
                }
            }),
        )
    }
}

/// Error and effort weights of the quadratic stage cost.
#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostWeights {
    /// Accepts symmetric matrices with a strictly positive diagonal.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for (key, m) in [("q", &q), ("r", &r)] {
            if !m.is_square() || m.is_empty() {
                return Err(AicError::config(key, "must be a non-empty square matrix"));
            }
            if (m - m.transpose()).amax() > 1e-12 {
                return Err(AicError::config(key, "must be symmetric"));
            }
            if m.diagonal().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(AicError::config(key, "diagonal entries must be positive"));
            }
        }
        Ok(Self { q, r })
    }

    pub fn diagonal(q: &[f64], r: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
        )
    }

    /// `(eᵀQe + uᵀRu) Δt`
    pub fn running_cost(&self, e: &DVector<f64>, u: &DVector<f64>, dt: f64) -> f64 {
        debug_assert!(dt > 0.0);
        (e.dot(&(&self.q * e)) + u.dot(&(&self.r * u))) * dt
    }
}

#[derive(Clone, Debug)]
pub struct CriticNet {
    w: DVector<f64>,
    basis: QuadraticBasis,
    eta: f64,
}

impl CriticNet {
    /// # Panics
    /// If `w` does not match the basis length.
    pub fn new(w: DVector<f64>, basis: QuadraticBasis, eta: f64) -> Self {
        assert_eq!(
            w.len(),
            basis.len(),
            "critic weight length must equal basis length"
        );
        Self { w, basis, eta }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn set_weights(&mut self, w: DVector<f64>) {
        assert_eq!(w.len(), self.basis.len());
        self.w = w;
    }

    pub fn basis(&self) -> &QuadraticBasis {
        &self.basis
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn w_norm(&self) -> f64 {
        self.w.norm()
    }

    /// `W Ψ(e)`
    pub fn value(&self, e: &DVector<f64>) -> f64 {
        self.w.dot(&self.basis.psi(e))
    }

    /// `W Ψ'(e)` as a column vector of length `n_x`.
    pub fn value_gradient(&self, e: &DVector<f64>) -> DVector<f64> {
        self.basis.psi_jacobian(e).tr_mul(&self.w)
    }

    /// Bellman residual with the next value averaged over the actuator-pass
    /// and actuator-drop branches.
    pub fn td_error(
        &self,
        cost: f64,
        e_now: &DVector<f64>,
        e_next_with_u: &DVector<f64>,
        e_next_zero_u: &DVector<f64>,
        gamma_bar_c: f64,
    ) -> f64 {
        debug_assert!((0.0..=1.0).contains(&gamma_bar_c));
        cost + gamma_bar_c * self.value(e_next_with_u)
            + (1.0 - gamma_bar_c) * self.value(e_next_zero_u)
            - self.value(e_now)
    }

    /// `W ← W + Δt η td Ψ(e_now)`
    pub fn update(&mut self, td: f64, e_now: &DVector<f64>, dt: f64) -> Result<()> {
        debug_assert!(dt > 0.0);
        self.w += self.basis.psi(e_now) * (dt * self.eta * td);
        if self.w.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(AicError::CriticDiverged)
        }
    }
}
