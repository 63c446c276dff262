//! Pieces shared by the two-layer identifier and actor networks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// `σ(z) = 2 / (1 + e^(-z)) - 1`, which equals `tanh(z / 2)`.
pub fn bipolar_sigmoid(z: f64) -> f64 {
    // tanh form avoids overflow of e^(-z) for large negative z
    (0.5 * z).tanh()
}

pub fn bipolar_sigmoid_vec(z: &DVector<f64>) -> DVector<f64> {
    z.map(bipolar_sigmoid)
}

/// `dσ/dz` expressed through the activation `s = σ(z)`: `(1 - s²) / 2`.
///
/// The diagonal of `I - Π` with `Π = diag(s²)` is `1 - s²`; the factor one
/// half comes from the bipolar sigmoid's scale.
pub fn sigmoid_slope(s: &DVector<f64>) -> DVector<f64> {
    s.map(|si| 0.5 * (1.0 - si * si))
}

/// Matrix with entries drawn uniformly from `[-scale, scale]`.
pub fn uniform_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    scale: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}
