//! Shared oracles for the integration and acceptance suites.
//!
//! These implement the defining update equations literally, with explicit
//! state-dimension inverses, independent of the production gain-form path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Literal information-form measurement update:
///
/// ```text
/// Sigma_post = [A' Q^-1 A + Sigma_prior^-1]^-1
/// K          = Sigma_post A' Q^-1
/// mu_post    = mu_prior + K (z - A mu_prior)
/// ```
pub fn information_form_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q_diag: &[f64],
    obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let q_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        q_diag.len(),
        q_diag.iter().map(|q| 1.0 / q),
    ));
    let cov_inv = cov.clone().try_inverse().expect("prior invertible");
    let info = a.transpose() * &q_inv * a + cov_inv;
    let cov_post = info.try_inverse().expect("information matrix invertible");
    let k = &cov_post * a.transpose() * &q_inv;
    let mean_post = mean + &k * (obs - a * mean);
    (mean_post, cov_post)
}

/// Batch gain-form update computed with plain dense algebra (`try_inverse`),
/// used as the second route for sequential-vs-batch comparisons.
pub fn batch_gain_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q_diag: &[f64],
    obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let q = DMatrix::from_diagonal(&DVector::from_row_slice(q_diag));
    let s = a * cov * a.transpose() + q;
    let s_inv = s.try_inverse().expect("innovation invertible");
    let k = cov * a.transpose() * s_inv;
    let mean_post = mean + &k * (obs - a * mean);
    let n = cov.nrows();
    let joseph = DMatrix::identity(n, n) - &k * a;
    let cov_post = &joseph * cov * joseph.transpose()
        + &k * DMatrix::from_diagonal(&DVector::from_row_slice(q_diag)) * k.transpose();
    (mean_post, cov_post)
}

/// Random symmetric positive-definite matrix with moderate conditioning.
pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let w = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &w * w.transpose() + DMatrix::identity(n, n) * (0.5 + rng.random_range(0.0..1.0))
}

pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn relative_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
