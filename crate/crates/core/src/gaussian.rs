//! Closed-form Gaussian machinery: covariance-intersection style EMD
//! parameters, the EMD scale factor, Gaussian KLD and test covariances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{FusionError, Result};
use crate::model::{Divergence, GaussianDensity, LocalisationDensity};
use crate::scalar::Real;

fn check_pair<T: Real>(a: &GaussianDensity<T>, b: &GaussianDensity<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(FusionError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

fn check_weight<T: Real>(omega: T) -> Result<()> {
    if !(omega >= T::zero() && omega <= T::one()) {
        return Err(FusionError::InvalidParameter(format!(
            "weight {} outside [0, 1]",
            omega.as_f64()
        )));
    }
    Ok(())
}

/// Fused information vector and matrix at weight `omega`.
fn fused_information<T: Real>(
    rho_i: &GaussianDensity<T>,
    rho_j: &GaussianDensity<T>,
    omega: T,
) -> (DMatrix<T>, DVector<T>) {
    let w_i = T::one() - omega;
    let info = rho_i.precision() * w_i + rho_j.precision() * omega;
    let info = (&info + info.transpose()) * T::lit(0.5);
    let vec = rho_i.precision() * rho_i.mean() * w_i + rho_j.precision() * rho_j.mean() * omega;
    (info, vec)
}

/// Normalized geometric mean `rho_i^(1-w) rho_j^w / z`, itself Gaussian with
/// `C_w = ((1-w) C_i^-1 + w C_j^-1)^-1` and
/// `m_w = C_w ((1-w) C_i^-1 m_i + w C_j^-1 m_j)`.
pub fn gaussian_emd_params<T: Real>(
    rho_i: &GaussianDensity<T>,
    rho_j: &GaussianDensity<T>,
    omega: T,
) -> Result<GaussianDensity<T>> {
    check_pair(rho_i, rho_j)?;
    check_weight(omega)?;
    if omega == T::zero() {
        return Ok(rho_i.clone());
    }
    if omega == T::one() {
        return Ok(rho_j.clone());
    }
    let (info, vec) = fused_information(rho_i, rho_j, omega);
    let chol = info
        .cholesky()
        .ok_or_else(|| FusionError::SingularCovariance("fused information matrix".into()))?;
    let mean = chol.solve(&vec);
    let cov = chol.inverse();
    let cov = (&cov + cov.transpose()) * T::lit(0.5);
    GaussianDensity::new(mean, cov)
}

/// Scale factor `z_w = int rho_i^(1-w) rho_j^w dx` in closed form.
///
/// Returned in `(0, 1]`; exactly one at `omega` in `{0, 1}`.
pub fn gaussian_emd_scale<T: Real>(
    rho_i: &GaussianDensity<T>,
    rho_j: &GaussianDensity<T>,
    omega: T,
) -> Result<T> {
    Ok(gaussian_log_emd_scale(rho_i, rho_j, omega)?.exp())
}

/// Natural log of [`gaussian_emd_scale`].
pub fn gaussian_log_emd_scale<T: Real>(
    rho_i: &GaussianDensity<T>,
    rho_j: &GaussianDensity<T>,
    omega: T,
) -> Result<T> {
    check_pair(rho_i, rho_j)?;
    check_weight(omega)?;
    if omega == T::zero() || omega == T::one() {
        return Ok(T::zero());
    }
    let w_i = T::one() - omega;
    let (info, vec) = fused_information(rho_i, rho_j, omega);
    let chol = info
        .cholesky()
        .ok_or_else(|| FusionError::SingularCovariance("fused information matrix".into()))?;
    let fused_mean = chol.solve(&vec);
    let log_det_info = chol.l().diagonal().iter().fold(T::zero(), |acc, &x| acc + x.ln()) * T::lit(2.0);
    let half = T::lit(0.5);
    // log|C_i^-1|^{(1-w)/2} + log|C_j^-1|^{w/2} + log|C_w|^{1/2}
    let log_norm = -(w_i * rho_i.log_det() + omega * rho_j.log_det() + log_det_info) * half;
    let quad_i = rho_i.mean().dot(&(rho_i.precision() * rho_i.mean()));
    let quad_j = rho_j.mean().dot(&(rho_j.precision() * rho_j.mean()));
    let quad_w = vec.dot(&fused_mean);
    let exponent = -(w_i * quad_i + omega * quad_j - quad_w) * half;
    Ok((log_norm + exponent).min(T::zero()))
}

/// `D(p || q)` between Gaussians in nats.
pub fn gaussian_kld<T: Real>(p: &GaussianDensity<T>, q: &GaussianDensity<T>) -> Result<T> {
    check_pair(p, q)?;
    let diff = p.mean() - q.mean();
    let maha = diff.dot(&(q.precision() * &diff));
    let trace = (q.precision() * p.covariance()).trace();
    let d = T::from_usize_lossy(p.dim());
    let kld = (q.log_det() - p.log_det() + maha + trace - d) * T::lit(0.5);
    Ok(kld.max(T::zero()))
}

/// Overall size of a rotated diagonal covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceScale<T> {
    /// Fixed determinant `sigma_1^2 sigma_2^2`.
    Determinant(T),
    /// Fixed major-axis variance `sigma_1^2`.
    MajorVariance(T),
}

/// `R(phi) diag(s1, s2) R(phi)^T` with condition number `s1 / s2 = kappa`.
pub fn rotated_covariance<T: Real>(kappa: T, scale: CovarianceScale<T>, phi: T) -> Result<DMatrix<T>> {
    if !(kappa >= T::one()) || !kappa.is_finite_value() {
        return Err(FusionError::InvalidParameter(format!(
            "condition number {} must be at least 1",
            kappa.as_f64()
        )));
    }
    let (major, minor) = match scale {
        CovarianceScale::Determinant(det) => {
            if !(det > T::zero()) {
                return Err(FusionError::InvalidParameter("determinant must be positive".into()));
            }
            ((kappa * det).sqrt(), (det / kappa).sqrt())
        }
        CovarianceScale::MajorVariance(v) => {
            if !(v > T::zero()) {
                return Err(FusionError::InvalidParameter("variance must be positive".into()));
            }
            (v, v / kappa)
        }
    };
    let (s, c) = phi.sin_cos();
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![major, minor]));
    let cov = &rot * diag * rot.transpose();
    Ok((&cov + cov.transpose()) * T::lit(0.5))
}

/// Rotated covariance with determinant `det_sigma` and condition number `kappa`.
pub fn make_rotated_covariance<T: Real>(kappa: T, det_sigma: T, phi: T) -> Result<DMatrix<T>> {
    rotated_covariance(kappa, CovarianceScale::Determinant(det_sigma), phi)
}

/// `count` independent draws from `rho`.
pub fn gaussian_sample<T: Real, R: Rng + ?Sized>(
    rho: &GaussianDensity<T>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<DVector<T>>> {
    if count == 0 {
        return Err(FusionError::InvalidParameter("sample count must be positive".into()));
    }
    Ok((0..count).map(|_| rho.sample(rng)).collect())
}

impl<T: Real> Divergence<T> for GaussianDensity<T> {
    fn divergence(&self, other: &Self) -> Result<T> {
        gaussian_kld(self, other)
    }
}

impl<T: Real> LocalisationDensity<T> {
    /// `D(self || other)`; both densities must share a representation.
    pub fn kl_divergence(&self, other: &Self) -> Result<T> {
        match (self, other) {
            (Self::Gaussian(p), Self::Gaussian(q)) => gaussian_kld(p, q),
            (Self::Grid(p), Self::Grid(q)) => p.kl_divergence(q),
            _ => Err(FusionError::IncompatibleRepresentations),
        }
    }
}
