//! Numerical evaluation of the localisation scale factor `z_w` and its weight
//! derivatives, by midpoint quadrature on aligned grids or by Monte-Carlo
//! sampling from the fused density.

use rand::Rng;

use crate::error::{FusionError, Result};
use crate::model::{GridDensity, LocalisationDensity};
use crate::scalar::{pow_weight, CompensatedSum, Real};

/// Largest tolerated fraction of rejected Monte-Carlo draws.
pub const MAX_REJECTION_FRACTION: f64 = 0.1;

/// `z_w` together with its first and second derivatives in `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleDerivatives<T> {
    pub z: T,
    pub dz: T,
    pub d2z: T,
}

fn aligned<T: Real>(rho_i: &GridDensity<T>, rho_j: &GridDensity<T>) -> Result<()> {
    if rho_i.layout().is_aligned(rho_j.layout()) {
        Ok(())
    } else {
        Err(FusionError::MisalignedGrids)
    }
}

/// `z_w`, `z'_w` and `z''_w` in a single pass over the cells.
///
/// Cells where either density vanishes are dropped from the derivative
/// integrands (their limit is zero inside the open interval); the scale
/// itself follows the `0^0 = 1` convention at the endpoints.
pub fn grid_scale_derivatives<T: Real>(
    rho_i: &GridDensity<T>,
    rho_j: &GridDensity<T>,
    omega: T,
) -> Result<ScaleDerivatives<T>> {
    aligned(rho_i, rho_j)?;
    let w_i = T::one() - omega;
    let mut z = CompensatedSum::new();
    let mut dz = CompensatedSum::new();
    let mut d2z = CompensatedSum::new();
    for (&a, &b) in rho_i.values().iter().zip(rho_j.values()) {
        if a > T::zero() && b > T::zero() {
            let log_ratio = b.ln() - a.ln();
            let base = (w_i * a.ln() + omega * b.ln()).exp();
            z.add(base);
            dz.add(base * log_ratio);
            d2z.add(base * log_ratio * log_ratio);
        } else {
            z.add(pow_weight(a, w_i) * pow_weight(b, omega));
        }
    }
    let vol = rho_i.layout().cell_volume();
    Ok(ScaleDerivatives {
        z: z.value() * vol,
        dz: dz.value() * vol,
        d2z: d2z.value() * vol,
    })
}

/// Midpoint-rule `int rho_i^(1-w) rho_j^w`.
pub fn grid_z_omega<T: Real>(rho_i: &GridDensity<T>, rho_j: &GridDensity<T>, omega: T) -> Result<T> {
    Ok(grid_scale_derivatives(rho_i, rho_j, omega)?.z)
}

/// Midpoint-rule `int rho_i^(1-w) rho_j^w log(rho_j / rho_i)`.
pub fn grid_z_prime<T: Real>(rho_i: &GridDensity<T>, rho_j: &GridDensity<T>, omega: T) -> Result<T> {
    Ok(grid_scale_derivatives(rho_i, rho_j, omega)?.dz)
}

/// Midpoint-rule `int rho_i^(1-w) rho_j^w log(rho_j / rho_i)^2`.
pub fn grid_z_double_prime<T: Real>(
    rho_i: &GridDensity<T>,
    rho_j: &GridDensity<T>,
    omega: T,
) -> Result<T> {
    Ok(grid_scale_derivatives(rho_i, rho_j, omega)?.d2z)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub rejected: usize,
}

/// `z_w * mean((log rho_j(x) / rho_i(x))^2)` over `samples` draws
/// `x ~ rho_omega`, an unbiased estimate of `z''_w`.
///
/// Draws where either input density vanishes are rejected and redrawn; more
/// than 10% rejections is an error.
pub fn mc_z_double_prime<T: Real, R: Rng + ?Sized>(
    rho_i: &LocalisationDensity<T>,
    rho_j: &LocalisationDensity<T>,
    rho_omega: &LocalisationDensity<T>,
    z_omega: T,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate<T>> {
    if samples == 0 {
        return Err(FusionError::InvalidParameter("sample count must be positive".into()));
    }
    let d = rho_i.dim();
    for other in [rho_j.dim(), rho_omega.dim()] {
        if other != d {
            return Err(FusionError::DimensionMismatch { expected: d, actual: other });
        }
    }
    let max_rejected = (samples as f64 * MAX_REJECTION_FRACTION).floor() as usize;
    let mut rejected = 0usize;
    let mut sum = CompensatedSum::new();
    let mut sum_sq = CompensatedSum::new();
    let mut accepted = 0usize;
    while accepted < samples {
        let x = rho_omega.sample(rng);
        let (li, lj) = (rho_i.log_evaluate(&x), rho_j.log_evaluate(&x));
        if !li.is_finite_value() || !lj.is_finite_value() {
            rejected += 1;
            if rejected > max_rejected {
                return Err(FusionError::TooManyRejections {
                    rejected,
                    drawn: accepted + rejected,
                });
            }
            continue;
        }
        let lr = lj - li;
        let term = lr * lr;
        sum.add(term);
        sum_sq.add(term * term);
        accepted += 1;
    }
    let n = T::from_usize_lossy(samples);
    let mean = sum.value() / n;
    let var = if samples > 1 {
        ((sum_sq.value() - n * mean * mean) / (n - T::one())).max(T::zero())
    } else {
        T::zero()
    };
    Ok(McEstimate {
        value: z_omega * mean,
        std_error: z_omega * (var / n).sqrt(),
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianDensity, GridLayout};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> (GridDensity<f64>, GridDensity<f64>) {
        let a = GaussianDensity::isotropic(DVector::from_vec(vec![0.0, 0.0]), 1.0).unwrap();
        let b = GaussianDensity::isotropic(DVector::from_vec(vec![2.0, 0.0]), 1.0).unwrap();
        let layout = GridLayout::covering(&[&a, &b], 6.0, 201).unwrap();
        (
            GridDensity::discretize(&a, layout.clone()).unwrap(),
            GridDensity::discretize(&b, layout).unwrap(),
        )
    }

    #[test]
    fn identical_grids() {
        let (a, _) = pair();
        let d = grid_scale_derivatives(&a, &a, 0.4).unwrap();
        assert_relative_eq!(d.z, 1.0, epsilon = 1e-9);
        assert_eq!(d.dz, 0.0);
        assert_eq!(d.d2z, 0.0);
    }

    #[test]
    fn endpoint_and_gaussian_value() {
        let (a, b) = pair();
        assert_relative_eq!(grid_z_omega(&a, &b, 1.0).unwrap(), 1.0, epsilon = 1e-9);
        let z = grid_z_omega(&a, &b, 0.5).unwrap();
        assert!((z - 0.6065306597126334).abs() < 1e-3);
    }

    #[test]
    fn derivative_antisymmetry_and_sign() {
        let (a, b) = pair();
        let p = grid_z_prime(&a, &b, 0.3).unwrap();
        let q = grid_z_prime(&b, &a, 0.7).unwrap();
        assert_relative_eq!(p, -q, max_relative = 1e-10);
        assert!(grid_z_double_prime(&a, &b, 0.3).unwrap() >= 0.0);
    }

    #[test]
    fn misaligned_grids_rejected() {
        let (a, _) = pair();
        let layout = GridLayout::new(vec![0.0, 0.0], vec![0.1, 0.1], vec![10, 10]).unwrap();
        let c = GridDensity::new(layout, vec![1.0; 100]).unwrap();
        assert_eq!(grid_z_omega(&a, &c, 0.5), Err(FusionError::MisalignedGrids));
    }

    #[test]
    fn zero_cells_are_excluded() {
        let layout = GridLayout::new(vec![0.5], vec![1.0], vec![4]).unwrap();
        let a = GridDensity::new(layout.clone(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let b = GridDensity::new(layout, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let d = grid_scale_derivatives(&a, &b, 0.5).unwrap();
        assert_relative_eq!(d.z, 0.5, epsilon = 1e-15);
        assert_eq!(d.dz, 0.0);
        assert_relative_eq!(grid_z_omega(&a, &b, 0.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn monte_carlo_identical_inputs_vanish() {
        let g: LocalisationDensity<f64> =
            GaussianDensity::isotropic(DVector::zeros(2), 1.0).unwrap().into();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = mc_z_double_prime(&g, &g, &g, 1.0, 100, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn monte_carlo_rejects_disjoint_support() {
        let layout = GridLayout::new(vec![0.5], vec![1.0], vec![4]).unwrap();
        let a = GridDensity::new(layout.clone(), vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let b = GridDensity::new(layout.clone(), vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let wide = GridDensity::new(layout, vec![0.25; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = mc_z_double_prime(&a.into(), &b.into(), &wide.into(), 0.5, 200, &mut rng).unwrap_err();
        assert!(matches!(err, FusionError::TooManyRejections { .. }));
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let a: LocalisationDensity<f64> =
            GaussianDensity::isotropic(DVector::from_vec(vec![0.0, 0.0]), 1.0).unwrap().into();
        let b: LocalisationDensity<f64> =
            GaussianDensity::isotropic(DVector::from_vec(vec![2.0, 0.0]), 1.0).unwrap().into();
        let w: LocalisationDensity<f64> =
            GaussianDensity::isotropic(DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap().into();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            mc_z_double_prime(&a, &b, &w, 0.6, 500, &mut rng).unwrap()
        };
        assert_eq!(run(9), run(9));
    }
}
