//! Domain types for finite-set distributions: cardinality pmfs, localisation
//! densities and the Bernoulli / Poisson / IID-cluster families.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{FusionError, Result};
use crate::scalar::{compensated_sum, Real};

/// Largest covariance condition number accepted by [`GaussianDensity::new`].
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

/// Tail mass tolerated when a Poisson pmf is truncated at `n_max`.
pub const POISSON_TAIL_TOLERANCE: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Cardinality
// ---------------------------------------------------------------------------

/// Probability mass function over object counts `0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CardinalityPmf<T> {
    probs: Vec<T>,
}

impl<T: Real> CardinalityPmf<T> {
    /// Validates nonnegativity and unit mass (absolute tolerance 1e-10).
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(FusionError::InvalidPmf("empty support".into()));
        }
        if let Some(n) = probs
            .iter()
            .position(|&p| !p.is_finite_value() || p < T::zero())
        {
            return Err(FusionError::InvalidPmf(format!(
                "entry {n} is negative or not finite"
            )));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - T::one()).abs() > T::tol(1e-10) {
            return Err(FusionError::InvalidPmf(format!(
                "entries sum to {}",
                total.as_f64()
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights into a pmf.
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        if weights.iter().any(|&w| !w.is_finite_value() || w < T::zero()) {
            return Err(FusionError::InvalidPmf(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total = compensated_sum(weights.iter().copied());
        if total <= T::zero() {
            return Err(FusionError::InvalidPmf("weights sum to zero".into()));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Binomial pmf `B(n; trials, success)`.
    pub fn binomial(trials: usize, success: T) -> Result<Self> {
        if !(success >= T::zero() && success <= T::one()) {
            return Err(FusionError::InvalidParameter(format!(
                "binomial success probability {} outside [0, 1]",
                success.as_f64()
            )));
        }
        let mut probs = Vec::with_capacity(trials + 1);
        let log_fact = log_factorials::<T>(trials);
        for n in 0..=trials {
            let log_choose = log_fact[trials] - log_fact[n] - log_fact[trials - n];
            let k = T::from_usize_lossy(n);
            let rest = T::from_usize_lossy(trials - n);
            let lp = log_choose
                + crate::scalar::log_pow_weight(success, k)
                + crate::scalar::log_pow_weight(T::one() - success, rest);
            probs.push(if lp.is_finite_value() { lp.exp() } else { T::zero() });
        }
        Self::from_weights(probs)
    }

    /// Poisson pmf truncated at `n_max` and renormalized.
    pub fn poisson(lambda: T, n_max: usize) -> Result<Self> {
        let (raw, _) = poisson_partial(lambda, n_max)?;
        Self::from_weights(raw)
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// Probability of `n` objects; zero beyond the stored support.
    pub fn prob(&self, n: usize) -> T {
        self.probs.get(n).copied().unwrap_or_else(T::zero)
    }

    pub fn mean(&self) -> T {
        compensated_sum(
            self.probs
                .iter()
                .enumerate()
                .map(|(n, &p)| T::from_usize_lossy(n) * p),
        )
    }

    /// Most probable count (smallest `n` on ties).
    pub fn map_estimate(&self) -> usize {
        let mut best = 0;
        for (n, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = n;
            }
        }
        best
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > T::zero())
            .map(|(n, _)| n)
    }

    /// Copy zero-padded to `n_max`; never truncates.
    pub fn padded(&self, n_max: usize) -> Self {
        let mut probs = self.probs.clone();
        if probs.len() < n_max + 1 {
            probs.resize(n_max + 1, T::zero());
        }
        Self { probs }
    }

    /// Kullback-Leibler divergence `D(self || other)` in nats.
    pub fn kl_divergence(&self, other: &Self) -> T {
        let len = self.probs.len().max(other.probs.len());
        let mut acc = crate::scalar::CompensatedSum::new();
        for n in 0..len {
            let p = self.prob(n);
            if p == T::zero() {
                continue;
            }
            let q = other.prob(n);
            if q == T::zero() {
                return T::lit(f64::INFINITY);
            }
            acc.add(p * (p / q).ln());
        }
        acc.value()
    }
}

pub(crate) fn log_factorials<T: Real>(n_max: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n_max + 1);
    let mut acc = T::zero();
    out.push(acc);
    for k in 1..=n_max {
        acc += T::from_usize_lossy(k).ln();
        out.push(acc);
    }
    out
}

/// Unnormalized Poisson probabilities on `0..=n_max` and the truncated tail.
fn poisson_partial<T: Real>(lambda: T, n_max: usize) -> Result<(Vec<T>, T)> {
    if !lambda.is_finite_value() || lambda < T::zero() {
        return Err(FusionError::InvalidParameter(format!(
            "Poisson rate {} must be finite and nonnegative",
            lambda.as_f64()
        )));
    }
    if n_max < 1 {
        return Err(FusionError::InvalidParameter("n_max must be at least 1".into()));
    }
    let probs = poisson_probs(lambda, n_max);
    let tail = T::one() - compensated_sum(probs.iter().copied());
    if tail > T::tol(POISSON_TAIL_TOLERANCE) {
        return Err(FusionError::TruncationTooAggressive {
            n_max,
            tail: tail.as_f64(),
        });
    }
    Ok((probs, tail.max(T::zero())))
}

fn poisson_probs<T: Real>(lambda: T, n_max: usize) -> Vec<T> {
    let mut probs = vec![T::zero(); n_max + 1];
    if lambda == T::zero() {
        probs[0] = T::one();
        return probs;
    }
    let log_fact = log_factorials::<T>(n_max);
    let log_lambda = lambda.ln();
    for (n, p) in probs.iter_mut().enumerate() {
        *p = (-lambda + T::from_usize_lossy(n) * log_lambda - log_fact[n]).exp();
    }
    probs
}

/// Exact (untruncated) Poisson probability of `n` objects.
pub fn poisson_prob<T: Real>(lambda: T, n: usize) -> T {
    if lambda == T::zero() {
        return if n == 0 { T::one() } else { T::zero() };
    }
    let log_fact = log_factorials::<T>(n);
    (-lambda + T::from_usize_lossy(n) * lambda.ln() - log_fact[n]).exp()
}

/// Truncation point used when a Poisson pmf is materialized without an
/// explicit `n_max`: `max(30, ceil(lambda + 10 sqrt(lambda)))`.
pub fn default_poisson_n_max(lambda: f64) -> usize {
    let wide = (lambda + 10.0 * lambda.max(0.0).sqrt()).ceil();
    30usize.max(wide as usize)
}

// ---------------------------------------------------------------------------
// Gaussian localisation
// ---------------------------------------------------------------------------

/// Multivariate normal density with cached precision and Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity<T: Real> {
    mean: DVector<T>,
    covariance: DMatrix<T>,
    precision: DMatrix<T>,
    chol_lower: DMatrix<T>,
    log_det: T,
}

impl<T: Real> GaussianDensity<T> {
    pub fn new(mean: DVector<T>, covariance: DMatrix<T>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(FusionError::InvalidDensity("zero-dimensional Gaussian".into()));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(FusionError::DimensionMismatch {
                expected: d,
                actual: covariance.nrows(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|x| !x.is_finite_value()) {
            return Err(FusionError::InvalidDensity("non-finite Gaussian parameters".into()));
        }
        let scale = covariance.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        for r in 0..d {
            for c in (r + 1)..d {
                if (covariance[(r, c)] - covariance[(c, r)]).abs() > T::tol(1e-12) * scale {
                    return Err(FusionError::InvalidDensity(
                        "covariance is not symmetric".into(),
                    ));
                }
            }
        }
        let covariance = (&covariance + covariance.transpose()) * T::lit(0.5);
        let eig = SymmetricEigen::new(covariance.clone());
        let lo = eig.eigenvalues.iter().fold(T::lit(f64::INFINITY), |m, &x| m.min(x));
        let hi = eig.eigenvalues.iter().fold(T::zero(), |m, &x| m.max(x));
        if lo <= T::zero() {
            return Err(FusionError::SingularCovariance(format!(
                "smallest eigenvalue {}",
                lo.as_f64()
            )));
        }
        if hi / lo > T::lit(MAX_CONDITION_NUMBER) {
            return Err(FusionError::SingularCovariance(format!(
                "condition number {:e}",
                (hi / lo).as_f64()
            )));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| FusionError::SingularCovariance("Cholesky failed".into()))?;
        let chol_lower = chol.l();
        let log_det = chol_lower
            .diagonal()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x.ln())
            * T::lit(2.0);
        let precision = chol.inverse();
        let precision = (&precision + precision.transpose()) * T::lit(0.5);
        Ok(Self {
            mean,
            covariance,
            precision,
            chol_lower,
            log_det,
        })
    }

    /// `N(mean, variance * I)`.
    pub fn isotropic(mean: DVector<T>, variance: T) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<T> {
        &self.precision
    }

    /// Log-determinant of the covariance.
    pub fn log_det(&self) -> T {
        self.log_det
    }

    pub fn log_pdf(&self, x: &DVector<T>) -> T {
        let diff = x - &self.mean;
        let maha = diff.dot(&(&self.precision * &diff));
        let d = T::from_usize_lossy(self.dim());
        -(d * (T::two_pi()).ln() + self.log_det + maha) * T::lit(0.5)
    }

    pub fn pdf(&self, x: &DVector<T>) -> T {
        self.log_pdf(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        let z = DVector::from_fn(self.dim(), |_, _| T::sample_standard_normal(rng));
        &self.mean + &self.chol_lower * z
    }
}

// ---------------------------------------------------------------------------
// Grid localisation
// ---------------------------------------------------------------------------

/// Axis-aligned lattice of cell centres: centre of cell `i` along axis `k` is
/// `origin[k] + i * cell_size[k]`. Values are stored row-major (last axis
/// fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout<T> {
    origin: Vec<T>,
    cell_size: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Real> GridLayout<T> {
    pub fn new(origin: Vec<T>, cell_size: Vec<T>, shape: Vec<usize>) -> Result<Self> {
        let d = origin.len();
        if d == 0 || d > 3 {
            return Err(FusionError::InvalidDensity(format!(
                "grid dimension {d} not in 1..=3"
            )));
        }
        if cell_size.len() != d || shape.len() != d {
            return Err(FusionError::DimensionMismatch {
                expected: d,
                actual: cell_size.len().min(shape.len()),
            });
        }
        if cell_size.iter().any(|&h| !(h > T::zero()) || !h.is_finite_value()) {
            return Err(FusionError::InvalidDensity("cell sizes must be positive".into()));
        }
        if origin.iter().any(|x| !x.is_finite_value()) {
            return Err(FusionError::InvalidDensity("origin must be finite".into()));
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(FusionError::InvalidDensity("empty grid axis".into()));
        }
        Ok(Self {
            origin,
            cell_size,
            shape,
        })
    }

    /// Layout covering `mean ± sigmas * sd` of every density on each axis with
    /// `points` cell centres per axis.
    pub fn covering(densities: &[&GaussianDensity<T>], sigmas: T, points: usize) -> Result<Self> {
        let first = densities
            .first()
            .ok_or_else(|| FusionError::InvalidParameter("no densities to cover".into()))?;
        let d = first.dim();
        if points < 2 {
            return Err(FusionError::InvalidParameter("need at least two points per axis".into()));
        }
        let mut lo = vec![T::lit(f64::INFINITY); d];
        let mut hi = vec![T::lit(f64::NEG_INFINITY); d];
        for g in densities {
            if g.dim() != d {
                return Err(FusionError::DimensionMismatch {
                    expected: d,
                    actual: g.dim(),
                });
            }
            for k in 0..d {
                let half = sigmas * g.covariance()[(k, k)].sqrt();
                lo[k] = lo[k].min(g.mean()[k] - half);
                hi[k] = hi[k].max(g.mean()[k] + half);
            }
        }
        let steps = T::from_usize_lossy(points - 1);
        let cell_size = lo.iter().zip(&hi).map(|(&a, &b)| (b - a) / steps).collect();
        Self::new(lo, cell_size, vec![points; d])
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn origin(&self) -> &[T] {
        &self.origin
    }

    pub fn cell_size(&self) -> &[T] {
        &self.cell_size
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn cell_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn cell_volume(&self) -> T {
        self.cell_size.iter().fold(T::one(), |v, &h| v * h)
    }

    /// Centre of the cell with flat (row-major) index `flat`.
    pub fn centre(&self, flat: usize) -> DVector<T> {
        let d = self.dim();
        let mut rem = flat;
        let mut out = DVector::zeros(d);
        for k in (0..d).rev() {
            let i = rem % self.shape[k];
            rem /= self.shape[k];
            out[k] = self.origin[k] + T::from_usize_lossy(i) * self.cell_size[k];
        }
        out
    }

    /// Flat index of the cell containing `x`, if inside the lattice.
    pub fn locate(&self, x: &DVector<T>) -> Option<usize> {
        let half = T::lit(0.5);
        let mut flat = 0usize;
        for k in 0..self.dim() {
            let t = (x[k] - self.origin[k]) / self.cell_size[k] + half;
            if !(t >= T::zero()) {
                return None;
            }
            let i = t.floor().as_f64() as usize;
            if i >= self.shape[k] {
                return None;
            }
            flat = flat * self.shape[k] + i;
        }
        Some(flat)
    }

    pub fn is_aligned(&self, other: &Self) -> bool {
        if self.shape != other.shape {
            return false;
        }
        let close = |a: &[T], b: &[T]| {
            a.iter().zip(b).all(|(&x, &y)| {
                (x - y).abs() <= T::tol(1e-12) * (T::one() + x.abs().max(y.abs()))
            })
        };
        close(&self.origin, &other.origin) && close(&self.cell_size, &other.cell_size)
    }
}

/// Piecewise-constant density on a [`GridLayout`], integrated by the midpoint
/// rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity<T> {
    layout: GridLayout<T>,
    values: Vec<T>,
}

impl<T: Real> GridDensity<T> {
    /// Values are rescaled to unit mass; a mass more than 1% away from one is
    /// rejected.
    pub fn new(layout: GridLayout<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.cell_count() {
            return Err(FusionError::DimensionMismatch {
                expected: layout.cell_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|&v| !v.is_finite_value() || v < T::zero()) {
            return Err(FusionError::InvalidDensity(
                "grid values must be finite and nonnegative".into(),
            ));
        }
        let mass = compensated_sum(values.iter().copied()) * layout.cell_volume();
        let off = (mass - T::one()).abs();
        let values = if off <= T::lit(0.01) {
            values.into_iter().map(|v| v / mass).collect()
        } else {
            return Err(FusionError::InvalidDensity(format!(
                "grid mass {} too far from one",
                mass.as_f64()
            )));
        };
        Ok(Self { layout, values })
    }

    /// Samples `f` at every cell centre.
    pub fn from_fn(layout: GridLayout<T>, f: impl Fn(&DVector<T>) -> T) -> Result<Self> {
        let values = (0..layout.cell_count()).map(|i| f(&layout.centre(i))).collect();
        Self::new(layout, values)
    }

    pub fn discretize(gaussian: &GaussianDensity<T>, layout: GridLayout<T>) -> Result<Self> {
        if gaussian.dim() != layout.dim() {
            return Err(FusionError::DimensionMismatch {
                expected: layout.dim(),
                actual: gaussian.dim(),
            });
        }
        Self::from_fn(layout, |x| gaussian.pdf(x))
    }

    pub fn layout(&self) -> &GridLayout<T> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn mass(&self) -> T {
        compensated_sum(self.values.iter().copied()) * self.layout.cell_volume()
    }

    pub fn evaluate(&self, x: &DVector<T>) -> T {
        self.layout
            .locate(x)
            .map(|i| self.values[i])
            .unwrap_or_else(T::zero)
    }

    /// Uniform draw inside a cell picked with probability proportional to
    /// its value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        let total = compensated_sum(self.values.iter().copied());
        let target = T::sample_unit(rng) * total;
        let mut acc = T::zero();
        let mut pick = self.values.len() - 1;
        for (i, &v) in self.values.iter().enumerate() {
            acc += v;
            if v > T::zero() && acc > target {
                pick = i;
                break;
            }
        }
        let mut x = self.layout.centre(pick);
        let half = T::lit(0.5);
        for k in 0..x.len() {
            x[k] += (T::sample_unit(rng) - half) * self.layout.cell_size[k];
        }
        x
    }

    /// Midpoint-rule `D(self || other)`.
    pub fn kl_divergence(&self, other: &Self) -> Result<T> {
        if !self.layout.is_aligned(&other.layout) {
            return Err(FusionError::MisalignedGrids);
        }
        let mut acc = crate::scalar::CompensatedSum::new();
        for (&p, &q) in self.values.iter().zip(&other.values) {
            if p == T::zero() {
                continue;
            }
            if q == T::zero() {
                return Ok(T::lit(f64::INFINITY));
            }
            acc.add(p * (p / q).ln());
        }
        Ok(acc.value() * self.layout.cell_volume())
    }
}

// ---------------------------------------------------------------------------
// Localisation union and finite-set families
// ---------------------------------------------------------------------------

/// Single-object density of a finite-set distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalisationDensity<T: Real> {
    Gaussian(GaussianDensity<T>),
    Grid(GridDensity<T>),
}

impl<T: Real> LocalisationDensity<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::Grid(g) => g.dim(),
        }
    }

    pub fn evaluate(&self, x: &DVector<T>) -> T {
        match self {
            Self::Gaussian(g) => g.pdf(x),
            Self::Grid(g) => g.evaluate(x),
        }
    }

    /// Natural log of the density; negative infinity where it vanishes.
    pub fn log_evaluate(&self, x: &DVector<T>) -> T {
        match self {
            Self::Gaussian(g) => g.log_pdf(x),
            Self::Grid(g) => {
                let v = g.evaluate(x);
                if v > T::zero() {
                    v.ln()
                } else {
                    T::neg_infinity()
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        match self {
            Self::Gaussian(g) => g.sample(rng),
            Self::Grid(g) => g.sample(rng),
        }
    }

    /// Integral of the density (exactly one for Gaussians).
    pub fn mass(&self) -> T {
        match self {
            Self::Gaussian(_) => T::one(),
            Self::Grid(g) => g.mass(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Gaussian(_) => "gaussian",
            Self::Grid(_) => "grid",
        }
    }
}

impl<T: Real> From<GaussianDensity<T>> for LocalisationDensity<T> {
    fn from(g: GaussianDensity<T>) -> Self {
        Self::Gaussian(g)
    }
}

impl<T: Real> From<GridDensity<T>> for LocalisationDensity<T> {
    fn from(g: GridDensity<T>) -> Self {
        Self::Grid(g)
    }
}

/// Family tag of a [`FiniteSetDistribution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Bernoulli,
    Poisson,
    Iid,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
            Family::Iid => "iid",
        }
    }
}

/// Finite-set distribution with factorized localisation.
#[derive(Debug, Clone, PartialEq)]
pub enum FiniteSetDistribution<T: Real> {
    Bernoulli {
        alpha: T,
        loc: LocalisationDensity<T>,
    },
    Poisson {
        lambda: T,
        loc: LocalisationDensity<T>,
    },
    IidCluster {
        card: CardinalityPmf<T>,
        loc: LocalisationDensity<T>,
    },
}

impl<T: Real> FiniteSetDistribution<T> {
    pub fn bernoulli(alpha: T, loc: impl Into<LocalisationDensity<T>>) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(FusionError::InvalidParameter(format!(
                "existence probability {} outside [0, 1]",
                alpha.as_f64()
            )));
        }
        Ok(Self::Bernoulli {
            alpha,
            loc: loc.into(),
        })
    }

    pub fn poisson(lambda: T, loc: impl Into<LocalisationDensity<T>>) -> Result<Self> {
        if !(lambda >= T::zero()) || !lambda.is_finite_value() {
            return Err(FusionError::InvalidParameter(format!(
                "Poisson rate {} must be finite and nonnegative",
                lambda.as_f64()
            )));
        }
        Ok(Self::Poisson {
            lambda,
            loc: loc.into(),
        })
    }

    pub fn iid_cluster(card: CardinalityPmf<T>, loc: impl Into<LocalisationDensity<T>>) -> Self {
        Self::IidCluster {
            card,
            loc: loc.into(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Self::Bernoulli { .. } => Family::Bernoulli,
            Self::Poisson { .. } => Family::Poisson,
            Self::IidCluster { .. } => Family::Iid,
        }
    }

    pub fn localisation(&self) -> &LocalisationDensity<T> {
        match self {
            Self::Bernoulli { loc, .. } | Self::Poisson { loc, .. } | Self::IidCluster { loc, .. } => {
                loc
            }
        }
    }

    /// Expected number of objects.
    pub fn expected_count(&self) -> T {
        match self {
            Self::Bernoulli { alpha, .. } => *alpha,
            Self::Poisson { lambda, .. } => *lambda,
            Self::IidCluster { card, .. } => card.mean(),
        }
    }

    /// Probability of exactly `n` objects, untruncated for Poisson.
    pub fn cardinality_prob(&self, n: usize) -> T {
        match self {
            Self::Bernoulli { alpha, .. } => match n {
                0 => T::one() - *alpha,
                1 => *alpha,
                _ => T::zero(),
            },
            Self::Poisson { lambda, .. } => poisson_prob(*lambda, n),
            Self::IidCluster { card, .. } => card.prob(n),
        }
    }

    /// Kullback-Leibler divergence between two distributions of the same
    /// family: cardinality divergence plus expected count times the
    /// localisation divergence.
    pub fn kl_divergence(&self, other: &Self) -> Result<T> {
        let loc = self.localisation().kl_divergence(other.localisation())?;
        let card = match (self, other) {
            (Self::Bernoulli { alpha: a, .. }, Self::Bernoulli { alpha: b, .. }) => {
                let p = CardinalityPmf::from_weights(vec![T::one() - *a, *a])?;
                let q = CardinalityPmf::from_weights(vec![T::one() - *b, *b])?;
                p.kl_divergence(&q)
            }
            (Self::Poisson { lambda: a, .. }, Self::Poisson { lambda: b, .. }) => {
                if *a == T::zero() {
                    *b
                } else if *b == T::zero() {
                    T::lit(f64::INFINITY)
                } else {
                    *a * (*a / *b).ln() - *a + *b
                }
            }
            (Self::IidCluster { card: p, .. }, Self::IidCluster { card: q, .. }) => {
                p.kl_divergence(q)
            }
            _ => {
                return Err(FusionError::FamilyMismatch(
                    self.family().name(),
                    other.family().name(),
                ))
            }
        };
        let count = self.expected_count();
        Ok(if count == T::zero() { card } else { card + count * loc })
    }
}

/// Kullback-Leibler divergence between two objects of the same kind.
pub trait Divergence<T: Real> {
    /// `D(self || other)` in nats.
    fn divergence(&self, other: &Self) -> Result<T>;
}

impl<T: Real> Divergence<T> for CardinalityPmf<T> {
    fn divergence(&self, other: &Self) -> Result<T> {
        Ok(self.kl_divergence(other))
    }
}

impl<T: Real> Divergence<T> for GridDensity<T> {
    fn divergence(&self, other: &Self) -> Result<T> {
        self.kl_divergence(other)
    }
}

impl<T: Real> Divergence<T> for LocalisationDensity<T> {
    fn divergence(&self, other: &Self) -> Result<T> {
        self.kl_divergence(other)
    }
}

impl<T: Real> Divergence<T> for FiniteSetDistribution<T> {
    fn divergence(&self, other: &Self) -> Result<T> {
        self.kl_divergence(other)
    }
}

/// Unordered collection of points of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSet<T: Real> {
    points: Vec<DVector<T>>,
}

impl<T: Real> FiniteSet<T> {
    pub fn new(points: Vec<DVector<T>>) -> Result<Self> {
        if let Some(first) = points.first() {
            let d = first.len();
            if let Some(bad) = points.iter().find(|p| p.len() != d) {
                return Err(FusionError::DimensionMismatch {
                    expected: d,
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<T>] {
        &self.points
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.len())
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Explicit cardinality pmf on `0..=n_max`. Poisson pmfs are renormalized
/// after truncation; the truncated tail must stay below 1e-9.
pub fn cardinality_of<T: Real>(f: &FiniteSetDistribution<T>, n_max: usize) -> Result<CardinalityPmf<T>> {
    if n_max < 1 {
        return Err(FusionError::InvalidParameter("n_max must be at least 1".into()));
    }
    match f {
        FiniteSetDistribution::Bernoulli { alpha, .. } => {
            let mut probs = vec![T::zero(); n_max + 1];
            probs[0] = T::one() - *alpha;
            probs[1] = *alpha;
            CardinalityPmf::new(probs)
        }
        FiniteSetDistribution::Poisson { lambda, .. } => CardinalityPmf::poisson(*lambda, n_max),
        FiniteSetDistribution::IidCluster { card, .. } => Ok(card.clone()),
    }
}

/// Finite-set density `p(|X|) |X|! prod rho(x)` at `set`.
///
/// Localisation factors are multiplied in sorted order so that the value is
/// bitwise independent of the point ordering.
pub fn rfs_density_eval<T: Real>(f: &FiniteSetDistribution<T>, set: &FiniteSet<T>) -> Result<T> {
    let loc = f.localisation();
    if let Some(d) = set.dim() {
        if d != loc.dim() {
            return Err(FusionError::DimensionMismatch {
                expected: loc.dim(),
                actual: d,
            });
        }
    }
    let n = set.len();
    if let FiniteSetDistribution::Bernoulli { alpha, .. } = f {
        return Ok(match n {
            0 => T::one() - *alpha,
            1 => *alpha * loc.evaluate(&set.points()[0]),
            _ => T::zero(),
        });
    }
    let mut factors: Vec<T> = set.points().iter().map(|x| loc.evaluate(x)).collect();
    factors.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let product = factors.into_iter().fold(T::one(), |acc, v| acc * v);
    let weight = match f {
        // p(n) n! = exp(-lambda) lambda^n
        FiniteSetDistribution::Poisson { lambda, .. } => {
            if *lambda == T::zero() {
                if n == 0 {
                    T::one()
                } else {
                    T::zero()
                }
            } else {
                (-*lambda + T::from_usize_lossy(n) * lambda.ln()).exp()
            }
        }
        FiniteSetDistribution::IidCluster { card, .. } => {
            let log_fact = log_factorials::<T>(n);
            card.prob(n) * log_fact[n].exp()
        }
        FiniteSetDistribution::Bernoulli { .. } => unreachable!(),
    };
    Ok(weight * product)
}

/// Set integral of the density over cardinalities `0..=n_max`, i.e.
/// `sum_n p(n) m^n` with `m` the localisation mass. Poisson probabilities are
/// the raw (unrenormalized) series terms.
pub fn validate_normalization<T: Real>(f: &FiniteSetDistribution<T>, n_max: usize) -> T {
    let mass = f.localisation().mass();
    let probs: Vec<T> = match f {
        FiniteSetDistribution::Bernoulli { alpha, .. } => vec![T::one() - *alpha, *alpha],
        FiniteSetDistribution::Poisson { lambda, .. } => poisson_probs(*lambda, n_max.max(1)),
        FiniteSetDistribution::IidCluster { card, .. } => card.probs().to_vec(),
    };
    let mut power = T::one();
    compensated_sum(probs.into_iter().map(|p| {
        let term = p * power;
        power *= mass;
        term
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal_2d() -> GaussianDensity<f64> {
        GaussianDensity::isotropic(DVector::zeros(2), 1.0).unwrap()
    }

    fn unit_square() -> GridDensity<f64> {
        let layout = GridLayout::new(vec![0.05, 0.05], vec![0.1, 0.1], vec![10, 10]).unwrap();
        GridDensity::new(layout, vec![1.0; 100]).unwrap()
    }

    #[test]
    fn pmf_rejects_bad_entries() {
        assert!(CardinalityPmf::new(vec![0.5, 0.6]).is_err());
        assert!(CardinalityPmf::new(vec![-0.1, 1.1]).is_err());
        assert!(CardinalityPmf::<f64>::new(vec![]).is_err());
        assert!(CardinalityPmf::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn bernoulli_cardinality() {
        let f = FiniteSetDistribution::bernoulli(0.8, std_normal_2d()).unwrap();
        let card = cardinality_of(&f, 1).unwrap();
        assert_relative_eq!(card.probs()[0], 0.2, epsilon = 1e-15);
        assert_relative_eq!(card.probs()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn poisson_zero_rate_is_empty_set() {
        let f = FiniteSetDistribution::poisson(0.0, std_normal_2d()).unwrap();
        let card = cardinality_of(&f, 7).unwrap();
        assert_eq!(card.probs()[0], 1.0);
        assert!(card.probs()[1..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn poisson_cardinality_matches_series() {
        let f = FiniteSetDistribution::poisson(2.0, std_normal_2d()).unwrap();
        let card = cardinality_of(&f, 30).unwrap();
        // direct series: e^-2 2^n / n!
        let mut term = (-2.0f64).exp();
        let mut direct = vec![term];
        for n in 1..=30 {
            term *= 2.0 / n as f64;
            direct.push(term);
        }
        let total: f64 = direct.iter().sum();
        for (a, b) in card.probs().iter().zip(&direct) {
            assert_relative_eq!(*a, b / total, max_relative = 1e-12);
        }
        assert_relative_eq!(card.probs()[0], 0.1353352832366127, epsilon = 1e-12);
        assert_relative_eq!(card.mean(), 2.0, epsilon = 1e-6);
    }

    #[test]
    fn poisson_truncation_too_aggressive() {
        let f = FiniteSetDistribution::poisson(10.0, std_normal_2d()).unwrap();
        let err = cardinality_of(&f, 5).unwrap_err();
        assert!(matches!(err, FusionError::TruncationTooAggressive { .. }));
        assert!(err.to_string().contains("truncation too aggressive"));
    }

    #[test]
    fn default_truncation_is_adequate() {
        for lambda in [0.0, 0.5, 3.0, 20.0, 80.0] {
            let n_max = default_poisson_n_max(lambda);
            assert!(CardinalityPmf::poisson(lambda, n_max).is_ok(), "lambda {lambda}");
        }
    }

    #[test]
    fn bernoulli_density_values() {
        let f = FiniteSetDistribution::bernoulli(0.8, std_normal_2d()).unwrap();
        assert_relative_eq!(rfs_density_eval(&f, &FiniteSet::empty()).unwrap(), 0.2, epsilon = 1e-15);
        let one = FiniteSet::new(vec![DVector::zeros(2)]).unwrap();
        assert_relative_eq!(
            rfs_density_eval(&f, &one).unwrap(),
            0.8 / (2.0 * std::f64::consts::PI),
            max_relative = 1e-12
        );
        let two = FiniteSet::new(vec![DVector::zeros(2), DVector::zeros(2)]).unwrap();
        assert_eq!(rfs_density_eval(&f, &two).unwrap(), 0.0);
    }

    #[test]
    fn iid_uniform_density() {
        let card = CardinalityPmf::new(vec![0.0, 0.0, 1.0]).unwrap();
        let f = FiniteSetDistribution::iid_cluster(card, unit_square());
        let set = FiniteSet::new(vec![
            DVector::from_vec(vec![0.3, 0.4]),
            DVector::from_vec(vec![0.71, 0.12]),
        ])
        .unwrap();
        assert_relative_eq!(rfs_density_eval(&f, &set).unwrap(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn density_dimension_mismatch() {
        let f = FiniteSetDistribution::poisson(1.0, std_normal_2d()).unwrap();
        let set = FiniteSet::new(vec![DVector::zeros(3)]).unwrap();
        assert!(matches!(
            rfs_density_eval(&f, &set),
            Err(FusionError::DimensionMismatch { .. })
        ));
        assert!(FiniteSet::new(vec![DVector::<f64>::zeros(2), DVector::zeros(3)]).is_err());
    }

    #[test]
    fn normalization_checks() {
        let b = FiniteSetDistribution::bernoulli(0.37, std_normal_2d()).unwrap();
        assert_eq!(validate_normalization(&b, 1), 1.0);
        let p = FiniteSetDistribution::poisson(3.0, std_normal_2d()).unwrap();
        assert!((validate_normalization(&p, 40) - 1.0).abs() < 1e-9);
        let card = CardinalityPmf::binomial(5, 0.95).unwrap();
        let i = FiniteSetDistribution::iid_cluster(card, std_normal_2d());
        assert!((validate_normalization(&i, 5) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn grid_renormalization_rules() {
        let layout = GridLayout::new(vec![0.5], vec![1.0], vec![4]).unwrap();
        let ok = GridDensity::new(layout.clone(), vec![0.25, 0.25, 0.25, 0.2525]).unwrap();
        assert_relative_eq!(ok.mass(), 1.0, epsilon = 1e-14);
        assert!(GridDensity::new(layout, vec![0.25, 0.25, 0.25, 0.5]).is_err());
    }

    #[test]
    fn grid_locate_and_sample_stay_inside() {
        let g = unit_square();
        assert_eq!(g.evaluate(&DVector::from_vec(vec![1.2, 0.5])), 0.0);
        assert_relative_eq!(g.evaluate(&DVector::from_vec(vec![0.99, 0.01])), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = g.sample(&mut rng);
            assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn gaussian_rejects_bad_covariances() {
        let mean = DVector::zeros(2);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(GaussianDensity::new(mean.clone(), asym).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(GaussianDensity::new(mean.clone(), singular).is_err());
        let stiff = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        assert!(matches!(
            GaussianDensity::new(mean, stiff),
            Err(FusionError::SingularCovariance(_))
        ));
    }

    #[test]
    fn binomial_pmf_matches_direct_formula() {
        let card = CardinalityPmf::binomial(5, 0.92).unwrap();
        let direct = |n: u32| {
            let c = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0][n as usize];
            c * 0.92f64.powi(n as i32) * 0.08f64.powi(5 - n as i32)
        };
        for n in 0..=5 {
            assert_relative_eq!(card.prob(n), direct(n as u32), max_relative = 1e-12);
        }
        assert_eq!(card.map_estimate(), 5);
    }

    #[test]
    fn single_precision_model_builds() {
        let g = GaussianDensity::<f32>::isotropic(DVector::zeros(2), 1.0).unwrap();
        let f = FiniteSetDistribution::bernoulli(0.8f32, g).unwrap();
        let set = FiniteSet::new(vec![DVector::zeros(2)]).unwrap();
        let v = rfs_density_eval(&f, &set).unwrap();
        assert!((v - 0.127_324).abs() < 1e-5);
    }
}
