//! Monte Carlo size and power experiments.
//!
//! Errors follow `ε = Σ_i^{1/2} z` with `z` drawn i.i.d. from a standardised
//! generator (mean 0, identity covariance, bounded fourth moments, vanishing
//! odd mixed fourth moments). Replication `j` draws from its own ChaCha
//! stream `(seed, j)`, so serial and parallel runs produce identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignSpec;
use crate::diagnostics::{assumption_diagnostics, DiagnosticsReport, MeanShift};
use crate::error::{Error, Result};
use crate::linalg::{ensure_positive_definite, sym_sqrt, Matrix};
use crate::normal;
use crate::test_engine::{asymptotic_power, MeanModel, PopulationMoments, TestPlan};

/// Standardised error generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "DistributionRepr")]
pub enum ErrorDistribution {
    Gaussian,
    /// Multivariate t with `df` degrees of freedom, rescaled to unit variance.
    EllipticalT {
        df: f64,
    },
    /// Independent components `(G - shape)/√shape` with `G ~ Gamma(shape, 1)`.
    StandardizedGamma {
        shape: f64,
    },
    Rademacher,
}

// Serde ignores stray keys on unit variants of an internally tagged enum,
// so parsing goes through empty struct variants instead.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum DistributionRepr {
    Gaussian {},
    EllipticalT { df: f64 },
    StandardizedGamma { shape: f64 },
    Rademacher {},
}

impl From<DistributionRepr> for ErrorDistribution {
    fn from(r: DistributionRepr) -> Self {
        match r {
            DistributionRepr::Gaussian {} => ErrorDistribution::Gaussian,
            DistributionRepr::EllipticalT { df } => ErrorDistribution::EllipticalT { df },
            DistributionRepr::StandardizedGamma { shape } => ErrorDistribution::StandardizedGamma { shape },
            DistributionRepr::Rademacher {} => ErrorDistribution::Rademacher,
        }
    }
}

impl ErrorDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorDistribution::EllipticalT { df } if !(df > 4.0) => Err(Error::Config(format!(
                "elliptical_t needs df > 4 for a finite fourth moment, got {df}"
            ))),
            ErrorDistribution::StandardizedGamma { shape } if !(shape > 0.0 && shape.is_finite()) => Err(
                Error::Config(format!("standardized_gamma needs shape > 0, got {shape}")),
            ),
            _ => Ok(()),
        }
    }

    /// Componentwise `E[z⁴]`.
    pub fn fourth_moment(&self) -> f64 {
        match *self {
            ErrorDistribution::Gaussian => 3.0,
            ErrorDistribution::EllipticalT { df } => 3.0 * (df - 2.0) / (df - 4.0),
            ErrorDistribution::StandardizedGamma { shape } => 3.0 + 6.0 / shape,
            ErrorDistribution::Rademacher => 1.0,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            ErrorDistribution::Gaussian => "gaussian".into(),
            ErrorDistribution::EllipticalT { df } => format!("elliptical_t({df})"),
            ErrorDistribution::StandardizedGamma { shape } => format!("standardized_gamma({shape})"),
            ErrorDistribution::Rademacher => "rademacher".into(),
        }
    }

    /// Fills `out` (rows are observations) with standardised draws.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Matrix) {
        let (n, p) = out.shape();
        match *self {
            ErrorDistribution::Gaussian => {
                for i in 0..n {
                    for j in 0..p {
                        out[(i, j)] = rng.sample(StandardNormal);
                    }
                }
            }
            ErrorDistribution::EllipticalT { df } => {
                let chi = ChiSquared::new(df).expect("validated df");
                for i in 0..n {
                    let w: f64 = chi.sample(rng);
                    let scale = ((df - 2.0) / w).sqrt();
                    for j in 0..p {
                        let g: f64 = rng.sample(StandardNormal);
                        out[(i, j)] = g * scale;
                    }
                }
            }
            ErrorDistribution::StandardizedGamma { shape } => {
                let gamma = Gamma::new(shape, 1.0).expect("validated shape");
                let sd = shape.sqrt();
                for i in 0..n {
                    for j in 0..p {
                        out[(i, j)] = (gamma.sample(rng) - shape) / sd;
                    }
                }
            }
            ErrorDistribution::Rademacher => {
                for i in 0..n {
                    for j in 0..p {
                        out[(i, j)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    }
                }
            }
        }
    }
}

/// `n×p` matrix of i.i.d. standardised rows from a seeded stream.
pub fn sample_errors(dist: &ErrorDistribution, n: usize, p: usize, seed: u64) -> Result<Matrix> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(n, p);
    dist.fill(&mut rng, &mut out);
    Ok(out)
}

fn default_scale() -> f64 {
    1.0
}

/// Covariance structure of one group, scaled by `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    Identity {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `(1-ρ) I + ρ 1 1'`.
    CompoundSymmetry {
        rho: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `ρ^{|i-j|}`.
    Ar1 {
        rho: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Diagonal with variances spaced linearly from `lo` to `hi`.
    DiagonalRamp {
        lo: f64,
        hi: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

impl CovarianceSpec {
    pub fn identity() -> Self {
        CovarianceSpec::Identity { scale: 1.0 }
    }

    pub fn ar1(rho: f64, scale: f64) -> Self {
        CovarianceSpec::Ar1 { rho, scale }
    }

    pub fn scale(&self) -> f64 {
        match *self {
            CovarianceSpec::Identity { scale }
            | CovarianceSpec::CompoundSymmetry { scale, .. }
            | CovarianceSpec::Ar1 { scale, .. }
            | CovarianceSpec::DiagonalRamp { scale, .. } => scale,
        }
    }

    pub fn matrix(&self, p: usize) -> Matrix {
        let s = self.scale();
        match *self {
            CovarianceSpec::Identity { .. } => Matrix::identity(p, p) * s,
            CovarianceSpec::CompoundSymmetry { rho, .. } => {
                Matrix::from_fn(p, p, |i, j| s * if i == j { 1.0 } else { rho })
            }
            CovarianceSpec::Ar1 { rho, .. } => Matrix::from_fn(p, p, |i, j| s * rho.powi((i as i32 - j as i32).abs())),
            CovarianceSpec::DiagonalRamp { lo, hi, .. } => Matrix::from_fn(p, p, |i, j| {
                if i != j {
                    0.0
                } else if p == 1 {
                    s * lo
                } else {
                    s * (lo + (hi - lo) * i as f64 / (p - 1) as f64)
                }
            }),
        }
    }

    /// `Σ` together with its symmetric square root.
    pub fn factor(&self, p: usize) -> Result<CovarianceFactor> {
        if !(self.scale() > 0.0) {
            return Err(Error::Config(format!(
                "covariance scale must be positive, got {}",
                self.scale()
            )));
        }
        let sigma = self.matrix(p);
        ensure_positive_definite(&sigma, &format!("{self:?}")).map_err(|e| Error::Config(e.to_string()))?;
        let root = match self {
            CovarianceSpec::Identity { scale } => Matrix::identity(p, p) * scale.sqrt(),
            _ => sym_sqrt(&sigma),
        };
        Ok(CovarianceFactor { sigma, root })
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub sigma: Matrix,
    /// Symmetric `Σ^{1/2}`.
    pub root: Matrix,
}

/// Broadcasts a single entry to every group or checks a per-group list.
pub fn per_group<T: Clone>(items: &[T], groups: usize, what: &str) -> Result<Vec<T>> {
    match items.len() {
        1 => Ok(vec![items[0].clone(); groups]),
        n if n == groups => Ok(items.to_vec()),
        n => Err(Error::Config(format!("{n} {what} entries for {groups} groups"))),
    }
}

/// Direction used for signal rays: first row of `Θ` set to a normalised ramp.
pub fn default_direction(design: &DesignSpec) -> Matrix {
    let q = design.q();
    let mut theta = Matrix::zeros(design.k(), q);
    let norm = (0..q).map(|j| (1.0 + j as f64 / q as f64).powi(2)).sum::<f64>().sqrt();
    for j in 0..q {
        theta[(0, j)] = (1.0 + j as f64 / q as f64) / norm;
    }
    theta
}

/// Scales `direction` so that `𝒬/√σ²` equals `target`.
pub fn theta_for_signal_ratio(
    design: &DesignSpec,
    direction: &Matrix,
    sigmas: &[Matrix],
    target: f64,
) -> Result<Matrix> {
    if !(target >= 0.0) {
        return Err(Error::Config(format!(
            "signal ratio must be non-negative, got {target}"
        )));
    }
    let projections = crate::design::ProjectionSet::from_design(design)?;
    let unit = PopulationMoments::compute(
        &MeanModel::new(direction.clone(), sigmas.to_vec()),
        design,
        &projections,
    )?;
    if !(unit.q > 0.0) {
        return Err(Error::Config(
            "signal direction satisfies the null hypothesis (𝒬 = 0)".into(),
        ));
    }
    // 𝒬(c) = c² q1, σ²(c) = σ₀² + c² lin; solve q1² u² - t² lin u - t² σ₀² = 0 for u = c².
    let lin = unit.sigma2 - unit.sigma0_sq;
    let t2 = target * target;
    let u = (t2 * lin + (t2 * t2 * lin * lin + 4.0 * unit.q * unit.q * t2 * unit.sigma0_sq).sqrt())
        / (2.0 * unit.q * unit.q);
    Ok(direction * u.sqrt())
}

/// Kolmogorov–Smirnov distance between the empirical law of `values` and `N(0, 1)`.
pub fn ks_distance_normal(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = normal::cdf(x);
        d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs())
    })
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Per-replication output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub t_stat: f64,
    pub sigma0_hat: f64,
    pub z: f64,
    pub reject: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub replications: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// `√(r(1-r)/reps)`.
    pub mc_standard_error: f64,
    pub degenerate_count: usize,
    pub mean_z: f64,
    pub var_z: f64,
    pub ks_distance: f64,
    pub mean_t: f64,
    pub var_t: f64,
    /// Population `𝒬`, `σ²`, `σ₀²` of the simulated model.
    pub q: f64,
    pub sigma2: f64,
    pub sigma0_sq: f64,
    pub signal_ratio: f64,
    pub predicted_power: f64,
    pub alpha: f64,
    pub seed: u64,
    pub distributions: Vec<String>,
}

/// A fully specified experiment: design, population, generators and level.
#[derive(Debug, Clone)]
pub struct MonteCarlo {
    plan: TestPlan,
    theta: Matrix,
    mean: Matrix,
    factors: Vec<CovarianceFactor>,
    distributions: Vec<ErrorDistribution>,
    moments: PopulationMoments,
    alpha: f64,
    seed: u64,
}

impl MonteCarlo {
    /// `covariances` and `distributions` hold one entry per group or a single
    /// entry shared by all groups.
    pub fn new(
        design: DesignSpec,
        theta: Matrix,
        covariances: &[CovarianceSpec],
        distributions: &[ErrorDistribution],
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let g = design.groups();
        let covariances = per_group(covariances, g, "covariance")?;
        let distributions = per_group(distributions, g, "distribution")?;
        for d in &distributions {
            d.validate()?;
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let p = design.p();
        let factors = covariances.iter().map(|c| c.factor(p)).collect::<Result<Vec<_>>>()?;
        let model = MeanModel::new(theta.clone(), factors.iter().map(|f| f.sigma.clone()).collect());
        let plan = TestPlan::new(design)?;
        let moments = PopulationMoments::compute(&model, plan.design(), plan.projections())?;
        let mean = model.mean(plan.design());
        Ok(MonteCarlo {
            plan,
            theta,
            mean,
            factors,
            distributions,
            moments,
            alpha,
            seed,
        })
    }

    pub fn plan(&self) -> &TestPlan {
        &self.plan
    }
    pub fn theta(&self) -> &Matrix {
        &self.theta
    }
    pub fn moments(&self) -> &PopulationMoments {
        &self.moments
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rng_for(&self, replication: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication as u64);
        rng
    }

    /// Data matrix `X = A Θ B' + ℰ` for one replication.
    pub fn draw(&self, replication: usize) -> Matrix {
        let mut rng = self.rng_for(replication);
        let design = self.plan.design();
        let p = design.p();
        let mut x = self.mean.clone();
        for (g, (factor, dist)) in self.factors.iter().zip(&self.distributions).enumerate() {
            let range = design.group_range(g);
            let mut z = Matrix::zeros(range.len(), p);
            dist.fill(&mut rng, &mut z);
            let eps = z * &factor.root;
            let mut block = x.rows_mut(range.start, range.len());
            block += eps;
        }
        x
    }

    pub fn replicate(&self, replication: usize) -> Result<ReplicationRecord> {
        let report = self
            .plan
            .run(&self.draw(replication), self.alpha)
            .map_err(|e| Error::Replication {
                replication,
                source: Box::new(e),
            })?;
        Ok(ReplicationRecord {
            t_stat: report.t_stat,
            sigma0_hat: report.sigma0_hat,
            z: report.z,
            reject: report.reject,
            degenerate: report.degenerate,
        })
    }

    /// Records for replications `0..reps`, in replication order. `threads = 0`
    /// uses the global rayon pool.
    pub fn records(&self, reps: usize, threads: usize) -> Result<Vec<ReplicationRecord>> {
        let work = || {
            (0..reps)
                .into_par_iter()
                .map(|j| self.replicate(j))
                .collect::<Result<Vec<_>>>()
        };
        if threads == 0 {
            work()
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?
                .install(work)
        }
    }

    pub fn run(&self, reps: usize, threads: usize) -> Result<SimulationSummary> {
        if reps < 100 {
            return Err(Error::Config(format!("need at least 100 replications, got {reps}")));
        }
        Ok(self.summarize(&self.records(reps, threads)?))
    }

    pub fn summarize(&self, records: &[ReplicationRecord]) -> SimulationSummary {
        let reps = records.len();
        let n = reps as f64;
        let rejections = records.iter().filter(|r| r.reject).count();
        let rate = rejections as f64 / n;
        let (mean_z, var_z) = mean_var(records.iter().map(|r| r.z));
        let (mean_t, var_t) = mean_var(records.iter().map(|r| r.t_stat));
        let z: Vec<f64> = records.iter().map(|r| r.z).collect();
        let m = &self.moments;
        SimulationSummary {
            replications: reps,
            rejections,
            rejection_rate: rate,
            mc_standard_error: (rate * (1.0 - rate) / n).sqrt(),
            degenerate_count: records.iter().filter(|r| r.degenerate).count(),
            mean_z,
            var_z,
            ks_distance: ks_distance_normal(&z),
            mean_t,
            var_t,
            q: m.q,
            sigma2: m.sigma2,
            sigma0_sq: m.sigma0_sq,
            signal_ratio: m.signal_ratio(),
            predicted_power: asymptotic_power(m.q, m.sigma2, m.sigma0_sq, self.alpha),
            alpha: self.alpha,
            seed: self.seed,
            distributions: self.distributions.iter().map(|d| d.name()).collect(),
        }
    }

    /// Population-level diagnostics for the simulated model.
    pub fn diagnostics(&self) -> Result<DiagnosticsReport> {
        let sigmas: Vec<Matrix> = self.factors.iter().map(|f| f.sigma.clone()).collect();
        assumption_diagnostics(
            &self.moments.psis,
            false,
            &self.plan.projections().omega,
            self.plan.design().group_sizes(),
            Some(MeanShift {
                weighted_means: &self.moments.weighted_means,
                sigmas: &sigmas,
            }),
            Some(self.distributions.iter().map(|d| d.fourth_moment()).fold(0.0, f64::max)),
        )
    }
}

/// Mean and unbiased variance with compensated sums, in iteration order.
pub fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let mut sum = CompensatedSum::default();
    let mut count = 0usize;
    for v in values.clone() {
        sum.add(v);
        count += 1;
    }
    if count == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum.value() / count as f64;
    let mut sq = CompensatedSum::default();
    for v in values {
        sq.add((v - mean) * (v - mean));
    }
    let var = if count > 1 {
        sq.value() / (count - 1) as f64
    } else {
        0.0
    };
    (mean, var)
}

/// One-call experiment runner.
pub fn monte_carlo(
    design: &DesignSpec,
    theta: &Matrix,
    covariances: &[CovarianceSpec],
    distributions: &[ErrorDistribution],
    epsilon: f64,
    reps: usize,
    seed: u64,
) -> Result<SimulationSummary> {
    MonteCarlo::new(design.clone(), theta.clone(), covariances, distributions, epsilon, seed)?.run(reps, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::one_way_manova;

    #[test]
    fn rademacher_entries() {
        let z = sample_errors(&ErrorDistribution::Rademacher, 50, 7, 3).unwrap();
        assert!(z.iter().all(|&v| v == 1.0 || v == -1.0));
        assert_eq!(ErrorDistribution::Rademacher.fourth_moment(), 1.0);
    }

    #[test]
    fn invalid_parameters() {
        assert!(sample_errors(&ErrorDistribution::EllipticalT { df: 4.0 }, 2, 2, 0).is_err());
        assert!(sample_errors(&ErrorDistribution::StandardizedGamma { shape: 0.0 }, 2, 2, 0).is_err());
    }

    #[test]
    fn seeded_draws_repeat() {
        let d = ErrorDistribution::StandardizedGamma { shape: 2.0 };
        assert_eq!(
            sample_errors(&d, 5, 4, 11).unwrap(),
            sample_errors(&d, 5, 4, 11).unwrap()
        );
        assert_ne!(
            sample_errors(&d, 5, 4, 11).unwrap(),
            sample_errors(&d, 5, 4, 12).unwrap()
        );
    }

    #[test]
    fn covariance_roots() {
        for spec in [
            CovarianceSpec::ar1(0.5, 3.0),
            CovarianceSpec::CompoundSymmetry { rho: 0.3, scale: 1.0 },
            CovarianceSpec::DiagonalRamp {
                lo: 0.5,
                hi: 2.0,
                scale: 1.5,
            },
            CovarianceSpec::identity(),
        ] {
            let f = spec.factor(12).unwrap();
            let err = (&f.root * &f.root - &f.sigma).abs().max();
            assert!(err < 1e-10, "{spec:?}: {err}");
        }
        assert!(CovarianceSpec::CompoundSymmetry { rho: -0.5, scale: 1.0 }
            .factor(4)
            .is_err());
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let v: Vec<f64> = (0..n).map(|i| normal::quantile((i as f64 + 0.5) / n as f64)).collect();
        assert!((ks_distance_normal(&v) - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn signal_ratio_is_hit() {
        let s = one_way_manova(&[6, 6], 5).unwrap();
        let sigmas = vec![Matrix::identity(5, 5); 2];
        let dir = default_direction(&s.design);
        let theta = theta_for_signal_ratio(&s.design, &dir, &sigmas, 2.0).unwrap();
        let proj = crate::design::ProjectionSet::from_design(&s.design).unwrap();
        let m = PopulationMoments::compute(&MeanModel::new(theta, sigmas), &s.design, &proj).unwrap();
        assert!((m.signal_ratio() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn parallel_and_serial_agree() {
        let s = one_way_manova(&[5, 6], 4).unwrap();
        let mc = MonteCarlo::new(
            s.design,
            Matrix::zeros(2, 4),
            &[CovarianceSpec::identity(), CovarianceSpec::ar1(0.5, 2.0)],
            &[ErrorDistribution::Gaussian],
            0.05,
            9,
        )
        .unwrap();
        let a = mc.run(200, 1).unwrap();
        let b = mc.run(200, 4).unwrap();
        assert_eq!(a, b);
        assert!(mc.run(50, 1).is_err());
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..10 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 10.0);
    }
}
