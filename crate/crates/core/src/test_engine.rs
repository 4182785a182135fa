//! The statistic `T = tr(𝒫 X' Ω X 𝒫')`, its standardisation and the
//! rejection rule, plus the population functionals (`𝒬`, `σ²`, `σ₀²`) that
//! describe its exact mean and variance under a known model.

use serde::{Deserialize, Serialize};

use crate::design::{DesignSpec, ProjectionSet};
use crate::diagnostics::{assumption_diagnostics, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::estimators::{omega_block_sums, GroupGeometry, GroupedSample, VarianceEstimate};
use crate::linalg::{ensure_positive_definite, trace_of_product, Matrix};
use crate::normal;

/// Signal-to-noise ratio `𝒬/√σ²` beyond which the asymptotic power is 1.
pub const LARGE_SIGNAL_CUTOFF: f64 = 40.0;

/// Outcome of one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub t_stat: f64,
    pub sigma0_hat: f64,
    /// `I(σ̂₀² > 0) · T / √σ̂₀²`.
    pub z: f64,
    /// One-sided upper tail `1 - Φ(z)`.
    pub p_value: f64,
    pub alpha: f64,
    pub critical_value: f64,
    pub reject: bool,
    /// `σ̂₀² ≤ 0`; the test cannot reject.
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsReport>,
}

/// Applies the decision rule to a statistic and its variance estimate.
pub fn decide(t_stat: f64, sigma0_hat: f64, alpha: f64) -> TestReport {
    let degenerate = !(sigma0_hat > 0.0);
    let z = if degenerate { 0.0 } else { t_stat / sigma0_hat.sqrt() };
    let critical_value = normal::quantile(1.0 - alpha);
    TestReport {
        t_stat,
        sigma0_hat,
        z,
        p_value: if degenerate { 0.5 } else { normal::upper_tail(z) },
        alpha,
        critical_value,
        reject: !degenerate && z > critical_value,
        degenerate,
        diagnostics: None,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Input(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// `tr(Y' Ω Y)` with `Y = X 𝒫'` the `N×r` compressed data.
pub fn statistic_from_compressed(y: &Matrix, omega: &Matrix) -> f64 {
    (omega * y).component_mul(y).sum()
}

/// `T = tr(𝒫 X' Ω X 𝒫')`.
pub fn statistic_t(x: &Matrix, compressor: &Matrix, omega: &Matrix) -> Result<f64> {
    if x.ncols() != compressor.ncols() || x.nrows() != omega.nrows() || !omega.is_square() {
        return Err(Error::Input(format!(
            "statistic shapes: X {}x{}, 𝒫 {}x{}, Ω {}x{}",
            x.nrows(),
            x.ncols(),
            compressor.nrows(),
            compressor.ncols(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    Ok(statistic_from_compressed(&(x * compressor.transpose()), omega))
}

/// Design-dependent state of the test, computed once and reused across samples.
#[derive(Debug, Clone)]
pub struct TestPlan {
    design: DesignSpec,
    projections: ProjectionSet,
    geometry: Vec<GroupGeometry>,
    omega_blocks: Matrix,
}

impl TestPlan {
    pub fn new(design: DesignSpec) -> Result<Self> {
        let projections = ProjectionSet::from_design(&design)?;
        let geometry = GroupGeometry::for_design(&design)?;
        let omega_blocks = omega_block_sums(&projections.omega, design.group_sizes());
        Ok(TestPlan {
            design,
            projections,
            geometry,
            omega_blocks,
        })
    }

    pub fn design(&self) -> &DesignSpec {
        &self.design
    }
    pub fn projections(&self) -> &ProjectionSet {
        &self.projections
    }
    pub fn geometry(&self) -> &[GroupGeometry] {
        &self.geometry
    }

    fn check_shape(&self, x: &Matrix) -> Result<()> {
        if x.shape() != (self.design.n(), self.design.p()) {
            return Err(Error::Input(format!(
                "data is {}x{} but the design expects N = {}, p = {}",
                x.nrows(),
                x.ncols(),
                self.design.n(),
                self.design.p()
            )));
        }
        Ok(())
    }

    pub fn compress(&self, x: &Matrix) -> Matrix {
        x * self.projections.compressor.transpose()
    }

    pub fn statistic(&self, x: &Matrix) -> Result<f64> {
        self.check_shape(x)?;
        Ok(statistic_from_compressed(&self.compress(x), &self.projections.omega))
    }

    pub fn estimate(&self, x: &Matrix) -> Result<VarianceEstimate> {
        self.check_shape(x)?;
        VarianceEstimate::from_compressed(&self.compress(x), &self.geometry, &self.omega_blocks)
    }

    /// Statistic, variance estimate and decision in one pass over the data.
    pub fn evaluate(&self, x: &Matrix, alpha: f64) -> Result<(TestReport, VarianceEstimate)> {
        check_alpha(alpha)?;
        self.check_shape(x)?;
        let y = self.compress(x);
        let t = statistic_from_compressed(&y, &self.projections.omega);
        let est = VarianceEstimate::from_compressed(&y, &self.geometry, &self.omega_blocks)?;
        Ok((decide(t, est.sigma0_hat, alpha), est))
    }

    pub fn run(&self, x: &Matrix, alpha: f64) -> Result<TestReport> {
        self.evaluate(x, alpha).map(|(report, _)| report)
    }

    /// Runs the test and attaches plug-in diagnostics (`S_i` standing in for `Ψ_i`).
    pub fn run_with_diagnostics(&self, x: &Matrix, alpha: f64) -> Result<TestReport> {
        let (mut report, est) = self.evaluate(x, alpha)?;
        let psis: Vec<Matrix> = est.scatters.iter().map(|s| s.s.clone()).collect();
        report.diagnostics = Some(assumption_diagnostics(
            &psis,
            true,
            &self.projections.omega,
            self.design.group_sizes(),
            None,
            None,
        )?);
        Ok(report)
    }
}

/// Full pipeline on a grouped sample.
pub fn run_test(sample: &GroupedSample, design: &DesignSpec, alpha: f64) -> Result<TestReport> {
    sample.check_against(design)?;
    TestPlan::new(design.clone())?.run(sample.x(), alpha)
}

/// A fully specified population: mean parameters and per-group covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanModel {
    /// `Θ`, `k×q`.
    pub theta: Matrix,
    /// `Σ_i`, one `p×p` positive definite matrix per group.
    pub sigmas: Vec<Matrix>,
}

impl MeanModel {
    pub fn new(theta: Matrix, sigmas: Vec<Matrix>) -> Self {
        MeanModel { theta, sigmas }
    }

    fn check(&self, design: &DesignSpec) -> Result<()> {
        if self.theta.shape() != (design.k(), design.q()) {
            return Err(Error::Input(format!(
                "Θ is {}x{} but the design needs {}x{}",
                self.theta.nrows(),
                self.theta.ncols(),
                design.k(),
                design.q()
            )));
        }
        if self.sigmas.len() != design.groups() {
            return Err(Error::Input(format!(
                "{} covariance matrices for {} groups",
                self.sigmas.len(),
                design.groups()
            )));
        }
        for (g, s) in self.sigmas.iter().enumerate() {
            if s.shape() != (design.p(), design.p()) {
                return Err(Error::Input(format!(
                    "Σ_{g} is {}x{}, expected {}x{}",
                    s.nrows(),
                    s.ncols(),
                    design.p(),
                    design.p()
                )));
            }
            ensure_positive_definite(s, &format!("Σ_{g}")).map_err(|e| Error::Input(e.to_string()))?;
        }
        Ok(())
    }

    /// Mean matrix `A Θ B'`.
    pub fn mean(&self, design: &DesignSpec) -> Matrix {
        design.a() * &self.theta * design.b().transpose()
    }
}

/// `𝒬 = tr(𝔅^{1/2} R Θ' L' 𝔄 L Θ R' 𝔅^{1/2})`, evaluated as `tr(𝔄 C 𝔅 C')` with `C = L Θ R'`.
pub fn true_q(theta: &Matrix, design: &DesignSpec) -> Result<f64> {
    if theta.shape() != (design.k(), design.q()) {
        return Err(Error::Input(format!(
            "Θ is {}x{} but the design needs {}x{}",
            theta.nrows(),
            theta.ncols(),
            design.k(),
            design.q()
        )));
    }
    let c = design.l() * theta * design.r().transpose();
    let left = design.row_weight()? * &c;
    let right = design.column_weight()? * c.transpose();
    Ok(trace_of_product(&left, &right))
}

/// Population moments of `T` under a known model.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    pub q: f64,
    pub sigma2: f64,
    pub sigma0_sq: f64,
    /// `Ψ_i = 𝒫 Σ_i 𝒫'`.
    pub psis: Vec<Matrix>,
    /// `g×g` table: `a_{i,2}` on the diagonal, `b_ij` off it.
    pub functionals: Matrix,
    /// Rows `m_(i)' = Σ_j ω_ij m_j'` (`N×p`).
    pub weighted_means: Matrix,
}

impl PopulationMoments {
    pub fn compute(model: &MeanModel, design: &DesignSpec, projections: &ProjectionSet) -> Result<Self> {
        model.check(design)?;
        let comp = &projections.compressor;
        let psis: Vec<Matrix> = model.sigmas.iter().map(|s| comp * s * comp.transpose()).collect();
        let g = psis.len();
        let functionals = Matrix::from_fn(g, g, |i, j| trace_of_product(&psis[i], &psis[j]));
        let blocks = omega_block_sums(&projections.omega, design.group_sizes());
        let sigma0_sq = 2.0 * blocks.component_mul(&functionals).sum();

        // rows m_j' = a_j' Θ B' 𝒫'𝒫
        let means = model.mean(design) * projections.compressor_projection();
        let weighted_means = &projections.omega * &means;
        let mut linear = 0.0;
        for (row, grp) in design.row_groups().into_iter().enumerate() {
            let m = weighted_means.row(row).transpose();
            linear += (m.transpose() * &model.sigmas[grp] * &m)[(0, 0)];
        }
        Ok(PopulationMoments {
            q: true_q(&model.theta, design)?,
            sigma2: sigma0_sq + 4.0 * linear,
            sigma0_sq,
            psis,
            functionals,
            weighted_means,
        })
    }

    /// `𝒬/√σ²`.
    pub fn signal_ratio(&self) -> f64 {
        self.q / self.sigma2.sqrt()
    }
}

/// `(σ², σ₀²)` for a known model.
pub fn sigma_full(model: &MeanModel, design: &DesignSpec) -> Result<(f64, f64)> {
    let projections = ProjectionSet::from_design(design)?;
    let moments = PopulationMoments::compute(model, design, &projections)?;
    Ok((moments.sigma2, moments.sigma0_sq))
}

/// Limiting power `Φ(-√(σ₀²/σ²) Φ⁻¹(1-ε) + 𝒬/√σ²)`.
pub fn asymptotic_power(q: f64, sigma2: f64, sigma0_sq: f64, epsilon: f64) -> f64 {
    let signal = q / sigma2.sqrt();
    if signal >= LARGE_SIGNAL_CUTOFF {
        return 1.0;
    }
    normal::cdf(-(sigma0_sq / sigma2).sqrt() * normal::quantile(1.0 - epsilon) + signal)
}
