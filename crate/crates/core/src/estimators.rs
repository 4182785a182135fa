//! Per-group scatter statistics and unbiased estimators of the covariance
//! functionals `a_{i,2} = tr(Ψ_i²)` and `b_ij = tr(Ψ_i Ψ_j)`, where
//! `Ψ_i = 𝒫 Σ_i 𝒫'`.
//!
//! With `m_i = N_i - k_i` residual degrees of freedom in group `i`,
//!
//! ```text
//! S_i = 𝒫 X_i' (I - Π_{A_i}) X_i 𝒫' / m_i
//! Q_i = Σ_j ‖𝒫 (x_j - x̂_j)‖⁴ / m_i
//! â_{i,2} = [ (m²τ₂ - τ₁²) tr(S²) - (mτ₂ - τ₁²) (tr S)² - (m-1) τ₁ Q ] / (m τ₃)
//! b̂_ij   = tr(S_i S_j)
//! ```
//!
//! where `τ_j = tr({(I-Π_{A_i}) ⊙ (I-Π_{A_i})}^j)` for `j = 1, 2` and
//! `τ₃ = (m-1)/m² · {m(m+2)τ₂ - 3τ₁²}`. The `Q` term carries `τ₁`: that is
//! the coefficient that cancels the fourth-cumulant contribution and reduces
//! to the one-way expression in [`a2_hat_one_way`].

use std::ops::Range;

use crate::design::{projector, DesignSpec};
use crate::error::{Error, Result};
use crate::linalg::{complement, ensure_finite, numerical_rank, trace_of_product, Matrix};

/// Observations partitioned into consecutive groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    x: Matrix,
    group_sizes: Vec<usize>,
    labels: Option<Vec<String>>,
}

impl GroupedSample {
    pub fn new(x: Matrix, group_sizes: Vec<usize>) -> Result<Self> {
        ensure_finite(&x, "X")?;
        if group_sizes.is_empty() || group_sizes.contains(&0) {
            return Err(Error::Input(format!(
                "group sizes must be positive, got {group_sizes:?}"
            )));
        }
        let total: usize = group_sizes.iter().sum();
        if total != x.nrows() {
            return Err(Error::Input(format!(
                "group sizes sum to {total} but X has {} rows",
                x.nrows()
            )));
        }
        Ok(GroupedSample {
            x,
            group_sizes,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.group_sizes.len() {
            return Err(Error::Input(format!(
                "{} labels for {} groups",
                labels.len(),
                self.group_sizes.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }
    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }
    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn group_range(&self, group: usize) -> Range<usize> {
        let start: usize = self.group_sizes[..group].iter().sum();
        start..start + self.group_sizes[group]
    }

    pub fn group_block(&self, group: usize) -> Matrix {
        let range = self.group_range(group);
        self.x.rows(range.start, range.len()).into_owned()
    }

    /// Checks that the sample matches the design's row partition and `p`.
    pub fn check_against(&self, design: &DesignSpec) -> Result<()> {
        if self.p() != design.p() {
            return Err(Error::Input(format!(
                "data has p = {} columns but the design's B has p = {} rows",
                self.p(),
                design.p()
            )));
        }
        if self.group_sizes != design.group_sizes() {
            return Err(Error::Input(format!(
                "data group sizes {:?} differ from design group sizes {:?}",
                self.group_sizes,
                design.group_sizes()
            )));
        }
        Ok(())
    }
}

/// `(τ₁, τ₂, τ₃)` for one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tau {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

/// Compressed residual scatter of one group.
#[derive(Debug, Clone)]
pub struct GroupScatter {
    /// `S_i`, `r×r`.
    pub s: Matrix,
    /// `Q_i`.
    pub q: f64,
    /// `k_i = rank(A_i)`.
    pub rank: usize,
    pub size: usize,
}

impl GroupScatter {
    pub fn dof(&self) -> usize {
        self.size - self.rank
    }
}

fn tag_group(err: Error, group: usize) -> Error {
    match err {
        Error::DegenerateGroup { size, rank, .. } => Error::DegenerateGroup { group, size, rank },
        Error::EstimatorUndefined { reason, .. } => Error::EstimatorUndefined { group, reason },
        other => other,
    }
}

fn scatter_from_compressed(y_i: &Matrix, pi_a_i: &Matrix, rank: usize) -> Result<GroupScatter> {
    let size = y_i.nrows();
    if size <= rank {
        return Err(Error::DegenerateGroup { group: 0, size, rank });
    }
    let dof = (size - rank) as f64;
    let resid = complement(pi_a_i) * y_i;
    let s = resid.tr_mul(&resid) / dof;
    let q = resid.row_iter().map(|row| row.norm_squared().powi(2)).sum::<f64>() / dof;
    Ok(GroupScatter { s, q, rank, size })
}

/// `S_i`, `Q_i` and `k_i` for group block `X_i` with design block `A_i`.
pub fn group_residual_scatter(x_i: &Matrix, a_i: &Matrix, compressor: &Matrix) -> Result<GroupScatter> {
    if x_i.nrows() != a_i.nrows() || x_i.ncols() != compressor.ncols() {
        return Err(Error::Input(format!(
            "scatter shapes: X_i {}x{}, A_i {}x{}, 𝒫 {}x{}",
            x_i.nrows(),
            x_i.ncols(),
            a_i.nrows(),
            a_i.ncols(),
            compressor.nrows(),
            compressor.ncols()
        )));
    }
    let pi = projector(a_i)?;
    let rank = numerical_rank(a_i);
    scatter_from_compressed(&(x_i * compressor.transpose()), &pi, rank)
}

/// τ coefficients from `Π_{A_i}`.
pub fn tau_coefficients(pi_a_i: &Matrix, size: usize, rank: usize) -> Result<Tau> {
    if size < rank + 2 {
        return Err(Error::DegenerateGroup { group: 0, size, rank });
    }
    let h = complement(pi_a_i).map(|v| v * v);
    let t1 = h.trace();
    let t2 = h.norm_squared();
    let m = (size - rank) as f64;
    let t3 = (m - 1.0) / (m * m) * (m * (m + 2.0) * t2 - 3.0 * t1 * t1);
    if t3.abs() <= 1e-12 * (m * (m + 2.0) * t2).max(1.0) {
        return Err(Error::EstimatorUndefined {
            group: 0,
            reason: format!("tau_3 = {t3:e}"),
        });
    }
    Ok(Tau { t1, t2, t3 })
}

/// Unbiased estimator of `tr(Ψ_i²)`. May be negative for general `A`.
pub fn a2_hat(s: &Matrix, q: f64, tau: &Tau, size: usize, rank: usize) -> Result<f64> {
    if size < rank + 2 {
        return Err(Error::DegenerateGroup { group: 0, size, rank });
    }
    let m = (size - rank) as f64;
    let Tau { t1, t2, t3 } = *tau;
    let tr_s = s.trace();
    let tr_s2 = trace_of_product(s, s);
    let numer = (m * m * t2 - t1 * t1) * tr_s2 - (m * t2 - t1 * t1) * tr_s * tr_s - (m - 1.0) * t1 * q;
    Ok(numer / (m * t3))
}

/// The one-way specialisation (`A_i = 1_{N_i}`):
/// `(N-1)/(N(N-2)(N-3)) · {(N-1)(N-2) tr(S²) + (tr S)² - N Q}`.
pub fn a2_hat_one_way(s: &Matrix, q: f64, size: usize) -> Result<f64> {
    if size < 4 {
        return Err(Error::EstimatorUndefined {
            group: 0,
            reason: format!("one-way estimator needs N_i >= 4, got {size}"),
        });
    }
    let n = size as f64;
    let tr_s = s.trace();
    let tr_s2 = trace_of_product(s, s);
    Ok((n - 1.0) / (n * (n - 2.0) * (n - 3.0)) * ((n - 1.0) * (n - 2.0) * tr_s2 + tr_s * tr_s - n * q))
}

/// Unbiased estimator of `tr(Ψ_i Ψ_j)` for independent groups.
pub fn b_hat(s_i: &Matrix, s_j: &Matrix) -> Result<f64> {
    if s_i.shape() != s_j.shape() || !s_i.is_square() {
        return Err(Error::Input(format!(
            "b_hat shapes differ: {:?} vs {:?}",
            s_i.shape(),
            s_j.shape()
        )));
    }
    Ok(trace_of_product(s_i, s_j))
}

/// `V` assembled from a `g×g` table whose diagonal holds `a_{i,2}` and whose
/// off-diagonal entries hold `b_ij`.
pub fn v_from_table(table: &Matrix, group_sizes: &[usize]) -> Matrix {
    let n: usize = group_sizes.iter().sum();
    let groups: Vec<usize> = group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();
    Matrix::from_fn(n, n, |i, j| table[(groups[i], groups[j])])
}

/// `V̂` from per-group `â_{i,2}` and the symmetric table of `b̂_ij` (its
/// diagonal is ignored).
pub fn v_hat(a2_hats: &[f64], b_hats: &Matrix, group_sizes: &[usize]) -> Result<Matrix> {
    let g = group_sizes.len();
    if a2_hats.len() != g || b_hats.shape() != (g, g) {
        return Err(Error::Input(format!(
            "v_hat: {} groups, {} a2 values, b table {:?}",
            g,
            a2_hats.len(),
            b_hats.shape()
        )));
    }
    let table = Matrix::from_fn(g, g, |i, j| if i == j { a2_hats[i] } else { b_hats[(i, j)] });
    Ok(v_from_table(&table, group_sizes))
}

/// `σ̂₀² = 2 tr((Ω ⊙ Ω) V̂)`. Not clamped: a non-positive value is a
/// legitimate outcome for general designs.
pub fn sigma0_hat(omega: &Matrix, v: &Matrix) -> f64 {
    2.0 * omega.zip_fold(v, 0.0, |acc, w, v| acc + w * w * v)
}

/// Sums of `ω_ij²` over each `(group, group)` block of `Ω`.
pub fn omega_block_sums(omega: &Matrix, group_sizes: &[usize]) -> Matrix {
    let g = group_sizes.len();
    let offsets: Vec<usize> = group_sizes
        .iter()
        .scan(0, |acc, &s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect();
    Matrix::from_fn(g, g, |a, b| {
        omega
            .view((offsets[a], offsets[b]), (group_sizes[a], group_sizes[b]))
            .iter()
            .map(|w| w * w)
            .sum()
    })
}

/// Design-only per-group quantities: `Π_{A_i}`, `k_i` and τ.
#[derive(Debug, Clone)]
pub struct GroupGeometry {
    pub range: Range<usize>,
    pub pi_a_i: Matrix,
    pub rank: usize,
    pub tau: Tau,
}

impl GroupGeometry {
    pub fn for_design(design: &DesignSpec) -> Result<Vec<GroupGeometry>> {
        (0..design.groups())
            .map(|g| {
                let a_i = design.group_block(g);
                let pi_a_i = projector(&a_i)?;
                let rank = numerical_rank(&a_i);
                let tau = tau_coefficients(&pi_a_i, a_i.nrows(), rank).map_err(|e| tag_group(e, g))?;
                Ok(GroupGeometry {
                    range: design.group_range(g),
                    pi_a_i,
                    rank,
                    tau,
                })
            })
            .collect()
    }
}

/// All variance ingredients for one sample.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    pub scatters: Vec<GroupScatter>,
    pub taus: Vec<Tau>,
    pub a2_hats: Vec<f64>,
    /// Symmetric `g×g`; the diagonal repeats `a2_hats`.
    pub b_hats: Matrix,
    pub sigma0_hat: f64,
}

impl VarianceEstimate {
    /// Estimates from compressed data `Y = X 𝒫'` (`N×r`).
    pub fn from_compressed(y: &Matrix, geometry: &[GroupGeometry], omega_blocks: &Matrix) -> Result<Self> {
        let scatters = geometry
            .iter()
            .enumerate()
            .map(|(g, geo)| {
                let y_i = y.rows(geo.range.start, geo.range.len()).into_owned();
                scatter_from_compressed(&y_i, &geo.pi_a_i, geo.rank).map_err(|e| tag_group(e, g))
            })
            .collect::<Result<Vec<_>>>()?;
        let a2_hats = scatters
            .iter()
            .zip(geometry)
            .enumerate()
            .map(|(g, (sc, geo))| a2_hat(&sc.s, sc.q, &geo.tau, sc.size, sc.rank).map_err(|e| tag_group(e, g)))
            .collect::<Result<Vec<_>>>()?;
        let g = scatters.len();
        let mut b_hats = Matrix::zeros(g, g);
        for i in 0..g {
            b_hats[(i, i)] = a2_hats[i];
            for j in (i + 1)..g {
                let b = trace_of_product(&scatters[i].s, &scatters[j].s);
                b_hats[(i, j)] = b;
                b_hats[(j, i)] = b;
            }
        }
        let sigma0_hat = 2.0 * omega_blocks.component_mul(&b_hats).sum();
        Ok(VarianceEstimate {
            scatters,
            taus: geometry.iter().map(|geo| geo.tau).collect(),
            a2_hats,
            b_hats,
            sigma0_hat,
        })
    }

    /// `V̂` as an `N×N` matrix.
    pub fn v_hat(&self) -> Matrix {
        let sizes: Vec<usize> = self.scatters.iter().map(|s| s.size).collect();
        v_from_table(&self.b_hats, &sizes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn mean_projector(n: usize) -> Matrix {
        Matrix::from_element(n, n, 1.0 / n as f64)
    }

    #[test]
    fn zero_residuals() {
        let row = [1.0, -2.0, 0.5];
        let x = Matrix::from_fn(5, 3, |_, j| row[j]);
        let sc = group_residual_scatter(&x, &Matrix::from_element(5, 1, 1.0), &Matrix::identity(3, 3)).unwrap();
        assert!(max_abs(&sc.s) < 1e-15);
        assert!(sc.q.abs() < 1e-30);
        assert_eq!(sc.rank, 1);
        let tau = tau_coefficients(&mean_projector(5), 5, 1).unwrap();
        assert!(a2_hat(&sc.s, sc.q, &tau, 5, 1).unwrap().abs() < 1e-28);
    }

    #[test]
    fn one_way_fitted_values_are_group_means() {
        let x = Matrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 0.0, 2.0, 1.0, 6.0, 5.0]);
        let sc = group_residual_scatter(&x, &Matrix::from_element(4, 1, 1.0), &Matrix::identity(2, 2)).unwrap();
        let mean = x.row_mean();
        let resid = Matrix::from_fn(4, 2, |i, j| x[(i, j)] - mean[j]);
        let want = resid.transpose() * &resid / 3.0;
        assert!(max_abs(&(sc.s - want)) < 1e-14);
    }

    #[test]
    fn degenerate_group_rejected() {
        let x = Matrix::zeros(2, 2);
        let err = group_residual_scatter(&x, &Matrix::identity(2, 2), &Matrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateGroup { size: 2, rank: 2, .. }));
    }

    #[test]
    fn tau_one_way_five() {
        let tau = tau_coefficients(&mean_projector(5), 5, 1).unwrap();
        assert!((tau.t1 - 3.2).abs() < 1e-14);
        assert!((tau.t2 - 2.08).abs() < 1e-14);
        assert!((tau.t3 - 3.6).abs() < 1e-13);
    }

    #[test]
    fn tau_one_way_four_is_one() {
        let tau = tau_coefficients(&mean_projector(4), 4, 1).unwrap();
        assert!((tau.t3 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tau_without_design() {
        for n in [3usize, 6, 9] {
            let tau = tau_coefficients(&Matrix::zeros(n, n), n, 0).unwrap();
            let nf = n as f64;
            assert_eq!(tau.t1, nf);
            assert_eq!(tau.t2, nf);
            let want = (nf - 1.0) / (nf * nf) * (nf * (nf + 2.0) * nf - 3.0 * nf * nf);
            assert!((tau.t3 - want).abs() < 1e-12);
            // simplifies to (N-1)^2
            assert!((tau.t3 - (nf - 1.0).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_needs_two_residual_degrees() {
        let err = tau_coefficients(&mean_projector(2), 2, 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateGroup { .. }));
    }

    #[test]
    fn one_way_three_has_zero_tau3() {
        // (N-2)^2 (N-3)/N vanishes at N = 3.
        let err = tau_coefficients(&mean_projector(3), 3, 1).unwrap_err();
        assert!(matches!(err, Error::EstimatorUndefined { .. }), "{err}");
    }

    #[test]
    fn b_hat_traces() {
        let i2 = Matrix::identity(2, 2);
        assert_eq!(b_hat(&i2, &i2).unwrap(), 2.0);
        let sj = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_eq!(b_hat(&i2, &sj).unwrap(), 4.0);
        assert!(b_hat(&i2, &Matrix::identity(3, 3)).is_err());
    }

    #[test]
    fn v_hat_assembly() {
        let b = Matrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let v = v_hat(&[3.0, 5.0], &b, &[2, 2]).unwrap();
        let want = Matrix::from_row_slice(4, 4, &[3., 3., 2., 2., 3., 3., 2., 2., 2., 2., 5., 5., 2., 2., 5., 5.]);
        assert_eq!(v, want);
    }

    #[test]
    fn sigma0_zero_omega() {
        assert_eq!(sigma0_hat(&Matrix::zeros(4, 4), &Matrix::from_element(4, 4, 3.0)), 0.0);
    }

    #[test]
    fn block_sums_match_dense_trace() {
        let omega = Matrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { (i + 2 * j) as f64 * 0.1 - 0.3 });
        let sizes = [2, 3];
        let table = Matrix::from_row_slice(2, 2, &[1.5, -0.2, -0.2, 4.0]);
        let dense = sigma0_hat(&omega, &v_from_table(&table, &sizes));
        let blocks = 2.0 * omega_block_sums(&omega, &sizes).component_mul(&table).sum();
        assert!((dense - blocks).abs() < 1e-12);
    }
}
