//! Computable versions of the regularity conditions behind the normal limit.
//!
//! With true `Ψ_i` these are exact finite-`N`, finite-`p` values of the
//! ratios whose limits the asymptotics constrain. In data mode the plug-in
//! `S_i` replaces `Ψ_i` and the report is flagged heuristic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::omega_block_sums;
use crate::linalg::{trace_of_product, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// `max ω_ij² / min_{ω_ij ≠ 0} ω_ij²` over `i < j`.
    pub rho_n: f64,
    /// `max ψ_{i₁i₂i₃i₄} / (Σ_{(i,j)∈𝔍} b_ij)²`.
    pub a2_ratio: f64,
    /// Mean-shift ratio; `None` when the mean structure is unknown (data mode).
    pub a3_ratio: Option<f64>,
    /// `max_i E[z_i⁴]` of the error generator, when known.
    pub d1_bound: Option<f64>,
    /// `max N_i / min N_j`.
    pub group_size_ratio: f64,
    /// Plug-in covariances were used in place of the population ones.
    pub heuristic: bool,
}

/// Inputs for the A3 ratio: rows `m_(i)'` of `Ω M` and the group covariances.
pub struct MeanShift<'a> {
    pub weighted_means: &'a Matrix,
    pub sigmas: &'a [Matrix],
}

pub fn rho_n(omega: &Matrix) -> Result<f64> {
    let n = omega.nrows();
    let scale = omega.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cut = 1e-12 * scale;
    let mut max = 0.0_f64;
    let mut min = f64::INFINITY;
    for j in 0..n {
        for i in 0..j {
            let w = omega[(i, j)];
            if w.abs() > cut {
                max = max.max(w * w);
                min = min.min(w * w);
            }
        }
    }
    if !min.is_finite() {
        return Err(Error::Input(
            "every off-diagonal ω_ij is zero; diagnostics undefined".into(),
        ));
    }
    Ok(max / min)
}

/// Group pairs `(i, j)` whose `Ω` block carries weight, as a boolean table.
fn active_pairs(omega: &Matrix, group_sizes: &[usize]) -> Vec<Vec<bool>> {
    let blocks = omega_block_sums(omega, group_sizes);
    let scale = blocks.iter().fold(0.0_f64, |m, v| m.max(*v));
    let g = group_sizes.len();
    (0..g)
        .map(|i| {
            (0..g)
                .map(|j| blocks[(i, j)] > 1e-24 * scale.max(f64::MIN_POSITIVE))
                .collect()
        })
        .collect()
}

pub fn a2_ratio(psis: &[Matrix], omega: &Matrix, group_sizes: &[usize]) -> f64 {
    let g = psis.len();
    let active = active_pairs(omega, group_sizes);
    let products: Vec<Vec<Matrix>> = (0..g).map(|i| (0..g).map(|j| &psis[i] * &psis[j]).collect()).collect();
    let mut denom = 0.0;
    for i in 0..g {
        for j in 0..g {
            if active[i][j] {
                denom += trace_of_product(&psis[i], &psis[j]);
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    for i1 in 0..g {
        for i2 in 0..g {
            if !active[i1][i2] {
                continue;
            }
            for i3 in 0..g {
                if !(active[i1][i3] && active[i2][i3]) {
                    continue;
                }
                for i4 in 0..g {
                    if !(active[i1][i4] && active[i2][i4] && active[i3][i4]) {
                        continue;
                    }
                    best = best.max(trace_of_product(&products[i1][i2], &products[i3][i4]));
                }
            }
        }
    }
    if !best.is_finite() || denom == 0.0 {
        return 0.0;
    }
    best / (denom * denom)
}

pub fn a3_ratio(shift: &MeanShift<'_>, group_sizes: &[usize]) -> f64 {
    let groups: Vec<usize> = group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();
    let mut all_zero = true;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (row, &grp) in groups.iter().enumerate() {
        let m = shift.weighted_means.row(row).transpose();
        if m.norm_squared() != 0.0 {
            all_zero = false;
        }
        let v = (m.transpose() * &shift.sigmas[grp] * &m)[(0, 0)];
        sum += v;
        sum_sq += v * v;
    }
    if all_zero {
        0.0
    } else {
        sum_sq / (sum * sum)
    }
}

/// Assembles the report. `psis` are population `Ψ_i` (or plug-in `S_i` when
/// `heuristic` is set).
pub fn assumption_diagnostics(
    psis: &[Matrix],
    heuristic: bool,
    omega: &Matrix,
    group_sizes: &[usize],
    shift: Option<MeanShift<'_>>,
    d1_bound: Option<f64>,
) -> Result<DiagnosticsReport> {
    if psis.len() != group_sizes.len() {
        return Err(Error::Input(format!(
            "{} covariance matrices for {} groups",
            psis.len(),
            group_sizes.len()
        )));
    }
    let max_n = *group_sizes.iter().max().unwrap_or(&1) as f64;
    let min_n = *group_sizes.iter().min().unwrap_or(&1) as f64;
    Ok(DiagnosticsReport {
        rho_n: rho_n(omega)?,
        a2_ratio: a2_ratio(psis, omega, group_sizes),
        a3_ratio: shift.map(|s| a3_ratio(&s, group_sizes)),
        d1_bound,
        group_size_ratio: max_n / min_n,
        heuristic,
    })
}
