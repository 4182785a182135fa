//! Canonical designs for the special cases of the bilateral hypothesis.
//!
//! The test depends on `L` and `R` only through their row spaces, so each
//! builder fixes one full-rank choice: last-level reference contrasts for
//! `L`, first differences for the profile `R`, and an orthonormal
//! polynomial basis for growth curves.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::linalg::{group_indicator, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    OneWay,
    TwoWay,
    Parallelism,
    GrowthCurve,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::OneWay,
        ScenarioKind::TwoWay,
        ScenarioKind::Parallelism,
        ScenarioKind::GrowthCurve,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::OneWay => "one-way",
            ScenarioKind::TwoWay => "two-way",
            ScenarioKind::Parallelism => "parallelism",
            ScenarioKind::GrowthCurve => "growth-curve",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown scenario '{s}' (expected one of one-way, two-way, parallelism, growth-curve)"
            ))
        })
    }
}

/// Which effect a two-way layout tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoWayEffect {
    MainA,
    MainB,
    Interaction,
}

impl FromStr for TwoWayEffect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main_a" | "main-a" => Ok(TwoWayEffect::MainA),
            "main_b" | "main-b" => Ok(TwoWayEffect::MainB),
            "interaction" => Ok(TwoWayEffect::Interaction),
            _ => Err(Error::Config(format!(
                "unknown two-way effect '{s}' (expected main_a, main_b or interaction)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub name: String,
    pub design: DesignSpec,
    pub null_hypothesis: String,
}

/// `(I_{g-1} | -1_{g-1})`.
pub fn reference_contrasts(levels: usize) -> Matrix {
    let mut c = Matrix::zeros(levels - 1, levels);
    for i in 0..levels - 1 {
        c[(i, i)] = 1.0;
        c[(i, levels - 1)] = -1.0;
    }
    c
}

/// First-difference matrix `(p-1)×p` with rows `e_{j+1} - e_j`.
pub fn first_differences(p: usize) -> Matrix {
    let mut d = Matrix::zeros(p - 1, p);
    for j in 0..p - 1 {
        d[(j, j)] = -1.0;
        d[(j, j + 1)] = 1.0;
    }
    d
}

/// Orthonormal polynomial basis of degree `degree` on `p` equally spaced points.
///
/// Columns come from repeated multiplication by the centred time grid with
/// two passes of modified Gram–Schmidt after each step.
pub fn orthonormal_polynomials(p: usize, degree: usize) -> Result<Matrix> {
    if degree + 1 > p {
        return Err(Error::Design(format!(
            "polynomial degree {degree} needs at least {} time points, got p = {p}",
            degree + 1
        )));
    }
    let t: Vec<f64> = (0..p)
        .map(|j| {
            if p == 1 {
                0.0
            } else {
                2.0 * j as f64 / (p - 1) as f64 - 1.0
            }
        })
        .collect();
    let mut basis = Matrix::zeros(p, degree + 1);
    let mut col = nalgebra::DVector::from_element(p, 1.0);
    for d in 0..=degree {
        if d > 0 {
            col = basis
                .column(d - 1)
                .component_mul(&nalgebra::DVector::from_column_slice(&t));
        }
        for _ in 0..2 {
            for prev in 0..d {
                let proj = basis.column(prev).dot(&col);
                col -= basis.column(prev) * proj;
            }
        }
        let norm = col.norm();
        if norm < 1e-10 {
            return Err(Error::Design(format!("polynomial basis lost rank at degree {d}")));
        }
        basis.set_column(d, &(&col / norm));
    }
    Ok(basis)
}

fn check_groups(group_sizes: &[usize], p: usize) -> Result<()> {
    if group_sizes.len() < 2 {
        return Err(Error::Design(format!(
            "need at least two groups, got {}",
            group_sizes.len()
        )));
    }
    if group_sizes.contains(&0) {
        return Err(Error::Design(format!("empty group in {group_sizes:?}")));
    }
    if p == 0 {
        return Err(Error::Design("p must be positive".into()));
    }
    Ok(())
}

/// `A = diag(1_{N_1}, …, 1_{N_g})`, `B = R = I_p`, `L = (I_{g-1} | -1)`.
pub fn one_way_manova(group_sizes: &[usize], p: usize) -> Result<Scenario> {
    check_groups(group_sizes, p)?;
    let g = group_sizes.len();
    let design = DesignSpec::new(
        group_indicator(group_sizes),
        Matrix::identity(p, p),
        reference_contrasts(g),
        Matrix::identity(p, p),
        group_sizes.to_vec(),
    )?;
    Ok(Scenario {
        kind: ScenarioKind::OneWay,
        name: format!("one-way MANOVA, g = {g}, p = {p}"),
        design,
        null_hypothesis: "all group mean vectors are equal".into(),
    })
}

/// Cell-means two-way layout. `cell_sizes` lists cells in row-major order
/// (`cell (i, j)` at `i * levels_b + j`); every cell is its own covariance group.
pub fn two_way_manova(
    levels_a: usize,
    levels_b: usize,
    cell_sizes: &[usize],
    p: usize,
    effect: TwoWayEffect,
) -> Result<Scenario> {
    if levels_a < 2 || levels_b < 2 {
        return Err(Error::Design(format!(
            "two-way layout needs at least 2 levels per factor, got {levels_a}x{levels_b}"
        )));
    }
    if cell_sizes.len() != levels_a * levels_b {
        return Err(Error::Design(format!(
            "{} cell sizes for a {levels_a}x{levels_b} layout",
            cell_sizes.len()
        )));
    }
    if let Some(cell) = cell_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Design(format!(
            "cell ({}, {}) is empty",
            cell / levels_b,
            cell % levels_b
        )));
    }
    check_groups(cell_sizes, p)?;
    let avg = |levels: usize| Matrix::from_element(1, levels, 1.0 / levels as f64);
    let (l, null) = match effect {
        TwoWayEffect::MainA => (
            reference_contrasts(levels_a).kronecker(&avg(levels_b)),
            "no main effect of factor A",
        ),
        TwoWayEffect::MainB => (
            avg(levels_a).kronecker(&reference_contrasts(levels_b)),
            "no main effect of factor B",
        ),
        TwoWayEffect::Interaction => (
            reference_contrasts(levels_a).kronecker(&reference_contrasts(levels_b)),
            "no A x B interaction",
        ),
    };
    let design = DesignSpec::new(
        group_indicator(cell_sizes),
        Matrix::identity(p, p),
        l,
        Matrix::identity(p, p),
        cell_sizes.to_vec(),
    )?;
    Ok(Scenario {
        kind: ScenarioKind::TwoWay,
        name: format!("two-way MANOVA {levels_a}x{levels_b} ({effect:?}), p = {p}"),
        design,
        null_hypothesis: null.into(),
    })
}

/// Profile analysis: are the group mean profiles parallel?
pub fn profile_parallelism(group_sizes: &[usize], p: usize) -> Result<Scenario> {
    check_groups(group_sizes, p)?;
    if p < 2 {
        return Err(Error::Design("parallelism needs p >= 2".into()));
    }
    let g = group_sizes.len();
    let design = DesignSpec::new(
        group_indicator(group_sizes),
        Matrix::identity(p, p),
        reference_contrasts(g),
        first_differences(p),
        group_sizes.to_vec(),
    )?;
    Ok(Scenario {
        kind: ScenarioKind::Parallelism,
        name: format!("profile parallelism, g = {g}, p = {p}"),
        design,
        null_hypothesis: "group mean profiles are parallel".into(),
    })
}

/// Polynomial growth curves of the given degree with one coefficient row per group.
pub fn growth_curve(group_sizes: &[usize], p: usize, degree: usize) -> Result<Scenario> {
    check_groups(group_sizes, p)?;
    let b = orthonormal_polynomials(p, degree)?;
    let q = degree + 1;
    let g = group_sizes.len();
    let design = DesignSpec::new(
        group_indicator(group_sizes),
        b,
        reference_contrasts(g),
        Matrix::identity(q, q),
        group_sizes.to_vec(),
    )?;
    Ok(Scenario {
        kind: ScenarioKind::GrowthCurve,
        name: format!("growth curve of degree {degree}, g = {g}, p = {p}"),
        design,
        null_hypothesis: "all groups share the same growth-curve coefficients".into(),
    })
}
