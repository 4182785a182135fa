//! Design matrices and the projections derived from them.
//!
//! The model is `X = A Θ B' + E` with `A: N×k`, `B: p×q`, and the null
//! hypothesis `L Θ R' = O` with `L: ℓ×k`, `R: r×q`. Every quantity the test
//! needs from the design alone is collected in [`ProjectionSet`]:
//!
//! ```text
//! Π_A = A (A'A)⁻¹ A'
//! Π_H = A (A'A)⁻¹ L' {L (A'A)⁻¹ L'}⁻¹ L (A'A)⁻¹ A'
//! 𝒫   = {R (B'B)⁻¹ R'}^{-1/2} R (B'B)⁻¹ B'
//! [(I-Π_A) ⊙ (I-Π_A)] d = diag(Π_H)
//! Ω   = Π_H - (I-Π_A) diag(d) (I-Π_A)
//! ```
//!
//! `Ω` is symmetric with a zero diagonal, which is what makes
//! `tr(𝒫 X' Ω X 𝒫')` unbiased for the trace functional of `L Θ R'`.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{
    complement, ensure_finite, max_abs, numerical_rank, psd_pinv, spd_inverse, sym_inv_sqrt, symmetrize, Matrix, Vector,
};

/// Relative residual above which the balancing system is declared unsolvable.
pub const BALANCING_TOLERANCE: f64 = 1e-8;

/// Largest diagonal residue of `Ω` accepted before zeroing.
pub const OMEGA_DIAGONAL_TOLERANCE: f64 = 1e-8;

/// The known matrices of a GMANOVA model and the bilateral hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    a: Matrix,
    b: Matrix,
    l: Matrix,
    r: Matrix,
    group_sizes: Vec<usize>,
}

impl DesignSpec {
    /// Builds and validates a design. Rows of `a` are partitioned into
    /// consecutive groups of the given sizes; each group has its own
    /// covariance matrix.
    pub fn new(a: Matrix, b: Matrix, l: Matrix, r: Matrix, group_sizes: Vec<usize>) -> Result<Self> {
        let design = DesignSpec {
            a,
            b,
            l,
            r,
            group_sizes,
        };
        design.validate()?;
        Ok(design)
    }

    pub fn validate(&self) -> Result<()> {
        for (m, name) in [(&self.a, "A"), (&self.b, "B"), (&self.l, "L"), (&self.r, "R")] {
            if m.is_empty() {
                return Err(Error::Design(format!("{name} is empty")));
            }
            ensure_finite(m, name)?;
        }
        let (n, k) = self.a.shape();
        let (p, q) = self.b.shape();
        let (ell, lk) = self.l.shape();
        let (r, rq) = self.r.shape();
        if lk != k {
            return Err(Error::Design(format!("L has {lk} columns but A has {k}")));
        }
        if rq != q {
            return Err(Error::Design(format!("R has {rq} columns but B has {q}")));
        }
        if !(ell <= k && k <= n) {
            return Err(Error::Design(format!(
                "need l <= k <= N, got l = {ell}, k = {k}, N = {n}"
            )));
        }
        if !(r <= q && q <= p) {
            return Err(Error::Design(format!(
                "need r <= q <= p, got r = {r}, q = {q}, p = {p}"
            )));
        }
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::Design(format!(
                "group sizes must be positive, got {:?}",
                self.group_sizes
            )));
        }
        let total: usize = self.group_sizes.iter().sum();
        if total != n {
            return Err(Error::Design(format!("group sizes sum to {total} but A has {n} rows")));
        }
        for (m, name, want) in [
            (&self.a, "A", k),
            (&self.b, "B", q),
            (&self.l, "L", ell),
            (&self.r, "R", r),
        ] {
            let rank = numerical_rank(m);
            if rank != want {
                return Err(Error::Design(format!(
                    "{name} ({}x{}) has numerical rank {rank}, expected {want}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(())
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn l(&self) -> &Matrix {
        &self.l
    }
    pub fn r(&self) -> &Matrix {
        &self.r
    }
    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// Total number of observations `N`.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Observation dimension `p`.
    pub fn p(&self) -> usize {
        self.b.nrows()
    }
    pub fn k(&self) -> usize {
        self.a.ncols()
    }
    pub fn q(&self) -> usize {
        self.b.ncols()
    }
    /// Number of row contrasts `ℓ`.
    pub fn ell(&self) -> usize {
        self.l.nrows()
    }
    /// Number of column contrasts `r`.
    pub fn r_rank(&self) -> usize {
        self.r.nrows()
    }
    pub fn groups(&self) -> usize {
        self.group_sizes.len()
    }

    /// `N̄_i = N_1 + … + N_{i-1}` for every group.
    pub fn group_offsets(&self) -> Vec<usize> {
        self.group_sizes
            .iter()
            .scan(0, |acc, &s| {
                let start = *acc;
                *acc += s;
                Some(start)
            })
            .collect()
    }

    pub fn group_range(&self, group: usize) -> Range<usize> {
        let start: usize = self.group_sizes[..group].iter().sum();
        start..start + self.group_sizes[group]
    }

    /// Group index of every observation row.
    pub fn row_groups(&self) -> Vec<usize> {
        self.group_sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
            .collect()
    }

    /// Row block `A_i` of the between-group design.
    pub fn group_block(&self, group: usize) -> Matrix {
        let range = self.group_range(group);
        self.a.rows(range.start, range.len()).into_owned()
    }

    /// `𝔄 = {L (A'A)⁻¹ L'}⁻¹`.
    pub fn row_weight(&self) -> Result<Matrix> {
        let ata_inv = spd_inverse(&(self.a.transpose() * &self.a), "A'A")?;
        let m = &self.l * ata_inv * self.l.transpose();
        spd_inverse(&m, "L(A'A)^-1 L'")
    }

    /// `𝔅 = {R (B'B)⁻¹ R'}⁻¹`.
    pub fn column_weight(&self) -> Result<Matrix> {
        let btb_inv = spd_inverse(&(self.b.transpose() * &self.b), "B'B")?;
        let m = &self.r * btb_inv * self.r.transpose();
        spd_inverse(&m, "R(B'B)^-1 R'")
    }
}

/// Orthogonal projector onto the column space of `m`.
///
/// Full column rank inputs use `M (M'M)⁻¹ M'` directly, which keeps indicator
/// designs exact (`1/N_i` blocks); rank-deficient inputs fall back to the
/// Moore-Penrose form `M (M'M)⁺ M'`.
pub fn projector(m: &Matrix) -> Result<Matrix> {
    ensure_finite(m, "projector input")?;
    let n = m.nrows();
    if m.ncols() == 0 || max_abs(m) == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let gram = m.transpose() * m;
    let inner = if numerical_rank(m) == m.ncols() {
        gram.clone().try_inverse().unwrap_or_else(|| psd_pinv(&gram))
    } else {
        psd_pinv(&gram)
    };
    let mut p = m * inner * m.transpose();
    symmetrize(&mut p);
    Ok(p)
}

/// `Π_H` and its diagonal `(h_11, …, h_NN)`.
pub fn hypothesis_projector(design: &DesignSpec) -> Result<(Matrix, Vector)> {
    let a = design.a();
    let ata_inv = spd_inverse(&(a.transpose() * a), "A'A")?;
    let g = a * &ata_inv * design.l().transpose();
    let middle = design.l() * &ata_inv * design.l().transpose();
    let middle_inv = spd_inverse(&middle, "L(A'A)^-1 L'")?;
    let mut pi_h = &g * middle_inv * g.transpose();
    symmetrize(&mut pi_h);
    let diag = pi_h.diagonal();
    Ok((pi_h, diag))
}

/// Row compressor `𝒫 = {R (B'B)⁻¹ R'}^{-1/2} R (B'B)⁻¹ B'` (`r×p`).
pub fn row_compressor(design: &DesignSpec) -> Result<Matrix> {
    let b = design.b();
    let btb_inv = spd_inverse(&(b.transpose() * b), "B'B")?;
    let rb = design.r() * &btb_inv;
    let middle = &rb * design.r().transpose();
    let root = sym_inv_sqrt(&middle, "R(B'B)^-1 R'")?;
    Ok(root * rb * b.transpose())
}

/// Coefficient matrix `(I-Π_A) ⊙ (I-Π_A)` of the balancing system.
pub fn balancing_matrix(pi_a: &Matrix) -> Matrix {
    complement(pi_a).map(|v| v * v)
}

/// Minimum-norm least-squares solution of the balancing system together with
/// its relative residual.
#[derive(Debug, Clone)]
pub struct BalancingWeights {
    pub d: Vector,
    pub relative_residual: f64,
}

impl BalancingWeights {
    pub fn is_solvable(&self) -> bool {
        self.relative_residual <= BALANCING_TOLERANCE
    }
}

/// Solves `[(I-Π_A) ⊙ (I-Π_A)] d = h` in the minimum-norm least-squares sense.
///
/// The coefficient matrix is a Hadamard product of two PSD matrices, hence
/// PSD, so its pseudo-inverse comes from the symmetric eigendecomposition.
pub fn balancing_least_squares(pi_a: &Matrix, h_diag: &Vector) -> Result<BalancingWeights> {
    if pi_a.nrows() != h_diag.len() || !pi_a.is_square() {
        return Err(Error::Input(format!(
            "balancing system shape mismatch: Π_A is {}x{}, h has length {}",
            pi_a.nrows(),
            pi_a.ncols(),
            h_diag.len()
        )));
    }
    let coeff = balancing_matrix(pi_a);
    let d = psd_pinv(&coeff) * h_diag;
    let residual = (&coeff * &d - h_diag).norm();
    let scale = h_diag.norm();
    let relative_residual = if scale > 0.0 { residual / scale } else { residual };
    Ok(BalancingWeights { d, relative_residual })
}

/// Balancing weights `d`, or [`Error::NoBalancingSolution`] when the system
/// is inconsistent for this design.
pub fn solve_balancing_weights(pi_a: &Matrix, h_diag: &Vector) -> Result<Vector> {
    let weights = balancing_least_squares(pi_a, h_diag)?;
    if !weights.is_solvable() {
        return Err(Error::NoBalancingSolution {
            relative_residual: weights.relative_residual,
            tolerance: BALANCING_TOLERANCE,
        });
    }
    Ok(weights.d)
}

/// `Ω = Π_H - (I-Π_A) diag(d) (I-Π_A)` with its diagonal forced to zero.
pub fn build_omega(pi_h: &Matrix, pi_a: &Matrix, d: &Vector) -> Result<Matrix> {
    let c = complement(pi_a);
    let mut cd = c.clone();
    for (j, &dj) in d.iter().enumerate() {
        cd.column_mut(j).scale_mut(dj);
    }
    let mut omega = pi_h - cd * &c;
    symmetrize(&mut omega);
    let worst = omega.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if worst > OMEGA_DIAGONAL_TOLERANCE {
        return Err(Error::Internal(format!(
            "balancing weights leave a diagonal residue of {worst:.3e} in Ω"
        )));
    }
    omega.fill_diagonal(0.0);
    Ok(omega)
}

/// Everything the test needs from the design alone.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub pi_a: Matrix,
    pub pi_h: Matrix,
    pub compressor: Matrix,
    pub d: Vector,
    pub omega: Matrix,
}

impl ProjectionSet {
    pub fn from_design(design: &DesignSpec) -> Result<Self> {
        let pi_a = projector(design.a())?;
        let (pi_h, h_diag) = hypothesis_projector(design)?;
        let compressor = row_compressor(design)?;
        let d = solve_balancing_weights(&pi_a, &h_diag)?;
        let omega = build_omega(&pi_h, &pi_a, &d)?;
        Ok(ProjectionSet {
            pi_a,
            pi_h,
            compressor,
            d,
            omega,
        })
    }

    pub fn h_diag(&self) -> Vector {
        self.pi_h.diagonal()
    }

    /// `𝒫'𝒫`, the `p×p` projector induced by the compressor.
    pub fn compressor_projection(&self) -> Matrix {
        self.compressor.transpose() * &self.compressor
    }
}
