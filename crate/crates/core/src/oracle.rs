//! Brute-force reference computations.
//!
//! Nothing here calls into `design`, `estimators` or `test_engine` for the
//! quantity it checks: products are explicit triple loops, inverses are
//! Gauss–Jordan, the balancing system goes through a full SVD, and the
//! weighted Frobenius norm uses Cholesky factors instead of symmetric square
//! roots. Costs are `O(N²p)` and up; intended for test-sized problems.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::DesignSpec;
use crate::linalg::{Matrix, Vector};

pub fn dense_mul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.ncols(), b.nrows(), "dense_mul shape mismatch");
    let mut out = Matrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[(i, k)] * b[(k, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

pub fn dense_transpose(a: &Matrix) -> Matrix {
    Matrix::from_fn(a.ncols(), a.nrows(), |i, j| a[(j, i)])
}

fn dense_trace(a: &Matrix) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// Gauss–Jordan inverse with partial pivoting. Panics on a singular input.
pub fn gauss_jordan_inverse(a: &Matrix) -> Matrix {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "inverse of non-square matrix");
    let mut m = a.clone();
    let mut inv = Matrix::identity(n, n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap();
        assert!(m[(pivot, col)].abs() > 1e-300, "singular matrix in oracle inverse");
        m.swap_rows(pivot, col);
        inv.swap_rows(pivot, col);
        let p = m[(col, col)];
        for j in 0..n {
            m[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = m[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        m[(i, j)] -= f * m[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

/// Upper-triangular `U` with `U'U = a`.
pub fn cholesky_upper(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        assert!(d > 0.0, "oracle Cholesky: matrix not positive definite");
        l[(j, j)] = d.sqrt();
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / l[(j, j)];
        }
    }
    dense_transpose(&l)
}

/// Minimum-norm least-squares solution through a full SVD, with the
/// Euclidean residual `‖coeff·x - rhs‖`.
pub fn dense_min_norm_solve(coeff: &Matrix, rhs: &Vector) -> (Vector, f64) {
    let svd = nalgebra::SVD::new(coeff.clone(), true, true);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V' requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cut = 1e-10 * smax;
    let mut x = Vector::zeros(coeff.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            let coef: f64 = (0..rhs.len()).map(|i| u[(i, k)] * rhs[i]).sum::<f64>() / s;
            for j in 0..x.len() {
                x[j] += coef * v_t[(k, j)];
            }
        }
    }
    let mut residual = 0.0;
    for i in 0..coeff.nrows() {
        let mut acc = -rhs[i];
        for j in 0..coeff.ncols() {
            acc += coeff[(i, j)] * x[j];
        }
        residual += acc * acc;
    }
    (x, residual.sqrt())
}

/// Dense reference matrices built straight from the closed-form definitions.
#[derive(Debug, Clone)]
pub struct OracleDesign {
    pub pi_a: Matrix,
    pub pi_h: Matrix,
    /// `𝒫'𝒫` (no square root needed).
    pub compressor_projection: Matrix,
    pub d: Vector,
    pub balancing_residual: f64,
}

impl OracleDesign {
    pub fn new(design: &DesignSpec) -> Self {
        let a = design.a();
        let at = dense_transpose(a);
        let ata_inv = gauss_jordan_inverse(&dense_mul(&at, a));
        let pi_a = dense_mul(&dense_mul(a, &ata_inv), &at);

        let l = design.l();
        let lt = dense_transpose(l);
        let g = dense_mul(&dense_mul(a, &ata_inv), &lt);
        let mid = gauss_jordan_inverse(&dense_mul(&dense_mul(l, &ata_inv), &lt));
        let pi_h = dense_mul(&dense_mul(&g, &mid), &dense_transpose(&g));

        let b = design.b();
        let bt = dense_transpose(b);
        let btb_inv = gauss_jordan_inverse(&dense_mul(&bt, b));
        let r = design.r();
        let rt = dense_transpose(r);
        let f = dense_mul(&dense_mul(b, &btb_inv), &rt);
        let rmid = gauss_jordan_inverse(&dense_mul(&dense_mul(r, &btb_inv), &rt));
        let compressor_projection = dense_mul(&dense_mul(&f, &rmid), &dense_transpose(&f));

        let n = a.nrows();
        let coeff = Matrix::from_fn(n, n, |i, j| {
            let c = if i == j { 1.0 } else { 0.0 } - pi_a[(i, j)];
            c * c
        });
        let h = Vector::from_fn(n, |i, _| pi_h[(i, i)]);
        let (d, balancing_residual) = dense_min_norm_solve(&coeff, &h);
        OracleDesign {
            pi_a,
            pi_h,
            compressor_projection,
            d,
            balancing_residual,
        }
    }

    /// `(I-Π_A) D (I-Π_A)`.
    pub fn correction(&self) -> Matrix {
        let n = self.pi_a.nrows();
        let c = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - self.pi_a[(i, j)]);
        let cd = Matrix::from_fn(n, n, |i, j| c[(i, j)] * self.d[j]);
        dense_mul(&cd, &c)
    }

    pub fn omega(&self) -> Matrix {
        &self.pi_h - self.correction()
    }
}

/// `Q̂ - tr(𝒫 X' (I-Π_A) D (I-Π_A) X 𝒫')` with `Q̂ = tr(𝒫 X' Π_H X 𝒫')`.
pub fn t_by_decomposition(x: &Matrix, design: &DesignSpec) -> f64 {
    t_with_oracle(x, &OracleDesign::new(design))
}

pub fn t_with_oracle(x: &Matrix, oracle: &OracleDesign) -> f64 {
    let xt = dense_transpose(x);
    let q_hat = dense_trace(&dense_mul(
        &dense_mul(&dense_mul(&xt, &oracle.pi_h), x),
        &oracle.compressor_projection,
    ));
    let corr = dense_trace(&dense_mul(
        &dense_mul(&dense_mul(&xt, &oracle.correction()), x),
        &oracle.compressor_projection,
    ));
    q_hat - corr
}

/// `‖U_𝔄 L Θ R' U_𝔅'‖_F²` with Cholesky factors `U'U = 𝔄`, `U'U = 𝔅`; equals
/// the squared Frobenius norm of `𝔄^{1/2} L Θ R' 𝔅^{1/2}`.
pub fn q_by_frobenius(theta: &Matrix, design: &DesignSpec) -> f64 {
    let a = design.a();
    let ata_inv = gauss_jordan_inverse(&dense_mul(&dense_transpose(a), a));
    let l = design.l();
    let frak_a = gauss_jordan_inverse(&dense_mul(&dense_mul(l, &ata_inv), &dense_transpose(l)));
    let b = design.b();
    let btb_inv = gauss_jordan_inverse(&dense_mul(&dense_transpose(b), b));
    let r = design.r();
    let frak_b = gauss_jordan_inverse(&dense_mul(&dense_mul(r, &btb_inv), &dense_transpose(r)));
    let c = dense_mul(&dense_mul(l, theta), &dense_transpose(r));
    let w = dense_mul(
        &dense_mul(&cholesky_upper(&frak_a), &c),
        &dense_transpose(&cholesky_upper(&frak_b)),
    );
    w.iter().map(|v| v * v).sum()
}

/// `n (n-1) ⋯ (n-k+1)`.
pub fn permutations(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64).product()
}

/// `â_{i,2}` for a one-way group as the average of
/// `{(x_k - x_l)'(x_α - x_β)}² / 4` over all ordered 4-tuples of distinct rows.
pub fn a2_by_permutations(x: &Matrix) -> f64 {
    let n = x.nrows();
    assert!(n >= 4, "needs at least four rows");
    let p = x.ncols();
    let diff = |i: usize, j: usize| -> Vec<f64> { (0..p).map(|c| x[(i, c)] - x[(j, c)]).collect() };
    let mut total = 0.0;
    for k in 0..n {
        for l in 0..n {
            if l == k {
                continue;
            }
            let u = diff(k, l);
            for a in 0..n {
                if a == k || a == l {
                    continue;
                }
                for b in 0..n {
                    if b == k || b == l || b == a {
                        continue;
                    }
                    let v = diff(a, b);
                    let dot: f64 = u.iter().zip(&v).map(|(s, t)| s * t).sum();
                    total += dot * dot / 4.0;
                }
            }
        }
    }
    total / permutations(n, 4)
}

/// Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub replications: usize,
}

impl MomentEstimate {
    /// `|mean - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.standard_error
    }
}

/// Replays `estimator` on `reps` independent streams `(seed, j)` and returns
/// the Welford mean and standard error. Single-threaded.
pub fn mc_moment_oracle(mut estimator: impl FnMut(&mut ChaCha8Rng) -> f64, reps: usize, seed: u64) -> MomentEstimate {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for j in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let v = estimator(&mut rng);
        let delta = v - mean;
        mean += delta / (j + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = if reps > 1 { m2 / (reps - 1) as f64 } else { 0.0 };
    MomentEstimate {
        mean,
        standard_error: (var / reps as f64).sqrt(),
        replications: reps,
    }
}
