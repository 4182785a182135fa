//! Production path against the dense references on designs the scenario
//! builders never produce, plus Monte Carlo checks of estimator means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gmanova::design::projector;
use gmanova::estimators::{a2_hat, group_residual_scatter, tau_coefficients};
use gmanova::linalg::{max_abs, sym_sqrt};
use gmanova::oracle::{mc_moment_oracle, q_by_frobenius, t_with_oracle, OracleDesign};
use gmanova::scenarios::orthonormal_polynomials;
use gmanova::{true_q, DesignSpec, Matrix, ProjectionSet, TestPlan};

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Groups with an intercept and a random covariate each; polynomial `B`;
/// `L` compares intercepts, `R` picks the slope contrasts.
fn random_design(rng: &mut ChaCha8Rng) -> DesignSpec {
    let g = rng.random_range(2..=3);
    let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(7..=14)).collect();
    let n: usize = sizes.iter().sum();
    let mut a = Matrix::zeros(n, 2 * g);
    let mut row = 0;
    for (grp, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            a[(row, grp)] = 1.0;
            a[(row, g + grp)] = rng.sample::<f64, _>(StandardNormal);
            row += 1;
        }
    }
    let mut l = Matrix::zeros(g - 1, 2 * g);
    for i in 0..g - 1 {
        l[(i, i)] = 1.0;
        l[(i, i + 1)] = -1.0;
    }
    let p = rng.random_range(4..=30);
    let b = orthonormal_polynomials(p, 2).unwrap();
    let r = Matrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    DesignSpec::new(a, b, l, r, sizes).unwrap()
}

#[test]
fn covariate_designs_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..40 {
        let design = random_design(&mut rng);
        let Ok(proj) = ProjectionSet::from_design(&design) else {
            // no balancing solution: the oracle must agree that the residual is large
            let oracle = OracleDesign::new(&design);
            assert!(oracle.balancing_residual > 1e-8);
            continue;
        };
        let oracle = OracleDesign::new(&design);
        assert!(max_abs(&(&proj.pi_a - &oracle.pi_a)) < 1e-10);
        assert!(max_abs(&(&proj.pi_h - &oracle.pi_h)) < 1e-10);
        let mut omega = oracle.omega();
        omega.fill_diagonal(0.0);
        assert!(max_abs(&(&proj.omega - omega)) < 1e-8);

        let x = normal(&mut rng, design.n(), design.p());
        let fast = TestPlan::new(design.clone()).unwrap().statistic(&x).unwrap();
        let slow = t_with_oracle(&x, &oracle);
        assert!(
            (fast - slow).abs() <= 1e-8 * fast.abs().max(slow.abs()),
            "{fast} vs {slow}"
        );

        let theta = normal(&mut rng, design.k(), design.q());
        let q = true_q(&theta, &design).unwrap();
        assert!((q - q_by_frobenius(&theta, &design)).abs() <= 1e-9 * q.abs());
        checked += 1;
    }
    assert!(checked >= 30, "only {checked} designs were balanceable");
}

/// Group with an intercept and a slope (k_i = 2), skewed errors.
#[test]
fn general_estimator_is_unbiased_with_covariate() {
    let n = 8;
    let p = 3;
    let t: Vec<f64> = (0..n)
        .map(|i| (i as f64 - 3.5) * 0.7 + if i % 3 == 0 { 0.9 } else { 0.0 })
        .collect();
    let a = Matrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
    let tau = tau_coefficients(&projector(&a).unwrap(), n, 2).unwrap();
    let sigma = Matrix::from_fn(p, p, |i, j| 0.6f64.powi((i as i32 - j as i32).abs()) * (1.0 + i as f64));
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let root = sym_sqrt(&sigma);
    let target = (&sigma * &sigma).trace();
    let gamma = Matrix::from_row_slice(2, p, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]);
    let mean = &a * &gamma;
    let draw = |rng: &mut ChaCha8Rng| -> Matrix {
        // standardized Gamma(1): Exp(1) - 1
        let z = Matrix::from_fn(n, p, |_, _| -(1.0 - rng.random::<f64>()).ln() - 1.0);
        &mean + z * &root
    };

    let est = mc_moment_oracle(
        |rng| {
            let sc = group_residual_scatter(&draw(rng), &a, &Matrix::identity(p, p)).unwrap();
            a2_hat(&sc.s, sc.q, &tau, n, 2).unwrap()
        },
        40_000,
        99,
    );
    assert!(
        est.z_score(target).abs() < 4.0,
        "mean {} ± {} vs {target}",
        est.mean,
        est.standard_error
    );

    // the printed τ₂ coefficient on Q is biased; the same draws expose it
    let m = (n - 2) as f64;
    let misprint = mc_moment_oracle(
        |rng| {
            let sc = group_residual_scatter(&draw(rng), &a, &Matrix::identity(p, p)).unwrap();
            let tr = sc.s.trace();
            let tr2 = (&sc.s * &sc.s).trace();
            ((m * m * tau.t2 - tau.t1 * tau.t1) * tr2
                - (m * tau.t2 - tau.t1 * tau.t1) * tr * tr
                - (m - 1.0) * tau.t2 * sc.q)
                / (m * tau.t3)
        },
        40_000,
        99,
    );
    assert!(
        misprint.z_score(target).abs() > 6.0,
        "τ₂ variant z = {}",
        misprint.z_score(target)
    );
}
