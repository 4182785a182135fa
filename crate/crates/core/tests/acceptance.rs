//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its own PASS/FAIL line regardless of output capture.
//! Positional arguments filter criteria by substring of their name.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use gmanova::estimators::{a2_hat, a2_hat_one_way, group_residual_scatter, tau_coefficients};
use gmanova::oracle::{a2_by_permutations, t_by_decomposition};
use gmanova::scenarios::{growth_curve, one_way_manova, profile_parallelism, two_way_manova};
use gmanova::simulation::{default_direction, mean_var, theta_for_signal_ratio};
use gmanova::test_engine::asymptotic_power;
use gmanova::{
    CovarianceSpec, DesignSpec, ErrorDistribution, Matrix, MonteCarlo, PopulationMoments, ProjectionSet, TestPlan,
    TwoWayEffect,
};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

const ERROR_LAWS: [ErrorDistribution; 3] = [
    ErrorDistribution::Gaussian,
    ErrorDistribution::EllipticalT { df: 8.0 },
    ErrorDistribution::StandardizedGamma { shape: 1.0 },
];

// 1
fn statistic_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    let mut count = [0usize; 4];
    for i in 0..200 {
        let kind = i % 4;
        let p = rng.random_range(3..=100);
        let design = match kind {
            0 => {
                let g = rng.random_range(2..=4);
                let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(4..=15)).collect();
                one_way_manova(&sizes, p)
            }
            1 => {
                let (la, lb) = if rng.random_bool(0.5) { (2, 2) } else { (2, 3) };
                let cells: Vec<usize> = (0..la * lb).map(|_| rng.random_range(4..=10)).collect();
                let effect = [TwoWayEffect::MainA, TwoWayEffect::MainB, TwoWayEffect::Interaction][i / 4 % 3];
                two_way_manova(la, lb, &cells, p, effect)
            }
            2 => {
                let g = rng.random_range(2..=4);
                let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(4..=15)).collect();
                profile_parallelism(&sizes, p)
            }
            _ => {
                let g = rng.random_range(2..=4);
                let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(4..=15)).collect();
                growth_curve(&sizes, p, rng.random_range(1..=3.min(p - 1)))
            }
        }
        .expect("scenario builds")
        .design;
        let shift = gaussian_matrix(&mut rng, design.n(), 1) * gaussian_matrix(&mut rng, 1, design.p());
        let x = gaussian_matrix(&mut rng, design.n(), design.p()) + shift;
        let fast = TestPlan::new(design.clone()).unwrap().statistic(&x).unwrap();
        worst = worst.max(relative(fast, t_by_decomposition(&x, &design)));
        count[kind] += 1;
    }
    verdict(
        worst <= 1e-8,
        format!("max relative difference {worst:.2e} over {count:?} instances (one-way, two-way, parallelism, growth)"),
    )
}

// 2
fn unbiasedness() -> Verdict {
    let p = 50;
    let design = one_way_manova(&[20, 20], p).unwrap().design;
    let covs = [CovarianceSpec::ar1(0.5, 1.0), CovarianceSpec::Identity { scale: 2.0 }];
    let sigmas: Vec<Matrix> = covs.iter().map(|c| c.matrix(p)).collect();
    let theta = theta_for_signal_ratio(&design, &default_direction(&design), &sigmas, 1.0).unwrap();
    let reps = 20_000;
    let mut ok = true;
    let mut lines = Vec::new();
    for dist in [
        ErrorDistribution::Gaussian,
        ErrorDistribution::StandardizedGamma { shape: 1.0 },
    ] {
        let mc = MonteCarlo::new(design.clone(), theta.clone(), &covs, &[dist], 0.05, 2026).unwrap();
        let m = mc.moments();
        let targets = [m.q, m.functionals[(0, 0)], m.functionals[(1, 1)], m.functionals[(0, 1)]];
        let mut cols: [Vec<f64>; 4] = Default::default();
        for rep in 0..reps {
            let x = mc.draw(rep);
            let est = mc.plan().estimate(&x).unwrap();
            let values = [
                mc.plan().statistic(&x).unwrap(),
                est.a2_hats[0],
                est.a2_hats[1],
                est.b_hats[(0, 1)],
            ];
            for k in 0..4 {
                cols[k].push(values[k] - targets[k]);
            }
        }
        let mut zs = Vec::new();
        for col in &cols {
            let (mean, var) = mean_var(col.iter().copied());
            let z = mean / (var / reps as f64).sqrt();
            ok &= z.abs() <= 3.0;
            zs.push(format!("{z:+.2}"));
        }
        lines.push(format!("{}: z(T, a1, a2, b12) = [{}]", dist.name(), zs.join(", ")));
    }
    verdict(ok, lines.join("; "))
}

// 3
fn two_sample_closed_forms() -> Verdict {
    let mut worst = 0.0_f64;
    for n in [3usize, 5, 10] {
        for p in [4usize, 50] {
            let design = one_way_manova(&[n, n], p).unwrap().design;
            let proj = ProjectionSet::from_design(&design).unwrap();
            let nf = n as f64;
            for &d in proj.d.iter() {
                worst = worst.max((d - 1.0 / (2.0 * (nf - 1.0))).abs());
            }
            for i in 0..2 * n {
                for j in 0..2 * n {
                    let want = if i == j {
                        0.0
                    } else if (i < n) == (j < n) {
                        1.0 / (2.0 * (nf - 1.0))
                    } else {
                        -1.0 / (2.0 * nf)
                    };
                    worst = worst.max((proj.omega[(i, j)] - want).abs());
                }
            }
            let model = gmanova::MeanModel::new(Matrix::zeros(2, p), vec![Matrix::identity(p, p); 2]);
            let moments = PopulationMoments::compute(&model, &design, &proj).unwrap();
            let want = p as f64 * (2.0 * nf - 1.0) / (nf - 1.0);
            worst = worst.max(relative(moments.sigma0_sq, want));
        }
    }
    verdict(
        worst <= 1e-10,
        format!("max deviation {worst:.2e} over n in {{3,5,10}}, p in {{4,50}}"),
    )
}

// 4
fn one_way_equivalences() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut lemma_vs_eq = 0.0_f64;
    let mut eq_vs_perm = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(4..=7);
        let p = rng.random_range(1..=5);
        // skewed, heavy-ish entries around a random location
        let mu = gaussian_matrix(&mut rng, 1, p);
        let x = Matrix::from_fn(n, p, |_, j| {
            let z: f64 = rng.sample(StandardNormal);
            z * z.abs() + mu[(0, j)]
        });
        let ones = Matrix::from_element(n, 1, 1.0);
        let sc = group_residual_scatter(&x, &ones, &Matrix::identity(p, p)).unwrap();
        let tau = tau_coefficients(&Matrix::from_element(n, n, 1.0 / n as f64), n, 1).unwrap();
        let general = a2_hat(&sc.s, sc.q, &tau, n, 1).unwrap();
        let eq7 = a2_hat_one_way(&sc.s, sc.q, n).unwrap();
        lemma_vs_eq = lemma_vs_eq.max(relative(general, eq7));
        eq_vs_perm = eq_vs_perm.max(relative(eq7, a2_by_permutations(&x)));
    }

    let p = 20;
    let design = one_way_manova(&[5, 6, 7], p).unwrap().design;
    let mc = MonteCarlo::new(
        design,
        Matrix::zeros(3, p),
        &[
            CovarianceSpec::ar1(0.5, 1.0),
            CovarianceSpec::identity(),
            CovarianceSpec::ar1(0.8, 2.0),
        ],
        &[ErrorDistribution::StandardizedGamma { shape: 1.0 }],
        0.05,
        44,
    )
    .unwrap();
    let mut nonpositive = 0;
    for rep in 0..10_000 {
        let est = mc.plan().estimate(&mc.draw(rep)).unwrap();
        nonpositive += est.a2_hats.iter().filter(|&&a| a <= 0.0 || a.is_nan()).count();
    }
    verdict(
        lemma_vs_eq <= 1e-9 && eq_vs_perm <= 1e-9 && nonpositive == 0,
        format!(
            "general vs one-way {lemma_vs_eq:.2e}, one-way vs permutation {eq_vs_perm:.2e}, \
             non-positive estimates {nonpositive} of 30000"
        ),
    )
}

// 5
fn null_calibration() -> Verdict {
    let p = 200;
    let setups: [(&str, Vec<usize>, Vec<CovarianceSpec>); 3] = [
        ("identity", vec![50, 50], vec![CovarianceSpec::identity()]),
        ("ar1(0.5)", vec![50, 50], vec![CovarianceSpec::ar1(0.5, 1.0)]),
        (
            "I / 3*ar1(0.5)",
            vec![40, 60],
            vec![CovarianceSpec::identity(), CovarianceSpec::ar1(0.5, 3.0)],
        ),
    ];
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, sizes, covs) in &setups {
        let design = one_way_manova(sizes, p).unwrap().design;
        for (d, dist) in ERROR_LAWS.iter().enumerate() {
            let mc = MonteCarlo::new(
                design.clone(),
                Matrix::zeros(2, p),
                covs,
                &[*dist],
                0.05,
                5000 + d as u64,
            )
            .unwrap();
            let s = mc.run(10_000, 0).unwrap();
            let good = (s.rejection_rate - 0.05).abs() <= 0.015 && s.ks_distance <= 0.03;
            ok &= good;
            lines.push(format!(
                "  {} {name} x {}: size {:.4}, KS {:.4}",
                if good { "ok " } else { "BAD" },
                dist.name(),
                s.rejection_rate,
                s.ks_distance
            ));
        }
    }
    verdict(ok, format!("9 configurations, p = 200\n{}", lines.join("\n")))
}

// 6
fn power_curve() -> Verdict {
    let p = 200;
    let design = one_way_manova(&[50, 50], p).unwrap().design;
    let covs = [CovarianceSpec::identity()];
    let sigmas = vec![Matrix::identity(p, p); 2];
    let dir = default_direction(&design);
    let mut ok = true;
    let mut powers = Vec::new();
    let mut lines = Vec::new();
    for (i, ratio) in [0.5, 1.0, 2.0, 3.0].into_iter().enumerate() {
        let theta = theta_for_signal_ratio(&design, &dir, &sigmas, ratio).unwrap();
        let mc = MonteCarlo::new(
            design.clone(),
            theta,
            &covs,
            &[ErrorDistribution::Gaussian],
            0.05,
            6000 + i as u64,
        )
        .unwrap();
        let s = mc.run(5_000, 0).unwrap();
        let m = mc.moments();
        let predicted = asymptotic_power(m.q, m.sigma2, m.sigma0_sq, 0.05);
        ok &= (s.rejection_rate - predicted).abs() <= 0.05;
        powers.push(s.rejection_rate);
        lines.push(format!(
            "ratio {ratio}: empirical {:.4} vs asymptotic {predicted:.4}",
            s.rejection_rate
        ));
    }
    ok &= powers[3] > powers[0];
    verdict(ok, lines.join("; "))
}

// 7
fn tau_closed_forms() -> Verdict {
    let mut worst = 0.0_f64;
    for n in 4..=12usize {
        let design = one_way_manova(&[n, n], 2).unwrap().design;
        let geo = &gmanova::estimators::GroupGeometry::for_design(&design).unwrap()[0];
        let nf = n as f64;
        let want = [
            (nf - 1.0).powi(2) / nf,
            (nf - 1.0) * (nf * nf - 3.0 * nf + 3.0) / (nf * nf),
            (nf - 2.0).powi(2) * (nf - 3.0) / nf,
        ];
        let got = [geo.tau.t1, geo.tau.t2, geo.tau.t3];
        for k in 0..3 {
            worst = worst.max(relative(got[k], want[k]));
        }
    }
    verdict(
        worst <= 1e-12,
        format!("max relative deviation {worst:.2e} for N = 4..12"),
    )
}

// 8
fn rate_consistency() -> Verdict {
    let spread = |p: usize, n: usize| -> f64 {
        let design: DesignSpec = one_way_manova(&[n, n], p).unwrap().design;
        let mc = MonteCarlo::new(
            design,
            Matrix::zeros(2, p),
            &[CovarianceSpec::ar1(0.5, 1.0)],
            &[ErrorDistribution::Gaussian],
            0.05,
            8000 + p as u64,
        )
        .unwrap();
        let a = mc.moments().functionals[(0, 0)];
        let ratios = (0..2000).map(|rep| mc.plan().estimate(&mc.draw(rep)).unwrap().a2_hats[0] / a);
        mean_var(ratios.collect::<Vec<_>>().into_iter()).1.sqrt()
    };
    let small = spread(20, 20);
    let large = spread(200, 100);
    verdict(
        small >= 2.0 * large,
        format!(
            "sd at (20, 20) = {small:.4}, at (200, 100) = {large:.4}, factor {:.2}",
            small / large
        ),
    )
}

type Criterion = (u8, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 8] = [
    (1, "statistic_identity", statistic_identity),
    (2, "unbiasedness", unbiasedness),
    (3, "two_sample_closed_forms", two_sample_closed_forms),
    (4, "one_way_equivalences", one_way_equivalences),
    (5, "null_calibration", null_calibration),
    (6, "power_curve", power_curve),
    (7, "tau_closed_forms", tau_closed_forms),
    (8, "rate_consistency", rate_consistency),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|(_, name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .collect();
    let mut failures = 0;
    for (id, name, run) in &selected {
        let start = Instant::now();
        let v = run();
        failures += usize::from(!v.passed);
        println!(
            "{} criterion {id} {name} ({:.1}s): {}",
            if v.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        selected.len() - failures,
        selected.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
