//! Cross-checks of the production path against the dense reference
//! implementations in [`crate::oracle`]. Used by the `diagnose` command.

use serde::Serialize;

use crate::error::Result;
use crate::estimators::a2_hat_one_way;
use crate::linalg::{max_abs, Matrix};
use crate::oracle::{a2_by_permutations, q_by_frobenius, t_with_oracle, OracleDesign};
use crate::simulation::MonteCarlo;
use crate::test_engine::true_q;

/// Largest one-way group for which the O(N⁴) permutation form is evaluated.
const PERMUTATION_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, discrepancy: f64, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            discrepancy,
            tolerance,
            passed: discrepancy <= tolerance,
        }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Every row of the block is the same vector (a one-way group).
fn is_constant_block(a_i: &Matrix) -> bool {
    let first = a_i.row(0);
    a_i.row_iter().all(|r| r == first)
}

/// Runs all cross-checks on replication `replication` of the experiment.
pub fn cross_check(mc: &MonteCarlo, replication: usize) -> Result<Vec<CheckOutcome>> {
    let plan = mc.plan();
    let design = plan.design();
    let proj = plan.projections();
    let oracle = OracleDesign::new(design);
    let mut out = Vec::new();

    let pa = &proj.pi_a;
    out.push(CheckOutcome::new(
        "projector idempotent",
        max_abs(&(pa * pa - pa)),
        1e-10,
    ));
    out.push(CheckOutcome::new(
        "projector vs oracle",
        max_abs(&(pa - &oracle.pi_a)),
        1e-9,
    ));
    out.push(CheckOutcome::new(
        "trace of hypothesis projector",
        (proj.pi_h.trace() - design.ell() as f64).abs(),
        1e-8,
    ));
    out.push(CheckOutcome::new(
        "balancing weights vs oracle",
        max_abs(&Matrix::from_column_slice(
            proj.d.len(),
            1,
            (&proj.d - &oracle.d).as_slice(),
        )),
        1e-8 * (1.0 + oracle.d.amax()),
    ));
    let mut oracle_omega = oracle.omega();
    oracle_omega.fill_diagonal(0.0);
    out.push(CheckOutcome::new(
        "omega vs oracle",
        max_abs(&(&proj.omega - oracle_omega)),
        1e-9,
    ));
    out.push(CheckOutcome::new(
        "omega symmetric",
        max_abs(&(&proj.omega - proj.omega.transpose())),
        0.0,
    ));

    let x = mc.draw(replication);
    out.push(CheckOutcome::new(
        "statistic vs decomposition",
        relative(plan.statistic(&x)?, t_with_oracle(&x, &oracle)),
        1e-8,
    ));

    let theta = mc.theta();
    out.push(CheckOutcome::new(
        "signal vs Frobenius form",
        if theta.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            relative(true_q(theta, design)?, q_by_frobenius(theta, design))
        },
        1e-8,
    ));

    let est = plan.estimate(&x)?;
    for (g, geo) in plan.geometry().iter().enumerate() {
        if !is_constant_block(&design.group_block(g)) {
            continue;
        }
        let sc = &est.scatters[g];
        let one_way = a2_hat_one_way(&sc.s, sc.q, sc.size)?;
        out.push(CheckOutcome::new(
            format!("group {g}: general vs one-way estimator"),
            relative(est.a2_hats[g], one_way),
            1e-9,
        ));
        if geo.range.len() <= PERMUTATION_LIMIT {
            let y = plan.compress(&x).rows(geo.range.start, geo.range.len()).into_owned();
            out.push(CheckOutcome::new(
                format!("group {g}: estimator vs permutation form"),
                relative(est.a2_hats[g], a2_by_permutations(&y)),
                1e-9,
            ));
        }
    }
    Ok(out)
}
