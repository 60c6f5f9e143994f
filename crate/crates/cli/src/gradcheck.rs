//! Derivative verification harness: closed-form head partials against nested
//! central differences on seeded random instances. Runs in f64 so the
//! finite-difference oracle itself is not the accuracy bottleneck.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use hmpe_core::heads::{BboxHead, BoxTarget, ClassHead};
use hmpe_core::io::{write_hmpt, write_kv};
use hmpe_core::numerics::{finite_diff_grad, DiffOrder};
use hmpe_core::{Rng, Tensor64};

pub const TOLERANCES: [(DiffOrder, f64); 3] = [
    (DiffOrder::First, 1e-4),
    (DiffOrder::Second, 1e-3),
    (DiffOrder::Third, 5e-2),
];

const ANALYTIC_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub head: &'static str,
    pub order: u8,
    pub max_rel: f64,
    pub tolerance: f64,
    pub worst_trial: usize,
    pub worst_elem: usize,
}

impl ReportRow {
    pub fn ok(&self) -> bool {
        self.max_rel <= self.tolerance
    }
}

#[derive(Debug)]
pub struct GradcheckReport {
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<ReportRow>,
    worst_instance: Option<WorstInstance>,
}

#[derive(Debug)]
struct WorstInstance {
    activations: Tensor64,
    class_weights: Tensor64,
    class_bias: f64,
    bbox_weights: Tensor64,
    bbox_bias: [f64; 4],
    target: [f64; 4],
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(ReportRow::ok)
    }

    pub fn table(&self) -> String {
        let mut text = String::from("head  order  max_rel_err  tolerance  status\n");
        for r in &self.rows {
            writeln!(
                text,
                "{:<5} {:<6} {:<12.3e} {:<10.1e} {}",
                r.head,
                r.order,
                r.max_rel,
                r.tolerance,
                if r.ok() { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        if !self.passed() {
            let worst = self
                .rows
                .iter()
                .max_by(|a, b| (a.max_rel / a.tolerance).total_cmp(&(b.max_rel / b.tolerance)))
                .unwrap();
            writeln!(
                text,
                "worst: {} order {} at trial {} element {}; replay with --seed {} --trials {}",
                worst.head, worst.order, worst.worst_trial, worst.worst_elem, self.seed, self.trials
            )
            .unwrap();
        }
        text
    }

    /// Dumps the worst-offending instance for offline inspection.
    pub fn dump_worst(&self, dir: &Path) -> Result<()> {
        let Some(w) = &self.worst_instance else {
            return Ok(());
        };
        std::fs::create_dir_all(dir)?;
        write_hmpt(dir.join("activations.hmpt"), &w.activations)?;
        write_hmpt(dir.join("class_head.hmpt"), &w.class_weights)?;
        write_kv(
            dir.join("class_head.meta"),
            &[("bias", w.class_bias.to_string())],
        )?;
        write_hmpt(dir.join("bbox_head.hmpt"), &w.bbox_weights)?;
        write_kv(
            dir.join("bbox_head.meta"),
            &[
                ("bias", w.bbox_bias.map(|b| b.to_string()).join(",")),
                ("delta", "1".to_string()),
            ],
        )?;
        write_kv(
            dir.join("target.txt"),
            &[
                ("cx", w.target[0].to_string()),
                ("cy", w.target[1].to_string()),
                ("w", w.target[2].to_string()),
                ("h", w.target[3].to_string()),
            ],
        )?;
        Ok(())
    }
}

pub fn gradcheck(seed: u64, trials: usize) -> Result<GradcheckReport> {
    if trials == 0 {
        bail!("gradcheck requires at least one trial");
    }
    let mut rng = Rng::for_stage(seed, "gradcheck");
    let mut rows: Vec<ReportRow> = TOLERANCES
        .iter()
        .flat_map(|&(order, tol)| {
            ["class", "bbox"].map(|head| ReportRow {
                head,
                order: order_index(order),
                max_rel: 0.0,
                tolerance: tol,
                worst_trial: 0,
                worst_elem: 0,
            })
        })
        .collect();
    let mut worst_score = 0.0f64;
    let mut worst_instance = None;

    for trial in 0..trials {
        let wc: Tensor64 = rng.uniform_tensor([2, 3, 3], -0.3, 0.3);
        let a: Tensor64 = rng.uniform_tensor([2, 3, 3], -1.0, 1.0);
        let class_bias = rng.uniform(-0.5, 0.5);
        let class = ClassHead::new(wc.clone(), class_bias);
        let wb: Tensor64 = rng.uniform_tensor([4, 2, 3, 3], -0.3, 0.3);
        let bbox_bias = [
            rng.uniform(-0.5, 0.5),
            rng.uniform(-0.5, 0.5),
            rng.uniform(-0.5, 0.5),
            rng.uniform(-0.5, 0.5),
        ];
        let bbox = BboxHead::new(wb.clone(), bbox_bias, 1.0).unwrap();
        let raw_target = [
            rng.uniform(0.2, 0.8),
            rng.uniform(0.2, 0.8),
            rng.uniform(0.1, 0.4),
            rng.uniform(0.1, 0.4),
        ];
        let target =
            BoxTarget::new(raw_target[0], raw_target[1], raw_target[2], raw_target[3]).unwrap();

        let mut trial_worst = 0.0f64;
        for (slot, &(order, _tol)) in TOLERANCES.iter().enumerate() {
            let step = order.default_step();
            let pairs = [
                (
                    2 * slot,
                    class.partials(&a, order).unwrap(),
                    finite_diff_grad(|t| class.score(t).unwrap(), &a, order, step),
                ),
                (
                    2 * slot + 1,
                    bbox.reg_partials(&a, &target, order).unwrap(),
                    finite_diff_grad(|t| bbox.reg_loss(t, &target).unwrap(), &a, order, step),
                ),
            ];
            for (row_idx, analytic, numeric) in pairs {
                for (elem, (an, nu)) in analytic.data().iter().zip(numeric.data()).enumerate() {
                    if an.abs() <= ANALYTIC_FLOOR {
                        continue;
                    }
                    let rel = (an - nu).abs() / an.abs();
                    let row = &mut rows[row_idx];
                    if rel > row.max_rel {
                        row.max_rel = rel;
                        row.worst_trial = trial;
                        row.worst_elem = elem;
                    }
                    let score = rel / row.tolerance;
                    trial_worst = trial_worst.max(score);
                }
            }
        }
        if trial_worst > worst_score {
            worst_score = trial_worst;
            worst_instance = Some(WorstInstance {
                activations: a,
                class_weights: wc,
                class_bias,
                bbox_weights: wb,
                bbox_bias,
                target: raw_target,
            });
        }
    }

    Ok(GradcheckReport {
        seed,
        trials,
        rows,
        worst_instance,
    })
}

fn order_index(order: DiffOrder) -> u8 {
    match order {
        DiffOrder::First => 1,
        DiffOrder::Second => 2,
        DiffOrder::Third => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_trials_pass_all_tolerances() {
        let report = gradcheck(0, 100).unwrap();
        assert!(report.passed(), "{}", report.table());
        assert_eq!(report.rows.len(), 6);
        // order-1 checks are far tighter than their gate in practice
        let order1_max = report
            .rows
            .iter()
            .filter(|r| r.order == 1)
            .map(|r| r.max_rel)
            .fold(0.0, f64::max);
        assert!(order1_max < 1e-5, "order-1 max rel err {order1_max}");
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(gradcheck(0, 0).is_err());
    }
}
