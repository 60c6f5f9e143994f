//! Decoder layer ablation: runs the stack at every depth in a range over
//! fixed seeded inputs and reports per-layer and cumulative multiply
//! -accumulate counts next to the closed-form cost model.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use hmpe_core::decoder::{analytic_layer_macs, DecoderConfig, DecoderStack, QuerySet};
use hmpe_core::{Rng, Tensor32};

use crate::config::PipelineConfig;

pub struct AblateReport {
    pub table: String,
    pub cost_model_exact: bool,
    pub strictly_increasing: bool,
}

impl AblateReport {
    pub fn passed(&self) -> bool {
        self.cost_model_exact && self.strictly_increasing
    }
}

pub fn ablate(cfg: &PipelineConfig, from: usize, to: usize) -> Result<AblateReport> {
    if !(1..=8).contains(&from) || !(1..=8).contains(&to) || from > to {
        bail!("--layers-from/--layers-to must satisfy 1 <= from <= to <= 8");
    }
    let (m, d) = (cfg.top_m, cfg.depth);
    let n = cfg.height * cfg.width;
    let mut input_rng = Rng::for_stage(cfg.seed, "ablate");
    let qs = QuerySet {
        queries: input_rng.uniform_tensor::<f32>([m, d], -1.0, 1.0),
        scores: (0..m).map(|_| input_rng.uniform_scalar(0.3, 1.0)).collect(),
        cells: (0..m).map(|q| q % n).collect(),
    };
    let k_enc: Tensor32 = input_rng.uniform_tensor([n, d], -1.0, 1.0);
    let v_enc: Tensor32 = input_rng.uniform_tensor([n, d], -1.0, 1.0);

    let expect = analytic_layer_macs(m, d, cfg.points, cfg.heads, cfg.suppress);
    let mut table = String::from("layers out_shape layer_macs total_macs model_macs\n");
    let mut cost_model_exact = true;
    let mut strictly_increasing = true;
    let mut prev_total = 0u64;
    for layers in from..=to {
        let stack_cfg = DecoderConfig {
            layers,
            heads: cfg.heads,
            points: cfg.points,
            depth: d,
        };
        let mut rng = Rng::for_stage(cfg.seed, "decoder");
        let stack = DecoderStack::<f32>::seeded(stack_cfg, &mut rng)?;
        let run = stack.run(&qs, &k_enc, &v_enc, (cfg.height, cfg.width), cfg.suppress)?;
        let shape = run.layer_outputs.last().map(|t| t.shape().to_vec()).unwrap();
        let per_layer = run.cost.layer_macs[0];
        let total = *run.cost.cumulative.last().unwrap();
        if run.cost.layer_macs.iter().any(|&lm| lm != expect) {
            cost_model_exact = false;
        }
        if total <= prev_total {
            strictly_increasing = false;
        }
        prev_total = total;
        writeln!(
            table,
            "{layers} {}x{} {per_layer} {total} {}",
            shape[0],
            shape[1],
            expect * layers as u64
        )
        .unwrap();
    }
    writeln!(
        table,
        "cost model {} per-layer MACs; cumulative cost {}",
        if cost_model_exact { "matches instrumented" } else { "MISMATCHES instrumented" },
        if strictly_increasing { "strictly increasing" } else { "NOT strictly increasing" },
    )
    .unwrap();
    Ok(AblateReport {
        table,
        cost_model_exact,
        strictly_increasing,
    })
}
