//! Pipeline-level acceptance: byte-identical reruns, stage isolation, and
//! heat-guided query retention. Complements the core crate's acceptance
//! suite, which covers the numeric criteria.

use std::collections::BTreeMap;
use std::path::Path;

use hmpe_cli::config::PipelineConfig;
use hmpe_cli::pipeline::{kept_query_in_box, manifest_bytes, run_pipeline, verify_manifest};
use hmpe_cli::stages::{compute_triplet, induced_queries, lsconv_compute, AxisChoice};
use hmpe_cli::synth::{seeded_heads, synth};
use hmpe_core::decoder::suppress_queries;

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            let name = path.file_name().unwrap().to_str().unwrap().to_string();
            map.insert(name, std::fs::read(&path).unwrap());
        }
    }
    map
}

#[test]
fn criterion_8_pipeline_determinism_and_query_retention() {
    let base = std::env::temp_dir().join(format!("hmpe_accept_{}", std::process::id()));
    let cfg = PipelineConfig::default();

    // identical seed twice: byte-identical manifest and artifacts
    let run_a = base.join("a");
    let run_b = base.join("b");
    run_pipeline(&cfg, &run_a).unwrap();
    run_pipeline(&cfg, &run_b).unwrap();
    assert_eq!(
        manifest_bytes(&run_a).unwrap(),
        manifest_bytes(&run_b).unwrap(),
        "manifests differ between identical runs"
    );
    let (files_a, files_b) = (read_dir_bytes(&run_a), read_dir_bytes(&run_b));
    assert_eq!(files_a.len(), files_b.len());
    for (name, bytes) in &files_a {
        assert_eq!(Some(bytes), files_b.get(name), "{name} differs between runs");
    }
    // the manifest verifies against the directory it describes
    assert!(verify_manifest(&run_a).unwrap().is_empty());

    // heat-guided retention: tau sits below the normalized bump peak, so at
    // least one surviving query must land inside the target box, on at least
    // 95 of 100 seeds (library path: synth -> lsconv -> heatmaps -> queries)
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut c = cfg.clone();
        c.seed = seed;
        let scene = synth(&c).unwrap();
        let (class_head, bbox_head) = seeded_heads(&c);
        let (processed, _) = lsconv_compute(&c, &scene.activations, AxisChoice::Xy).unwrap();
        let triplet = compute_triplet(&c, &processed, &class_head, &bbox_head).unwrap();
        let (qs, _) = induced_queries(&c, &triplet.h_mixed).unwrap();
        let kept = match suppress_queries(&qs, c.tau, c.top_m) {
            Ok(kept) => kept,
            Err(_) => continue, // no hot queries counts as a miss
        };
        let [cx, cy, bw, bh] = c.target;
        let inside = kept.cells.iter().any(|&cell| {
            let (row, col) = (cell / c.width, cell % c.width);
            let x = (col as f32 + 0.5) / c.width as f32;
            let y = (row as f32 + 0.5) / c.height as f32;
            (x - cx).abs() <= bw / 2.0 && (y - cy).abs() <= bh / 2.0
        });
        if inside {
            hits += 1;
        }
    }
    assert!(hits >= 95, "only {hits}/100 seeds retained an in-box query");

    std::fs::remove_dir_all(&base).ok();
    println!("criterion 8 (pipeline determinism + query retention): PASS ({hits}/100 seeds)");
}

#[test]
fn staging_isolation_between_layer_counts() {
    let base = std::env::temp_dir().join(format!("hmpe_stage_iso_{}", std::process::id()));
    let mut cfg3 = PipelineConfig::default();
    cfg3.layers = 3;
    let mut cfg8 = cfg3.clone();
    cfg8.layers = 8;

    let dir3 = base.join("l3");
    let dir8 = base.join("l8");
    run_pipeline(&cfg3, &dir3).unwrap();
    run_pipeline(&cfg8, &dir8).unwrap();

    let (f3, f8) = (read_dir_bytes(&dir3), read_dir_bytes(&dir8));
    for (name, bytes) in &f3 {
        let decoder_artifact = name.starts_with("dec_layer")
            || name == "cost_report.txt"
            || name == "manifest.txt";
        if decoder_artifact {
            continue;
        }
        assert_eq!(
            Some(bytes),
            f8.get(name),
            "upstream artifact {name} changed when only layer count changed"
        );
    }
    // shared stack weight prefix: the first three decoder layers agree too
    for i in 0..3 {
        let name = format!("dec_layer{i}.hmpt");
        assert_eq!(f3.get(&name), f8.get(&name), "{name} should match (shared prefix)");
    }
    assert!(f8.contains_key("dec_layer7.hmpt"));
    assert!(!f3.contains_key("dec_layer3.hmpt"));

    std::fs::remove_dir_all(&base).ok();
    println!("staging isolation (layers 3 vs 8): PASS");
}

#[test]
fn peaked_scene_keeps_a_query_under_high_tau() {
    // tau just below the normalized peak still leaves the bump cell standing
    let mut cfg = PipelineConfig::default();
    cfg.tau = 0.99;
    let scene = synth(&cfg).unwrap();
    let (class_head, bbox_head) = seeded_heads(&cfg);
    let (processed, _) = lsconv_compute(&cfg, &scene.activations, AxisChoice::Xy).unwrap();
    let triplet = compute_triplet(&cfg, &processed, &class_head, &bbox_head).unwrap();
    let (qs, _) = induced_queries(&cfg, &triplet.h_mixed).unwrap();
    let kept = suppress_queries(&qs, cfg.tau, cfg.top_m).unwrap();
    assert!(kept.count() >= 1);
    assert!(kept.scores.iter().all(|&s| s > 0.99));
    // the surviving peak sits at the bump
    let [cx, cy, bw, bh] = cfg.target;
    assert!(kept.cells.iter().any(|&cell| {
        let (row, col) = (cell / cfg.width, cell % cfg.width);
        let x = (col as f32 + 0.5) / cfg.width as f32;
        let y = (row as f32 + 0.5) / cfg.height as f32;
        (x - cx).abs() <= bw / 2.0 && (y - cy).abs() <= bh / 2.0
    }));
    println!("high-tau retention: PASS");
}
