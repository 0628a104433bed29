use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use club_core::harness::*;
use club_core::oracle::DeltaBucket;
use club_core::seller::Variant;

fn quick(variant: Variant, episodes: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::reference(variant, episodes);
    c.mc_oracle = 100_000;
    c.mc_learning = 1024;
    c
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Balanced start/end tags, one root, nothing but whitespace after it.
fn well_formed(doc: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = doc.trim();
    let mut closed_root = false;
    while let Some(open) = rest.find('<') {
        if closed_root && !rest[..open].trim().is_empty() {
            return false;
        }
        let Some(len) = rest[open..].find('>') else {
            return false;
        };
        let tag = &rest[open + 1..open + len];
        rest = &rest[open + len + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if closed_root {
            return false;
        }
        if let Some(name) = tag.strip_prefix('/') {
            if stack.pop().as_deref() != Some(name.trim()) {
                return false;
            }
        } else if !tag.ends_with('/') {
            stack.push(tag.split_whitespace().next().unwrap_or("").to_owned());
        }
        closed_root = stack.is_empty();
    }
    closed_root && rest.trim().is_empty()
}

#[test]
fn single_episode_run() {
    let run = run_experiment(&quick(Variant::KnownF, 1), 0).unwrap();
    assert_eq!(run.rows.len(), 1);
    let row = &run.rows[0];
    assert_eq!((row.episode, row.k_tilde), (1, 0));
    assert!(!row.in_buffer);
    assert_eq!(run.summary.episodes, 1);
}

#[test]
fn rows_match_episode_count() {
    let run = run_experiment(&quick(Variant::UnknownF, 37), 5).unwrap();
    assert_eq!(run.rows.len(), 37);
    assert!(run.rows.iter().enumerate().all(|(j, r)| r.episode == j + 1));
}

#[test]
fn reruns_are_byte_identical() {
    let mut config = quick(Variant::UnknownF, 120);
    config.export_fhat = true;
    config.bidders = vec!["shift:+0.2".into(), "truthful".into()];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_run(&run_experiment(&config, 4).unwrap(), a.path()).unwrap();
    emit_run(&run_experiment(&config, 4).unwrap(), b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert!(ta.keys().any(|k| k.starts_with("fhat")));
    assert!(ta.contains_key("run_seed4.csv") && ta.contains_key("run_seed4.json") && ta.contains_key("run_seed4.svg"));
    assert_eq!(ta, tb);
}

#[test]
fn seeds_change_the_run() {
    let config = quick(Variant::KnownF, 60);
    let a = run_experiment(&config, 1).unwrap();
    let b = run_experiment(&config, 2).unwrap();
    assert_ne!(a.rows, b.rows);
}

#[test]
fn ledger_csv_round_trips() {
    let run = run_experiment(&quick(Variant::KnownF, 80), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.csv");
    emit_csv(&run.rows, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert!(text.lines().skip(1).any(|l| l.ends_with(",normal")));
    assert_eq!(read_csv(&path).unwrap(), run.rows);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b\n1,2\n").unwrap();
    assert!(read_csv(&bad).is_err());
}

#[test]
fn plots_are_well_formed_svg() {
    let series = [PlotSeries {
        label: "a < b & c".into(),
        points: vec![(1.0, 2.0), (10.0, 7.0), (100.0, 20.0)],
    }];
    let fit = club_core::oracle::slope_fit(&[1.0, 10.0, 100.0], &[2.0, 7.0, 20.0]).ok();
    let svg = render_svg("t", "x", "y", &series, fit);
    assert!(svg.trim_start().starts_with("<svg") || svg.trim_start().starts_with("<?xml"));
    assert!(well_formed(&svg), "{svg}");
    assert!(!well_formed("<svg><g></svg>"));
    assert!(well_formed(&render_svg("empty", "x", "y", &[], None)));

    let run = run_experiment(&quick(Variant::KnownF, 50), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_run(&run, dir.path()).unwrap();
    let out = dir.path().join("plot.svg");
    plot_dir(dir.path(), &out).unwrap();
    assert!(well_formed(&fs::read_to_string(out).unwrap()));
}

#[test]
fn sweep_counts_runs_and_orders_them() {
    let config = quick(Variant::KnownF, 10);
    let result = sweep(&config, &[60, 30], &[1, 0], run_experiment).unwrap();
    assert_eq!(result.runs.len(), 4);
    let order: Vec<(usize, u64)> = result.runs.iter().map(|r| (r.episodes, r.seed)).collect();
    assert_eq!(order, vec![(30, 0), (30, 1), (60, 0), (60, 1)]);
    assert_eq!(result.points.len(), 2);
    assert!(result.fit.is_none(), "two K values are too few for a slope");
    assert!(sweep(&config, &[60], &[0], run_experiment).is_err());

    let dir = tempfile::tempdir().unwrap();
    emit_sweep(&result, dir.path()).unwrap();
    let tree = read_tree(dir.path());
    assert!(tree.contains_key("sweep.json") && tree.contains_key("regret.svg"));
    assert_eq!(tree.keys().filter(|k| k.ends_with(".csv")).count(), 4);
}

#[test]
fn sweep_recovers_a_stubbed_regret_law() {
    let base = run_experiment(&quick(Variant::KnownF, 1), 0).unwrap();
    let stub = |cfg: &ExperimentConfig, seed: u64| {
        let mut r = base.clone();
        r.summary.seed = seed;
        r.summary.final_regret = 4.0 * (cfg.episodes as f64).powf(0.62) * (1.0 + 0.01 * seed as f64);
        Ok(r)
    };
    let result = sweep(&quick(Variant::KnownF, 1), &[500, 1000, 2000, 4000], &[0, 1, 2], stub).unwrap();
    let fit = result.fit.unwrap();
    assert!((fit.alpha - 0.62).abs() < 1e-12);
    assert!((result.points[0].median_regret - 4.0 * 500f64.powf(0.62) * 1.01).abs() < 1e-9);
}

#[test]
fn reference_smoke_run_is_fast() {
    let config = ExperimentConfig::reference(Variant::KnownF, 500);
    let start = Instant::now();
    let run = run_experiment(&config, 0).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
    assert_eq!(run.rows.len(), 500);
    assert!(run.rows.iter().all(|r| DeltaBucket::parse(r.delta_bucket.as_str()).is_some()));
}

#[test]
fn config_files_load_and_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, serde_json::to_string(&quick(Variant::UnknownF, 25)).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&good).unwrap(), quick(Variant::UnknownF, 25));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"d":6,"n_bidders":2,"horizon":3,"n_states":3,"n_items":2,"episodes":5,"variant":"magic"}"#).unwrap();
    assert!(ExperimentConfig::load(&bad).unwrap_err().is_config_error());
    assert!(ExperimentConfig::load(&dir.path().join("missing.json")).unwrap_err().is_config_error());
}
