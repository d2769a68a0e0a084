use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use vflhlp::experiment::{cmd_eval, cmd_grid, cmd_prepare, cmd_pretrain, cmd_train, RunConfig, Selection};
use vflhlp::federated::TrainMode;

fn tiny(extra_partition: &str, modes: &str) -> RunConfig {
    RunConfig::from_json(&format!(
        r#"{{
        "dataset": {{"synthetic": {{"preset": "avazu-like", "samples": 1500, "test_samples": 300, "seed": 5}}}},
        "partition": {{"parties": 3, "aligned_counts": [30, 60], "seeds": [1, 2], "local_size": 400 {extra_partition}}},
        "model": {{"encoders": [{{"embed_dim": 3, "widths": [8, 4]}}]}},
        "pretrain": {{"ssl": {{"epochs": 2, "batch_size": 64}}, "sup": {{"epochs": 2}}}},
        "downstream": {{"modes": {modes}, "training": {{"epochs": 3, "optimizer": "sgd", "lr_server": 0.1, "lr_party": 0.05, "beta": 2.0}}}}
    }}"#
    ))
    .unwrap()
}

fn all_modes() -> &'static str {
    r#"["local_a", "vanilla_vfl", "vflhlp_a", "vflhlp_p", "vflhlp"]"#
}

/// Relative path -> bytes for every file under `root` except wall-clock metadata.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run_meta.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn grid_is_byte_identical_across_runs() {
    let cfg = tiny("", all_modes());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ta = cmd_grid(&cfg, a.path()).unwrap();
    let tb = cmd_grid(&cfg, b.path()).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(ta.failures().count(), 0);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.keys().any(|p| p.ends_with("server.json")));
    assert!(sa.contains_key(Path::new("results.csv")));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (path, bytes) in &sa {
        assert!(bytes == &sb[path], "{} differs", path.display());
    }
    assert!(a.path().join("run_meta.json").exists());
}

#[test]
fn single_cell_grid() {
    let mut cfg = tiny("", r#"["vflhlp"]"#);
    cfg.partition.aligned_counts = vec![30];
    cfg.partition.seeds = vec![7];
    let dir = tempfile::tempdir().unwrap();
    let t = cmd_grid(&cfg, dir.path()).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.rows[0].cells.len(), 1);
    assert_eq!(t.rows[0].cells[0].unwrap().n, 1);
    assert!(t.deltas.is_empty());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.contains(&cfg.config_hash()));
}

#[test]
fn stepwise_commands_match_the_grid() {
    let cfg = tiny("", all_modes());
    let grid_dir = tempfile::tempdir().unwrap();
    let table = cmd_grid(&cfg, grid_dir.path()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    cmd_prepare(&cfg, dir.path()).unwrap();
    let written = cmd_pretrain(&cfg, dir.path(), Selection::default(), false).unwrap();
    // two passive parties per seed, one active model per (seed, count)
    assert_eq!(written.len(), 2 * 2 + 2 * 2);
    let cells = cmd_train(&cfg, dir.path(), Selection::default()).unwrap();
    assert_eq!(cells, table.cells);

    let evals = cmd_eval(&cfg, dir.path(), Selection::default()).unwrap();
    assert_eq!(evals.len(), cells.len());
    assert!(evals.iter().all(|e| e.reproduced), "{evals:?}");
}

#[test]
fn narrowed_train_reuses_the_same_streams() {
    let cfg = tiny("", all_modes());
    let full = tempfile::tempdir().unwrap();
    let all = cmd_train(&cfg, full.path(), Selection::default()).unwrap();
    let one = tempfile::tempdir().unwrap();
    let sel = Selection {
        seed: Some(2),
        mode: Some(TrainMode::Vflhlp),
    };
    let part = cmd_train(&cfg, one.path(), sel).unwrap();
    assert_eq!(part.len(), 2);
    for c in &part {
        let same = all
            .iter()
            .find(|x| x.seed == c.seed && x.label == c.label && x.aligned_count == c.aligned_count)
            .unwrap();
        assert_eq!(same, c);
    }
}

#[test]
fn two_party_passive_only_pretrain_writes_one_checkpoint_per_party() {
    let cfg = RunConfig::from_json(
        r#"{
        "dataset": {"synthetic": {"preset": "criteo-like", "samples": 600, "test_samples": 100}},
        "partition": {"parties": 2, "aligned_counts": [50], "seeds": [3]},
        "model": {"encoders": [{"embed_dim": 2, "widths": [6, 3]}]},
        "pretrain": {"ssl": {"epochs": 1}, "sup": {"epochs": 1}}
    }"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let all = cmd_pretrain(&cfg, dir.path(), Selection::default(), false).unwrap();
    assert_eq!(all.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let passive = cmd_pretrain(&cfg, dir.path(), Selection::default(), true).unwrap();
    assert_eq!(passive.len(), 1);
    let ck = vflhlp::nn::Checkpoint::load(&passive[0]).unwrap();
    assert_eq!(ck.tag, "passive-pretrain");
    assert_eq!(ck.meta_as::<usize>("party").unwrap(), 2);
    assert_eq!(ck.meta_as::<String>("config_hash").unwrap(), cfg.config_hash());
    assert_eq!(ck.meta_as::<u64>("seed").unwrap(), 3);
}

#[test]
fn prepare_twice_leaves_the_cache_alone() {
    let cfg = tiny("", all_modes());
    let dir = tempfile::tempdir().unwrap();
    let cache = cmd_prepare(&cfg, dir.path()).unwrap();
    let manifest = cache.join("manifest.json");
    let before = fs::metadata(&manifest).unwrap().modified().unwrap();
    let bytes = snapshot(&cache);
    std::thread::sleep(std::time::Duration::from_millis(20));
    cmd_prepare(&cfg, dir.path()).unwrap();
    assert_eq!(fs::metadata(&manifest).unwrap().modified().unwrap(), before);
    assert_eq!(snapshot(&cache), bytes);
}

#[test]
fn failing_cells_are_reported_as_missing() {
    // 1100 pool rows beyond the 60-id pool leave ~346 per party; the active
    // party at 30 aligned needs 370 unaligned rows, at 60 only 340
    let mut cfg = tiny("", r#"["vanilla_vfl", "vflhlp"]"#);
    cfg.dataset = RunConfig::from_json(
        r#"{"dataset": {"synthetic": {"preset": "avazu-like", "samples": 1100, "test_samples": 300, "seed": 5}},
            "partition": {"parties": 3, "aligned_counts": [1], "seeds": [1]}}"#,
    )
    .unwrap()
    .dataset;
    let dir = tempfile::tempdir().unwrap();
    let t = cmd_grid(&cfg, dir.path()).unwrap();
    let failed: Vec<_> = t.failures().collect();
    assert_eq!(failed.len(), 2 * 2, "{failed:?}");
    assert!(failed.iter().all(|c| c.aligned_count == 30));
    assert!(failed[0].error.as_ref().unwrap().contains("unaligned"), "{:?}", failed[0].error);
    assert!(t.rows[0].cells[0].is_none());
    assert!(t.rows[0].cells[1].is_some());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.contains("vanilla_vfl,30,,,0,missing"));
}

#[test]
fn beta_sweep_adds_rows_and_deltas() {
    let mut cfg = tiny("", r#"["vanilla_vfl", "vflhlp"]"#);
    cfg.downstream.beta_sweep = vec![0.01, 1.0];
    cfg.partition.seeds = vec![1];
    let dir = tempfile::tempdir().unwrap();
    let t = cmd_grid(&cfg, dir.path()).unwrap();
    let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["vanilla_vfl", "vflhlp@0.01", "vflhlp@1"]);
    assert_eq!(t.deltas.len(), 2);
}

fn write_csv_dataset(dir: &Path) {
    let mut train = String::from("id,site,app,device,price,click\n");
    let mut test = train.clone();
    for i in 0..400u64 {
        let site = ["a", "b", "c"][(i % 3) as usize];
        let app = ["x", "y"][(i % 2) as usize];
        let device = ["p", "q", "r", "s"][(i * 7 % 4) as usize];
        let price = (i * 37 % 100) as f64 / 10.0;
        let click = u8::from((i % 3 == 0) ^ (price > 5.0));
        let line = format!("{i},{site},{app},{device},{price},{click}\n");
        if i < 320 {
            train += &line;
        } else {
            test += &line;
        }
    }
    fs::write(dir.join("train.csv"), train).unwrap();
    fs::write(dir.join("test.csv"), test).unwrap();
}

const CSV_CONFIG: &str = r#"{
    "dataset": {"csv": {"train": "train.csv", "test": "test.csv", "label_column": "click",
        "schema": {"fields": [
            {"name": "site", "kind": "categorical", "party": 1},
            {"name": "app", "kind": "categorical", "party": 1},
            {"name": "device", "kind": "categorical", "party": 2},
            {"name": "price", "kind": "numerical", "party": 2}]}}},
    "partition": {"parties": 2, "aligned_counts": [40], "seeds": [1], "local_size": 150},
    "model": {"encoders": [{"embed_dim": 3, "widths": [6, 3]}]},
    "pretrain": {"ssl": {"epochs": 2, "batch_size": 32}, "sup": {"epochs": 2}},
    "downstream": {"training": {"epochs": 2}}
}"#;

#[test]
fn csv_source_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    write_csv_dataset(dir.path());
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, CSV_CONFIG).unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let t = cmd_grid(&cfg, &dir.path().join("out")).unwrap();
    assert_eq!(t.failures().count(), 0, "{:?}", t.cells);
    assert_eq!(t.rows.len(), 5);
    assert!(t.bayes_auc.is_none());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vflhlp"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_csv_dataset(dir.path());
    let good = dir.path().join("cfg.json");
    fs::write(&good, CSV_CONFIG).unwrap();
    let out = dir.path().join("out");

    let status = |args: &[&str]| {
        cli()
            .args(args)
            .env("RUST_LOG", "off")
            .env_remove("VFLHLP_OUT")
            .output()
            .unwrap()
    };
    let ok = status(&["grid", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("results.csv").exists());
    let ev = status(&["eval", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(ev.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ev.stdout).contains("\"reproduced\":true"));

    let bad_party = dir.path().join("bad_party.json");
    fs::write(&bad_party, CSV_CONFIG.replace(r#""party": 2}]"#, r#""party": 4}]"#)).unwrap();
    let r = status(&["prepare", "--config", bad_party.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("'price'"));

    let r = status(&["train", "--config", good.to_str().unwrap(), "--mode", "bogus"]);
    assert_eq!(r.status.code(), Some(2));

    fs::write(dir.path().join("train.csv"), "id,site,app,device,price,click\n1,a,x,p,oops,1\n").unwrap();
    let r = status(&["prepare", "--config", good.to_str().unwrap(), "--out", dir.path().join("o2").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 2"));
}

#[test]
fn cli_output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    write_csv_dataset(dir.path());
    let good = dir.path().join("cfg.json");
    fs::write(&good, CSV_CONFIG).unwrap();
    let env_out = dir.path().join("from-env");
    let r = cli()
        .args(["prepare", "--config", good.to_str().unwrap()])
        .env("RUST_LOG", "off")
        .env("VFLHLP_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(0));
    assert!(env_out.join("dataset").join("manifest.json").exists());
}
