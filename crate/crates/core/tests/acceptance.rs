//! End-to-end acceptance checks. Runs as a plain binary so the per-criterion
//! verdicts are always printed; exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use vflhlp::data::{AlignedBatch, Preset};
use vflhlp::experiment::pipeline::{active_model, load_or_prepare, partition, passive_encoders};
use vflhlp::experiment::{cmd_grid, Layout, ResultTable, RunConfig};
use vflhlp::federated::{
    audit, build_nodes, constraint_loss, init_model, round_gradients, snapshot, train_downstream, DownstreamConfig,
    ForbiddenHashes, MessageKind, Pretrained, TrainMode, Transport,
};
use vflhlp::metrics::auc;
use vflhlp::nn::{max_relative_error, numeric_gradient, Checkpoint, Encoder, Mlp, OptimizerKind, ParamSet};
use vflhlp::rng::stream;
use vflhlp::ssl::info_nce;
use vflhlp::sup::{pretrain_active, SupConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- fixture

/// K = 3, 5,000 local samples per party, informative fields on every party,
/// aligned counts 50..800, five seeds.
const FIXTURE: &str = include_str!("../../../configs/acceptance.json");

struct Grid {
    cfg: RunConfig,
    dir: PathBuf,
    table: ResultTable,
    elapsed: Duration,
}

fn work_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn fixture_grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let cfg = RunConfig::from_json(FIXTURE).unwrap();
        let dir = work_dir().join("grid-a");
        let start = Instant::now();
        let table = cmd_grid(&cfg, &dir).unwrap();
        let elapsed = start.elapsed();
        println!("fixture grid ({} cells) in {:.1}s:\n{}", table.cells.len(), elapsed.as_secs_f64(), table.render());
        Grid {
            cfg,
            dir,
            table,
            elapsed,
        }
    })
}

fn mean(t: &ResultTable, label: &str, aligned: usize) -> f64 {
    t.mean(label, aligned).unwrap_or(f64::NAN)
}

// ------------------------------------------------------- 1: gradients

fn biased_model(specs: &[vflhlp::nn::EncoderSpec], seed: u64) -> vflhlp::federated::FederatedModel {
    let mut model = init_model(specs, seed);
    // keep relu pre-activations away from the kink
    for e in model.encoders.iter_mut() {
        for l in e.mlp.layers.iter_mut() {
            l.bias.fill(0.05);
        }
    }
    model
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    let mut max_params = 0;
    for i in 0..20u64 {
        let preset = if i % 2 == 0 { Preset::AvazuLike } else { Preset::CriteoLike };
        let widths: &[usize] = [&[5, 3][..], &[6, 4, 2], &[4, 3]][i as usize % 3];
        let f = common::fixture(preset, 120, 40, 100 + i, widths);
        let model = biased_model(&f.specs, 200 + i);
        max_params = max_params.max(model.num_params());
        let anchors = common::random_anchors(&f.specs, 300 + i);
        let sup = SupConfig {
            epochs: 0,
            ..Default::default()
        };
        let mut active = pretrain_active(&f.ds.active().features, &f.ds.labels, &f.specs[0], &sup, i).unwrap();
        active.model.encoder = anchors.encoder.clone();
        active.model.head = anchors.head.clone();
        let pre = Pretrained {
            active: Some(active),
            ..Default::default()
        };
        let batch = AlignedBatch::gather(&f.ds, &f.ds.aligned[..6]).unwrap();
        if common::relu_margin(&model, &batch) < 1e-4 {
            return Err(format!("model {i}: relu pre-activation too close to zero for finite differences"));
        }
        // Central differences of L taken term by term: the same quotient in
        // exact arithmetic, but the data term is not swamped by roundoff from
        // a constraint value two orders of magnitude larger.
        let d_vfl = numeric_gradient(&model, 1e-5, |m| m.objective(&batch, Some(&anchors), 0.0).unwrap().1);
        let d_cons = numeric_gradient(&model, 1e-5, |m| m.objective(&batch, Some(&anchors), 0.0).unwrap().2);
        for beta in [0.0, 0.1, 10.0] {
            let cfg = DownstreamConfig {
                beta,
                optimizer: OptimizerKind::Sgd,
                ..Default::default()
            };
            let (mut parties, mut server) = build_nodes(model.clone(), TrainMode::VflhlpA, &pre, &cfg).unwrap();
            let g = round_gradients(&mut parties, &mut server, &batch, 0, &mut Transport::new(f.specs.len())).unwrap();
            let numeric: Vec<f64> = d_vfl.iter().zip(&d_cons).map(|(v, c)| v + beta * c).collect();
            let err = max_relative_error(&g.model.flatten(), &numeric);
            worst = worst.max(err);
            if snapshot(&parties, &server) != model {
                return Err(format!("model {i}: computing gradients changed the weights"));
            }
        }
    }
    check(
        worst < 1e-4 && max_params <= 5000,
        format!("20 models x beta {{0, 0.1, 10}}, max rel err {worst:.2e}, largest model {max_params} params"),
    )
}

// ------------------------------------------------------- 2: monolith

fn criterion_2() -> Outcome {
    let f = common::fixture(Preset::AvazuLike, 600, 128, 21, &[8, 4]);
    let cfg = DownstreamConfig {
        beta: 0.0,
        lr_server: 0.05,
        lr_party: 0.03,
        epochs: 7,
        batch_size: 8,
        optimizer: OptimizerKind::Sgd,
        warm_start_active: false,
        val_fraction: 0.0,
    };
    let run = train_downstream(&f.ds, &f.specs, TrainMode::VanillaVfl, &Pretrained::default(), &cfg, 21).unwrap();
    if run.rounds.len() < 100 {
        return Err(format!("only {} rounds", run.rounds.len()));
    }
    let mut mono = init_model(&f.specs, 21);
    let mut loss_gap = 0.0f64;
    for (stats, ids) in run.rounds.iter().zip(&run.schedule).take(100) {
        let batch = AlignedBatch::gather(&f.ds, ids).unwrap();
        let loss = common::monolith_sgd_step(&mut mono, &batch, cfg.lr_server, cfg.lr_party);
        loss_gap = loss_gap.max((loss - stats.loss).abs());
    }
    // rerun the split side for exactly 100 rounds to compare final weights
    let split = {
        let (mut parties, mut server) = build_nodes(init_model(&f.specs, 21), TrainMode::VanillaVfl, &Pretrained::default(), &cfg).unwrap();
        let mut t = Transport::new(3);
        for (r, ids) in (0u32..).zip(run.schedule.iter().take(100)) {
            let batch = AlignedBatch::gather(&f.ds, ids).unwrap();
            vflhlp::federated::run_round(&mut parties, &mut server, &batch, r, &mut t).unwrap();
        }
        snapshot(&parties, &server)
    };
    let param_gap = split
        .flatten()
        .iter()
        .zip(mono.flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(
        loss_gap < 1e-10 && param_gap < 1e-8,
        format!("100 SGD rounds, max loss gap {loss_gap:.1e}, max param gap {param_gap:.1e}"),
    )
}

// ------------------------------------------------------- 3: loss oracles

fn naive_info_nce(s: &Array2<f64>, tau: f64) -> f64 {
    let n = s.nrows() as f64;
    let mut total = 0.0;
    for i in 0..s.nrows() {
        let mut denom = 0.0;
        for j in 0..s.ncols() {
            denom += (s[[i, j]] / tau).exp();
        }
        total += -((s[[i, i]] / tau).exp() / (denom / n)).ln();
    }
    total / n
}

fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0.0 {
                continue;
            }
            pairs += 1.0;
            credit += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / pairs
}

fn criterion_3() -> Outcome {
    let mut rng = stream(3, "acceptance/oracles");
    let mut nce_gap = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=64);
        let tau = rng.random_range(0.1..3.0);
        let s = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let (loss, _) = info_nce(&s, tau).unwrap();
        nce_gap = nce_gap.max((loss - naive_info_nce(&s, tau)).abs());
    }

    let mut cons_gap = 0.0f64;
    for t in 0..100u64 {
        let f = common::fixture(Preset::CriteoLike, 60, 10, t, &[4, 2]);
        let mut r = stream(t, "acceptance/constraint");
        let theta1 = Encoder::init(&f.specs[0], &mut r);
        let anchor1 = Encoder::init(&f.specs[0], &mut r);
        let theta0 = Mlp::glorot(theta1.out_dim(), &[1], &mut r);
        let anchor0 = Mlp::glorot(theta1.out_dim(), &[1], &mut r);
        let got = constraint_loss(&theta1, &anchor1, &theta0, &anchor0).unwrap().value;
        let mut naive = 0.0;
        for (a, b) in theta1.flatten().iter().zip(anchor1.flatten()) {
            naive += (a - b) * (a - b);
        }
        for (a, b) in theta0.flatten().iter().zip(anchor0.flatten()) {
            naive += (a - b) * (a - b);
        }
        cons_gap = cons_gap.max((got - 0.5 * naive).abs());
    }

    let mut auc_mismatch = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=500);
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        // coarse grid so ties occur
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..40)) / 8.0).collect();
        if auc(&scores, &labels).unwrap() != pairwise_auc(&scores, &labels) {
            auc_mismatch += 1;
        }
    }
    check(
        nce_gap < 1e-10 && cons_gap < 1e-12 && auc_mismatch == 0,
        format!("info_nce gap {nce_gap:.1e}, constraint gap {cons_gap:.1e}, auc mismatches {auc_mismatch}/100"),
    )
}

// ------------------------------------------------------- 4, 5: trends

fn criterion_4() -> Outcome {
    let g = fixture_grid();
    let t = &g.table;
    if t.failures().count() > 0 {
        return Err(format!("{} grid cells failed", t.failures().count()));
    }
    let counts = &t.aligned_counts;
    let gaps: Vec<f64> = counts.iter().map(|&a| mean(t, "vflhlp", a) - mean(t, "vanilla_vfl", a)).collect();
    let a_ok = gaps.iter().all(|&d| d > 0.0);
    let b_ok = gaps[0] > gaps[gaps.len() - 1];
    let vanilla: Vec<f64> = counts.iter().map(|&a| mean(t, "vanilla_vfl", a)).collect();
    let rising = vanilla.windows(2).filter(|w| w[1] >= w[0]).count();
    let c_ok = rising >= 4;
    let fast = g.elapsed < Duration::from_secs(600);
    let gaps_txt: Vec<String> = gaps.iter().map(|d| format!("{d:+.3}")).collect();
    check(
        a_ok && b_ok && c_ok && fast,
        format!(
            "(a) gaps [{}] {} (b) {:.3} > {:.3} {} (c) vanilla non-decreasing on {rising}/4 pairs {}; grid {:.0}s",
            gaps_txt.join(", "),
            ok(a_ok),
            gaps[0],
            gaps[gaps.len() - 1],
            ok(b_ok),
            ok(c_ok),
            g.elapsed.as_secs_f64()
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn criterion_5() -> Outcome {
    let g = fixture_grid();
    let t = &g.table;
    let [v, a, p, h] = ["vanilla_vfl", "vflhlp_a", "vflhlp_p", "vflhlp"].map(|l| mean(t, l, 100));
    let pass = a > v && p > v && h >= a.max(p) - 0.005 && g.elapsed < Duration::from_secs(300);
    check(
        pass,
        format!("aligned 100: vanilla {v:.3}, vflhlp_a {a:.3}, vflhlp_p {p:.3}, vflhlp {h:.3} (floor {:.3})", a.max(p) - 0.005),
    )
}

// ------------------------------------------------------- 6: privacy

fn criterion_6() -> Outcome {
    let g = fixture_grid();
    let layout = Layout::new(&g.dir);
    let data = load_or_prepare(&g.cfg, &layout).unwrap();
    let specs = g.cfg.encoder_specs(&data.train.schema);
    let (seed, aligned) = (1, 100);
    let ds = partition(&g.cfg, &data.train, seed, aligned).unwrap();
    let pre = Pretrained {
        active: Some(active_model(&g.cfg, &layout, &ds, &specs[0], seed, aligned).unwrap()),
        passive: passive_encoders(&g.cfg, &layout, &data.train, &specs, seed).unwrap(),
    };
    let run = train_downstream(&ds, &specs, TrainMode::Vflhlp, &pre, &g.cfg.downstream.training, seed).unwrap();
    let mut subsets = vec![("aligned set".to_string(), ds.aligned.clone())];
    subsets.extend(run.schedule.iter().enumerate().map(|(i, ids)| (format!("batch {i}"), ids.clone())));
    let forbidden = ForbiddenHashes::from_dataset(&ds, &subsets).unwrap();
    let report = audit(&run.log, &forbidden);
    let kinds_ok = run
        .log
        .records()
        .iter()
        .all(|r| matches!(r.kind, MessageKind::Representation | MessageKind::Gradient));
    check(
        report.passed() && kinds_ok && report.messages > 0,
        format!(
            "{} messages over {} rounds checked against {} raw-data hashes, {} violations",
            report.messages,
            run.rounds.len(),
            forbidden.len(),
            report.violations.len()
        ),
    )
}

// ------------------------------------------------------- 7: determinism

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
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

fn criterion_7() -> Outcome {
    let g = fixture_grid();
    let dir = work_dir().join("grid-b");
    let start = Instant::now();
    let table = cmd_grid(&g.cfg, &dir).unwrap();
    let elapsed = start.elapsed();
    let (a, b) = (files(&g.dir), files(&dir));
    let differing: Vec<_> = a.iter().filter(|(p, bytes)| b.get(*p) != Some(bytes)).map(|(p, _)| p.display().to_string()).collect();
    let checkpoints = a.keys().filter(|p| p.extension().is_some_and(|e| e == "json") && !p.starts_with("dataset")).count();
    check(
        table == g.table && differing.is_empty() && a.len() == b.len(),
        format!(
            "{} files ({checkpoints} json artifacts) compared, {} differ{}; repeat {:.0}s",
            a.len(),
            differing.len(),
            differing.first().map(|p| format!(", first {p}")).unwrap_or_default(),
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------- 8: SSL sanity

fn criterion_8() -> Outcome {
    let g = fixture_grid();
    let layout = Layout::new(&g.dir);
    let n = g.cfg.pretrain.ssl.batch_size as f64;
    let mut worst = f64::INFINITY;
    let mut worst_shifted = f64::INFINITY;
    let mut runs = 0;
    for &seed in &g.cfg.partition.seeds {
        for party in 2..=g.cfg.partition.parties {
            let ck = Checkpoint::load(&layout.passive_checkpoint(seed, party)).unwrap();
            let l0: f64 = ck.meta_as("initial_loss").unwrap();
            let l1: f64 = ck.meta_as("final_loss").unwrap();
            worst = worst.min((l0 - l1) / l0.abs());
            // same numbers on the conventional scale (loss + ln N), for reference
            worst_shifted = worst_shifted.min((l0 - l1) / (l0 + n.ln()));
            runs += 1;
        }
    }
    let t = &g.table;
    let (p, v) = (mean(t, "vflhlp_p", 100), mean(t, "vanilla_vfl", 100));
    check(
        worst >= 0.3 && p > v,
        format!(
            "min loss reduction {:.0}% over {runs} pre-training runs (conventional InfoNCE scale: {:.1}%); vflhlp_p {p:.3} > vanilla {v:.3}",
            100.0 * worst,
            100.0 * worst_shifted
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 gradient correctness", criterion_1),
        ("2 split/centralized equivalence", criterion_2),
        ("3 loss oracles", criterion_3),
        ("4 trend reproduction", criterion_4),
        ("5 ablation structure", criterion_5),
        ("6 privacy audit", criterion_6),
        ("7 determinism", criterion_7),
        ("8 ssl sanity", criterion_8),
    ];
    let budgets = [30, 30, 10, 600, 300, 60, 600, 180];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut lines = Vec::new();
    for ((name, f), budget) in criteria.into_iter().zip(budgets) {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let over = secs > budget as f64;
        let (verdict, detail) = match outcome {
            Ok(d) if !over => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over the {budget}s budget")),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        let line = format!("criterion {name}: {verdict} ({secs:.1}s) {detail}");
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("  {l}");
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
