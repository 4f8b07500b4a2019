//! Determinism acceptance: every subcommand rerun with identical flags and
//! seeds must produce byte-identical artifacts. The one sanctioned
//! exception is wall-clock time in bench output, which is masked before
//! comparing (the structural columns and the memory fits must still match
//! exactly).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn graft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graft"))
        .args(args)
        .output()
        .expect("spawn graft")
}

fn run_ok(args: &[&str]) -> Output {
    let out = graft(args);
    assert!(
        out.status.success(),
        "graft {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

struct Comparison {
    checked: usize,
}

impl Comparison {
    fn same_bytes(&mut self, what: &str, a: &[u8], b: &[u8]) {
        assert_eq!(a, b, "{what} differs between identical reruns");
        self.checked += 1;
    }

    fn same_file(&mut self, a: &Path, b: &Path) {
        self.same_bytes(&format!("{} vs {}", a.display(), b.display()), &read(a), &read(b));
    }
}

/// Strips the wall-clock column from bench CSV rows, keeping
/// variant/length/nnz/peak_bytes which must reproduce exactly.
fn strip_time_column(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            line.rsplit_once(',')
                .map_or(line.to_string(), |(head, _)| head.to_string())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Drops the time fit from every variant entry of a bench summary; the
/// memory fits and everything else must reproduce exactly.
fn mask_time_fits(path: &Path) -> serde_json::Value {
    let mut value: serde_json::Value =
        serde_json::from_slice(&read(path)).expect("summary parses as JSON");
    if let Some(fits) = value.get_mut("fits").and_then(|f| f.as_object_mut()) {
        for (_, entry) in fits.iter_mut() {
            if let Some(map) = entry.as_object_mut() {
                map.remove("time");
            }
        }
    }
    value
}

#[test]
fn criterion_11_reruns_reproduce_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path();
    let mut cmp = Comparison { checked: 0 };

    // A tiny corpus for parse and graph.
    let corpus = root.join("corpus");
    fs::create_dir_all(&corpus).expect("corpus dir");
    fs::write(corpus.join("straight.mini"), "x = 1\ny = x + 2\n").expect("write");
    fs::write(
        corpus.join("branchy.mini"),
        "a = 1\nif a < 2 { b = a + 1 } else { b = 0 }\n",
    )
    .expect("write");
    let corpus_s = corpus.to_str().expect("utf-8 path");

    // A small model so the training commands finish in seconds.
    let cfg = root.join("run.conf");
    fs::write(
        &cfg,
        "layers = 1\nheads = 2\nd_model = 24\nd_k = 4\nd_v = 4\nd_ff = 32\n\
         k = 2\nalpha = 0.25\nlr = 0.001\ndropout = 0.1\nepochs = 2\nbatch_size = 4\n\
         val_fraction = 0.2\n",
    )
    .expect("write config");
    let cfg_s = cfg.to_str().expect("utf-8 path");

    let p = |name: &str| -> PathBuf { root.join(name) };
    let s = |path: &PathBuf| -> String { path.to_str().expect("utf-8 path").to_string() };

    // parse: one JSON graph per source file.
    let (pa, pb) = (p("parse_a"), p("parse_b"));
    run_ok(&["parse", "--input", corpus_s, "--out", &s(&pa)]);
    run_ok(&["parse", "--input", corpus_s, "--out", &s(&pb)]);
    for name in ["straight.json", "branchy.json"] {
        cmp.same_file(&pa.join(name), &pb.join(name));
    }

    // graph --stats: corpus statistics JSON plus a stdout summary line.
    let (ga, gb) = (p("stats_a.json"), p("stats_b.json"));
    let out_a = run_ok(&["graph", "--input", corpus_s, "--stats", "--out", &s(&ga)]);
    let out_b = run_ok(&["graph", "--input", corpus_s, "--stats", "--out", &s(&gb)]);
    cmp.same_file(&ga, &gb);
    cmp.same_bytes("graph stdout", &out_a.stdout, &out_b.stdout);

    // gradcheck: seeded finite-difference report.
    let (gca, gcb) = (p("gradcheck_a.json"), p("gradcheck_b.json"));
    let out_a = run_ok(&["gradcheck", "--seeds", "2", "--tol", "1e-4", "--out", &s(&gca)]);
    let out_b = run_ok(&["gradcheck", "--seeds", "2", "--tol", "1e-4", "--out", &s(&gcb)]);
    cmp.same_file(&gca, &gcb);
    cmp.same_bytes("gradcheck stdout", &out_a.stdout, &out_b.stdout);

    // train: dataset generation, checkpoint and metrics.
    let train_flags = |ds: &str, ck: &str, metrics: &str| -> Vec<String> {
        [
            "train",
            "--gen-samples",
            "40",
            "--gen-bug-rate",
            "0.5",
            "--gen-min-statements",
            "3",
            "--gen-max-statements",
            "5",
            "--gen-seed",
            "3",
            "--dataset",
            ds,
            "--config",
            cfg_s,
            "--seed",
            "0",
            "--checkpoint",
            ck,
            "--metrics",
            metrics,
        ]
        .iter()
        .map(|x| x.to_string())
        .collect()
    };
    let (dsa, dsb) = (p("data_a.jsonl"), p("data_b.jsonl"));
    let (cka, ckb) = (p("model_a.bin"), p("model_b.bin"));
    let (ma, mb) = (p("metrics_a.json"), p("metrics_b.json"));
    let args_a = train_flags(&s(&dsa), &s(&cka), &s(&ma));
    let args_b = train_flags(&s(&dsb), &s(&ckb), &s(&mb));
    run_ok(&args_a.iter().map(String::as_str).collect::<Vec<_>>());
    run_ok(&args_b.iter().map(String::as_str).collect::<Vec<_>>());
    cmp.same_file(&dsa, &dsb);
    cmp.same_file(&cka, &ckb);
    cmp.same_file(&ma, &mb);

    // A second checkpoint (different seed, same data) for the ensemble.
    let ck2 = p("model_seed1.bin");
    run_ok(&[
        "train", "--dataset", &s(&dsa), "--config", cfg_s, "--seed", "1",
        "--checkpoint", &s(&ck2),
    ]);

    // eval: metrics JSON to stdout and file.
    let (ea, eb) = (p("eval_a.json"), p("eval_b.json"));
    let out_a = run_ok(&["eval", "--checkpoint", &s(&cka), "--dataset", &s(&dsa), "--out", &s(&ea)]);
    let out_b = run_ok(&["eval", "--checkpoint", &s(&cka), "--dataset", &s(&dsa), "--out", &s(&eb)]);
    cmp.same_file(&ea, &eb);
    cmp.same_bytes("eval stdout", &out_a.stdout, &out_b.stdout);

    // ensemble: routed two-model metrics.
    let (na, nb) = (p("ensemble_a.json"), p("ensemble_b.json"));
    let out_a = run_ok(&[
        "ensemble", "--deep", &s(&cka), "--shallow", &s(&ck2),
        "--dataset", &s(&dsa), "--out", &s(&na),
    ]);
    let out_b = run_ok(&[
        "ensemble", "--deep", &s(&cka), "--shallow", &s(&ck2),
        "--dataset", &s(&dsa), "--out", &s(&nb),
    ]);
    cmp.same_file(&na, &nb);
    cmp.same_bytes("ensemble stdout", &out_a.stdout, &out_b.stdout);

    // ablate: mask-swapped training.
    let ablate_flags = |ck: &str, metrics: &str| -> Vec<String> {
        [
            "ablate", "--mask", "random", "--density", "0.05", "--mask-seed", "9",
            "--dataset", &s(&dsa), "--config", cfg_s, "--seed", "0",
            "--checkpoint", ck, "--metrics", metrics,
        ]
        .iter()
        .map(|x| x.to_string())
        .collect()
    };
    let (aba, abb) = (p("ablate_a.bin"), p("ablate_b.bin"));
    let (ama, amb) = (p("ablate_a.json"), p("ablate_b.json"));
    let args_a = ablate_flags(&s(&aba), &s(&ama));
    let args_b = ablate_flags(&s(&abb), &s(&amb));
    run_ok(&args_a.iter().map(String::as_str).collect::<Vec<_>>());
    run_ok(&args_b.iter().map(String::as_str).collect::<Vec<_>>());
    cmp.same_file(&aba, &abb);
    cmp.same_file(&ama, &amb);

    // bench: measurement CSV and fit summary. Wall-clock time is the one
    // honest nondeterminism, so it is masked; structure, nnz and peak bytes
    // must reproduce exactly.
    let (ba, bb) = (p("bench_a"), p("bench_b"));
    let bench_flags = |out: &str| -> Vec<String> {
        [
            "bench", "--max-len", "300", "--variants", "sparse,dense_mask",
            "--repeats", "3", "--dense-cutoff", "400", "--seed", "7", "--out", out,
        ]
        .iter()
        .map(|x| x.to_string())
        .collect()
    };
    let args_a = bench_flags(&s(&ba));
    let args_b = bench_flags(&s(&bb));
    run_ok(&args_a.iter().map(String::as_str).collect::<Vec<_>>());
    run_ok(&args_b.iter().map(String::as_str).collect::<Vec<_>>());
    let csv_a = strip_time_column(&String::from_utf8(read(&ba.join("curves.csv"))).expect("utf-8"));
    let csv_b = strip_time_column(&String::from_utf8(read(&bb.join("curves.csv"))).expect("utf-8"));
    cmp.same_bytes("bench curves (time column masked)", csv_a.as_bytes(), csv_b.as_bytes());
    let sum_a = mask_time_fits(&ba.join("summary.json"));
    let sum_b = mask_time_fits(&bb.join("summary.json"));
    assert_eq!(sum_a, sum_b, "bench summaries differ beyond time fits");
    cmp.checked += 1;

    println!(
        "criterion 11 PASS: all 8 subcommands rerun with identical flags, {} artifact \
         comparisons byte-identical (bench wall-clock fields masked)",
        cmp.checked
    );
}
