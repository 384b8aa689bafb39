use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proxvae::checkpoint::Checkpoint;
use proxvae::graph::{CooMatrix, GraphArtifacts};
use proxvae::ingest::InteractionDataset;
use proxvae::params::ParamSet;
use proxvae::Checkpoint64;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn proxvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxvae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = proxvae(args);
    assert!(
        out.status.success(),
        "proxvae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_conf() -> PathBuf {
    fixture("small.conf")
}

/// Builds the graph for a fixture and trains with extra `--set` overrides.
fn trained(fixture_name: &str, extra: &[&str]) -> (TempDir, PathBuf, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture(fixture_name);
    let graph = tmp.path().join("graph");
    let conf = small_conf();
    ok(&["build-graph", "--config", p(&conf), "--data", p(&data), "--out", p(&graph)]);
    let mut args = vec!["train", "--config", p(&conf), "--data", p(&data), "--graph", p(&graph)];
    let out = tmp.path().join("train");
    args.extend(["--out", p(&out)]);
    for e in extra {
        args.extend(["--set", e]);
    }
    ok(&args);
    (tmp, graph, out)
}

fn log_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("train_log.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const RAW: &str = "\
1::10::5.0::1147880044
1::11::4.0::1147880045
1::12::3.0::1147880046
2::10::4.5::1147880047
2::12::5.0::1147880048
3::11::4.0::1147880049
3::12::4.0::1147880050
3::13::5.0::1147880051
4::13::4.0::1147880052
4::10::2.0::1147880053
bad line
";

#[test]
fn prepare_writes_stats_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("ratings.dat");
    fs::write(&raw, RAW).unwrap();
    let out = tmp.path().join("data");
    let args = ["prepare", "--set", "min_interactions=0", "--input", p(&raw), "--out", p(&out)];
    ok(&args);
    let first = fs::read(out.join("split.tsv")).unwrap();
    ok(&args);
    assert_eq!(fs::read(out.join("split.tsv")).unwrap(), first);

    let stats = json(&out.join("stats.json"));
    assert_eq!(stats["raw_records"], 10);
    assert_eq!(stats["malformed_lines"], 1);
    let (users, items, n) = (
        stats["users"].as_f64().unwrap(),
        stats["items"].as_f64().unwrap(),
        stats["interactions"].as_f64().unwrap(),
    );
    assert_eq!((users, items, n), (4.0, 4.0, 8.0));
    assert_eq!(stats["density"].as_f64().unwrap(), n / (users * items));
    assert!(fs::read_to_string(out.join("config.effective")).unwrap().contains("min_interactions = 0\n"));
}

#[test]
fn missing_input_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = proxvae(&["prepare", "--input", p(&tmp.path().join("nope.dat")), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.dat"));
}

#[test]
fn unknown_keys_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("bad.conf");
    fs::write(&conf, "latent_dim = 4\nlatnet_dim = 5\n").unwrap();
    let out = proxvae(&["build-graph", "--config", p(&conf)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("latnet_dim"));
    let out = proxvae(&["build-graph", "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_documents_every_key_and_default() {
    let help = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    let defaults = String::from_utf8(ok(&["defaults"]).stdout).unwrap();
    let mut n = 0;
    for line in defaults.lines().filter(|l| !l.starts_with('#')) {
        let (key, default) = line.split_once(" = ").unwrap();
        let shown = format!("{key} = {default}");
        assert!(help.contains(shown.trim_end()), "--help lacks {shown:?}");
        n += 1;
    }
    assert!(n > 30);
}

#[test]
fn build_graph_reproduces_the_toy_oracles() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = small_conf();
    let out = tmp.path().join("g");
    let toy = fixture("toy");
    let args = ["build-graph", "--config", p(&conf), "--data", p(&toy), "--out", p(&out)];
    ok(&args);

    let e2 = CooMatrix::read_file(&out.join("proximity_2.coo")).unwrap();
    let mut dense = vec![vec![0u64; 3]; 3];
    for &(r, c, v) in &e2.entries {
        dense[r][c] = v;
    }
    assert_eq!(dense, vec![vec![3, 2, 1], vec![3, 1, 2], vec![0, 0, 0]]);

    let paths = CooMatrix::read_file(&out.join("paths.coo")).unwrap();
    let u1: Vec<u64> = paths.entries.iter().filter(|e| e.0 == 0).map(|e| e.2).collect();
    assert_eq!(u1, vec![1, 1, 3]);
    assert!(paths.entries.iter().all(|e| e.0 != 2));

    let g = GraphArtifacts::read_dir(&out).unwrap();
    assert_eq!(g.subgraphs[0].row(1), &[0, 1, 2]);
    assert!(g.subgraphs[2].is_empty());
    let s = &g.strata.users[0];
    assert_eq!((s.count(0, 0), s.count(0, 1), s.count(0, 2)), (1, 0, 0));

    let before: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|f| (f.clone(), fs::read(&f).unwrap()))
        .collect();
    ok(&args);
    for (f, bytes) in before {
        assert_eq!(fs::read(&f).unwrap(), bytes, "{} changed on rerun", f.display());
    }

    let strict = tmp.path().join("strict");
    ok(&["build-graph", "--config", p(&conf), "--set", "c_2=4", "--data", p(&toy), "--out", p(&strict)]);
    let g = GraphArtifacts::read_dir(&strict).unwrap();
    assert!(g.subgraphs[0].row(1).is_empty());
}

#[test]
fn build_graph_rejects_an_empty_training_split() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    for f in ["users.tsv", "items.tsv"] {
        fs::copy(fixture("toy").join(f), data.join(f)).unwrap();
    }
    fs::write(data.join("split.tsv"), "0\t0\ttest\n").unwrap();
    let out = proxvae(&["build-graph", "--data", p(&data), "--out", p(&tmp.path().join("g"))]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn training_on_the_toy_graph_lowers_the_loss() {
    let (_tmp, _, out) = trained("toy", &["max_epochs=200"]);
    let rows = log_rows(&out);
    assert_eq!(rows.len(), 200);
    let loss = |r: &Vec<String>| r[1].parse::<f64>().unwrap();
    assert!(loss(&rows[199]) < loss(&rows[0]), "{} vs {}", loss(&rows[199]), loss(&rows[0]));
    for f in ["best.ckpt", "last.ckpt", "config.effective", "train_summary.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

fn tensors(ckpt: &Checkpoint64) -> Vec<Vec<f64>> {
    ckpt.model.tensors().into_iter().map(|t| t.data.to_vec()).collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (_a, _, one) = trained("toy", &["learning_rate=0", "max_epochs=1"]);
    let (_b, _, four) = trained("toy", &["learning_rate=0", "max_epochs=4"]);
    let one = Checkpoint::load(&one.join("last.ckpt")).unwrap();
    let four = Checkpoint::load(&four.join("last.ckpt")).unwrap();
    assert_eq!(four.epoch, 4);
    let bits = |c: &Checkpoint64| -> Vec<Vec<u64>> {
        tensors(c).iter().map(|t| t.iter().map(|x| x.to_bits()).collect()).collect()
    };
    assert_eq!(bits(&one), bits(&four));
}

#[test]
fn resume_continues_numbering_and_matches_an_uninterrupted_run() {
    let (_full_tmp, _, full) = trained("toy", &["max_epochs=6"]);
    let (tmp, graph, part) = trained("toy", &["max_epochs=3"]);
    let conf = small_conf();
    ok(&[
        "train",
        "--config",
        p(&conf),
        "--set",
        "max_epochs=6",
        "--data",
        p(&fixture("toy")),
        "--graph",
        p(&graph),
        "--out",
        p(&part),
        "--resume",
        p(&part),
    ]);
    let epochs: Vec<String> = log_rows(&part).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(epochs, ["1", "2", "3", "4", "5", "6"]);
    assert_eq!(fs::read(part.join("last.ckpt")).unwrap(), fs::read(full.join("last.ckpt")).unwrap());
    drop(tmp);
}

#[test]
fn evaluate_scores_the_toy_fixture() {
    let (tmp, graph, train) = trained("toy", &["max_epochs=2"]);
    let out = tmp.path().join("eval");
    let conf = small_conf();
    ok(&[
        "evaluate",
        "--config",
        p(&conf),
        "--set",
        "export_embeddings=true",
        "--checkpoint",
        p(&train.join("best.ckpt")),
        "--data",
        p(&fixture("toy")),
        "--graph",
        p(&graph),
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "user_id,ndcg,recall,pild,held_out");
    // u1's only unseen item is its held-out one
    assert_eq!(lines[1], "u1,1,1,,1");
    assert!(lines[2].starts_with("mean,1,1,"));

    let summary = json(&out.join("summary.json"));
    let manifest = InteractionDataset::read_dir(&fixture("toy")).unwrap();
    assert_eq!(summary["skipped_empty_train"], manifest.users_without_train());
    assert_eq!(summary["users_evaluated"], 1);
    assert_eq!(summary["config"]["k_cut"], "3");
    assert!(out.join("config.effective").exists());
    let emb = fs::read_to_string(out.join("embeddings.tsv")).unwrap();
    assert_eq!(emb.lines().count(), 3);
    assert_eq!(emb.lines().next().unwrap().split('\t').count(), 1 + 4);
}

#[test]
fn evaluate_reports_the_handcrafted_pild() {
    let (tmp, graph, train) = trained("pild", &["max_epochs=1"]);
    let out = tmp.path().join("eval");
    ok(&[
        "evaluate",
        "--config",
        p(&small_conf()),
        "--checkpoint",
        p(&train.join("best.ckpt")),
        "--data",
        p(&fixture("pild")),
        "--graph",
        p(&graph),
        "--out",
        p(&out),
    ]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["mean_pild"].as_f64(), Some(0.5));
    assert_eq!(summary["users_evaluated"], 1);
}

/// Replaces the trained model by one whose scores are `σ(gamma)`.
fn constructed_checkpoint(train: &Path, gamma: [[f64; 4]; 2]) -> PathBuf {
    let mut ckpt: Checkpoint64 = Checkpoint::load(&train.join("best.ckpt")).unwrap();
    ckpt.model = ckpt.model.zeros_like();
    for (k, row) in gamma.iter().enumerate() {
        for (v, &g) in row.iter().enumerate() {
            ckpt.model.decoder.gamma.set(k, v, g);
        }
    }
    let path = train.join("constructed.ckpt");
    ckpt.save(&path).unwrap();
    path
}

fn recommend(ckpt: &Path, graph: &Path, extra: &[&str]) -> Vec<Vec<String>> {
    let mut args = vec![
        "recommend",
        "--checkpoint",
        p(ckpt),
        "--graph",
        p(graph),
    ];
    let data = fixture("pild");
    args.extend(["--data", p(&data), "--user", "w5"]);
    args.extend(extra);
    let out = ok(&args);
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn recommend_puts_the_dominant_item_first() {
    let (_tmp, graph, train) = trained("pild", &["max_epochs=1"]);
    let ckpt = constructed_checkpoint(&train, [[-5.0, -5.0, 6.0, -5.0], [0.0; 4]]);
    let rows = recommend(&ckpt, &graph, &["--k", "2"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "1");
    assert_eq!(rows[0][1], "c");
    assert_eq!(rows[0].len(), 5);
    assert!(rows.iter().all(|r| r[1] != "d"));
}

#[test]
fn alpha_sweep_reorders_the_opposed_heads() {
    let (_tmp, graph, train) = trained("pild", &["max_epochs=1"]);
    let ckpt = constructed_checkpoint(&train, [[3.0, 2.0, 1.0, 0.0], [-3.0, -2.0, -1.0, 0.0]]);
    let order = |alpha: &str| -> Vec<String> {
        recommend(&ckpt, &graph, &["--k", "3", "--alpha", alpha]).into_iter().map(|r| r[1].clone()).collect()
    };
    assert_eq!(order("1"), ["a", "b", "c"]);
    assert_eq!(order("0"), ["c", "b", "a"]);
}

#[test]
fn recommend_rejects_unknown_users() {
    let (_tmp, graph, train) = trained("pild", &["max_epochs=1"]);
    let out = proxvae(&[
        "recommend",
        "--checkpoint",
        p(&train.join("best.ckpt")),
        "--data",
        p(&fixture("pild")),
        "--graph",
        p(&graph),
        "--user",
        "nobody",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nobody"));
}

#[test]
fn corrupt_checkpoints_are_runtime_errors() {
    let (_tmp, graph, train) = trained("pild", &["max_epochs=1"]);
    let ckpt = train.join("best.ckpt");
    let bytes = fs::read(&ckpt).unwrap();
    fs::write(&ckpt, &bytes[..bytes.len() - 1]).unwrap();
    let out = proxvae(&[
        "recommend",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&fixture("pild")),
        "--graph",
        p(&graph),
        "--user",
        "w5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
}
