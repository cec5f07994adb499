use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn amprob(args: &[&str], out_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_amprob"));
    cmd.args(args).env_remove("AMPROB_OUT");
    if let Some(r) = out_root {
        cmd.env("AMPROB_OUT", r);
    }
    cmd.output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file in `dir` except the clock-dependent run record.
fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

const SMALL_CAPACITY: &str = "
seeds = 2
queries_per_pattern = 10
cells = [{ d = 2, n = 16 }, { d = 4, n = 16 }, { d = 4, n = 32 }]

[storage]
d = 3
n = 4
probes = 5
";

#[test]
fn identical_invocations_write_identical_artifacts() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", SMALL_CAPACITY);
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    ok(&amprob(&["capacity", "--config", s(&cfg), "--seed", "7", "--out", s(&a)], None));
    ok(&amprob(&["capacity", "--config", s(&cfg), "--seed", "7", "--out", s(&b)], None));
    ok(&amprob(&["capacity", "--config", s(&cfg), "--seed", "7", "--out", s(&c), "--jobs", "3"], None));
    let first = artifacts(&a);
    for name in ["config.json", "results.csv", "summary.csv", "summary.json", "storage.json"] {
        assert!(first.contains_key(name), "missing {name}");
    }
    assert!(first == artifacts(&b), "reruns differ");
    assert!(first == artifacts(&c), "worker count changed the results");

    let csv = String::from_utf8(first["results.csv"].clone()).unwrap();
    assert!(csv.starts_with("D,N,M,sigma,seed,ratio_a,ratio_b,stored_fraction\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(!csv.contains('\r'));

    let run = json(&a.join("run.json"));
    assert_eq!(run["seed"], 7);
    assert_eq!(run["command"], "capacity");
    assert!(run["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    assert!(run["version"].is_string());
    assert_eq!(json(&a.join("config.json"))["seed"], 7);
}

#[test]
fn seed_flag_changes_the_draws() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", SMALL_CAPACITY);
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&amprob(&["capacity", "--config", s(&cfg), "--seed", "1", "--out", s(&a)], None));
    ok(&amprob(&["capacity", "--config", s(&cfg), "--seed", "2", "--out", s(&b)], None));
    assert_ne!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(b.join("results.csv")).unwrap());
}

#[test]
fn cluster_on_iris_reports_all_seven_metrics() {
    let t = tempfile::tempdir().unwrap();
    let iris = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/iris.csv");
    let cfg = write(
        t.path(),
        "iris.toml",
        &format!(
            "[[datasets]]\nkind = \"csv\"\npath = {:?}\n\n[train]\nepochs = 5\nrestarts = 1\n",
            iris.canonicalize().unwrap()
        ),
    );
    let out = t.path().join("run");
    ok(&amprob(&["cluster", "--config", s(&cfg), "--out", s(&out)], None));
    for method in ["kmeans", "clam", "clam_elbo"] {
        let m = json(&out.join(format!("metrics_iris_{method}.json")));
        for key in [
            "rand",
            "adjusted_rand",
            "adjusted_mutual_info",
            "normalized_mutual_info",
            "calinski_harabasz",
            "davies_bouldin",
            "silhouette",
        ] {
            assert!(m[key].is_number(), "{method}: {key} = {}", m[key]);
        }
        assert_eq!(m["n"], 150);
        let labels = std::fs::read_to_string(out.join(format!("labels_iris_{method}.csv"))).unwrap();
        assert_eq!(labels.lines().count(), 151);
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn higher_alpha_lowers_the_origin_basin() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(
        t.path(),
        "l.toml",
        "starts = [[0.0, 0.0]]\n\n[grid]\nnx = 21\nny = 21\n\n[model]\nkind = \"crp\"\nmemories = [[2.0, 0.0], [-2.0, 1.0]]\n\
         counts = [3.0, 2.0]\nalpha = 1.0\nbeta = 1.0\nrho = 1.0\n\n[sweep]\nparam = \"alpha\"\nvalues = [0.1, 10.0]\n",
    );
    let out = t.path().join("l");
    ok(&amprob(&["landscape", "--config", s(&cfg), "--out", s(&out)], None));
    let mut rdr = csv::Reader::from_path(out.join("cells.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let origin = |r: &csv::StringRecord| r[3].parse::<f64>().unwrap();
    assert_eq!(&rows[0][2], "0.1");
    assert!(origin(&rows[1]) < origin(&rows[0]));
    for g in ["grid_000.csv", "grid_001.csv"] {
        let text = std::fs::read_to_string(out.join(g)).unwrap();
        assert!(text.starts_with("x,y,energy\n"));
        assert_eq!(text.lines().count(), 1 + 21 * 21);
    }
    let traj = std::fs::read_to_string(out.join("trajectory_000_000.csv")).unwrap();
    assert!(traj.starts_with("step,x_0,x_1,energy\n"));
}

#[test]
fn bad_configs_exit_2_with_the_key_and_line() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "bad.toml", "seeds = 2\nquerys_per_pattern = 3\n");
    let o = amprob(&["capacity", "--config", s(&cfg), "--out", s(&t.path().join("x"))], None);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("querys_per_pattern") && msg.contains("line 2"), "{msg}");

    let cfg = write(t.path(), "wrong_type.toml", "seeds = \"five\"\n");
    assert_eq!(amprob(&["capacity", "--config", s(&cfg)], None).status.code(), Some(2));

    let cfg = write(t.path(), "3d.toml", "[model]\nkind = \"hopfield\"\npatterns = [[1.0, 0.0, 0.0]]\n");
    assert_eq!(amprob(&["landscape", "--config", s(&cfg)], None).status.code(), Some(2));

    assert_eq!(amprob(&["capacity", "--config", s(&t.path().join("missing.toml"))], None).status.code(), Some(2));
    assert_eq!(amprob(&["no-such-command"], None).status.code(), Some(2));
    assert_eq!(amprob(&["capacity", "--jobs", "many"], None).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1_with_a_record() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "c.toml", "[[datasets]]\nkind = \"csv\"\npath = \"nowhere.csv\"\n");
    let o = amprob(&["cluster", "--config", s(&cfg), "--out", s(&t.path().join("x"))], None);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["exit_code"], 1);
    assert!(err["message"].as_str().unwrap().contains("nowhere.csv"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write(t.path(), "a.toml", "instances = 50\n");
    ok(&amprob(&["attn-check", "--config", s(&cfg)], Some(t.path())));
    let summary = json(&t.path().join("attn-check/summary.json"));
    assert!(summary["max_log_error"].as_f64().unwrap() < 1e-11);
    let rows = std::fs::read_to_string(t.path().join("attn-check/attn_check.csv")).unwrap();
    assert_eq!(rows.lines().count(), 51);

    ok(&amprob(&["attn-check", "--config", s(&cfg), "--out", "named"], Some(t.path())));
    assert!(t.path().join("named/attn_check.csv").exists());
    let abs = t.path().join("elsewhere");
    ok(&amprob(&["attn-check", "--config", s(&cfg), "--out", s(&abs)], Some(&t.path().join("ignored"))));
    assert!(abs.join("attn_check.csv").exists());
}

#[test]
fn icl_checkpoint_round_trips_through_the_cli() {
    let t = tempfile::tempdir().unwrap();
    let train = write(
        t.path(),
        "train.toml",
        "out = \"train\"\nlog_every = 0\n\n[model]\nwidth = 8\nheads = 2\nmax_len = 9\n\n\
         [train]\nsteps = 3\nbatch_size = 2\nseq_len = 9\n\n[train.cd]\nlangevin_steps = 2\nnegatives_per_position = 2\n",
    );
    ok(&amprob(&["icl-train", "--config", s(&train)], Some(t.path())));
    let log = std::fs::read_to_string(t.path().join("train/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let eval = write(
        t.path(),
        "eval.toml",
        &format!(
            "checkpoint = {:?}\ncontext_lens = [2, 8]\nresamples = 50\ngrid_context_lens = [8]\nsamples = 3\n\n\
             [gap]\ntasks = 4\nqueries_per_task = 4\n\n[grid]\nnx = 5\nny = 5\n",
            t.path().join("train/checkpoint.bin")
        ),
    );
    let (a, b) = (t.path().join("e1"), t.path().join("e2"));
    ok(&amprob(&["icl-eval", "--config", s(&eval), "--out", s(&a)], None));
    ok(&amprob(&["icl-eval", "--config", s(&eval), "--out", s(&b)], None));
    assert!(artifacts(&a) == artifacts(&b));
    let gaps = json(&a.join("gaps.json"));
    assert_eq!(gaps.as_array().unwrap().len(), 2);
    assert!(gaps[1]["lower"].as_f64().unwrap() <= gaps[1]["upper"].as_f64().unwrap());
    let samples = std::fs::read_to_string(a.join("samples_ctx008.csv")).unwrap();
    assert_eq!(samples.lines().count(), 4);

    let too_long = write(t.path(), "long.toml", &format!("checkpoint = {:?}\ncontext_lens = [9]\n", t.path().join("train/checkpoint.bin")));
    assert_eq!(amprob(&["icl-eval", "--config", s(&too_long)], Some(t.path())).status.code(), Some(2));
}
