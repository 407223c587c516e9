use std::path::Path;
use std::process::{Command, Output};

fn pomo(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pomo"))
        .args(args)
        .env("POMO_OUT_DIR", out_dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const VRP: &str = "NAME : toy-n5
TYPE : CVRP
DIMENSION : 6
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 10
NODE_COORD_SECTION
1 0 0
2 10 0
3 10 10
4 0 10
5 5 5
6 3 7
DEMAND_SECTION
1 0
2 3
3 4
4 5
5 2
6 6
DEPOT_SECTION
1
-1
EOF
";

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for p in [&a, &b] {
        let o = pomo(dir.path(), &["gen", "--n", "20", "--count", "100", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // default location comes from the environment
    let o = pomo(dir.path(), &["gen", "--n", "5", "--count", "2"]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("cvrp5_seed0.txt").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = pomo(dir.path(), &["gen", "--n", "5", "--count", "2", "--bogus-flag"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--bogus-flag"));
    assert_eq!(code(&pomo(dir.path(), &["train", "--n", "5", "--mode", "am"])), 1);
    assert_eq!(code(&pomo(dir.path(), &[])), 1);
}

#[test]
fn help_for_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["gen", "train", "eval", "cvrplib", "oracle", "gradcheck"] {
        let o = pomo(dir.path(), &[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = pomo(dir.path(), &["eval", "--data", "/nonexistent/shard.txt"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("error:"));
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&pomo(dir.path(), &["eval", "--data", empty.to_str().unwrap()])), 2);
}

#[test]
fn train_smoke_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let o = pomo(dir.path(), &["train", "--mode", "pomo+", "--n", "20", "--desk-scale"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("train_pomo+_n20");
    let ck = run.join("checkpoint.bin");
    assert!(ck.exists());
    assert!(run.join("metrics.csv").exists());
    assert!(run.join("config.txt").exists());

    let shard = dir.path().join("shard.txt");
    let s = shard.to_str().unwrap();
    assert_eq!(code(&pomo(dir.path(), &["gen", "--n", "20", "--count", "3", "--out", s])), 0);
    let csv = dir.path().join("res.csv");
    let o = pomo(dir.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--data", s, "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);

    let o = pomo(dir.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--mode", "pomo", "--data", s]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pomo+"));
}

#[test]
fn train_reads_config_file_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    std::fs::write(
        &cfg,
        "epochs=1\ninstances_per_epoch=8\nbatch_size=4\nvalidation_size=2\nembed_dim=8\nheads=2\nencoder_layers=1\nff_hidden=8\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = pomo(
        dir.path(),
        &["train", "--n", "5", "--config", cfg.to_str().unwrap(), "--epochs", "2", "--out-dir", out.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let written = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.contains("embed_dim=8"));
    let again = dir.path().join("again");
    let o = pomo(
        dir.path(),
        &[
            "train",
            "--n",
            "5",
            "--config",
            cfg.to_str().unwrap(),
            "--resume",
            out.join("checkpoint.bin").to_str().unwrap(),
            "--out-dir",
            again.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn cvrplib_emits_gap_and_bucket_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let vrp = dir.path().join("vrp");
    std::fs::create_dir(&vrp).unwrap();
    std::fs::write(vrp.join("toy-n5.vrp"), VRP).unwrap();
    std::fs::write(vrp.join("broken.vrp"), "NAME : broken\n").unwrap();
    let bk = dir.path().join("bk.csv");
    std::fs::write(&bk, "name,cost,k\ntoy-n5,40,2\n").unwrap();
    let out = dir.path().join("out");
    let o = pomo(
        dir.path(),
        &[
            "cvrplib",
            "--dir",
            vrp.to_str().unwrap(),
            "--best-known",
            bk.to_str().unwrap(),
            "--greedy",
            "--out-dir",
            out.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let gaps = std::fs::read_to_string(out.join("cvrplib_gaps.csv")).unwrap();
    assert!(gaps.starts_with("name,size,model_cost,best_known,gap_percent\n"));
    assert!(gaps.contains("toy-n5,5,"));
    let buckets = std::fs::read_to_string(out.join("cvrplib_buckets.csv")).unwrap();
    assert!(buckets.starts_with("bucket,count,mean_gap_percent\n"));
    assert_eq!(buckets.lines().count(), 7);
}

#[test]
fn oracle_and_gradcheck() {
    let dir = tempfile::tempdir().unwrap();
    let shard = dir.path().join("small.txt");
    let s = shard.to_str().unwrap();
    assert_eq!(code(&pomo(dir.path(), &["gen", "--n", "6", "--count", "4", "--out", s])), 0);
    let o = pomo(dir.path(), &["oracle", "--data", s]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("oracle_small.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (cw, bf): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        assert!(bf <= cw + 1e-9);
    }
    let o = pomo(dir.path(), &["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
