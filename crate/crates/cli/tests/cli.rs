use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use fedransom::corpus::{synth_benign, synth_ransomlike, Manifest};
use fedransom::fedavg::client_seed;
use fedransom::metrics::{read_report, EvalReport, ReportFormat};
use fedransom::nn::{checkpoint, fit, predict_samples, ModelParams, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedransom"));
    c.env_remove("FEDRANSOM_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic corpus: 20 files per class, 1-4 KiB each.
fn corpus(dir: &Path) -> PathBuf {
    let out = dir.join("corpus");
    ok(&[
        "synth",
        "--n-per-class",
        "20",
        "--min-size",
        "1024",
        "--max-size",
        "4096",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    out
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["train", "--help"]).status.code(), Some(0));
    assert_eq!(run(&["train", "--manifest", "m", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    assert_eq!(
        run(&["synth", "--n-per-class", "0", "--out", s(&out)]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["fedtrain", "--clients", "0", "--manifest", "missing.jsonl"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["train", "--lr", "-1", "--manifest", "missing.jsonl"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["train", "--manifest", "missing.jsonl"]).status.code(), Some(1));
}

#[test]
fn synth_writes_reproducible_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus(dir.path());
    let b = dir.path().join("again");
    ok(&[
        "synth",
        "--n-per-class",
        "20",
        "--min-size",
        "1024",
        "--max-size",
        "4096",
        "--seed",
        "3",
        "--out",
        s(&b),
    ]);
    for name in [
        "manifest.jsonl",
        "manifest.train.jsonl",
        "manifest.val.jsonl",
        "manifest.test.jsonl",
    ] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let count = |name: &str| Manifest::read(a.join(name)).unwrap().len();
    assert_eq!(count("manifest.jsonl"), 40);
    assert_eq!(
        (
            count("manifest.train.jsonl"),
            count("manifest.val.jsonl"),
            count("manifest.test.jsonl")
        ),
        (32, 4, 4)
    );
}

#[test]
fn zero_epochs_and_seed_fallbacks() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let m = c.join("manifest.train.jsonl");
    let ck = dir.path().join("m.frwm");
    ok(&[
        "train",
        "--manifest",
        s(&m),
        "--epochs",
        "0",
        "--side",
        "16",
        "--seed",
        "4",
        "--checkpoint-out",
        s(&ck),
    ]);
    assert!(checkpoint::load(&ck).unwrap().bit_eq(&ModelParams::init(16, 4)));

    let out = bin()
        .env("FEDRANSOM_SEED", "9")
        .args([
            "train",
            "--manifest",
            s(&m),
            "--epochs",
            "0",
            "--side",
            "16",
            "--checkpoint-out",
            s(&ck),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(checkpoint::load(&ck).unwrap().bit_eq(&ModelParams::init(16, 9)));

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 11\n[train]\nside = 12\nepochs = 0\n").unwrap();
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--manifest",
        s(&m),
        "--side",
        "16",
        "--checkpoint-out",
        s(&ck),
    ]);
    assert!(checkpoint::load(&ck).unwrap().bit_eq(&ModelParams::init(16, 11)));
}

#[test]
fn train_and_eval_match_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let (train_m, val_m) = (c.join("manifest.train.jsonl"), c.join("manifest.val.jsonl"));
    let ck = dir.path().join("m.frwm");
    let report = dir.path().join("eval.json");
    ok(&[
        "train",
        "--manifest",
        s(&train_m),
        "--side",
        "16",
        "--epochs",
        "2",
        "--batch",
        "8",
        "--seed",
        "5",
        "--checkpoint-out",
        s(&ck),
    ]);
    ok(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&val_m),
        "--report-out",
        s(&report),
    ]);

    let config = TrainConfig {
        side: 16,
        epochs: 2,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let train = Manifest::read(&train_m).unwrap().load_samples(16).unwrap();
    let expected = fit(
        &ModelParams::init(16, 5),
        &train,
        None,
        &config,
        &mut ChaCha8Rng::seed_from_u64(5),
    )
    .unwrap();
    assert!(checkpoint::load(&ck).unwrap().bit_eq(&expected.params));

    let val = Manifest::read(&val_m).unwrap().load_samples(16).unwrap();
    let pred = predict_samples(&expected.params, &val, 0.5).unwrap();
    let labels: Vec<u8> = val.iter().map(|s| s.label).collect();
    let want = EvalReport::from_predictions(&pred.labels, &labels).unwrap();
    assert_eq!(read_report(&report, ReportFormat::Json).unwrap(), want);
}

#[test]
fn single_client_fedtrain_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let m = c.join("manifest.train.jsonl");
    let (fed_ck, train_ck) = (dir.path().join("fed.frwm"), dir.path().join("train.frwm"));
    let report = dir.path().join("fed.csv");
    ok(&[
        "fedtrain",
        "--manifest",
        s(&m),
        "--clients",
        "1",
        "--rounds",
        "1",
        "--local-epochs",
        "2",
        "--batch",
        "8",
        "--side",
        "16",
        "--seed",
        "6",
        "--checkpoint-out",
        s(&fed_ck),
        "--report-out",
        s(&report),
    ]);
    let shuffle = client_seed(6, "client-000", 1).to_string();
    ok(&[
        "train",
        "--manifest",
        s(&m),
        "--epochs",
        "2",
        "--batch",
        "8",
        "--side",
        "16",
        "--seed",
        "6",
        "--shuffle-seed",
        &shuffle,
        "--checkpoint-out",
        s(&train_ck),
    ]);
    assert_eq!(std::fs::read(&fed_ck).unwrap(), std::fs::read(&train_ck).unwrap());
    let r = read_report(&report, ReportFormat::Csv).unwrap();
    assert_eq!(r.history.len(), 1);
}

#[test]
fn networked_run_matches_fedtrain() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let m = c.join("manifest.train.jsonl");
    let val = c.join("manifest.val.jsonl");
    let shards = dir.path().join("shards");
    let hyper = [
        "--rounds",
        "2",
        "--local-epochs",
        "1",
        "--batch",
        "8",
        "--side",
        "16",
        "--seed",
        "7",
    ];
    let mut shard_args = vec!["shard", "--manifest", s(&m), "--clients", "3", "--out", s(&shards)];
    shard_args.extend(["--seed", "7"]);
    ok(&shard_args);

    let served = dir.path().join("served.frwm");
    let mut server = bin()
        .args([
            "serve",
            "--bind",
            "127.0.0.1:0",
            "--clients",
            "3",
            "--join-timeout",
            "60",
        ])
        .args(["--val-manifest", s(&val), "--checkpoint-out", s(&served)])
        .args(hyper)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    let mut server_out = BufReader::new(server.stdout.take().unwrap());
    server_out.read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(2).unwrap().to_owned();

    let clients: Vec<_> = (0..3)
        .map(|k| {
            let shard = shards.join(format!("client-{k:03}.jsonl"));
            bin()
                .args(["client", "--connect", &addr, "--manifest", s(&shard), "--clients", "3"])
                .args(hyper)
                .stdout(Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    for mut c in clients {
        assert!(c.wait().unwrap().success());
    }
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut server_out, &mut rest).unwrap();
    assert!(server.wait().unwrap().success());
    assert!(rest.contains("accuracy"), "{rest}");

    let local = dir.path().join("local.frwm");
    let mut args = vec![
        "fedtrain",
        "--manifest",
        s(&m),
        "--clients",
        "3",
        "--checkpoint-out",
        s(&local),
    ];
    args.extend(hyper);
    ok(&args);
    assert_eq!(std::fs::read(&served).unwrap(), std::fs::read(&local).unwrap());
}

#[test]
fn client_reports_unreachable_server() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let addr = format!("127.0.0.1:{port}");
    let out = run(&[
        "client",
        "--connect",
        &addr,
        "--manifest",
        s(&c.join("manifest.val.jsonl")),
        "--side",
        "16",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refused"));
}

#[test]
fn predict_flags_packed_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let ck = dir.path().join("m.frwm");
    ok(&[
        "train",
        "--manifest",
        s(&c.join("manifest.jsonl")),
        "--side",
        "32",
        "--epochs",
        "8",
        "--batch",
        "8",
        "--seed",
        "1",
        "--checkpoint-out",
        s(&ck),
    ]);
    let mut files = Vec::new();
    for seed in 0..4u64 {
        let r = dir.path().join(format!("r{seed}.bin"));
        std::fs::write(&r, synth_ransomlike(1000 + seed, 3000).unwrap()).unwrap();
        let b = dir.path().join(format!("b{seed}.bin"));
        std::fs::write(&b, synth_benign(1000 + seed, 3000).unwrap()).unwrap();
        files.push((r, 1u8));
        files.push((b, 0u8));
    }
    let mut args = vec!["predict", "--checkpoint", s(&ck)];
    args.extend(files.iter().map(|(p, _)| s(p)));
    let stdout = ok(&args);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), files.len());
    for (line, (path, label)) in lines.iter().zip(&files) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols[0], s(path));
        assert_eq!(cols[1], label.to_string(), "{line}");
        let p: f32 = cols[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    let missing = dir.path().join("nope.bin");
    assert_eq!(
        run(&["predict", "--checkpoint", s(&ck), s(&missing)]).status.code(),
        Some(1)
    );
}
