//! The command-line tool, driven through the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn modest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    modest(args).status.code().expect("exit code")
}

fn ok(args: &[&str]) {
    let out = modest(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let gen = dir.path().join("gen");
        ok(&[
            "gen-synthetic",
            "--out",
            gen.to_str().unwrap(),
            "--users",
            "80",
            "--num-items",
            "50",
            "--dims",
            "6,5",
            "--seed",
            "9",
        ]);
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn p(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }

    fn data(&self) -> Vec<String> {
        vec![
            "--interactions".into(),
            self.p("gen/interactions.tsv"),
            "--items".into(),
            self.p("gen/items.tsv"),
            "--features".into(),
            format!("causal={}", self.p("gen/causal.bin")),
            "--features".into(),
            format!("spurious1={}", self.p("gen/spurious1.bin")),
        ]
    }

    /// `head`, the data flags, `extra`, then small-model settings.
    fn with_data(&self, head: &[&str], extra: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        v.extend(self.data());
        v.extend(extra.iter().map(|s| s.to_string()));
        v.extend(
            [
                "--epochs-max",
                "4",
                "--embed-dim",
                "6",
                "--shared-dim",
                "4",
                "--seed",
                "3",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        v
    }

    fn run(&self, args: Vec<String>) -> Output {
        modest(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let out = self.p(out);
        let o = self.run(self.with_data(&["train", "--out", &out], extra));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Value of `column` in the first data row of a TSV file.
fn first_row_value(p: &Path, column: &str) -> String {
    let text = read(p);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let idx = header.iter().position(|h| *h == column).unwrap();
    lines.next().unwrap().split('\t').nth(idx).unwrap().to_owned()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["split", "--bogus"]), 1);
    let f = Fixture::new();
    let out = f.p("t");
    let bad_key = f.run(f.with_data(&["train", "--out", &out, "--set", "nonsense=1"], &[]));
    assert_eq!(bad_key.status.code(), Some(1));
    let bad_value = f.run(f.with_data(&["train", "--out", &out, "--lambda", "-1"], &[]));
    assert_eq!(bad_value.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tsv");
    let out = dir.path().join("o");
    assert_eq!(
        code(&[
            "split",
            "--interactions",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        2
    );
    let garbled = dir.path().join("garbled.tsv");
    std::fs::write(&garbled, "only-one-column\n").unwrap();
    assert_eq!(
        code(&[
            "split",
            "--interactions",
            garbled.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ]),
        2
    );
}

#[test]
fn divergent_training_exits_3() {
    let f = Fixture::new();
    let out = f.p("t");
    let o = f.run(f.with_data(&["train", "--out", &out, "--lr-theta", "1e300"], &[]));
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_writes_its_outputs() {
    let f = Fixture::new();
    f.train("t", &["--dump-mask"]);
    for name in [
        "checkpoint.mdck",
        "train_log.tsv",
        "sample_weights.tsv",
        "config.ini",
        "mask.tsv",
        "manifest.txt",
    ] {
        assert!(f.path("t").join(name).is_file(), "missing {name}");
    }
    let log = read(&f.path("t/train_log.tsv"));
    assert_eq!(
        log.lines().next(),
        Some("epoch\tweighted_bpr_loss\thsic_loss\trecall\tndcg\tprecision")
    );
    assert_eq!(log.lines().count(), 5);
}

#[test]
fn same_seed_same_log() {
    let f = Fixture::new();
    f.train("a", &["--lambda", "0.3"]);
    f.train("b", &["--lambda", "0.3"]);
    assert_eq!(read(&f.path("a/train_log.tsv")), read(&f.path("b/train_log.tsv")));
    assert_eq!(
        std::fs::read(f.path("a/checkpoint.mdck")).unwrap(),
        std::fs::read(f.path("b/checkpoint.mdck")).unwrap()
    );
}

#[test]
fn zero_lambda_ignores_penalty() {
    let f = Fixture::new();
    f.train("a", &["--lambda", "0", "--weight-penalty", "0"]);
    f.train("b", &["--lambda", "0", "--weight-penalty", "7.5"]);
    assert_eq!(
        std::fs::read(f.path("a/checkpoint.mdck")).unwrap(),
        std::fs::read(f.path("b/checkpoint.mdck")).unwrap()
    );
    let weights = read(&f.path("a/sample_weights.tsv"));
    assert!(weights.lines().all(|l| l.ends_with("\t1.000000000")), "{weights}");
}

#[test]
fn zero_only_sweep_matches_single_run() {
    let f = Fixture::new();
    f.train("t", &["--lambda", "0"]);
    let (ckpt, ev, sw) = (f.p("t/checkpoint.mdck"), f.p("e"), f.p("s"));
    let mut eval: Vec<String> = ["eval", "--out", &ev, "--checkpoint", &ckpt, "--k", "20"]
        .map(String::from)
        .to_vec();
    eval.extend(f.data());
    let o = f.run(eval);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = f.run(f.with_data(&["sweep-lambda", "--out", &sw, "--lambdas", "0"], &[]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = read(&f.path("s/sweep.tsv"));
    assert_eq!(sweep.lines().count(), 2);
    for col in ["recall", "ndcg", "precision"] {
        assert_eq!(
            first_row_value(&f.path("s/sweep.tsv"), col),
            first_row_value(&f.path("e/metrics.tsv"), col),
            "{col}"
        );
    }
}

#[test]
fn sweep_has_one_row_per_lambda() {
    let f = Fixture::new();
    let sw = f.p("s");
    let o = f.run(f.with_data(&["sweep-lambda", "--out", &sw, "--lambdas", "0,0.1,0.3,0.5"], &[]));
    assert!(o.status.success());
    let text = read(&f.path("s/sweep.tsv"));
    let lambdas: Vec<&str> = text.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(lambdas, ["0", "0.1", "0.3", "0.5"]);
    assert!(text.lines().skip(1).all(|l| l.split('\t').nth(1) == Some("ok")));
}

#[test]
fn unit_weights_fill_one_bin() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.tsv");
    let body: String = (0..30).map(|i| format!("i{i}\t1.000000000\n")).collect();
    std::fs::write(&w, body).unwrap();
    let out = dir.path().join("h");
    ok(&[
        "weights-hist",
        "--weights",
        w.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = read(&out.join("weights_hist.tsv"));
    let counts: Vec<usize> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 20);
    assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 1);
    assert_eq!(counts.iter().sum::<usize>(), 30);
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let f = Fixture::new();
    f.train("t", &[]);
    let other = Fixture::new();
    let ckpt = f.p("t/checkpoint.mdck");
    let out = other.p("e");
    // Same item set but a narrower feature file for one modality.
    let narrow = other.path("narrow.tsv");
    let ids = read(&other.path("gen/items.tsv"));
    std::fs::write(&narrow, ids.lines().map(|i| format!("{i}\t0.5\n")).collect::<String>()).unwrap();
    let args: Vec<String> = vec![
        "eval".into(),
        "--out".into(),
        out,
        "--checkpoint".into(),
        ckpt,
        "--interactions".into(),
        other.p("gen/interactions.tsv"),
        "--features".into(),
        format!("causal={}", narrow.display()),
        "--features".into(),
        format!("spurious1={}", narrow.display()),
    ];
    let o = other.run(args);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ood_split_keeps_train_and_valid() {
    let f = Fixture::new();
    let out = f.p("o");
    let mut args: Vec<String> = ["ood-split", "--out", &out, "--epochs", "20", "--fraction", "0.3"]
        .map(String::from)
        .to_vec();
    args.extend(f.data());
    let o = f.run(args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tags = |p: &Path| -> Vec<(String, String)> {
        read(p)
            .lines()
            .map(|l| {
                let mut c = l.split('\t');
                let pair = format!("{}\t{}", c.next().unwrap(), c.next().unwrap());
                (pair, c.next().unwrap_or("train").to_owned())
            })
            .collect()
    };
    let before = tags(&f.path("gen/interactions.tsv"));
    let after = tags(&f.path("o/ood_split.tsv"));
    assert_eq!(before.len(), after.len());
    for ((p0, t0), (p1, t1)) in before.iter().zip(&after) {
        assert_eq!(p0, p1);
        if t0 != "test" {
            assert_eq!(t0, t1);
        } else {
            assert!(t1 == "test" || t1 == "dropped", "{t1}");
        }
    }
    assert!(after.iter().any(|(_, t)| t == "dropped"));
}
