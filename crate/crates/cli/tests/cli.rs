use std::path::Path;
use std::process::{Command, Output};

fn natlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_natlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["reproduce", "table9"][..],
        &["train-nat", "--bogus"],
        &["frobnicate"],
    ] {
        let out = natlab(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = natlab(
        dir.path(),
        &["train-at", "--config", "missing.cfg", "--out", "x"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn reproduce_theorem1_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for out in ["a", "b"] {
        let stdout = ok(&natlab(
            dir.path(),
            &[
                "--threads",
                "1",
                "reproduce",
                "theorem1",
                "--seed",
                "7",
                "--out",
                out,
            ],
        ));
        assert!(
            stdout.contains("exact_kl = ")
                && stdout.contains("exact_tc = ")
                && stdout.contains("gap = ")
        );
        logs.push(std::fs::read(dir.path().join(out).join("metrics.jsonl")).unwrap());
    }
    assert_eq!(logs[0], logs[1]);
    let cfg = ok(&natlab(
        dir.path(),
        &["reproduce", "fig7-dynamic-kd", "--print-config"],
    ));
    assert!(cfg.contains("tier.tiny"));
}

#[test]
fn file_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&natlab(
        d,
        &[
            "gen-data",
            "styles",
            "--out",
            "c.tsv",
            "--pairs",
            "200",
            "--dev",
            "40",
            "--refs",
            "2",
            "--set",
            "content=8",
            "--set",
            "max_len=5",
            "--set",
            "min_len=3",
        ],
    ));
    let base = "corpus = c.tsv\ndev_size = 40\nd_model = 16\nd_ff = 32\nmax_len = 10\nsteps = 60\nwarmup = 10\neval_every = 30\nbatch_size = 16\n";
    std::fs::write(d.join("at.cfg"), base).unwrap();
    std::fs::write(
        d.join("kd.cfg"),
        format!("{base}target = kd\nteachers = c.kd.tsv\n"),
    )
    .unwrap();
    std::fs::write(
        d.join("cmlm.cfg"),
        format!("{base}target = kd\nteachers = c.kd.tsv\nmask_rule = cmlm\nfrozen = kd\n"),
    )
    .unwrap();
    ok(&natlab(
        d,
        &["train-at", "--config", "at.cfg", "--out", "at"],
    ));
    ok(&natlab(
        d,
        &[
            "distill",
            "--teacher",
            "at",
            "--corpus",
            "c.tsv",
            "--out",
            "c.kd.tsv",
            "--beam",
            "3",
            "--label",
            "tiny",
        ],
    ));
    let kd = std::fs::read_to_string(d.join("c.kd.tsv")).unwrap();
    assert!(kd.contains("#! note.teacher = tiny") && kd.contains("#! note.beam = 3"));
    let rec = ok(&natlab(
        d,
        &["train-nat", "--config", "kd.cfg", "--out", "kd"],
    ));
    assert!(rec.contains("\"l_mple\""));
    ok(&natlab(
        d,
        &["train-nat", "--config", "cmlm.cfg", "--out", "cmlm"],
    ));
    let eval = ok(&natlab(
        d,
        &["evaluate", "--model", "kd", "--config", "kd.cfg"],
    ));
    assert_eq!(eval.trim(), rec.trim());

    let corpus = std::fs::read_to_string(d.join("c.tsv")).unwrap();
    let sources: String = corpus
        .lines()
        .filter(|l| !l.starts_with("#!"))
        .take(5)
        .map(|l| l.split('\t').next().unwrap().to_string() + "\n")
        .collect();
    std::fs::write(d.join("src.txt"), sources).unwrap();
    for extra in [
        &["--strategy", "default"][..],
        &[
            "--strategy",
            "input-sampling",
            "--frozen",
            "kd",
            "--lpd",
            "3",
            "--dedup",
        ],
    ] {
        let mut args = vec![
            "decode", "--model", "cmlm", "--corpus", "c.tsv", "--input", "src.txt", "--out",
            "hyp.txt",
        ];
        args.extend_from_slice(extra);
        ok(&natlab(d, &args));
        assert_eq!(
            std::fs::read_to_string(d.join("hyp.txt"))
                .unwrap()
                .lines()
                .count(),
            5
        );
    }
    let out = natlab(
        d,
        &[
            "decode",
            "--model",
            "cmlm",
            "--corpus",
            "c.tsv",
            "--input",
            "src.txt",
            "--out",
            "h.txt",
            "--strategy",
            "input-sampling",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_token_targets_have_no_total_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&natlab(
        d,
        &[
            "gen-data",
            "styles",
            "--out",
            "one.tsv",
            "--pairs",
            "400",
            "--dev",
            "1",
            "--refs",
            "0",
            "--set",
            "min_len=1",
            "--set",
            "max_len=1",
            "--set",
            "content=16",
            "--set",
            "sources=8",
        ],
    ));
    std::fs::write(d.join("e.cfg"), "d_model = 16\nd_ff = 32\nmax_len = 4\nlr = 3e-3\nsteps = 2000\nwarmup = 20\neval_every = 100\nbatch_size = 16\nlabel_smoothing = 0\n").unwrap();
    let out = ok(&natlab(
        d,
        &[
            "estimate-tc",
            "--corpus",
            "one.tsv",
            "--config",
            "e.cfg",
            "--heldout",
            "100",
        ],
    ));
    let c: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("c_hat = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(c.abs() < 0.1, "c_hat {c}");
}
