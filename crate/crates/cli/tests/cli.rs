use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn normkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_normkd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn gen_data(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.join("data");
    let mut args = vec!["gen-data", "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    normkd(&args)
}

fn small_config(dir: &Path, rules: &str) -> std::path::PathBuf {
    let o = gen_data(
        dir,
        &[
            "--classes",
            "3",
            "--dim",
            "4",
            "--per-class",
            "30",
            "--margin",
            "2",
            "--seed",
            "5",
        ],
    );
    assert!(o.status.success());
    let path = dir.join("exp.conf");
    fs::write(
        &path,
        format!(
            "train = data/train.csv\nval = data/val.csv\noutput = out\nstudent_widths = 4,5,3\nteacher_widths = 4,12,3\nrule = {rules}\nseeds = 1,2\nepochs = 3\nlr_decay_epochs = 2\n"
        ),
    )
    .unwrap();
    path
}

#[test]
fn gen_data_writes_split_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = gen_data(
        dir.path(),
        &[
            "--classes",
            "10",
            "--dim",
            "3",
            "--per-class",
            "100",
            "--margin",
            "2",
            "--seed",
            "1",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let train = fs::read_to_string(dir.path().join("data/train.csv")).unwrap();
    let val = fs::read_to_string(dir.path().join("data/val.csv")).unwrap();
    assert_eq!(train.lines().next().unwrap(), "10 3 800");
    assert_eq!(val.lines().next().unwrap(), "10 3 200");
    assert_eq!(train.lines().count(), 801);
}

#[test]
fn grad_check_reports_every_loss() {
    let o = normkd(&["grad-check"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with("PASS")), "{text}");

    let o = normkd(&["grad-check", "--instances", "3", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().skip(1).all(|r| r.ends_with("FAIL")));
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    // Config: unknown key, and an invalid generator request.
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "colour = blue\n").unwrap();
    assert_eq!(
        normkd(&["distill", "--config", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(
        gen_data(
            dir.path(),
            &["--classes", "1", "--dim", "2", "--per-class", "5", "--margin", "1"]
        )
        .status
        .code(),
        Some(2)
    );

    // Io / Format: missing and corrupt files.
    let missing = dir.path().join("nope.nkdl");
    let corrupt = dir.path().join("corrupt.nkdl");
    fs::write(&corrupt, b"NKDLxx").unwrap();
    for cache in [&missing, &corrupt] {
        let o = normkd(&[
            "analyze",
            "--teacher-cache",
            cache.to_str().unwrap(),
            "--student-cache",
            cache.to_str().unwrap(),
            "--output",
            ".",
        ]);
        assert_eq!(o.status.code(), Some(3));
        assert!(!o.stderr.is_empty());
    }

    // Contract: caches describing different samples.
    let cfg = small_config(dir.path(), "normstd:2");
    assert!(normkd(&["distill", "--config", cfg.to_str().unwrap()]).status.success());
    let out = dir.path().join("out");
    let o = normkd(&[
        "analyze",
        "--teacher-cache",
        out.join("teacher_seed1_train.nkdl").to_str().unwrap(),
        "--student-cache",
        out.join("student_seed1_val.nkdl").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn distill_is_deterministic_and_honours_seed_override() {
    let runs: Vec<(String, Vec<u8>, Vec<u8>)> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = small_config(dir.path(), "none; fixed:4");
            let o = normkd(&[
                "distill",
                "--config",
                cfg.to_str().unwrap(),
                "--rule",
                "fixed:4",
                "--rule",
                "normstd:2",
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            let out = dir.path().join("out");
            (
                stdout(&o),
                fs::read(out.join("comparison.csv")).unwrap(),
                fs::read(out.join("normstd_2/student_seed2_val.nkdl")).unwrap(),
            )
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].0.contains("normstd"));
    let table = String::from_utf8(runs[0].1.clone()).unwrap();
    assert_eq!(table.lines().next().unwrap(), "rule,params,seeds,mean_top1,std_top1");
    assert_eq!(table.lines().count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "fixed:4");
    let o = Command::new(env!("CARGO_BIN_EXE_normkd"))
        .args(["distill", "--config", cfg.to_str().unwrap()])
        .env("NORMKD_SEED", "7")
        .output()
        .unwrap();
    assert!(o.status.success());
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("7,"), "{summary}");
    assert!(dir.path().join("out/student_seed7.nkdm").exists());
    assert!(!dir.path().join("out/student_seed1.nkdm").exists());
}

#[test]
fn eval_and_analyze_read_experiment_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "normstd:2");
    assert!(normkd(&["distill", "--config", cfg.to_str().unwrap()]).status.success());
    let out = dir.path().join("out");
    let o = normkd(&[
        "eval",
        "--model",
        out.join("student_seed1.nkdm").to_str().unwrap(),
        "--data",
        dir.path().join("data/val.csv").to_str().unwrap(),
        "--teacher-cache",
        out.join("teacher_seed1_val.nkdl").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let keys: Vec<String> = stdout(&o)
        .lines()
        .map(|l| l.split(' ').next().unwrap().to_string())
        .collect();
    assert_eq!(keys, ["samples", "top1", "ce", "kld", "total"]);

    let o = normkd(&[
        "analyze",
        "--teacher-cache",
        out.join("teacher_seed1_val.nkdl").to_str().unwrap(),
        "--student-cache",
        out.join("student_seed1_val.nkdl").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("raw frobenius "));
    assert!(out.join("analysis_summary.csv").exists());
    assert!(out.join("analysis_matrix.csv").exists());
}
