//! End-to-end CLI checks that go through `dispatch` the way the binary does.

use std::fs;
use std::sync::Mutex;

use lqadmm::cli::dispatch;

/// The env-seed test mutates process-global state; serialize all tests in
/// this binary so seeds stay what each test set.
static LOCK: Mutex<()> = Mutex::new(());

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("lqadmm").chain(args.iter().copied()))
}

#[test]
fn deblur_experiment_writes_expected_files() {
    let _g = LOCK.lock().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("deblur");
    let code = run(&[
        "experiment",
        "deblur",
        "--size",
        "16",
        "--mu",
        "100",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.iter().any(|n| n == "deblur-report.txt"));
    assert!(names.iter().any(|n| n == "input.pgm"));
    assert!(names.iter().any(|n| n.starts_with("deblur-trace-") && n.ends_with(".csv")));
    assert!(names.iter().any(|n| n.ends_with(".pgm") && n != "input.pgm"));
    let report = fs::read_to_string(out.join("deblur-report.txt")).unwrap();
    assert!(report.contains("theta*"));
    assert!(report.contains("iterations to 1e-6"));
    // No stray temporary directory left behind.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn existing_output_directory_is_refused() {
    let _g = LOCK.lock().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("taken");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "precious").unwrap();
    let code = run(&[
        "experiment",
        "deblur",
        "--size",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert_eq!(fs::read_to_string(out.join("keep.txt")).unwrap(), "precious");
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let _g = LOCK.lock().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nm = 20\nn = 8\ninstances = 1\nseed = 3\n").unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let base = |out: &std::path::Path, extra: &[&str]| {
        let mut args = vec![
            "experiment",
            "random",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        run(&args)
    };
    assert_eq!(base(&out_a, &[]), 0);
    // --seed on the command line overrides the config value.
    assert_eq!(base(&out_b, &["--seed", "4"]), 0);
    let sa = fs::read(out_a.join("summary.txt")).unwrap();
    let sb = fs::read(out_b.join("summary.txt")).unwrap();
    assert_ne!(sa, sb);
}

#[test]
fn env_seed_overrides_flag() {
    let _g = LOCK.lock().unwrap();
    // Runs in its own process-wide env; keep it self-contained.
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("ADMM_TUNER_SEED", "3");
    let out_env = dir.path().join("env");
    let code = run(&[
        "experiment",
        "random",
        "--m",
        "20",
        "--n",
        "8",
        "--instances",
        "1",
        "--seed",
        "99",
        "--out",
        out_env.to_str().unwrap(),
    ]);
    std::env::remove_var("ADMM_TUNER_SEED");
    assert_eq!(code, 0);
    let out_flag = dir.path().join("flag");
    let code = run(&[
        "experiment",
        "random",
        "--m",
        "20",
        "--n",
        "8",
        "--instances",
        "1",
        "--seed",
        "3",
        "--out",
        out_flag.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(
        fs::read(out_env.join("summary.txt")).unwrap(),
        fs::read(out_flag.join("summary.txt")).unwrap()
    );
}

#[test]
fn mri_mask_size_mismatch_is_a_usage_error() {
    let _g = LOCK.lock().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mask = dir.path().join("mask.pgm");
    fs::write(&mask, "P2\n4 4\n255\n".to_string() + &"255 ".repeat(16)).unwrap();
    let out = dir.path().join("out");
    let code = run(&[
        "experiment",
        "mri",
        "--size",
        "16",
        "--mask",
        mask.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(!out.exists());
}

#[test]
fn solve_rejects_unknown_solver_with_usage_code() {
    let _g = LOCK.lock().unwrap();
    assert_eq!(run(&["solve", "--builtin", "identity", "--solver", "sgd"]), 1);
    assert_eq!(run(&["solve", "--builtin", "nope"]), 1);
}
