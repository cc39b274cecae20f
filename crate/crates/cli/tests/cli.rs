use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use teso_core::format::read_trace;

fn teso(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teso"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("teso runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = teso(dir, args);
    assert!(
        out.status.success(),
        "teso {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    teso(dir, args).status.code().expect("exit code")
}

const SMALL: [&str; 6] = ["--n-points", "200", "--frames", "30", "--seed", "5"];

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["simulate", "-o", name];
    args.extend(SMALL);
    args.extend(extra);
    ok(dir, &args);
    dir.join(name)
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (pa, pb) = (simulate(a.path(), "s.bin", &[]), simulate(b.path(), "s.bin", &[]));
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    for side in ["s.gt.csv", "s.config.toml"] {
        assert_eq!(
            std::fs::read(a.path().join(side)).unwrap(),
            std::fs::read(b.path().join(side)).unwrap()
        );
    }
    let mut args = vec!["simulate", "-o", "s.bin"];
    args.extend(SMALL);
    let digest = |dir: &Path| {
        ok(dir, &args)
            .lines()
            .find(|l| l.starts_with("config sha256 "))
            .unwrap()
            .to_string()
    };
    assert_eq!(digest(a.path()), digest(b.path()));
    let c = tempfile::tempdir().unwrap();
    simulate(c.path(), "s.bin", &["--drift-amp", "0.02"]);
    assert_ne!(std::fs::read(&pa).unwrap(), std::fs::read(c.path().join("s.bin")).unwrap());
}

#[test]
fn tracking_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "s.bin", &[]);
    ok(d, &["track", "--config", "s.config.toml", "-f", "s.bin", "-o", "a.csv"]);
    ok(d, &["track", "--config", "s.config.toml", "-f", "s.bin", "-o", "b.csv"]);
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
}

#[test]
fn invalid_inputs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["simulate", "--n-points", "0", "-o", "x.bin"]), 2);
    assert!(!d.join("x.bin").exists());
    assert_eq!(code(d, &["simulate", "--preset", "mars", "-o", "x.bin"]), 2);
    assert_eq!(code(d, &["simulate", "--drift-mode", "spiral", "-o", "x.bin"]), 2);
    std::fs::write(d.join("bad.toml"), "[scene]\nunknown_key = 1\n").unwrap();
    assert_eq!(code(d, &["simulate", "--config", "bad.toml", "-o", "x.bin"]), 2);
    assert_eq!(code(d, &["track", "-f", "missing.bin", "-o", "t.csv"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);

    let features = simulate(d, "s.bin", &[]);
    let bytes = std::fs::read(&features).unwrap();
    std::fs::write(d.join("cut.bin"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(d, &["track", "-f", "cut.bin", "-o", "t.csv"]), 2);
    assert!(!d.join("t.csv").exists());
    assert_eq!(code(d, &["track", "-f", "s.bin", "-o", "t.csv", "--sigma=-1"]), 2);
}

#[test]
fn solve_rejects_missing_frame_and_reports_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "s.bin", &[]);
    assert_eq!(code(d, &["solve", "-f", "s.bin", "--frame", "99"]), 2);
    let record = ok(
        d,
        &["solve", "--config", "s.config.toml", "-f", "s.bin", "--frame", "3", "--stages", "2"],
    );
    let value: toml::Table = toml::from_str(&record).unwrap();
    assert_eq!(value["frame"].as_integer(), Some(3));
    assert_eq!(value["sigma_schedule"].as_array().unwrap().len(), 2);
    assert_eq!(value["stage_losses"].as_array().unwrap().len(), 2);
    assert_eq!(value["config"]["de"]["sigma0"].as_float(), Some(0.02));
}

#[test]
fn zero_drift_noiseless_sequence_stays_at_reference() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "s.bin", &["--drift-mode", "none", "--noise-px", "0", "--outlier-rate", "0"]);
    ok(d, &["track", "--config", "s.config.toml", "-f", "s.bin", "-o", "t.csv"]);
    let trace = read_trace(std::fs::File::open(d.join("t.csv")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(trace.meta_value("tracker.k"), Some("5"));
    assert_eq!(trace.meta_value("tracker.sigma"), Some("0.001"));
    assert_eq!(trace.rows.len(), 30);
    for row in &trace.rows[10..] {
        // carla-drift has an identity reference rotation
        assert!(row.rotation_deg.iter().all(|a| a.abs() <= 0.01), "{row:?}");
    }
}

#[test]
fn resume_continues_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "full.bin", &[]);
    // frames are pure functions of their index, so this is a prefix of full.bin
    let mut args = vec!["simulate", "-o", "half.bin"];
    args.extend(SMALL);
    args[6] = "15";
    ok(d, &args);
    let cfg = ["--config", "full.config.toml"];
    let track = |extra: &[&str]| {
        let mut a = vec!["track"];
        a.extend(cfg);
        a.extend(extra);
        ok(d, &a);
    };
    track(&["-f", "full.bin", "-o", "full.csv"]);
    track(&["-f", "half.bin", "-o", "half.csv", "--checkpoint", "ck.bin"]);
    track(&["-f", "full.bin", "-o", "rest.csv", "--resume", "ck.bin"]);
    let read = |n: &str| read_trace(std::io::BufReader::new(std::fs::File::open(d.join(n)).unwrap())).unwrap();
    let (full, rest) = (read("full.csv"), read("rest.csv"));
    assert_eq!(rest.rows.len(), 15);
    assert_eq!(&full.rows[15..], &rest.rows[..]);
    assert_eq!(rest.meta_value("resumed_from_frame"), Some("15"));
    // a checkpoint from another tracker configuration is refused
    assert_eq!(
        code(d, &["track", "-f", "full.bin", "-o", "x.csv", "--resume", "ck.bin", "--k", "3"]),
        2
    );
    let text = ok(d, &["dump", "ck.bin"]);
    assert!(text.starts_with("TESOCKPT-TEXT 1\nframe_count 15\n"));
}

#[test]
fn text_form_matches_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "s.bin", &[]);
    simulate(d, "s.txt", &["--text"]);
    let dumped = ok(d, &["dump", "s.bin"]);
    assert_eq!(dumped, std::fs::read_to_string(d.join("s.txt")).unwrap());
    ok(d, &["track", "--config", "s.config.toml", "-f", "s.bin", "-o", "a.csv"]);
    ok(d, &["track", "--config", "s.config.toml", "-f", "s.txt", "-o", "b.csv"]);
    let contents = |n: &str| std::fs::read_to_string(d.join(n)).unwrap();
    assert_eq!(contents("a.csv"), contents("b.csv"));
}

#[test]
fn eval_reports_and_enforces_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "s.bin", &[]);
    ok(d, &["track", "--config", "s.config.toml", "-f", "s.bin", "-o", "t.csv"]);
    let out = ok(
        d,
        &["eval", "--trace", "t.csv", "--gt", "s.gt.csv", "--max-lag", "5", "-o", "summary.csv", "--max-rotation-mae", "1"],
    );
    assert!(out.is_empty());
    let summary = std::fs::read_to_string(d.join("summary.csv")).unwrap();
    assert!(summary.starts_with("# teso-eval 1\n"));
    for metric in ["rotation_mae_deg,rx,", "untracked_rotation_mae_deg,ry,", "improvement,rz,", "latency_frames,rx,"] {
        assert!(summary.contains(metric), "{metric} missing");
    }
    assert_eq!(
        code(d, &["eval", "--trace", "t.csv", "--gt", "s.gt.csv", "--max-rotation-mae", "0"]),
        1
    );
    // ground truth that does not cover the trace is an input error
    let gt = std::fs::read_to_string(d.join("s.gt.csv")).unwrap();
    let short: String = gt.lines().take(gt.lines().count() - 3).map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("short.csv"), short).unwrap();
    assert_eq!(code(d, &["eval", "--trace", "t.csv", "--gt", "short.csv"]), 2);
}

#[test]
fn identity_trace_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "s.bin", &[]);
    ok(d, &["track", "--config", "s.config.toml", "-f", "s.bin", "-o", "t.csv"]);
    // a ground truth equal to the tracked poses
    let trace = read_trace(std::io::BufReader::new(std::fs::File::open(d.join("t.csv")).unwrap())).unwrap();
    let poses: Vec<_> = trace.rows.iter().map(|r| (r.frame, r.pose())).collect();
    let gt = teso_core::format::write_ground_truth(Vec::new(), &[], &poses).unwrap();
    std::fs::write(d.join("same.csv"), gt).unwrap();
    let out = ok(d, &["eval", "--trace", "t.csv", "--gt", "same.csv"]);
    for line in out.lines().filter(|l| l.starts_with("rotation_mae_deg") || l.starts_with("translation_mae_mm")) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(v.abs() < 1e-9, "{line}");
    }
}
