mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvres::container::Container;
use mvres::frame_io::write_yuv420;
use mvres::motion::{write_flo, FlowField};
use serde_json::Value;
use tempfile::TempDir;

use common::{rng, shifted_frame, textured_frame};

const W: usize = 64;
const H: usize = 48;

fn mvres(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mvres"));
    cmd.args(args);
    for p in paths {
        cmd.arg(p);
    }
    cmd.output().expect("binary runs")
}

fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvres")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Compact weights plus a reference/target pair on disk.
    fn new(extra_init: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["init-weights".to_string(), "--preset".into(), "compact".into(), "-o".into()];
        args.push(dir.path().join("w").display().to_string());
        args.extend(extra_init.iter().map(|s| s.to_string()));
        let out = run(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let mut rng = rng(21);
        let r = textured_frame(W, H, &mut rng);
        let t = shifted_frame(&r, 2, 1, 3.0, &mut rng);
        std::fs::write(dir.path().join("r.yuv"), write_yuv420(&r)).unwrap();
        std::fs::write(dir.path().join("t.yuv"), write_yuv420(&t)).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn encode(&self, extra: &[&str], output: &str) -> Output {
        let size = format!("{W}x{H}");
        let mut args = vec![
            "encode".to_string(),
            self.s("r.yuv"),
            self.s("t.yuv"),
            "--size".into(),
            size,
            "--weights".into(),
            self.s("w"),
            "-o".into(),
            self.s(output),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        run(&args)
    }

    fn decode(&self, input: &str, output: &str) -> Output {
        run(&["decode".to_string(), self.s(input), self.s("r.yuv"), "--weights".into(), self.s("w"), "-o".into(), self.s(output)])
    }
}

#[test]
fn encode_then_decode_matches_encoder_reconstruction() {
    let ws = Workspace::new(&[]);
    let out = ws.encode(&["--q", "3", "--recon", &ws.s("recon.yuv")], "a.mvr");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["q"], 3);
    assert_eq!(stats["lambda"], 26.0);
    let container_bytes = std::fs::metadata(ws.path("a.mvr")).unwrap().len();
    assert_eq!(stats["container_bytes"], container_bytes);
    assert!(stats["rate_y_bits"].as_f64().unwrap() > 0.0);

    assert_eq!(code(&ws.decode("a.mvr", "d1.yuv")), 0);
    assert_eq!(code(&ws.decode("a.mvr", "d2.yuv")), 0);
    let d1 = std::fs::read(ws.path("d1.yuv")).unwrap();
    assert_eq!(d1.len(), W * H * 3 / 2);
    assert_eq!(d1, std::fs::read(ws.path("d2.yuv")).unwrap());
    assert_eq!(d1, std::fs::read(ws.path("recon.yuv")).unwrap());
}

#[test]
fn stats_can_go_to_a_file() {
    let ws = Workspace::new(&[]);
    let out = ws.encode(&["--q", "0", "--stats", &ws.s("s.json")], "a.mvr");
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let stats: Value = serde_json::from_slice(&std::fs::read(ws.path("s.json")).unwrap()).unwrap();
    assert_eq!(stats["q"], 0);
}

#[test]
fn quality_out_of_range_is_a_usage_error() {
    let ws = Workspace::new(&[]);
    let out = ws.encode(&["--q", "5"], "a.mvr");
    assert_eq!(code(&out), 1);
    assert!(!ws.path("a.mvr").exists());
    assert_eq!(code(&ws.encode(&[], "a.mvr")), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
}

#[test]
fn wrong_input_size_is_rejected() {
    let ws = Workspace::new(&[]);
    let size = format!("{}x{}", W + 2, H);
    let out = run(&[
        "encode".to_string(),
        ws.s("r.yuv"),
        ws.s("t.yuv"),
        "--size".into(),
        size,
        "--weights".into(),
        ws.s("w"),
        "--q".into(),
        "1".into(),
        "-o".into(),
        ws.s("a.mvr"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!ws.path("a.mvr").exists());
}

#[test]
fn truncated_container_fails_without_output() {
    let ws = Workspace::new(&[]);
    assert_eq!(code(&ws.encode(&["--q", "1"], "a.mvr")), 0);
    let bytes = std::fs::read(ws.path("a.mvr")).unwrap();
    std::fs::write(ws.path("cut.mvr"), &bytes[..bytes.len() - 5]).unwrap();
    let out = ws.decode("cut.mvr", "out.yuv");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
    assert!(!ws.path("out.yuv").exists());
}

#[test]
fn corrupted_payload_fails_checksum() {
    let ws = Workspace::new(&[]);
    assert_eq!(code(&ws.encode(&["--q", "1"], "a.mvr")), 0);
    let mut bytes = std::fs::read(ws.path("a.mvr")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(ws.path("bad.mvr"), &bytes).unwrap();
    let out = ws.decode("bad.mvr", "out.yuv");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
    assert!(!ws.path("out.yuv").exists());
}

#[test]
fn external_flow_sets_the_flag_and_decodes() {
    let ws = Workspace::new(&[]);
    write_flo(&FlowField::uniform(H, W, -2.0, -1.0), ws.path("f.flo")).unwrap();
    let out = ws.encode(&["--q", "2", "--flow", &ws.s("f.flo"), "--recon", &ws.s("recon.yuv")], "a.mvr");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let container = Container::from_bytes(&std::fs::read(ws.path("a.mvr")).unwrap()).unwrap();
    assert_eq!(container.flags & mvres::codec::FLAG_EXTERNAL_FLOW, mvres::codec::FLAG_EXTERNAL_FLOW);
    assert_eq!(code(&ws.decode("a.mvr", "d.yuv")), 0);
    assert_eq!(std::fs::read(ws.path("d.yuv")).unwrap(), std::fs::read(ws.path("recon.yuv")).unwrap());

    write_flo(&FlowField::zeros(H / 2, W), ws.path("small.flo")).unwrap();
    assert_eq!(code(&ws.encode(&["--q", "2", "--flow", &ws.s("small.flo")], "b.mvr")), 2);
}

#[test]
fn half_precision_weights_roundtrip() {
    let ws = Workspace::new(&["--f16"]);
    assert_eq!(code(&ws.encode(&["--q", "4", "--recon", &ws.s("recon.yuv")], "a.mvr")), 0);
    assert_eq!(code(&ws.decode("a.mvr", "d.yuv")), 0);
    assert_eq!(std::fs::read(ws.path("d.yuv")).unwrap(), std::fs::read(ws.path("recon.yuv")).unwrap());
}

#[test]
fn auto_budget_picks_a_fitting_quality() {
    let ws = Workspace::new(&[]);
    let out = ws.encode(&["--auto-budget", "100000000", "--jobs", "2"], "big.mvr");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let sweep = report["sweep"].as_array().unwrap();
    assert_eq!(sweep.len(), 5);
    let best = sweep.iter().map(|p| p["msssim"].as_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report["msssim"].as_f64().unwrap(), best);

    let smallest = sweep.iter().map(|p| p["rate_bytes"].as_u64().unwrap()).min().unwrap();
    let out = ws.encode(&["--auto-budget", &smallest.to_string()], "small.mvr");
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::metadata(ws.path("small.mvr")).unwrap().len(), smallest);

    let out = ws.encode(&["--auto-budget", &(smallest - 1).to_string()], "none.mvr");
    assert_eq!(code(&out), 3);
    assert!(!ws.path("none.mvr").exists());
    assert_eq!(code(&ws.encode(&["--auto-budget", "10", "--q", "1"], "x.mvr")), 1);
}

fn write_json(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn allocate_two_frame_example() {
    let dir = tempfile::tempdir().unwrap();
    let stats = write_json(
        dir.path(),
        "s.json",
        r#"[{"name":"a","configs":[{"q":0,"rate_bytes":10000,"msssim":0.90},{"q":1,"rate_bytes":20000,"msssim":0.95}]},
            {"configs":[{"q":0,"rate_bytes":10000,"msssim":0.80},{"q":1,"rate_bytes":30000,"msssim":0.99}]}]"#,
    );
    let out = mvres(&["allocate", "--budget", "40000", "--granularity", "1"], &[&stats]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let plan: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan["q"], serde_json::json!([0, 1]));
    assert_eq!(plan["total_rate"], 40000);
    assert!((plan["total_msssim"].as_f64().unwrap() - 1.89).abs() < 1e-12);

    let plan_path = dir.path().join("plan.json");
    let out = mvres(&["allocate", "--budget", "40000", "--granularity", "1", "-o"], &[&plan_path, &stats]);
    assert_eq!(code(&out), 0);
    let saved: Value = serde_json::from_slice(&std::fs::read(&plan_path).unwrap()).unwrap();
    assert_eq!(saved, plan);

    let out = mvres(&["allocate", "--budget", "19999"], &[&stats]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("20000"));
}

#[test]
fn allocate_rejects_bad_stats() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_json(dir.path(), "empty.json", "[]");
    assert_eq!(code(&mvres(&["allocate", "--budget", "100"], &[&empty])), 1);
    let bad = write_json(dir.path(), "bad.json", r#"[{"configs":[{"q":0,"rate_bytes":1,"msssim":1.5}]}]"#);
    assert_eq!(code(&mvres(&["allocate", "--budget", "100"], &[&bad])), 2);
    let garbage = write_json(dir.path(), "garbage.json", "{not json");
    assert_eq!(code(&mvres(&["allocate", "--budget", "100"], &[&garbage])), 2);
    let fine = write_json(dir.path(), "ok.json", r#"[{"configs":[{"q":0,"rate_bytes":1,"msssim":0.5}]}]"#);
    assert_eq!(code(&mvres(&["allocate", "--budget", "100", "--granularity", "0"], &[&fine])), 1);
}

#[test]
fn metrics_on_identical_and_mismatched_files() {
    let ws = Workspace::new(&[]);
    let size = format!("{W}x{H}");
    let out = mvres(&["metrics", "--size", &size], &[&ws.path("r.yuv"), &ws.path("r.yuv")]);
    assert_eq!(code(&out), 0);
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["msssim"], 1.0);
    assert_eq!(m["psnr"], "inf");

    let out = mvres(&["metrics", "--size", &size, "--yuv420"], &[&ws.path("r.yuv"), &ws.path("t.yuv")]);
    assert_eq!(code(&out), 0);
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["psnr_domain"], "yuv420");
    assert!(m["psnr"].as_f64().unwrap() > 10.0);
    assert!(m["msssim"].as_f64().unwrap() < 1.0);

    let wrong = format!("{W}x{}", H + 2);
    assert_eq!(code(&mvres(&["metrics", "--size", &wrong], &[&ws.path("r.yuv"), &ws.path("t.yuv")])), 2);
}

#[test]
fn init_weights_from_an_architecture_file() {
    let dir = tempfile::tempdir().unwrap();
    let arch = dir.path().join("arch.cfg");
    mvres::ArchitectureConfig::compact().save(&arch).unwrap();
    let out = mvres(&["init-weights", "--arch"], &[&arch, Path::new("-o"), &dir.path().join("w")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for q in 0..5 {
        assert!(mvres::codec::weights_path(dir.path().join("w"), q).exists());
    }
    std::fs::write(&arch, "latent_channels = banana\n").unwrap();
    let out = mvres(&["init-weights", "--arch"], &[&arch, Path::new("-o"), &dir.path().join("w2")]);
    assert_ne!(code(&out), 0);
}
