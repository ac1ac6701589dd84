//! End-to-end tests running the compiled binary.

use std::process::{Command, Output};

use diagd::{build_schedule, ConfigHeader, Coordinate};

fn diagd_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diagd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(args: &[&str]) -> String {
    let out = diagd_cmd(args);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 output")
}

#[test]
fn steps_matches_published_counts() {
    assert_eq!(
        stdout_of(&["steps", "--preset", "cosmos", "--k", "1", "--d", "40"]).trim(),
        "183"
    );
    assert_eq!(
        stdout_of(&["steps", "--preset", "cosmos", "--k", "2", "--d", "80"]).trim(),
        "302"
    );
    assert_eq!(
        stdout_of(&["steps", "--preset", "mcar", "--k", "2"]).trim(),
        "750"
    );
    // The symbolic delay resolves to k*height.
    assert_eq!(
        stdout_of(&["steps", "--preset", "cosmos", "--k", "1", "--d", "h"]).trim(),
        "183"
    );
}

#[test]
fn table_lists_wham_step_column() {
    let csv = stdout_of(&["table", "--preset", "wham"]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "preset,k,d,temporal,steps_ntp,steps_diag,ratio_exact"
    );
    assert!(csv.contains("54000"));
    assert!(csv.contains(",4700,"));
    assert!(csv.contains(",6400,"));

    let with_reported = stdout_of(&["table", "--preset", "wham", "--paper-compare"]);
    assert!(with_reported
        .lines()
        .next()
        .unwrap()
        .ends_with(",reported_step_thousands"));
    assert!(with_reported.contains(",6.4"));

    // All presets by default, JSON on request.
    let json = stdout_of(&["table", "--format", "json"]);
    let rows: serde_json::Value = serde_json::from_str(&json).unwrap();
    let names: Vec<&str> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["preset"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"cosmos") && names.contains(&"wham") && names.contains(&"mcar"));
}

#[test]
fn schedule_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sched.json");
    let out = diagd_cmd(&[
        "schedule",
        "--height",
        "3",
        "--width",
        "4",
        "--frames",
        "2",
        "--prompt-frames",
        "1",
        "--k",
        "2",
        "--d",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let header: ConfigHeader = serde_json::from_value(doc["config"].clone()).unwrap();
    let (geom, cfg) = header.to_parts().unwrap();
    let rebuilt = build_schedule(&geom, &cfg).unwrap();

    assert_eq!(
        doc["total_steps"].as_u64().unwrap() as usize,
        rebuilt.total_steps()
    );
    let fronts = doc["wavefronts"].as_array().unwrap();
    assert_eq!(fronts.len(), rebuilt.total_steps());
    for (idx, front) in fronts.iter().enumerate() {
        let coords: Vec<Coordinate> = front
            .as_array()
            .unwrap()
            .iter()
            .map(|triple| {
                let a = triple.as_array().unwrap();
                Coordinate::new(
                    a[0].as_i64().unwrap(),
                    a[1].as_u64().unwrap() as usize,
                    a[2].as_u64().unwrap() as usize,
                )
            })
            .collect();
        assert_eq!(coords.as_slice(), rebuilt.wavefront(idx + 1).unwrap());
    }
}

#[test]
fn mask_writes_pbm_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mask.pbm");
    let out = diagd_cmd(&[
        "mask",
        "--height",
        "2",
        "--width",
        "2",
        "--frames",
        "1",
        "--prompt-frames",
        "0",
        "--k",
        "1",
        "--d",
        "1",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let pbm = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = pbm.lines().collect();
    assert_eq!(lines[0], "P1");
    assert_eq!(lines[1], "4 4");
    assert_eq!(&lines[2..], &["1000", "1100", "1010", "1111"]);

    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mask.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["order"], "raster");
    assert_eq!(sidecar["size"], 4);
    assert_eq!(sidecar["config"]["k"], 1);
}

#[test]
fn mask_respects_position_cap() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mask.pbm");
    let out = Command::new(env!("CARGO_BIN_EXE_diagd"))
        .args([
            "mask",
            "--height",
            "8",
            "--width",
            "8",
            "--frames",
            "2",
            "--prompt-frames",
            "0",
            "--k",
            "1",
            "--out",
            path.to_str().unwrap(),
        ])
        .env("DIAGD_MAX_POSITIONS", "100")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn decode_output_is_deterministic_and_complete() {
    let args = [
        "decode",
        "--model",
        "lfm",
        "--height",
        "3",
        "--width",
        "4",
        "--frames",
        "2",
        "--prompt-frames",
        "1",
        "--vocab",
        "8",
        "--k",
        "1",
        "--d",
        "h",
        "--mode",
        "diagd",
        "--sampling",
        "stochastic",
        "--seed",
        "11",
    ];
    let a = stdout_of(&args);
    let b = stdout_of(&args);
    assert_eq!(a, b, "identical argv must give byte-identical output");

    let doc: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(doc["config"]["d"], 3);
    assert_eq!(doc["report"]["steps"], 9); // (2-1)*3 + 2*1 + 4
    let frames = doc["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 3);
    for f in frames {
        assert_eq!(f["ids"].as_array().unwrap().len(), 12);
    }
}

#[test]
fn decode_modes_agree_on_degenerate_config() {
    let base = [
        "decode",
        "--model",
        "tt",
        "--height",
        "2",
        "--width",
        "3",
        "--frames",
        "2",
        "--prompt-frames",
        "1",
        "--vocab",
        "8",
        "--k",
        "3",
        "--sampling",
        "greedy",
        "--seed",
        "4",
    ];
    let mut ntp_args = base.to_vec();
    ntp_args.extend(["--mode", "ntp"]);
    let mut diag_args = base.to_vec();
    diag_args.extend(["--mode", "diagd"]);
    let ntp: serde_json::Value = serde_json::from_str(&stdout_of(&ntp_args)).unwrap();
    let diag: serde_json::Value = serde_json::from_str(&stdout_of(&diag_args)).unwrap();
    assert_eq!(ntp["frames"], diag["frames"]);
    assert_eq!(ntp["report"]["steps"], 12);
    assert_eq!(diag["report"]["steps"], 12);
}

#[test]
fn compare_reports_full_agreement_for_aligned_parents() {
    let out = stdout_of(&[
        "compare",
        "--model",
        "lfm",
        "--parents",
        "left,up,prev",
        "--k",
        "1",
        "--d",
        "h",
        "--seed",
        "7",
    ]);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["agreement"], 1.0);
    assert_eq!(doc["mean_positionwise_kl"], 0.0);

    let skew = stdout_of(&[
        "compare",
        "--model",
        "lfm",
        "--parents",
        "up-right",
        "--k",
        "1",
        "--d",
        "h",
        "--seed",
        "7",
    ]);
    let doc: serde_json::Value = serde_json::from_str(&skew).unwrap();
    assert!(doc["agreement"].as_f64().unwrap() < 1.0);
    assert!(doc["mean_positionwise_kl"].as_f64().unwrap() > 0.0);
}

#[test]
fn bench_overhead_only_ratio_equals_step_ratio() {
    let out = stdout_of(&[
        "bench",
        "--preset",
        "cosmos",
        "--k",
        "1",
        "--d",
        "40",
        "--overhead",
        "1.0",
        "--cost-per-token",
        "0.0",
    ]);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    let fps_ratio = doc["fps_ratio"].as_f64().unwrap();
    let step_ratio = doc["step_ratio"].as_f64().unwrap();
    assert!((fps_ratio - step_ratio).abs() < 1e-9);
    assert!((step_ratio - 7680.0 / 183.0).abs() < 1e-9);

    let fitted = stdout_of(&[
        "bench",
        "--preset",
        "cosmos",
        "--k",
        "1",
        "--d",
        "40",
        "--tokens-per-frame",
        "320",
        "--fit-fps",
        "0.15,1.62",
    ]);
    let doc: serde_json::Value = serde_json::from_str(&fitted).unwrap();
    let ntp_fps = doc["ntp"]["fps"].as_f64().unwrap();
    assert!((ntp_fps - 0.15).abs() < 1e-6);
}

#[test]
fn attn_emits_csv_matrix() {
    let out = stdout_of(&[
        "attn",
        "--height",
        "2",
        "--width",
        "3",
        "--frames",
        "2",
        "--prompt-frames",
        "1",
        "--vocab",
        "8",
        "--k",
        "1",
        "--d",
        "2",
        "--frame",
        "1",
        "--seed",
        "5",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    // Header plus one row per query position of the chosen frame.
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[0].starts_with("query,0,1,"));
    assert_eq!(lines[0].split(',').count(), 1 + 18);

    // File export carries the config header in a sidecar.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attn.csv");
    let file_out = diagd_cmd(&[
        "attn",
        "--height",
        "2",
        "--width",
        "3",
        "--frames",
        "2",
        "--prompt-frames",
        "1",
        "--vocab",
        "8",
        "--k",
        "1",
        "--d",
        "2",
        "--frame",
        "1",
        "--seed",
        "5",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(file_out.status.success());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), out);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("attn.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["config"]["width"], 3);
    assert_eq!(sidecar["frame"], 1);
    assert_eq!(sidecar["context"], 18);
}

#[test]
fn error_exit_codes() {
    // Invalid configuration: k exceeds the frame width.
    let out = diagd_cmd(&["steps", "--height", "4", "--width", "5", "--k", "6"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("k"), "stderr should explain: {msg}");

    // d beyond s_spa.
    let out = diagd_cmd(&[
        "steps", "--height", "4", "--width", "5", "--k", "1", "--d", "9",
    ]);
    assert_eq!(out.status.code(), Some(3));

    // Unknown flag is an argument error.
    let out = diagd_cmd(&["steps", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // Preset conflicts with explicit geometry.
    let out = diagd_cmd(&["steps", "--preset", "cosmos", "--height", "4"]);
    assert_eq!(out.status.code(), Some(2));

    // Unknown preset.
    let out = diagd_cmd(&["steps", "--preset", "nonesuch"]);
    assert_eq!(out.status.code(), Some(3));

    // Transformer backend is unsupported for compare.
    let out = diagd_cmd(&["compare", "--model", "tt"]);
    assert_eq!(out.status.code(), Some(1));
}
