use std::path::Path;
use std::process::{Command, Output};

use cvit::model::save_checkpoint;
use cvit::{CViTModel, ModelConfig, RngState, Tensor};
use serde_json::Value;

fn cvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvit"))
        .args(args)
        .output()
        .expect("spawn cvit")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn resolved(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(err.lines().next().expect("stderr line")).expect("resolved config is JSON")
}

fn ppm(path: &Path, w: usize, h: usize, rgb: impl Fn(usize, usize) -> [u8; 3]) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.extend_from_slice(&rgb(x, y));
        }
    }
    std::fs::write(path, bytes).unwrap();
}

const QUICK: [&str; 8] = [
    "--epochs",
    "2",
    "--train-per-class",
    "8",
    "--val-per-class",
    "4",
    "--batch-size",
    "8",
];

#[test]
fn describe_json_carries_totals_and_reduction() {
    let o = cvit(&["describe", "--preset", "L", "--compare", "--format", "json"]);
    let v = stdout_json(&o);
    assert_eq!(v["report"]["totals"]["unique_params"], 7_032_184);
    let r = &v["reduction"];
    assert!((r["param_reduction_pct"].as_f64().unwrap() - 20.1).abs() < 0.05);
    assert!((r["flop_reduction_pct"].as_f64().unwrap() - 16.5).abs() < 0.05);
    assert!(v["apf"].is_null());
    assert_eq!(resolved(&o)["settings"]["model"]["name"], "L");
}

#[test]
fn describe_table_mentions_missing_apf() {
    let o = cvit(&["describe", "--preset", "tiny-S"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().starts_with("APF n/a"), "{text}");
}

#[test]
fn flops_csv_has_one_row() {
    let o = cvit(&["flops", "--preset", "M", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("model,input,params"));
    assert!(lines[1].starts_with("M,224,3462040,"), "{}", lines[1]);
}

#[test]
fn apf_from_describe_json_matches_direct_mflops() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("s.json");
    let o = cvit(&["describe", "--preset", "S", "--format", "json"]);
    std::fs::write(&json, &o.stdout).unwrap();
    let mflops = stdout_json(&o)["report"]["totals"]["mflops"].as_f64().unwrap();
    let a = stdout_json(&cvit(&[
        "apf",
        "--top1",
        "70",
        "--describe",
        json.to_str().unwrap(),
        "--format",
        "json",
    ]));
    let b = stdout_json(&cvit(&[
        "apf",
        "--top1",
        "70",
        "--mflops",
        &mflops.to_string(),
        "--format",
        "json",
    ]));
    assert_eq!(a[0]["apf"], b[0]["apf"]);
    assert_eq!(a[0]["model"], "S");
}

#[test]
fn apf_table_reproduces_printed_values() {
    let table = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/apf_reference.csv");
    let v = stdout_json(&cvit(&["apf", "--table", table, "--format", "json"]));
    let rows = v.as_array().unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        assert!(r["delta"].as_f64().unwrap().abs() < 0.05, "{r}");
    }
}

#[test]
fn usage_and_config_errors_exit_2() {
    for args in [
        vec!["describe", "--preset", "nope"],
        vec!["frobnicate"],
        vec!["apf", "--top1", "120", "--mflops", "100"],
        vec!["apf", "--top1", "50", "--mflops", "0.5"],
        vec!["gradcheck", "--module", "nope"],
        vec!["ablate", "--grid", "bogus=1"],
        vec!["infer", "--preset", "tiny-S"],
        vec!["infer", "--preset", "tiny-S", "--image", "/nonexistent/x.ppm"],
        vec!["--threads", "0", "flops"],
        vec!["--config", "/nonexistent/c.json", "flops"],
    ] {
        assert_eq!(code(&cvit(&args)), 2, "{args:?}");
    }
}

#[test]
fn malformed_image_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ppm");
    std::fs::write(&bad, b"P6\n4 4\n255\n\x01\x02").unwrap();
    let o = cvit(&["infer", "--preset", "tiny-S", "--image", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
}

#[test]
fn checkpoint_problems_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("s.ckpt");
    let p = good.to_str().unwrap();
    assert_eq!(
        code(&cvit(&["checkpoint", "init", "--preset", "tiny-S", "--out", p])),
        0
    );

    let truncated = dir.path().join("t.ckpt");
    let bytes = std::fs::read(&good).unwrap();
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    let o = cvit(&["infer", "--checkpoint", truncated.to_str().unwrap(), "--random"]);
    assert_eq!(code(&o), 3);

    let o = cvit(&["infer", "--checkpoint", p, "--preset", "tiny-M", "--random"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));

    assert_eq!(code(&cvit(&["checkpoint", "inspect", "/nonexistent/x.ckpt"])), 3);
    assert_eq!(
        code(&cvit(&["infer", "--checkpoint", p, "--preset", "tiny-S", "--random"])),
        0
    );
}

#[test]
fn checkpoint_round_trip_reproduces_logits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let p = path.to_str().unwrap();
    assert_eq!(
        code(&cvit(&[
            "--seed",
            "5",
            "checkpoint",
            "init",
            "--preset",
            "tiny-L",
            "--out",
            p
        ])),
        0
    );
    let loaded = stdout_json(&cvit(&[
        "--seed",
        "5",
        "infer",
        "--checkpoint",
        p,
        "--random",
        "--format",
        "json",
    ]));
    let fresh = stdout_json(&cvit(&[
        "--seed", "5", "infer", "--preset", "tiny-L", "--random", "--format", "json",
    ]));
    assert_eq!(loaded["logits"], fresh["logits"]);
    let inspect = stdout_json(&cvit(&["checkpoint", "inspect", p, "--format", "json"]));
    assert_eq!(inspect["config"]["name"], "tiny-L");
}

#[test]
fn zero_classifier_gives_uniform_scores() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("z.ckpt");
    let image = dir.path().join("in.ppm");
    let model = CViTModel::<f32>::build(&ModelConfig::preset("tiny-S").unwrap(), RngState::new(0)).unwrap();
    for p in [&model.classifier.weight, model.classifier.bias.as_ref().unwrap()] {
        p.set_value(Tensor::zeros(p.shape())).unwrap();
    }
    save_checkpoint(&model, &ckpt).unwrap();
    ppm(&image, 80, 60, |_, _| [0, 0, 0]);
    let v = stdout_json(&cvit(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--format",
        "json",
    ]));
    let top = v["top_k"].as_array().unwrap();
    assert_eq!(top.len(), 4);
    for (i, r) in top.iter().enumerate() {
        assert_eq!(r["prob"], 0.25);
        assert_eq!(r["class"], i);
    }
}

#[test]
fn random_inference_repeats_exactly() {
    let run = || {
        cvit(&[
            "--seed", "11", "infer", "--preset", "tiny-M", "--random", "--format", "csv",
        ])
        .stdout
    };
    let a = run();
    assert!(!a.is_empty());
    assert_eq!(a, run());
    let other = cvit(&[
        "--seed", "12", "infer", "--preset", "tiny-M", "--random", "--format", "csv",
    ])
    .stdout;
    assert_ne!(a, other);
}

#[test]
fn training_is_reproducible_and_thread_count_free() {
    let run = |seed: &str, threads: &str| {
        let mut args = vec!["--seed", seed, "--threads", threads, "train-toy", "--format", "json"];
        args.extend(QUICK);
        let o = cvit(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        o.stdout
    };
    let a = run("3", "1");
    assert_eq!(a, run("3", "1"));
    assert_eq!(a, run("3", "4"));
    assert_ne!(a, run("4", "1"));
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["trace"].as_array().unwrap().len(), 2);
}

#[test]
fn every_command_reports_its_resolved_config() {
    let o = cvit(&["--seed", "9", "flops", "--preset", "tiny-XL"]);
    let r = resolved(&o);
    assert_eq!(r["command"], "flops");
    assert_eq!(r["seed"], 9);
    assert_eq!(r["settings"]["model"]["depths"], serde_json::json!([1, 2, 2]));
}

#[test]
fn config_file_drives_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let mut cfg = ModelConfig::preset("tiny-S").unwrap();
    cfg.name = "custom".into();
    cfg.chunks = 4;
    std::fs::write(&path, cfg.to_json()).unwrap();
    let v = stdout_json(&cvit(&[
        "--config",
        path.to_str().unwrap(),
        "flops",
        "--format",
        "json",
    ]));
    assert_eq!(v[0]["model"], "custom");
    assert_eq!(
        code(&cvit(&["--config", path.to_str().unwrap(), "flops", "--preset", "S"])),
        2
    );
}

#[test]
fn distill_reports_teacher_baseline_and_student() {
    let mut args = vec!["distill", "--format", "json"];
    args.extend(QUICK);
    let v = stdout_json(&cvit(&args));
    let roles: Vec<&str> = v["summary"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["role"].as_str().unwrap())
        .collect();
    assert_eq!(roles, ["teacher", "baseline", "distilled"]);
    assert_eq!(v["summary"][0]["model"], "tiny-L");
    assert!(v["kd_gain"].is_number());
}

#[test]
fn distill_needs_a_teacher_for_large_students() {
    assert_eq!(code(&cvit(&["distill", "--student", "tiny-XL", "--epochs", "1"])), 2);
}

#[test]
fn gradcheck_all_passes() {
    let v = stdout_json(&cvit(&["gradcheck", "--dims", "4", "--format", "json"]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r["status"] == "pass"), "{v}");
}

#[test]
fn ablate_marks_invalid_variants() {
    let v = stdout_json(&cvit(&[
        "ablate",
        "--preset",
        "S",
        "--grid",
        "chunks=2,3 ratio=2.5",
        "--format",
        "json",
    ]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["params"], 1_912_240);
    assert!(rows[1]["params"].is_null());
    assert!(rows[1]["error"].as_str().unwrap().contains("divisible"));
}

#[test]
fn ablate_keeps_structural_orderings() {
    let grid = "chunks=2,4 ratio=2.5,4 cascade=on,off";
    let v = stdout_json(&cvit(&["ablate", "--preset", "S", "--grid", grid, "--format", "json"]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 8);
    let find = |n: u64, e: f64, cascade: bool| {
        rows.iter()
            .find(|r| r["chunks"] == n && r["ratio"] == e && r["cascade"] == cascade)
            .unwrap()
    };
    let u = |r: &Value, k: &str| r[k].as_u64().unwrap();
    let (n2, n4) = (find(2, 2.5, true), find(4, 2.5, true));
    assert_eq!(u(n2, "ffn_flops"), 2 * u(n4, "ffn_flops"));
    assert!(u(n4, "flops") < u(n2, "flops"));
    assert!(u(find(2, 4.0, true), "params") > u(n2, "params"));
    for (n, e) in [(2, 2.5), (2, 4.0), (4, 2.5), (4, 4.0)] {
        assert_eq!(find(n, e, true)["params"], find(n, e, false)["params"]);
        assert_eq!(find(n, e, true)["flops"], find(n, e, false)["flops"]);
    }
}
