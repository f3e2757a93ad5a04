//! End-to-end checks of the command-line surface: verbs, flags, output
//! formats, and exit statuses (0 success, 1 domain error, 2 usage error).

use std::path::PathBuf;
use std::process::{Command, Output};

fn mia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mia"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mia_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn params_audits_attention_blocks() {
    let out = mia(&["params", "--variant", "mia"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("mia C=16 r=16"), "{text}");
    assert!(text.lines().any(|l| l.contains("mia C=16") && l.ends_with("99")), "{text}");
    assert!(text.lines().any(|l| l.contains("mia C=32") && l.ends_with("212")), "{text}");
    assert!(text.contains("attention total"), "{text}");

    let none = stdout(&mia(&["params", "--variant", "none"]));
    assert!(none.lines().any(|l| l.contains("mia[off]") && l.ends_with('0')), "{none}");
}

#[test]
fn gradcheck_quick_passes() {
    let out = mia(&["gradcheck"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for op in [
        "add", "broadcast_mul", "matmul", "conv2d", "relu", "sigmoid", "reduce_mean", "reshape",
        "max_pool", "softmax_ce", "dice_loss", "mia_forward",
    ] {
        assert!(text.contains(op), "missing {op} in:\n{text}");
    }
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn train_eval_export_round_trip() {
    let dir = tmp_dir("roundtrip");
    let ckpt = dir.join("model.ckpt");
    let out = mia(&[
        "train", "--task", "synth-cls", "--epochs", "2", "--n", "48", "--seed", "3", "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = stdout(&out);
    assert!(log.contains("epoch=1 step="), "{log}");
    assert!(log.contains("lr=") && log.contains("loss=") && log.contains("acc="), "{log}");
    assert!(ckpt.exists());
    let log_file = dir.join("model.ckpt.log");
    assert!(log_file.exists());
    let logged = std::fs::read_to_string(&log_file).unwrap();
    assert_eq!(logged.lines().count(), 2);
    assert!(logged.starts_with("epoch=1 step="), "{logged}");

    let eval = mia(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--n", "48", "--seed", "3"]);
    assert!(eval.status.success());
    let report = stdout(&eval);
    for key in ["accuracy=", "precision=", "recall=", "f1=", "averaging="] {
        assert!(report.contains(key), "{report}");
    }

    let attn_dir = dir.join("attn");
    let export = mia(&[
        "export-attn", "--ckpt", ckpt.to_str().unwrap(), "--input", "1", "--n", "48", "--out",
        attn_dir.to_str().unwrap(),
    ]);
    assert!(export.status.success(), "{}", String::from_utf8_lossy(&export.stderr));
    assert!(attn_dir.join("wc_layer0.txt").exists());
    assert!(attn_dir.join("ws_layer0.pgm").exists());
    assert!(attn_dir.join("a_layer0_c00.pgm").exists());
    let ws = std::fs::read(attn_dir.join("ws_layer0.pgm")).unwrap();
    assert!(ws.starts_with(b"P5\n16 16\n255\n"));
    let wc = std::fs::read_to_string(attn_dir.join("wc_layer0.txt")).unwrap();
    assert_eq!(wc.lines().count(), 16); // one gate value per channel

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn segmentation_task_reports_dice() {
    let dir = tmp_dir("seg");
    let ckpt = dir.join("seg.ckpt");
    let out = mia(&[
        "train", "--task", "synth-seg", "--epochs", "2", "--n", "16", "--size", "8", "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("dice="));

    let eval = mia(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(), "--task", "synth-seg", "--n", "8", "--size", "8",
    ]);
    assert!(eval.status.success());
    assert!(stdout(&eval).contains("dice="), "{}", stdout(&eval));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn flows_task_from_csv() {
    let dir = tmp_dir("flows");
    let csv = dir.join("flows.csv");
    let mut rows = String::from("f1,f2,f3,label\n");
    for i in 0..32 {
        let label = i % 2;
        let base = if label == 0 { 1.0 } else { 5.0 };
        rows.push_str(&format!("{},{},{},{}\n", base + (i % 5) as f64 * 0.1, base * 2.0, -base, label));
    }
    std::fs::write(&csv, rows).unwrap();

    let ckpt = dir.join("flows.ckpt");
    let out = mia(&[
        "train", "--task", "flows", "--csv", csv.to_str().unwrap(), "--epochs", "2", "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let eval = mia(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(), "--task", "flows", "--csv", csv.to_str().unwrap(),
    ]);
    assert!(eval.status.success());
    assert!(stdout(&eval).contains("averaging=binary"), "{}", stdout(&eval));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn ablate_prints_comparison_table() {
    let out = mia(&[
        "ablate", "--task", "synth-cls", "--seeds", "1", "--epochs", "1", "--n", "32",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("variant,seed,accuracy,precision,recall,f1"), "{text}");
    for variant in ["mia,0,", "se_only,0,", "none,0,"] {
        assert!(text.contains(variant), "{text}");
    }
    assert_eq!(text.matches("median,").count(), 3, "{text}");
}

#[test]
fn exit_statuses_are_stable() {
    // domain errors exit 1 with a one-line diagnostic
    let bad_train = mia(&["train", "--epochs", "0"]);
    assert_eq!(bad_train.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad_train.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");

    let missing = mia(&["eval", "--ckpt", "/nonexistent/m.ckpt"]);
    assert_eq!(missing.status.code(), Some(1));

    // usage errors exit 2
    let unknown_flag = mia(&["train", "--bogus"]);
    assert_eq!(unknown_flag.status.code(), Some(2));
    let unknown_verb = mia(&["frobnicate"]);
    assert_eq!(unknown_verb.status.code(), Some(2));
}

#[test]
fn help_lists_paper_defaults() {
    let out = mia(&["train", "--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("0.01"), "{text}");
    assert!(text.contains("16"), "{text}");
    assert!(text.contains("10"), "{text}");
}
