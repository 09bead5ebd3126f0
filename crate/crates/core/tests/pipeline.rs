//! The shipped binary, end to end: synthesize a dataset, pretrain,
//! fine-tune, evaluate, build retrieval galleries, and merge reports,
//! checking exit codes, console summaries, and on-disk artifacts at every
//! step. Everything is scaled down to run in seconds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pacesort(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacesort"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary launches")
}

fn assert_exit(out: &Output, code: i32, step: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{step}: expected exit {code}\n--- stdout ---\n{}\n--- stderr ---\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A config small enough that every subcommand finishes in seconds.
fn write_tiny_config(dir: &Path) -> PathBuf {
    let root = dir.join("data");
    let path = dir.join("config.toml");
    fs::write(
        &path,
        format!(
            r#"
[dataset]
root = "{}"

[synth]
num_videos = 8
frames_per_video = 16
height = 16
width = 16
seed = 11
test_fraction = 0.25

[sampler]
n = 2
m = 4

[augment]
resize = [16, 16]
crop = 16

[backbone]
arch = "r3d"
width_scale = 0.02
m = 4
input_size = 16

[head]
pair_hidden_dim = 8

[train]
epochs = 2
finetune_epochs = 2
batch_videos = 4

[eval]
ks = [1, 2]
clips_per_video = 1
"#,
            root.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn full_workflow_through_the_binary() {
    let ws = tempfile::tempdir().unwrap();
    let ws = ws.path();
    let config = write_tiny_config(ws);
    let cfg = config.to_str().unwrap();

    // Synthesize the labeled toy dataset.
    let out = pacesort(ws, &["synth", "--config", cfg]);
    assert_exit(&out, 0, "synth");
    assert!(stdout(&out).contains("synth: 8 videos"));
    assert!(ws.join("data/manifest.jsonl").is_file());

    // Self-supervised pretraining.
    let pre = ws.join("pre");
    let out = pacesort(
        ws,
        &["pretrain", "--config", cfg, "--out", pre.to_str().unwrap()],
    );
    assert_exit(&out, 0, "pretrain");
    assert!(stdout(&out).contains("pretrain: 2 epochs"));
    let ckpt = pre.join("checkpoint.ckpt");
    assert!(ckpt.is_file());
    assert!(pre.join("config.toml").is_file());
    let metrics = fs::read_to_string(pre.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,loss,pretext_acc,wall_time"));
    assert_eq!(metrics.lines().count(), 3, "header plus one row per epoch");

    // Fine-tune from the pretrained backbone, then evaluate the classifier.
    let ft = ws.join("ft");
    let out = pacesort(
        ws,
        &[
            "finetune",
            "--config",
            cfg,
            "--init",
            ckpt.to_str().unwrap(),
            "--out",
            ft.to_str().unwrap(),
        ],
    );
    assert_exit(&out, 0, "finetune");
    assert!(stdout(&out).contains("finetune: 2 epochs"));
    let ft_ckpt = ft.join("finetune.ckpt");
    assert!(ft_ckpt.is_file());
    assert!(ft.join("finetune_metrics.csv").is_file());

    let ev = ws.join("ev");
    let out = pacesort(
        ws,
        &[
            "eval",
            "--config",
            cfg,
            "--checkpoint",
            ft_ckpt.to_str().unwrap(),
            "--out",
            ev.to_str().unwrap(),
        ],
    );
    assert_exit(&out, 0, "eval");
    assert!(stdout(&out).contains("eval: top-1 acc"));
    let report = fs::read_to_string(ev.join("class_report.csv")).unwrap();
    assert!(report.starts_with("class,name,correct,total,accuracy"));

    // Retrieval with the pretrained backbone and the untrained baseline.
    let ret = ws.join("ret");
    let out = pacesort(
        ws,
        &[
            "retrieve",
            "--config",
            cfg,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            ret.to_str().unwrap(),
        ],
    );
    assert_exit(&out, 0, "retrieve");
    assert!(stdout(&out).contains("retrieve[checkpoint@"));
    assert!(ret.join("index/index.bin").is_file());
    assert!(ret.join("index/index.meta.json").is_file());
    assert!(ret.join("retrieval.svg").is_file());
    let table = fs::read_to_string(ret.join("retrieval.csv")).unwrap();
    assert!(table.starts_with("model,k,accuracy"));
    assert_eq!(table.lines().count(), 3, "header plus one row per k");

    let ret0 = ws.join("ret0");
    let out = pacesort(
        ws,
        &["retrieve", "--config", cfg, "--out", ret0.to_str().unwrap()],
    );
    assert_exit(&out, 0, "retrieve untrained");
    assert!(stdout(&out).contains("retrieve[untrained]"));

    // Merge both accuracy tables into one report.
    let rep = ws.join("rep");
    let out = pacesort(
        ws,
        &[
            "report",
            "--out",
            rep.to_str().unwrap(),
            ret.join("retrieval.csv").to_str().unwrap(),
            ret0.join("retrieval.csv").to_str().unwrap(),
        ],
    );
    assert_exit(&out, 0, "report");
    let merged = fs::read_to_string(rep.join("retrieval.csv")).unwrap();
    assert!(merged.contains("checkpoint@"));
    assert!(merged.contains("untrained"));
    assert_eq!(merged.lines().count(), 5, "header plus two models x two ks");
    let svg = fs::read_to_string(rep.join("retrieval.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn exit_codes_separate_usage_from_runtime_failures() {
    let ws = tempfile::tempdir().unwrap();
    let ws = ws.path();

    // Usage errors: exit 2, nothing on stdout.
    assert_exit(&pacesort(ws, &[]), 2, "bare invocation");
    assert_exit(&pacesort(ws, &["frobnicate"]), 2, "unknown subcommand");
    assert_exit(&pacesort(ws, &["eval"]), 2, "eval without --checkpoint");

    // Help is not an error, and it documents the config schema.
    let out = pacesort(ws, &["pretrain", "--help"]);
    assert_exit(&out, 0, "pretrain --help");
    let text = stdout(&out);
    assert!(text.contains("Config keys and defaults"));
    assert!(text.contains("lr = 0.001"));

    // Runtime failure: a dataset root with no manifest; exit 1 and an
    // error line on stderr.
    let out = pacesort(
        ws,
        &[
            "pretrain",
            "--override",
            "dataset.root=missing",
            "--out",
            ws.join("out").to_str().unwrap(),
        ],
    );
    assert_exit(&out, 1, "pretrain without data");
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}
