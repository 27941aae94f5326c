use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_anchorseg"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn fixture(videos: usize, extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("data");
    ok(bin()
        .args(["--seed", "4", "synth", "--out"])
        .arg(&data)
        .args(["--videos", &videos.to_string(), "--frames", "4"])
        .output()
        .unwrap());
    let config = root.join("config.toml");
    std::fs::write(
        &config,
        format!(
            "dataset = {:?}\noutput = {:?}\n{extra}\n[resolution]\nheight = 32\nwidth = 40\n\n\
             [backbone]\nkind = \"random_conv\"\nseed = 1\nblocks = [[8], []]\n\n\
             [train]\nepochs = 1\nfolds = 2\nnetwork = {{ depth = 2, base_width = 4, in_channels = 3 }}\n",
            data,
            root.join("out")
        ),
    )
    .unwrap();
    Fixture {
        _dir: dir,
        root,
        config,
    }
}

fn run(f: &Fixture, args: &[&str]) -> Output {
    bin().arg("--config").arg(&f.config).args(args).output().unwrap()
}

fn count_files(dir: &Path, suffix: &str) -> usize {
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            n += count_files(&p, suffix);
        } else if p.to_string_lossy().ends_with(suffix) {
            n += 1;
        }
    }
    n
}

#[test]
fn synth_writes_the_dataset_layout() {
    let f = fixture(2, "");
    let data = f.root.join("data");
    for video in ["synth_01", "synth_02"] {
        assert_eq!(count_files(&data.join(video).join("frames"), ".png"), 4);
        assert_eq!(count_files(&data.join(video).join("masks"), ".png"), 4);
    }
    assert!(data.join("synthetic_spec.toml").is_file());
}

#[test]
fn single_stage_workflow() {
    let f = fixture(2, "");
    let out = f.root.join("out");

    let s = ok(run(&f, &["cues"]));
    assert!(s.contains("8 frames cached"), "{s}");
    let s = ok(run(&f, &["cues"]));
    assert!(s.contains(" 0 recomputed"), "{s}");

    ok(run(&f, &["anchors"]));
    assert_eq!(count_files(&out.join("anchors"), ".pos.png"), 8);
    assert_eq!(count_files(&out.join("anchors"), ".neg.png"), 8);

    let s = ok(run(&f, &["train"]));
    assert!(s.contains("mask files read during training: 0"), "{s}");
    assert!(out.join("model.safetensors").is_file());
    assert!(out.join("config.toml").is_file());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    // 3 adjacent pairs per video, batch size 4, one epoch.
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["L_full"].as_f64().unwrap().is_finite());
    }

    let s = ok(run(&f, &["eval"]));
    assert!(s.contains("IoU"), "{s}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval/report.json")).unwrap()).unwrap();
    let iou = report["mean_iou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&iou));
    assert_eq!(std::fs::read_to_string(out.join("eval/frames.jsonl")).unwrap().lines().count(), 8);
    assert_eq!(count_files(&out.join("eval/overlays"), ".png"), 8);

    let ck = out.join("model.safetensors");
    ok(run(&f, &["infer", "--checkpoint", ck.to_str().unwrap()]));
    assert_eq!(count_files(&out.join("predictions"), ".prob.png"), 8);
    assert_eq!(count_files(&out.join("predictions"), ".mask.png"), 8);
    assert!(!out.join(".lock").exists());
}

#[test]
fn train_test_setting_writes_one_checkpoint_per_fold() {
    let f = fixture(4, "");
    let out = f.root.join("out");
    ok(run(&f, &["--setting", "TT", "train"]));
    assert!(out.join("fold0.safetensors").is_file());
    assert!(out.join("fold1.safetensors").is_file());
    let s = ok(run(&f, &["--setting", "TT", "eval"]));
    assert!(s.contains("Per fold"), "{s}");
}

#[test]
fn supervised_training_reads_masks() {
    let f = fixture(2, "");
    let s = ok(run(&f, &["--supervision", "100", "train"]));
    assert!(s.contains("mask files read during training: 8"), "{s}");
}

#[test]
fn eval_without_checkpoint_is_a_data_error() {
    let f = fixture(1, "");
    let o = run(&f, &["eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no checkpoint"));
}

#[test]
fn usage_errors_exit_with_one() {
    let o = bin().args(["--supervision", "30", "train"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn busy_output_directory_is_refused() {
    let f = fixture(1, "");
    let out = f.root.join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".lock"), "1").unwrap();
    let o = run(&f, &["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("in use"));
}

#[test]
fn missing_pretrained_weights_explain_how_to_fetch_them() {
    let f = fixture(1, "");
    let text = std::fs::read_to_string(&f.config).unwrap();
    let head = text.split("[backbone]").next().unwrap().to_string();
    let tail = text.split("[train]").nth(1).unwrap();
    std::fs::write(
        &f.config,
        format!("{head}[backbone]\nkind = \"vgg16\"\nweights = \"/nonexistent/vgg16.safetensors\"\n\n[train]{tail}"),
    )
    .unwrap();
    let o = run(&f, &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("torchvision"));
}
