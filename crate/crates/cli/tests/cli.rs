use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bridge-mtl"));
    c.env_remove("BRIDGE_MTL_OUT");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn bridge-mtl")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: [&str; 6] = [
    "--set",
    "model.input_size=32",
    "--set",
    "model.channels=8",
    "--set",
    "train.batch_size=2",
];

fn synth(dir: &Path) {
    ok(
        dir,
        &[
            "synth", "-o", "data", "--train", "4", "--test", "2", "--size", "32",
        ],
    );
}

#[test]
fn stats_prints_split_table() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let text = ok(dir.path(), &["stats", "--data", "data", "-o", "stats"]);
    let rows: Vec<&str> = text.lines().collect();
    assert!(
        rows[1].starts_with("train") && rows[1].contains(" 4 "),
        "{text}"
    );
    assert!(rows[2].starts_with("test"));
    assert!(dir.path().join("stats/config.resolved").exists());
}

#[test]
fn grid_with_three_variants_writes_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(
        dir.path().join("grid.cfg"),
        "data.root = data\ntrain.total_steps = 2\n",
    )
    .unwrap();
    let mut args = vec![
        "grid",
        "--config",
        "grid.cfg",
        "--variants",
        "MTL-A,MTL-D,MTL-I",
        "-o",
        "grid",
    ];
    args.extend(SMALL);
    ok(dir.path(), &args);
    let table = std::fs::read_to_string(dir.path().join("grid/comparison.txt")).unwrap();
    let rows: Vec<&str> = table.lines().skip(3).collect();
    assert_eq!(rows.len(), 3, "{table}");
    for (row, name) in rows.iter().zip(["MTL-A", "MTL-D", "MTL-I"]) {
        assert!(row.starts_with(name));
        assert_eq!(row.split(" | ").count(), 9);
    }
    for f in [
        "grid.json",
        "class_level.txt",
        "MTL-D/report.json",
        "MTL-D/final.ckpt",
    ] {
        assert!(dir.path().join("grid").join(f).exists(), "{f}");
    }
}

#[test]
fn infer_writes_masks_overlay_and_report_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let mut args = vec![
        "train",
        "--data",
        "data",
        "--variant",
        "MTL-C",
        "--steps",
        "2",
        "-o",
        "run",
    ];
    args.extend(SMALL);
    ok(dir.path(), &args);
    for out in ["a", "b"] {
        ok(
            dir.path(),
            &[
                "infer",
                "--checkpoint",
                "run/final.ckpt",
                "--image",
                "data/images/synth-004.png",
                "--visualize",
                "-o",
                out,
            ],
        );
    }
    for f in [
        "element.png",
        "defect.png",
        "overlay.png",
        "condition.txt",
        "condition.json",
    ] {
        let name = format!("synth-004_{f}");
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let overlay = image::open(dir.path().join("a/synth-004_overlay.png")).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (4 * 32, 32));

    // directory mode writes one artifact set per image
    ok(
        dir.path(),
        &[
            "infer",
            "--checkpoint",
            "run/final.ckpt",
            "--image",
            "data/images",
            "-o",
            "all",
        ],
    );
    let masks = std::fs::read_dir(dir.path().join("all"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with("_element.png")
        })
        .count();
    assert_eq!(masks, 6);
}

#[test]
fn settings_precedence_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(
        dir.path().join("run.cfg"),
        "seed = 4\ntrain.total_steps = 3\nmodel.variant = MTL-B\noutput.dir = from-file\n",
    )
    .unwrap();
    let mut args = vec![
        "train",
        "--config",
        "run.cfg",
        "--data",
        "data",
        "--set",
        "train.total_steps=9",
        "--steps",
        "2",
    ];
    args.extend(SMALL);
    let text = ok(dir.path(), &args);
    assert!(text.contains("MTL-B: 2 steps"), "{text}");
    let snap = std::fs::read_to_string(dir.path().join("from-file/config.resolved")).unwrap();
    assert!(snap.contains("train.total_steps = 2\n"));
    assert!(snap.contains("seed = 4\n"));
    let history = std::fs::read_to_string(dir.path().join("from-file/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env("BRIDGE_MTL_OUT", "env-out")
        .args(["synth", "--train", "1", "--test", "0", "--size", "16"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("env-out/manifest.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let code = |args: &[&str]| run(p, args).status.code();
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["train", "--bogus-flag"]), Some(1));
    let out = run(p, &["train", "--set", "train.lr_init=fast"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lr_init"));
    std::fs::write(
        p.join("bad.cfg"),
        "train.batch_size = 2\nmodel.flavour = spicy\n",
    )
    .unwrap();
    let out = run(p, &["stats", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.flavour"));
    assert_eq!(code(&["eval", "-o", "e"]), Some(1));
    // missing files are runtime failures
    assert_eq!(
        code(&[
            "eval",
            "--checkpoint",
            "nope.ckpt",
            "--data",
            "nope",
            "-o",
            "e"
        ]),
        Some(2)
    );
    assert_eq!(code(&["keys"]), Some(0));
}

#[test]
fn bench_counts_extractor_calls() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "bench",
        "--variant",
        "MTL-E",
        "--set",
        "bench.timed=3",
        "-o",
        "b",
    ];
    args.extend(SMALL);
    ok(dir.path(), &args);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/bench.json")).unwrap())
            .unwrap();
    assert_eq!(v[0]["extractor_calls_per_image"], 1);
    assert_eq!(v[1]["extractor_calls_per_image"], 2);
    assert_eq!(
        run(dir.path(), &["bench", "--variant", "merged"])
            .status
            .code(),
        Some(1)
    );
}
