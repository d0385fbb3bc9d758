use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
# small enough to run every stage in seconds
synth.height = 32
synth.width = 40
synth.phase_frames = 5
synth.test_frames = 4
aug.backgrounds = 2
gesture.sequences = 1
gesture.epochs = 1
gesture.widths = 4,4,4,4,4,4
appearance.widths = 4,4,4,4,4,4
appearance.epochs = 1
mc.samples = 3
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gestboot"));
    c.env_remove("GESTBOOT_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gestboot")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path -> bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    assert_same_files(&tree(a), &tree(b));
}

fn assert_same_files(ta: &BTreeMap<PathBuf, Vec<u8>>, tb: &BTreeMap<PathBuf, Vec<u8>>) {
    assert!(!ta.is_empty(), "no files");
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in ta {
        assert!(v == &tb[k], "{} differs between runs", k.display());
    }
}

struct Fixture {
    dir: tempfile::TempDir,
    cfg: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("tiny.cfg");
        std::fs::write(&cfg, TINY).unwrap();
        Self { dir, cfg }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn pipeline(&self, out: &str) -> PathBuf {
        let out = self.path(out);
        ok(&["pipeline", "-c", s(&self.cfg), "--out", s(&out)]);
        out
    }
}

#[test]
fn every_command_is_deterministic_and_refeeds() {
    let fx = Fixture::new();
    let cfg = s(&fx.cfg).to_string();

    let a = fx.pipeline("run");
    let first = tree(&a);
    std::fs::remove_dir_all(&a).unwrap();
    fx.pipeline("run");
    assert_same_files(&first, &tree(&a));
    let report = std::fs::read_to_string(a.join("report.txt")).unwrap();
    assert!(report.contains(&std::fs::read_to_string(a.join("config.snapshot")).unwrap()));
    for line in std::fs::read_to_string(a.join("report.jsonl")).unwrap().lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    for tag in ["x", "y"] {
        let root = fx.path(tag);
        std::fs::create_dir_all(&root).unwrap();
        let p = |rel: &str| s(&root.join(rel)).to_string();
        ok(&["synth", "-c", &cfg, "--out", &p("synth")]);
        let f0 = s(&a.join("video0/frames/0002.png")).to_string();
        let f1 = s(&a.join("video0/frames/0003.png")).to_string();
        ok(&["flow", "-c", &cfg, "--prev", &f0, "--next", &f1, "--out", &p("flow/flow.gbt")]);
        ok(&["bgsub", "-c", &cfg, "--frames", s(&a.join("video0/frames")), "--out", &p("bgsub")]);
        ok(&["train-gesture", "-c", &cfg, "--out", &p("gesture/net.params")]);
        ok(&[
            "pseudo-label", "-c", &cfg, "--gesture-net", s(&a.join("gesture.params")),
            "--stacks", s(&a.join("video0/stacks")), "--out", &p("pl"),
        ]);
        ok(&[
            "pseudo-label", "-c", &cfg, "--gesture-net", s(&a.join("gesture.params")),
            "--frames", s(&a.join("video0/frames")), "--out", &p("pl_frames"),
        ]);
        ok(&[
            "train-appearance", "-c", &cfg, "--frames", s(&a.join("video0/frames")),
            "--labels", s(&a.join("video0/labels")), "--backgrounds", s(&a.join("backgrounds")),
            "--out", &p("app/appearance.params"),
        ]);
        ok(&["segment", "-c", &cfg, "--net", s(&a.join("appearance.params")), "--frames", s(&a.join("test/frames")), "--out", &p("seg")]);
        ok(&["eval", "--pred", &p("seg"), "--truth", s(&a.join("test/masks")), "--report", &p("eval/report.json")]);
    }
    assert_same_tree(&fx.path("x"), &fx.path("y"));

    // Re-fed artifacts reproduce the pipeline's own downstream outputs.
    let x = fx.path("x");
    assert_same_tree(&a.join("video0/labels"), &x.join("pl/labels"));
    assert_same_tree(&a.join("video0/uncertainty"), &x.join("pl/uncertainty"));
    assert_same_tree(&a.join("video0/labels"), &x.join("pl_frames/labels"));
    assert_same_tree(&a.join("video0/stacks"), &x.join("pl_frames/stacks"));
    assert_eq!(std::fs::read(a.join("gesture.params")).unwrap(), std::fs::read(x.join("gesture/net.params")).unwrap());
    assert_eq!(std::fs::read(a.join("appearance.params")).unwrap(), std::fs::read(x.join("app/appearance.params")).unwrap());
    assert_same_tree(&a.join("predictions"), &x.join("seg"));
    assert_same_tree(&a.join("video0/frames"), &x.join("synth/video0/frames"));
    assert_same_tree(&a.join("test/masks"), &x.join("synth/test/masks"));
}

#[test]
fn eval_assert_exit_codes() {
    let fx = Fixture::new();
    let masks = fx.path("masks");
    std::fs::create_dir_all(&masks).unwrap();
    // Prediction equal to truth.
    let img = gestboot_core::ImageBuffer::from_vec(4, 4, 1, (0..16).map(|i| (i % 3 == 0) as u8 as f32).collect()).unwrap();
    gestboot_core::harness::write_png_dir(&masks, &[img]).unwrap();
    let m = s(&masks);
    let out = ok(&["eval", "--pred", m, "--truth", m, "--assert", "0.99"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    assert_eq!(run(&["eval", "--pred", m, "--truth", m, "--assert", "1.01"]).status.code(), Some(3));
}

#[test]
fn usage_and_data_errors() {
    let fx = Fixture::new();
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["ablate", "--study", "colour"]).status.code(), Some(1));

    let bad = fx.path("bad.cfg");
    std::fs::write(&bad, "no_such_key = 3\n").unwrap();
    let out = run(&["pipeline", "-c", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let missing = fx.path("missing.cfg");
    std::fs::write(&missing, format!("{TINY}input.gesture_dirs = {}\n", s(&fx.path("nowhere")))).unwrap();
    let out = run(&["pipeline", "-c", s(&missing), "--out", s(&fx.path("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("input.gesture_dirs"));

    let out = run(&["segment", "--net", s(&fx.path("none.params")), "--frames", s(&fx.path("none")), "--out", s(&fx.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_env_overrides_config() {
    let fx = Fixture::new();
    let out = fx.path("synth");
    let status = bin()
        .args(["synth", "-c", s(&fx.cfg), "--out", s(&out)])
        .env("GESTBOOT_SEED", "77")
        .status()
        .unwrap();
    assert!(status.success());
    let snap = std::fs::read_to_string(out.join("config.snapshot")).unwrap();
    assert!(snap.lines().any(|l| l == "seed = 77"), "{snap}");
}

#[test]
fn documented_flag_forms() {
    let fx = Fixture::new();
    let cfg = s(&fx.cfg).to_string();
    let a = fx.pipeline("run");
    let frame = a.join("test/frames/0000.png");

    let mask = fx.path("mask.png");
    ok(&["segment", "-c", &cfg, "--params", s(&a.join("appearance.params")), "--in", s(&frame), "--out", s(&mask), "--threshold", "0.5"]);
    let m = gestboot_core::harness::read_image(&mask).unwrap();
    assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));

    ok(&["pseudo-label", "-c", &cfg, "--params", s(&a.join("gesture.params")), "--stacks", s(&a.join("video0/stacks")), "--out", s(&fx.path("pl"))]);
    assert_same_tree(&a.join("video0/labels"), &fx.path("pl/labels"));

    let (frames, labels) = (a.join("video0/frames"), a.join("video0/labels"));
    let train = |extra: &[&str], out: &str| {
        let out = fx.path(out);
        let mut args = vec!["train-appearance", "-c", &cfg, "--frames", s(&frames), "--labels", s(&labels), "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        std::fs::read(out).unwrap()
    };
    let plain = train(&["--aug", "none"], "plain.params");
    assert_ne!(plain, train(&["--aug", "none", "--no-precision"], "identity.params"));
    assert_ne!(plain, train(&[], "augmented.params"));

    ok(&["synth", "-c", &cfg, "--out", s(&fx.path("rec"))]);
    ok(&["train-gesture", "-c", &cfg, "--data", s(&fx.path("rec/video0")), "--out", s(&fx.path("g.params"))]);
    assert!(fx.path("g.params").exists());
}
