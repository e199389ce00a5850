use std::path::Path;
use std::process::{Command, Output};

use cit_core::data::{load_image, procedural_image, save_image, Procedural};

fn cit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cit")).args(args).output().expect("spawn cit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(&o), stderr(&o));
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_infer_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let out = ok(cit(&["synth-data", "--out", p(&data), "--count", "2", "--size", "32", "--ev", "-1,1"]));
    assert!(out.contains("ev_offsets=-1,1"));
    assert!(out.contains("wrote 4 pairs"));

    let out = ok(cit(&[
        "train",
        "--preset",
        "toy",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--steps",
        "2",
        "--batch",
        "2",
        "--crop",
        "16",
        "--set",
        "log_every=1",
    ]));
    assert!(out.starts_with("# resolved config\n"));
    assert!(out.contains("steps=2\n") && out.contains("channels=8\n"));
    let log = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let out = ok(cit(&[
        "train",
        "--preset",
        "toy",
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--steps",
        "3",
        "--batch",
        "2",
        "--crop",
        "16",
        "--resume",
        p(&run.join("last.ckpt")),
    ]));
    assert!(out.contains("checkpoint"));
    assert_eq!(std::fs::read_to_string(run.join("loss.csv")).unwrap().lines().count(), 4);

    let input = dir.path().join("in");
    save_image(&procedural_image(Procedural::Blobs, 100, 100, 0), input.join("odd.png")).unwrap();
    let pred = dir.path().join("pred");
    ok(cit(&["infer", "--checkpoint", p(&run.join("last.ckpt")), "--input", p(&input), "--output", p(&pred)]));
    let y = load_image(pred.join("odd.png")).unwrap();
    assert_eq!((y.height(), y.width()), (100, 100));

    let csv = dir.path().join("m.csv");
    let out = ok(cit(&["eval", "--pred", p(&pred), "--gt", p(&input), "--ssim", "luma", "--csv", p(&csv)]));
    assert!(out.contains("ssim=luma"));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("path,psnr,ssim\nodd.png,"));
}

#[test]
fn eval_identical_dirs() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        save_image(&procedural_image(Procedural::Texture, 24, 24, 1), dir.path().join(sub).join("x.png")).unwrap();
    }
    let out = ok(cit(&["eval", "--pred", p(&dir.path().join("a")), "--gt", p(&dir.path().join("b"))]));
    let row = out.lines().find(|l| l.starts_with("x.png,")).unwrap();
    assert_eq!(row, "x.png,inf,1.000000");
}

#[test]
fn eval_matches_exposure_suffix() {
    let dir = tempfile::tempdir().unwrap();
    let img = procedural_image(Procedural::Gradient, 16, 16, 2);
    save_image(&img, dir.path().join("pred/scene_ev-1.5.png")).unwrap();
    save_image(&img, dir.path().join("gt/scene.png")).unwrap();
    let out = ok(cit(&["eval", "--pred", p(&dir.path().join("pred")), "--gt", p(&dir.path().join("gt"))]));
    assert!(out.contains("scene_ev-1.5.png,inf,1.000000"));
}

#[test]
fn presets_resolve() {
    let out = ok(cit(&["describe", "--preset", "full"]));
    for line in [
        "rcitg_count=6",
        "citb_count=6",
        "window=8",
        "channels=180",
        "heads=6",
        "alpha=0.01",
        "beta=0.01",
        "squeeze=3",
        "batch=32",
        "crop=256",
        "lr=0.0001",
    ] {
        assert!(out.lines().any(|l| l == line), "missing {line}");
    }
    assert!(out.lines().last().unwrap().ends_with("55919112"));

    let out = ok(cit(&["describe", "--preset", "toy", "--set", "channels=12", "--set", "heads=3", "--seed", "5"]));
    assert!(out.contains("channels=12\n") && out.contains("heads=3\n") && out.contains("seed=5\n"));
}

#[test]
fn config_file_sits_between_preset_and_set() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.txt");
    std::fs::write(&file, "# comment\nchannels=16\nheads=4\nlr=0.005\n").unwrap();
    let out = ok(cit(&["describe", "--preset", "toy", "--config", p(&file), "--set", "heads=2"]));
    assert!(out.contains("channels=16\n") && out.contains("heads=2\n") && out.contains("lr=0.005\n"));
}

#[test]
fn gradcheck_passes_on_toy() {
    let out = ok(cit(&["gradcheck", "--size", "16", "--samples", "1"]));
    assert!(out.contains("PASS"));
    let o = cit(&["gradcheck", "--size", "16", "--samples", "1", "--tol", "1e-30"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[GradcheckFailed]"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cit(&["describe", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(cit(&["eval", "--pred", "x"]).status.code(), Some(2));
}

#[test]
fn module_errors_exit_one_with_category() {
    let o = cit(&["describe", "--preset", "toy", "--set", "heads=3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[ConfigError]:"), "{}", stderr(&o));

    let o = cit(&["describe", "--set", "nonsense"]);
    assert!(stderr(&o).starts_with("error[ConfigError]:"));

    let dir = tempfile::tempdir().unwrap();
    let o = cit(&["infer", "--checkpoint", p(&dir.path().join("none.ckpt")), "--input", ".", "--output", "."]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[IoError]:"), "{}", stderr(&o));

    let bogus = dir.path().join("bad.ckpt");
    std::fs::write(&bogus, b"not a checkpoint").unwrap();
    let o = cit(&["infer", "--checkpoint", p(&bogus), "--input", ".", "--output", "."]);
    assert!(stderr(&o).starts_with("error[CheckpointError]:"), "{}", stderr(&o));

    let data = dir.path().join("d");
    ok(cit(&["synth-data", "--out", p(&data), "--count", "1", "--size", "16", "--ev", "0"]));
    let o = cit(&["train", "--preset", "toy", "--data", p(&data), "--out", p(&dir.path().join("r")), "--crop", "64"]);
    assert!(stderr(&o).starts_with("error[CropTooLarge]:"), "{}", stderr(&o));
}
