use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dimosr_core::data::{load_png, save_png, synthetic_image};
use dimosr_core::model::{save_checkpoint, Checkpoint, ModelConfig};
use dimosr_core::Network;

fn dimosr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dimosr"))
        .args(args)
        .env("DIMOSR_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_images(dir: &Path, n: u64, side: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        save_png(&synthetic_image(5, i, side, side), dir.join(format!("img{i}.png"))).unwrap();
    }
}

#[test]
fn inspect_reports_preset_counts() {
    let o = dimosr(&["inspect", "--preset", "dimosr"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("parameters: 350724 (350.7K)"), "{out}");
    assert!(out.contains("(19.73G) for a 1280x720 output"), "{out}");
    assert!(out.contains("head.conv"));
    assert!(out.contains("blocks.17.erb.expand"), "{out}");

    let o = dimosr(&["inspect", "--preset", "dimosr", "--model.scale", "2"]);
    assert!(stdout(&o).contains("parameters: 339024"), "{}", stdout(&o));
}

#[test]
fn ablation_flags_shrink_the_model() {
    let count = |extra: &[&str]| {
        let mut args = vec!["inspect", "--preset", "toy"];
        args.extend(extra);
        let o = dimosr(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        let line = out.lines().find(|l| l.starts_with("parameters: ")).unwrap().to_string();
        line.split_whitespace().nth(1).unwrap().parse::<usize>().unwrap()
    };
    let both = count(&[]);
    let no_att = count(&["--model.enable-attention", "false"]);
    let no_mod = count(&["--model.enable-modulation=false"]);
    let none = count(&["--model.enable-attention", "false", "--model.enable-modulation", "false"]);
    assert!(both > no_att && both > no_mod && no_att > none && no_mod > none);
}

#[test]
fn config_errors_exit_nonzero() {
    let o = dimosr(&["inspect", "--preset", "toy", "--model.enable-attentoin", "false"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("enable_attentoin"), "{}", stderr(&o));

    let o = dimosr(&["inspect", "--preset", "nope"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown preset"));

    let o = dimosr(&["infer", "--checkpoint", "/does/not/exist.dmsr", "--input", "a.png", "--output", "b.png"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/does/not/exist.dmsr"), "{}", stderr(&o));

    let o = dimosr(&["ingest", "--dir", "x", "--scale", "2", "--out", "y", "--train.lambda", "0"]);
    assert!(!o.status.success());
}

#[test]
fn ingest_writes_stable_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = dimosr(&["ingest", "--dir", p(&empty), "--scale", "4", "--out", p(&tmp.path().join("o0"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no images found"), "{}", stderr(&o));

    let hr = tmp.path().join("hr");
    write_images(&hr, 5, 32);
    fs::write(hr.join("broken.png"), b"not a png").unwrap();
    let out = tmp.path().join("data");
    let o = dimosr(&["ingest", "--dir", p(&hr), "--scale", "4", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("5 images at x4, 1 skipped"), "{}", stdout(&o));
    assert!(stderr(&o).contains("broken.png"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 5);
    for i in 0..5 {
        let lr = load_png::<f32>(out.join(format!("lr_x4/img{i}.png"))).unwrap();
        assert_eq!((lr.shape().h, lr.shape().w), (8, 8));
    }
    let first = fs::read(out.join("manifest.json")).unwrap();
    let o = dimosr(&["ingest", "--dir", p(&hr), "--scale", "4", "--out", p(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), first);
}

#[test]
fn infer_writes_upscaled_png() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("x4.dmsr");
    let net = Network::<f32>::build(ModelConfig::toy().with_scale(4), 1).unwrap();
    save_checkpoint(&Checkpoint::from_network(net), &ck).unwrap();
    let input = tmp.path().join("in.png");
    save_png(&synthetic_image(2, 0, 16, 16), &input).unwrap();
    let output = tmp.path().join("out.png");
    let o = dimosr(&["infer", "--checkpoint", p(&ck), "--input", p(&input), "--output", p(&output)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sr = load_png::<f32>(&output).unwrap();
    assert_eq!((sr.shape().c, sr.shape().h, sr.shape().w), (3, 64, 64));

    let o = dimosr(&["inspect", "--checkpoint", p(&ck)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("x4"));
}

#[test]
fn eval_of_identical_images_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = tmp.path().join("hr");
    write_images(&hr, 2, 24);
    let data = tmp.path().join("data");
    assert!(dimosr(&["ingest", "--dir", p(&hr), "--scale", "2", "--out", p(&data)]).status.success());
    let manifest = data.join("manifest.json");
    let o = dimosr(&["eval", "--manifest", p(&manifest), "--sr", p(&hr)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mean = out.lines().last().unwrap();
    assert!(mean.contains("inf") && mean.contains("1.00000"), "{out}");

    let o = dimosr(&["eval", "--manifest", p(&manifest), "--bicubic", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["psnr"].as_f64().unwrap() > 15.0);
    assert_eq!(v["images"].as_array().unwrap().len(), 2);
}

#[test]
fn train_then_eval_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let hr = tmp.path().join("hr");
    write_images(&hr, 3, 40);
    let data = tmp.path().join("data");
    assert!(dimosr(&["ingest", "--dir", p(&hr), "--scale", "2", "--out", p(&data)]).status.success());
    let manifest = data.join("manifest.json");
    let run = tmp.path().join("run");
    let small = [
        "--model.channels", "8", "--model.branch-width", "2", "--model.erb-hidden", "4",
        "--train.batch-size", "2", "--train.patch-size", "12", "--train.log-every", "1",
        "--train.eval-every", "2",
    ];
    let mut args = vec!["train", "--preset", "toy", "--train.iterations", "2"];
    args.extend(small);
    args.extend(["--paths.train-manifest", p(&manifest), "--paths.output-dir", p(&run)]);
    args.extend(["--paths.val-manifests.val", p(&manifest)]);
    let o = dimosr(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("val: PSNR"), "{}", stdout(&o));
    let log = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.lines().last().unwrap().contains("\"eval\""));
    let saved = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(saved.contains("channels = 8"));

    let ck = run.join("final.dmsr");
    let o = dimosr(&["eval", "--manifest", p(&manifest), "--checkpoint", p(&ck)]);
    assert!(o.status.success(), "{}", stderr(&o));

    // Resuming to 3 iterations appends one line.
    let mut args = vec!["train", "--preset", "toy", "--train.iterations", "3"];
    args.extend(small);
    args.extend(["--paths.train-manifest", p(&manifest), "--paths.output-dir", p(&run)]);
    args.extend(["--paths.resume", p(&ck)]);
    let o = dimosr(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 3);

    let o = dimosr(&["train", "--preset", "toy", "--paths.output-dir", p(&run)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("train_manifest"));
}

#[test]
fn gradcheck_passes_on_a_small_network() {
    let o = dimosr(&[
        "gradcheck", "--preset", "toy", "--model.channels", "8", "--model.branch-width", "2",
        "--model.erb-hidden", "4", "--model.num-blocks", "2", "--model.group-size", "1",
    ]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.contains(", 0 failed"), "{out}");
    assert!(out.contains("network direction"), "{out}");
}
