//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.
//!
//! `cargo test -p dimosr-core --test acceptance` runs everything (the toy
//! training criteria take several minutes). Pass criterion numbers as
//! arguments to run a subset, e.g. `-- 1 2 9`.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use common::Img;
use dimosr_core::autodiff::GradCheckOptions;
use dimosr_core::data::{degrade, ingest, save_png, synthetic_image, DatasetManifest, ImagePair};
use dimosr_core::gradcheck::{block_suite, model_check, op_suite, perturbed_network, ModelCheckOptions, SuiteEntry};
use dimosr_core::metrics::{psnr, rgb_to_y, ssim, EvalProtocol};
use dimosr_core::model::{flops_count, load_checkpoint, param_count, save_checkpoint, Checkpoint, ModelConfig};
use dimosr_core::optim::{evaluate, evaluate_bicubic, train, RunOutputs, TrainConfig, TrainOutcome, Trainer};
use dimosr_core::signal::fft2;
use dimosr_core::{Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(value: f64, target: f64, frac: f64) -> bool {
    (value - target).abs() <= frac * target
}

fn random(shape: [usize; 4], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

fn c1_params() -> Outcome {
    let rows = [
        ("DiMoSR x4", ModelConfig::dimosr(4), 349_000.0, 0.02),
        ("DiMoSR x2", ModelConfig::dimosr(2), 338_000.0, 0.02),
        ("DiMoSR-S x4", ModelConfig::dimosr_s(4), 250_000.0, 0.03),
        ("DiMoSR-S x2", ModelConfig::dimosr_s(2), 239_000.0, 0.03),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, cfg, target, tol) in rows {
        let built = Network::<f32>::build(cfg.clone(), 0).map_err(|e| e.to_string())?.param_count();
        ok &= built == param_count(&cfg) && within(built as f64, target, tol);
        parts.push(format!("{name} {built}"));
    }
    let head = |s: usize| 36 * (3 * s * s) * 9 + 3 * s * s;
    let diff = param_count(&ModelConfig::dimosr(4)) - param_count(&ModelConfig::dimosr(2));
    ok &= diff == head(4) - head(2);
    parts.push(format!("x4-x2 {diff} vs head {}", head(4) - head(2)));
    check(ok, parts.join(", "))
}

fn c2_flops() -> Outcome {
    let f4 = flops_count(&ModelConfig::dimosr(4), 720, 1280) as f64;
    let f2 = flops_count(&ModelConfig::dimosr(2), 720, 1280) as f64;
    check(
        within(f4, 20e9, 0.1) && within(f2, 76e9, 0.1),
        format!("x4 {:.2}G, x2 {:.2}G at 1280x720", f4 / 1e9, f2 / 1e9),
    )
}

fn c3_gradients() -> Outcome {
    let opts = GradCheckOptions::default();
    let mut entries: Vec<SuiteEntry> = op_suite(3, opts).map_err(|e| e.to_string())?;
    let mut small = ModelConfig::dimosr(4);
    small.channels = 8;
    small.branch_width = 2;
    small.erb_hidden = 4;
    entries.extend(block_suite(&small, 3, opts).map_err(|e| e.to_string())?);
    entries.extend(model_check(&ModelConfig::dimosr(4), ModelCheckOptions::default()).map_err(|e| e.to_string())?);
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| format!("{} ({:?}, {:.2e})", e.name, e.status, e.max_rel_error))
        .collect();
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    let probes: usize = entries.iter().map(|e| e.probes).sum();
    if failed.is_empty() {
        Ok(format!("{} checks, {probes} probes, worst rel error {worst:.2e}", entries.len()))
    } else {
        Err(format!("failed: {}", failed.join("; ")))
    }
}

fn c4_fft() -> Outcome {
    let mut worst = 0.0f64;
    let sizes = [4, 8, 16, 32, 64, 6, 10, 12, 20];
    for (k, &n) in sizes.iter().enumerate() {
        let x = random([1, 1, n, n], 40 + k as u64, 0.0, 1.0);
        let spec = fft2(&x);
        let (re, im) = common::naive_dft2(x.data(), n, n);
        for i in 0..n * n {
            worst = worst.max((spec.re.data()[i] - re[i]).abs()).max((spec.im.data()[i] - im[i]).abs());
        }
    }
    check(worst <= 1e-5, format!("sizes {sizes:?}, max abs error {worst:.2e} (f64)"))
}

fn c5_blocks() -> Outcome {
    let mut worst = 0.0f64;
    let mut configs = vec![ModelConfig::dimosr(4)];
    for (a, m) in [(true, true), (false, true), (true, false)] {
        configs.push(ModelConfig::toy().with_flags(a, m));
    }
    for (k, cfg) in configs.iter().enumerate() {
        let net = perturbed_network(cfg.clone(), 50 + k as u64).map_err(|e| e.to_string())?;
        let x = random([1, cfg.channels, 10, 12], 60 + k as u64, -1.0, 1.0);
        let feb = net.feb(0, &x).map_err(|e| e.to_string())?;
        worst = worst.max(common::feb(&net, cfg, 0, &Img::from_tensor(&x)).max_diff(&feb));
        let erb = net.erb(0, &feb).map_err(|e| e.to_string())?;
        worst = worst.max(common::erb(&net, cfg, 0, &Img::from_tensor(&feb)).max_diff(&erb));
    }
    check(worst <= 1e-5, format!("{} configs, max abs difference {worst:.2e}", configs.len()))
}

fn toy_pairs(n: u64, side: usize, seed: u64) -> Vec<ImagePair<f32>> {
    (0..n)
        .map(|i| {
            let (hr, lr) = degrade(&synthetic_image(seed, i, side, side), 2).unwrap();
            ImagePair::new(format!("img{i}"), hr, lr, 2).unwrap()
        })
        .collect()
}

fn c6_ablation() -> Outcome {
    let mut counts = Vec::new();
    for (a, m) in [(true, true), (true, false), (false, true), (false, false)] {
        let cfg = ModelConfig::toy().with_flags(a, m);
        let t = TrainConfig {
            iterations: 1,
            ..TrainConfig::toy()
        };
        let mut trainer = Trainer::new(cfg.clone(), t, toy_pairs(2, 64, 6)).map_err(|e| e.to_string())?;
        let loss = trainer.step().map_err(|e| e.to_string())?;
        if !loss.is_finite() {
            return Err(format!("arm att={a} mod={m}: loss {loss}"));
        }
        counts.push(trainer.network().param_count());
    }
    let ok = counts[0] > counts[1] && counts[0] > counts[2] && counts[1] > counts[3] && counts[2] > counts[3];
    check(
        ok,
        format!(
            "both {}, attention-only {}, modulation-only {}, neither {}",
            counts[0], counts[1], counts[2], counts[3]
        ),
    )
}

struct ToyRun {
    outcome: TrainOutcome,
    bytes: Vec<u8>,
    gain: f64,
    detail: String,
}

fn toy_run(dir: &std::path::Path) -> Result<ToyRun, String> {
    let e = |e: dimosr_core::Error| e.to_string();
    let src = dir.join("hr");
    std::fs::create_dir_all(&src).map_err(|e| e.to_string())?;
    for i in 0..12 {
        save_png(&synthetic_image(1, i, 96, 96), src.join(format!("train{i:02}.png"))).map_err(e)?;
    }
    let out = dir.join("ingested");
    std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    let (manifest, issues) = ingest(&src, 2, &out, 0).map_err(e)?;
    if !issues.is_empty() {
        return Err(format!("ingest issues: {issues:?}"));
    }
    manifest.save(&out.join("manifest.json")).map_err(e)?;
    let pairs = DatasetManifest::load(&out.join("manifest.json")).map_err(e)?.load_pairs().map_err(e)?;
    let held_out = {
        let hr = synthetic_image(1, 100, 128, 128);
        let (hr, lr) = degrade(&hr, 2).map_err(e)?;
        vec![ImagePair::new("held-out", hr, lr, 2).map_err(e)?]
    };
    let protocol = EvalProtocol::for_scale(2);
    let base = evaluate_bicubic(&held_out, 2, &protocol).map_err(e)?;
    let start = Instant::now();
    let outcome = train(
        ModelConfig::toy(),
        TrainConfig::toy(),
        pairs,
        &[],
        &RunOutputs {
            log: Some(dir.join("metrics.jsonl")),
            checkpoint_dir: Some(dir.to_path_buf()),
        },
    )
    .map_err(e)?;
    let model = evaluate(&outcome.checkpoint.network, &held_out, &protocol).map_err(e)?;
    let bytes = std::fs::read(dir.join("final.dmsr")).map_err(|e| e.to_string())?;
    let gain = model.psnr - base.psnr;
    let detail = format!(
        "model {:.3} dB vs bicubic {:.3} dB (gain {gain:+.3} dB) after {} iterations in {:.0}s",
        model.psnr,
        base.psnr,
        outcome.losses.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(ToyRun {
        outcome,
        bytes,
        gain,
        detail,
    })
}

fn c7_toy(run: &Result<ToyRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    check(run.gain >= 0.3, run.detail.clone())
}

fn c8_determinism(first: &Result<ToyRun, String>) -> Outcome {
    let first = first.as_ref().map_err(Clone::clone)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = toy_run(dir.path())?;
    let same_losses = first.outcome.losses == second.outcome.losses;
    let same_bytes = first.bytes == second.bytes;
    check(
        same_losses && same_bytes,
        format!(
            "{} losses identical: {same_losses}; final checkpoints ({} bytes) identical: {same_bytes}",
            first.outcome.losses.len(),
            first.bytes.len()
        ),
    )
}

fn c9_metrics() -> Outcome {
    let e = |e: dimosr_core::Error| e.to_string();
    let rgb = EvalProtocol {
        border_crop: 2,
        y_only: false,
    };
    let a = random([1, 3, 24, 24], 90, 0.1, 0.8);
    let b = a.map(|v| v + 0.1);
    let p_uniform = psnr(&a, &b, &rgb).map_err(e)?;
    let y = random([1, 1, 24, 24], 91, 0.1, 0.8);
    let p_luma = psnr(&y, &y.map(|v| v - 0.1), &EvalProtocol::for_scale(2)).map_err(e)?;
    let s_self = ssim(&a, &a, &EvalProtocol::for_scale(2)).map_err(e)?;

    let protocol = EvalProtocol::for_scale(3);
    let mut worst = 0.0f64;
    for k in 0..3 {
        let x = random([1, 3, 30, 26], 92 + 2 * k, 0.0, 1.0);
        let z = random([1, 3, 30, 26], 93 + 2 * k, 0.0, 1.0);
        let z = x.zip_map(&z, "mix", |p, q| 0.8 * p + 0.2 * q).map_err(e)?;
        let luma = |t: &Tensor<f64>| -> Vec<f64> {
            let mut v = Vec::new();
            for r in 3..27 {
                for c in 3..23 {
                    v.push(common::luma(t.at(0, 0, r, c), t.at(0, 1, r, c), t.at(0, 2, r, c)));
                }
            }
            v
        };
        let (lx, lz) = (luma(&x), luma(&z));
        worst = worst.max((psnr(&x, &z, &protocol).map_err(e)? - common::naive_psnr(&lx, &lz)).abs());
        worst = worst.max((ssim(&x, &z, &protocol).map_err(e)? - common::naive_ssim(&lx, &lz, 24, 20)).abs());
    }
    let y_black = rgb_to_y(&Tensor::<f64>::zeros([1, 3, 1, 1])).map_err(e)?.data()[0];
    let ok = (p_uniform - 20.0).abs() <= 1e-4
        && (p_luma - 20.0).abs() <= 1e-4
        && s_self == 1.0
        && worst <= 1e-6
        && (y_black - 16.0 / 255.0).abs() < 1e-12;
    check(
        ok,
        format!(
            "uniform 0.1 error: {p_uniform:.6} dB (RGB), {p_luma:.6} dB (luma); SSIM(x,x) = {s_self}; \
             max deviation from scalar loops {worst:.1e}"
        ),
    )
}

fn c10_checkpoint(trained: Option<&Checkpoint>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e = |e: dimosr_core::Error| e.to_string();
    let fresh;
    let ck = match trained {
        Some(c) => c,
        None => {
            let mut t = Trainer::new(
                ModelConfig::toy(),
                TrainConfig {
                    iterations: 2,
                    ..TrainConfig::toy()
                },
                toy_pairs(2, 64, 10),
            )
            .map_err(e)?;
            t.step().map_err(e)?;
            fresh = t.checkpoint();
            &fresh
        }
    };
    let (a, b) = (dir.path().join("a.dmsr"), dir.path().join("b.dmsr"));
    save_checkpoint(ck, &a).map_err(e)?;
    let loaded = load_checkpoint(&a).map_err(e)?;
    save_checkpoint(&loaded, &b).map_err(e)?;
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    check(
        ba == bb && &loaded == ck,
        format!(
            "{} bytes, optimizer state {}, files identical: {}",
            ba.len(),
            if ck.optimizer.is_some() { "included" } else { "absent" },
            ba == bb
        ),
    )
}

fn main() {
    let wanted: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let names = [
        "",
        "parameter-count calibration",
        "FLOP calibration",
        "gradient suite",
        "FFT oracle",
        "architecture oracle",
        "ablation consistency",
        "toy training beats bicubic",
        "determinism",
        "metrics validation",
        "checkpoint round-trip",
    ];
    let mut failures = 0;
    let mut report = |n: usize, start: Instant, r: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n:>2} PASS  {}: {d} [{secs:.1}s]", names[n]),
            Err(d) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {}: {d} [{secs:.1}s]", names[n]);
            }
        }
    };
    let quick: [(u32, fn() -> Outcome); 6] = [
        (1, c1_params),
        (2, c2_flops),
        (4, c4_fft),
        (5, c5_blocks),
        (6, c6_ablation),
        (9, c9_metrics),
    ];
    for (n, f) in quick {
        if run(n) {
            let t = Instant::now();
            report(n as usize, t, f());
        }
    }
    if run(3) {
        let t = Instant::now();
        report(3, t, c3_gradients());
    }
    let toy_dir = tempfile::tempdir().expect("temp dir");
    let toy = if run(7) || run(8) {
        let t = Instant::now();
        let r = toy_run(toy_dir.path());
        if run(7) {
            report(7, t, c7_toy(&r));
        }
        Some(r)
    } else {
        None
    };
    if run(8) {
        let t = Instant::now();
        report(8, t, c8_determinism(toy.as_ref().expect("toy run")));
    }
    if run(10) {
        let t = Instant::now();
        let trained = toy.as_ref().and_then(|r| r.as_ref().ok()).map(|r| &r.outcome.checkpoint);
        report(10, t, c10_checkpoint(trained));
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all selected criteria passed");
}

