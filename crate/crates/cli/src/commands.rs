use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use dimosr_core::autodiff::GradCheckOptions;
use dimosr_core::data::{self, load_png, modcrop, save_png, DatasetManifest, ImagePair};
use dimosr_core::gradcheck::{block_suite, model_check, op_suite, ModelCheckOptions, SuiteEntry};
use dimosr_core::metrics::EvalProtocol;
use dimosr_core::model::{flops_count, layers, load_checkpoint, LayerKind, ModelConfig};
use dimosr_core::optim::{self, evaluate, evaluate_bicubic, evaluate_with, EvalSummary, RunOutputs, Trainer};

use crate::config::RunConfig;

pub fn ingest(dir: &Path, scale: usize, out: &Path, seed: u64) -> Result<ExitCode> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (manifest, issues) = data::ingest(dir, scale, out, seed)?;
    for issue in &issues {
        log::warn!("skipped {}: {}", issue.path.display(), issue.reason);
    }
    let path = out.join("manifest.json");
    manifest.save(&path)?;
    println!(
        "wrote {}: {} images at x{scale}, {} skipped",
        path.display(),
        manifest.entries.len(),
        issues.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_manifest_pairs(path: &Path, scale: usize) -> Result<Vec<ImagePair<f32>>> {
    let m = DatasetManifest::load(path)?;
    if m.scale() != scale {
        bail!("{} is a x{} manifest, the model is x{scale}", path.display(), m.scale());
    }
    Ok(m.load_pairs()?)
}

pub fn train(cfg: &RunConfig) -> Result<ExitCode> {
    let manifest = cfg
        .paths
        .train_manifest
        .as_deref()
        .context("paths.train_manifest is not set")?;
    let out = cfg.paths.output_dir.as_deref().context("paths.output_dir is not set")?;
    let scale = cfg.model.scale;
    let pairs = load_manifest_pairs(manifest, scale)?;
    let val = cfg
        .paths
        .val_manifests
        .iter()
        .map(|(name, p)| Ok((name.clone(), load_manifest_pairs(p, scale)?)))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log = out.join("metrics.jsonl");
    let mut trainer = match &cfg.paths.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.network.config() != &cfg.model {
                bail!("{} was trained with a different model config", path.display());
            }
            log::info!("resuming from {} at iteration {}", path.display(), ck.meta.iteration);
            Trainer::resume(ck, cfg.train.clone(), pairs)?
        }
        None => {
            // A fresh run owns its log.
            if log.exists() {
                fs::remove_file(&log).with_context(|| format!("removing {}", log.display()))?;
            }
            Trainer::new(cfg.model.clone(), cfg.train.clone(), pairs)?
        }
    };
    trainer.set_eval_protocol(cfg.protocol());
    fs::write(out.join("config.toml"), cfg.to_toml()?).context("writing config.toml")?;
    log::info!(
        "training {} parameters for {} iterations",
        trainer.network().param_count(),
        cfg.train.iterations
    );
    let outcome = optim::run(
        &mut trainer,
        &val,
        &RunOutputs {
            log: Some(log),
            checkpoint_dir: Some(out.to_path_buf()),
        },
    )?;
    let tail = &outcome.checkpoint.meta.loss_tail;
    if !tail.is_empty() {
        println!(
            "finished at iteration {}: mean loss of last {} steps {:.6}",
            outcome.checkpoint.meta.iteration,
            tail.len(),
            tail.iter().sum::<f64>() / tail.len() as f64
        );
    }
    let mut latest = std::collections::BTreeMap::new();
    for (_, name, s) in &outcome.evals {
        latest.insert(name, s);
    }
    for (name, s) in latest {
        println!("{name}: PSNR {:.3} dB, SSIM {:.4}", s.psnr, s.ssim);
    }
    println!("checkpoint: {}", out.join("final.dmsr").display());
    Ok(ExitCode::SUCCESS)
}

pub enum EvalMode {
    Checkpoint(PathBuf),
    SrDir(PathBuf),
    Bicubic,
}

pub fn eval(manifest: &Path, mode: EvalMode, border_crop: Option<usize>, y_only: bool, json: bool) -> Result<ExitCode> {
    let m = DatasetManifest::load(manifest)?;
    let scale = m.scale();
    let pairs = m.load_pairs()?;
    let protocol = EvalProtocol {
        border_crop: border_crop.unwrap_or(scale),
        y_only,
    };
    let summary = match mode {
        EvalMode::Checkpoint(path) => {
            let ck = load_checkpoint(&path)?;
            if ck.network.config().scale != scale {
                bail!("checkpoint is x{}, manifest is x{scale}", ck.network.config().scale);
            }
            evaluate(&ck.network, &pairs, &protocol)?
        }
        EvalMode::Bicubic => evaluate_bicubic(&pairs, scale, &protocol)?,
        EvalMode::SrDir(dir) => sr_dir_summary(&dir, &m, &pairs, &protocol)?,
    };
    print_summary(&summary, json)?;
    Ok(ExitCode::SUCCESS)
}

fn sr_dir_summary(
    dir: &Path,
    m: &DatasetManifest,
    pairs: &[ImagePair<f32>],
    protocol: &EvalProtocol,
) -> Result<EvalSummary> {
    let scale = m.scale();
    let mut images = m.entries.iter().map(|e| dir.join(&e.path));
    Ok(evaluate_with(pairs, protocol, |_| {
        let path = images.next().expect("one entry per pair");
        let sr = load_png::<f32>(&path)?;
        // SR images at the original HR size are cropped like the HR side.
        let s = sr.shape();
        if s.h % scale != 0 || s.w % scale != 0 {
            modcrop(&sr, scale)
        } else {
            Ok(sr)
        }
    })?)
}

fn print_summary(s: &EvalSummary, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(s)?);
        return Ok(());
    }
    let width = s.images.iter().map(|i| i.id.len()).max().unwrap_or(0).max(16);
    println!("{:<width$}  {:>10}  {:>8}", "image", "PSNR (dB)", "SSIM");
    for i in &s.images {
        println!("{:<width$}  {:>10.3}  {:>8.5}", i.id, i.psnr, i.ssim);
    }
    let label = format!("mean of {}", s.images.len());
    println!("{label:<width$}  {:>10.3}  {:>8.5}", s.psnr, s.ssim);
    Ok(())
}

pub fn infer(checkpoint: &Path, input: &Path, output: &Path) -> Result<ExitCode> {
    let ck = load_checkpoint(checkpoint)?;
    let lr = load_png::<f32>(input)?;
    let sr = ck.network.infer(&lr)?.clamp(0.0, 1.0);
    save_png(&sr, output)?;
    let s = sr.shape();
    println!("wrote {} ({}x{})", output.display(), s.w, s.h);
    Ok(ExitCode::SUCCESS)
}

pub fn checkpoint_model(path: &Path) -> Result<ModelConfig> {
    Ok(load_checkpoint(path)?.network.config().clone())
}

fn human(n: f64) -> String {
    match n {
        n if n >= 1e9 => format!("{:.2}G", n / 1e9),
        n if n >= 1e6 => format!("{:.2}M", n / 1e6),
        n if n >= 1e3 => format!("{:.1}K", n / 1e3),
        n => format!("{n}"),
    }
}

pub fn inspect(model: &ModelConfig, height: usize, width: usize) -> Result<ExitCode> {
    model.validate()?;
    let specs = layers(model);
    let params: usize = specs.iter().map(|l| l.param_count()).sum();
    let flops = flops_count(model, height, width);
    let (lh, lw) = (height / model.scale, width / model.scale);
    let on = |b: bool| if b { "on" } else { "off" };
    println!(
        "model: {} channels, {} blocks in {} groups, dilations {:?}, x{}, attention {}, modulation {}",
        model.channels,
        model.num_blocks,
        model.num_groups(),
        model.dilations,
        model.scale,
        on(model.enable_attention),
        on(model.enable_modulation)
    );
    println!("parameters: {params} ({})", human(params as f64));
    println!(
        "FLOPs: {flops} ({}) for a {width}x{height} output ({lw}x{lh} input, one MAC = one FLOP)",
        human(flops as f64)
    );
    println!();
    let width_name = specs.iter().map(|l| l.name.len()).max().unwrap_or(5);
    println!(
        "{:<width_name$}  {:>4}  {:>5}  {:>5}  {:>6}  {:>8}  {:>8}  {:>10}",
        "layer", "kind", "in", "out", "kernel", "dilation", "params", "MACs"
    );
    for l in &specs {
        let macs = (l.macs_per_pixel() * lh * lw) as f64;
        match l.kind {
            LayerKind::Conv {
                c_in,
                c_out,
                kernel,
                dilation,
            } => println!(
                "{:<width_name$}  {:>4}  {c_in:>5}  {c_out:>5}  {:>6}  {dilation:>8}  {:>8}  {:>10}",
                l.name,
                "conv",
                format!("{kernel}x{kernel}"),
                l.param_count(),
                human(macs)
            ),
            LayerKind::Norm { channels } => println!(
                "{:<width_name$}  {:>4}  {channels:>5}  {channels:>5}  {:>6}  {:>8}  {:>8}  {:>10}",
                l.name,
                "norm",
                "-",
                "-",
                l.param_count(),
                "-"
            ),
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(cfg: &RunConfig, seed: u64, per_tensor: usize, skip_model: bool, json: bool) -> Result<ExitCode> {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let mut entries: Vec<SuiteEntry> = op_suite(seed, opts)?;
    entries.extend(block_suite(&cfg.model, seed, opts)?);
    if !skip_model {
        let o = ModelCheckOptions {
            seed,
            per_tensor,
            lambda: cfg.train.lambda,
            ..ModelCheckOptions::default()
        };
        entries.extend(model_check(&cfg.model, o)?);
    }
    let failed = entries.iter().filter(|e| !e.passed()).count();
    if json {
        println!("{}", serde_json::to_string_pretty(&entries)?);
    } else {
        let width = entries.iter().map(|e| e.name.len()).max().unwrap_or(4);
        for e in &entries {
            let status = if e.passed() { "ok" } else { "FAIL" };
            println!(
                "{status:<4}  {:<width$}  max rel error {:.2e}  ({} probes)",
                e.name, e.max_rel_error, e.probes
            );
        }
        println!("{} checks, {failed} failed", entries.len());
    }
    if failed > 0 {
        eprintln!("error: {failed} gradient check(s) failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
