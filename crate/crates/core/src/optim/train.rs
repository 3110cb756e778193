use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{cosine_lr, AdamState};
use crate::autodiff::{Graph, Tape};
use crate::data::{augment, bicubic_upscale, sample_patch, sample_rng, ImagePair};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim, EvalProtocol};
use crate::model::{save_checkpoint, Checkpoint, ModelConfig, Network, RngState, TrainingMeta};
use crate::signal::total_loss_on;
use crate::tensor::Tensor;

/// Optimization recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    /// Side of the square LR training patch.
    pub patch_size: usize,
    pub lr_start: f64,
    pub lr_min: f64,
    /// Weight of the spectral term in the loss.
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub augment: bool,
    /// Iterations between validation passes; 0 disables them.
    pub eval_every: u64,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Iterations between metrics-log lines.
    pub log_every: u64,
    /// How many recent losses a checkpoint keeps.
    pub loss_tail: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 500_000,
            batch_size: 24,
            patch_size: 128,
            lr_start: 1e-3,
            lr_min: 1e-5,
            lambda: 0.05,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            seed: 0,
            augment: true,
            eval_every: 5_000,
            checkpoint_every: 5_000,
            log_every: 100,
            loss_tail: 100,
        }
    }
}

impl TrainConfig {
    /// Short run for the toy network on a handful of images.
    pub fn toy() -> Self {
        TrainConfig {
            iterations: 2_000,
            batch_size: 8,
            patch_size: 24,
            lr_start: 2e-3,
            eval_every: 500,
            checkpoint_every: 0,
            log_every: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.patch_size == 0 {
            return fail("batch_size and patch_size must be positive".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_start) {
            return fail(format!(
                "need 0 <= lr_min <= lr_start, got {} and {}",
                self.lr_min, self.lr_start
            ));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }
}

/// Y-channel scores of one image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub images: Vec<ImageScore>,
    pub psnr: f64,
    pub ssim: f64,
}

impl EvalSummary {
    fn from_scores(images: Vec<ImageScore>) -> Self {
        let n = images.len().max(1) as f64;
        let psnr = images.iter().map(|s| s.psnr).sum::<f64>() / n;
        let ssim = images.iter().map(|s| s.ssim).sum::<f64>() / n;
        EvalSummary { images, psnr, ssim }
    }
}

/// Scores `sr` against `hr` for every pair, where `sr` is produced by `upscale`
/// and clamped to `[0, 1]`.
pub fn evaluate_with(
    pairs: &[ImagePair<f32>],
    protocol: &EvalProtocol,
    mut upscale: impl FnMut(&Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<EvalSummary> {
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        let sr = upscale(&p.lr)?.clamp(0.0, 1.0);
        scores.push(ImageScore {
            id: p.id.clone(),
            psnr: psnr(&sr, &p.hr, protocol)?,
            ssim: ssim(&sr, &p.hr, protocol)?,
        });
    }
    Ok(EvalSummary::from_scores(scores))
}

/// Full-image evaluation of a network.
pub fn evaluate(network: &Network<f32>, pairs: &[ImagePair<f32>], protocol: &EvalProtocol) -> Result<EvalSummary> {
    evaluate_with(pairs, protocol, |lr| network.infer(lr))
}

/// The bicubic-upsampling reference on the same pairs.
pub fn evaluate_bicubic(pairs: &[ImagePair<f32>], scale: usize, protocol: &EvalProtocol) -> Result<EvalSummary> {
    evaluate_with(pairs, protocol, |lr| bicubic_upscale(lr, scale))
}

/// Network, optimizer and sampler state of a run in progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    network: Network<f32>,
    adam: AdamState<f32>,
    cfg: TrainConfig,
    pairs: Vec<ImagePair<f32>>,
    iteration: u64,
    next_sample: u64,
    tail: VecDeque<f64>,
    protocol: EvalProtocol,
}

impl Trainer {
    /// Fresh run. Pairs too small for a patch are dropped with a warning.
    pub fn new(model: ModelConfig, cfg: TrainConfig, pairs: Vec<ImagePair<f32>>) -> Result<Self> {
        let network = Network::build(model, cfg.seed)?;
        let adam = AdamState::new(network.params(), cfg.beta1, cfg.beta2, cfg.eps);
        Self::assemble(network, adam, cfg, pairs, 0, 0, VecDeque::new())
    }

    /// Continues from a checkpoint that carries optimizer and sampler state.
    pub fn resume(checkpoint: Checkpoint, cfg: TrainConfig, pairs: Vec<ImagePair<f32>>) -> Result<Self> {
        let adam = checkpoint
            .optimizer
            .ok_or_else(|| Error::Checkpoint("no optimizer state to resume from".into()))?;
        let rng = checkpoint
            .rng
            .ok_or_else(|| Error::Checkpoint("no sampler state to resume from".into()))?;
        if rng.seed != cfg.seed {
            return Err(Error::Config(format!(
                "checkpoint was trained with seed {}, config says {}",
                rng.seed, cfg.seed
            )));
        }
        let tail = checkpoint.meta.loss_tail.into_iter().collect();
        Self::assemble(
            checkpoint.network,
            adam,
            cfg,
            pairs,
            checkpoint.meta.iteration,
            rng.next_sample,
            tail,
        )
    }

    fn assemble(
        network: Network<f32>,
        adam: AdamState<f32>,
        cfg: TrainConfig,
        pairs: Vec<ImagePair<f32>>,
        iteration: u64,
        next_sample: u64,
        tail: VecDeque<f64>,
    ) -> Result<Self> {
        cfg.validate()?;
        let scale = network.config().scale;
        let mut usable = Vec::with_capacity(pairs.len());
        for p in pairs {
            let l = p.lr.shape();
            if p.scale() != scale {
                return Err(Error::Dataset(format!("{}: pair is x{}, model is x{scale}", p.id, p.scale())));
            }
            if l.h < cfg.patch_size || l.w < cfg.patch_size {
                log::warn!(
                    "skipping {}: LR {}x{} is smaller than patch {}",
                    p.id,
                    l.h,
                    l.w,
                    cfg.patch_size
                );
                continue;
            }
            usable.push(p);
        }
        if usable.is_empty() {
            return Err(Error::Dataset("no training image is large enough for one patch".into()));
        }
        Ok(Trainer {
            protocol: EvalProtocol::for_scale(scale),
            network,
            adam,
            cfg,
            pairs: usable,
            iteration,
            next_sample,
            tail,
        })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.network
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Protocol of validation passes; defaults to the benchmark protocol for
    /// the model's scale.
    pub fn eval_protocol(&self) -> &EvalProtocol {
        &self.protocol
    }

    pub fn set_eval_protocol(&mut self, protocol: EvalProtocol) {
        self.protocol = protocol;
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.iteration, self.cfg.iterations, self.cfg.lr_start, self.cfg.lr_min)
    }

    /// Draws the next batch; sample `k` of the run always uses stream `k`.
    fn next_batch(&mut self) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut lrs = Vec::with_capacity(self.cfg.batch_size);
        let mut hrs = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let mut rng = sample_rng(self.cfg.seed, self.next_sample);
            self.next_sample += 1;
            let pair = &self.pairs[rng.gen_range(0..self.pairs.len())];
            let mut s = sample_patch(pair, self.cfg.patch_size, &mut rng)?;
            if self.cfg.augment {
                s = augment(&s, &mut rng).0;
            }
            lrs.push(s.lr);
            hrs.push(s.hr);
        }
        Ok((Tensor::stack(&lrs)?, Tensor::stack(&hrs)?))
    }

    /// Loss and parameter gradients of the model on one batch.
    pub fn loss_and_grads(
        &self,
        lr: &Tensor<f32>,
        hr: &Tensor<f32>,
    ) -> Result<(f32, indexmap::IndexMap<String, Tensor<f32>>)> {
        let mut tape = Tape::new();
        let x = tape.constant(lr.clone());
        let target = tape.constant(hr.clone());
        let sr = self.network.forward(&mut tape, &x)?;
        let loss = total_loss_on(&mut tape, sr, target, self.cfg.lambda as f32)?;
        let value = tape.value(&loss).data()[0];
        Ok((value, tape.backward(loss)?.into_params()))
    }

    /// One optimization step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let lr = self.current_lr();
        let batch_id = self.iteration;
        let (x, y) = self.next_batch()?;
        let (loss, grads) = self.loss_and_grads(&x, &y)?;
        let loss = loss as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                lr,
                batch_id,
                loss,
            });
        }
        self.adam.step(self.network.params_mut(), &grads, lr)?;
        self.iteration += 1;
        self.tail.push_back(loss);
        while self.tail.len() > self.cfg.loss_tail {
            self.tail.pop_front();
        }
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.network.clone(),
            optimizer: Some(self.adam.clone()),
            rng: Some(RngState {
                seed: self.cfg.seed,
                next_sample: self.next_sample,
            }),
            meta: TrainingMeta {
                iteration: self.iteration,
                loss_tail: self.tail.iter().copied().collect(),
            },
        }
    }
}

/// Where a run writes its artifacts. Everything is optional.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    /// Append-only JSON-lines metrics log.
    pub log: Option<PathBuf>,
    /// Directory for `latest.dmsr` and `final.dmsr`.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Loss of every iteration run by this call.
    pub losses: Vec<f64>,
    /// `(iteration, set name, summary)` of every validation pass.
    pub evals: Vec<(u64, String, EvalSummary)>,
}

struct MetricsLog(Option<BufWriter<File>>, Option<PathBuf>);

impl MetricsLog {
    fn open(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(MetricsLog(None, None)),
            Some(p) => {
                let f = File::options()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?;
                Ok(MetricsLog(Some(BufWriter::new(f)), Some(p.to_path_buf())))
            }
        }
    }

    fn write(&mut self, record: serde_json::Value) -> Result<()> {
        if let (Some(w), Some(p)) = (&mut self.0, &self.1) {
            writeln!(w, "{record}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

fn run_evals(
    trainer: &Trainer,
    val: &[(String, Vec<ImagePair<f32>>)],
) -> Result<Vec<(String, EvalSummary)>> {
    val.iter()
        .map(|(name, pairs)| Ok((name.clone(), evaluate(&trainer.network, pairs, &trainer.protocol)?)))
        .collect()
}

/// Runs `trainer` up to its configured iteration count, logging, validating
/// and checkpointing on the configured cadences.
pub fn run(trainer: &mut Trainer, val: &[(String, Vec<ImagePair<f32>>)], out: &RunOutputs) -> Result<TrainOutcome> {
    let mut log = MetricsLog::open(out.log.as_deref())?;
    if let Some(dir) = &out.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let cfg = trainer.cfg.clone();
    let mut losses = Vec::new();
    let mut evals = Vec::new();
    while trainer.iteration < cfg.iterations {
        let lr = trainer.current_lr();
        let loss = match trainer.step() {
            Ok(l) => l,
            Err(e @ Error::NonFinite { .. }) => {
                log.write(json!({ "iteration": trainer.iteration, "lr": lr, "abort": e.to_string() }))?;
                if let Some(dir) = &out.checkpoint_dir {
                    save_checkpoint(&trainer.checkpoint(), dir.join("abort.dmsr"))?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        losses.push(loss);
        let it = trainer.iteration;
        let last = it == cfg.iterations;
        let mut record = json!({ "iteration": it, "lr": lr, "loss": loss });
        let mut emit = cfg.log_every > 0 && it.is_multiple_of(cfg.log_every) || last;
        if !val.is_empty() && (cfg.eval_every > 0 && it.is_multiple_of(cfg.eval_every) || last) {
            let mut scores = serde_json::Map::new();
            for (name, summary) in run_evals(trainer, val)? {
                log::info!("iter {it}: {name} PSNR {:.3} dB SSIM {:.4}", summary.psnr, summary.ssim);
                scores.insert(name.clone(), json!({ "psnr": summary.psnr, "ssim": summary.ssim }));
                evals.push((it, name, summary));
            }
            record["eval"] = serde_json::Value::Object(scores);
            emit = true;
        }
        if emit {
            log::info!("iter {it} lr {lr:.3e} loss {loss:.6}");
            log.write(record)?;
        }
        if let Some(dir) = &out.checkpoint_dir {
            if cfg.checkpoint_every > 0 && it.is_multiple_of(cfg.checkpoint_every) && !last {
                save_checkpoint(&trainer.checkpoint(), dir.join("latest.dmsr"))?;
            }
        }
    }
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = &out.checkpoint_dir {
        save_checkpoint(&checkpoint, dir.join("final.dmsr"))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        losses,
        evals,
    })
}

/// Builds a trainer from scratch and runs it to completion.
pub fn train(
    model: ModelConfig,
    cfg: TrainConfig,
    pairs: Vec<ImagePair<f32>>,
    val: &[(String, Vec<ImagePair<f32>>)],
    out: &RunOutputs,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, cfg, pairs)?;
    run(&mut trainer, val, out)
}
