//! Alternating adversarial training: one discriminator update and one
//! generator update per batch, checkpoints, and evaluation helpers.

mod checkpoint;
mod optim;
mod probe;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, CorpusManifest, Domain, DomainSample, EpochSampler};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::losses::{
    generator_total_loss, hungarian_match, pd_discriminator_loss, pd_generator_loss, reconstruction_loss_tensor,
    smooth_labels, DomainMaps, LossWeights, MatchWeights, SmoothingScheme,
};
use crate::metrics::{evaluate_corpus, MetricsReport};
use crate::nn::generator::BACKBONE_PREFIX;
use crate::raster::{Grid, RgbImage};
use crate::nn::{
    decode_layout, input_tensor, Discriminator, DiscriminatorConfig, DiscriminatorKind, Generator, GeneratorConfig,
    ParamStore, PredictionTensors,
};

pub use checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta, DISCRIMINATOR_PREFIX, GENERATOR_PREFIX};
pub use optim::{is_decayed, GroupedAdamW};
pub use probe::{probe_alignment, probe_random_labels, roc_auc, ProbeConfig, ProbeResult, MIN_PROBE_PER_DOMAIN};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const MODEL_FILE: &str = "model.safetensors";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Combined batch size, split evenly between the domains.
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_rest: f64,
    /// Discriminator rate; `lr_rest` when absent.
    pub lr_discriminator: Option<f64>,
    /// First epoch run at the dropped rate.
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub n_per_domain: usize,
    pub weights: LossWeights,
    pub smoothing: SmoothingScheme,
    pub matching: MatchWeights,
    pub disc: DiscriminatorConfig,
    pub generator: GeneratorConfig,
    pub seed: u64,
    pub desk_scale: bool,
    pub weight_decay: f64,
    /// Global gradient-norm limit for the generator.
    pub grad_clip: Option<f64>,
    /// Minimum class probability for a query to become a layout element.
    pub score_threshold: f64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Full-scale schedule: 300 epochs, batch 128, rates 1e-5 / 1e-4 dropped
    /// tenfold after epoch 200, 8000 samples per domain per epoch.
    pub fn full_scale() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            lr_backbone: 1e-5,
            lr_rest: 1e-4,
            lr_discriminator: None,
            lr_drop_epoch: 200,
            lr_drop_factor: 0.1,
            n_per_domain: 8000,
            weights: LossWeights::default(),
            smoothing: SmoothingScheme::OneTarget,
            matching: MatchWeights::default(),
            disc: DiscriminatorConfig::default(),
            generator: GeneratorConfig::default(),
            seed: 0,
            desk_scale: false,
            weight_decay: 1e-4,
            grad_clip: Some(0.1),
            score_threshold: 0.5,
            checkpoint_every: 50,
        }
    }

    /// CPU-sized schedule for 64×64 synthetic corpora.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr_backbone: 2e-4,
            lr_rest: 2e-4,
            lr_discriminator: Some(1e-3),
            lr_drop_epoch: 20,
            n_per_domain: 64,
            desk_scale: true,
            grad_clip: Some(1.0),
            checkpoint_every: 0,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.n_per_domain == 0 {
            return bad("epochs, batch_size and n_per_domain must be positive".into());
        }
        if self.lr_drop_epoch >= self.epochs {
            return bad(format!("lr_drop_epoch {} must be below epochs {}", self.lr_drop_epoch, self.epochs));
        }
        let rates = [self.lr_backbone, self.lr_rest, self.lr_discriminator.unwrap_or(self.lr_rest)];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad(format!("learning rates must be positive: {rates:?}"));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return bad(format!("lr_drop_factor {} outside (0, 1]", self.lr_drop_factor));
        }
        if self.weight_decay < 0.0 || self.grad_clip.is_some_and(|c| c <= 0.0) {
            return bad("weight_decay must be non-negative and grad_clip positive".into());
        }
        if !(0.0..1.0).contains(&self.score_threshold) {
            return bad(format!("score_threshold {} outside [0, 1)", self.score_threshold));
        }
        self.weights.validate()?;
        self.matching.validate()?;
        self.disc.validate()?;
        self.generator.validate()
    }

    /// Learning-rate multiplier in effect during `epoch`.
    pub fn lr_factor(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_drop_epoch {
            self.lr_drop_factor
        } else {
            1.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Discriminator,
    Generator,
}

/// One log record. Loss fields absent from a pass are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub pass: Pass,
    pub epoch: usize,
    pub step: usize,
    pub lr_backbone: f64,
    pub lr_rest: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_pd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_pd_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_rec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_g_total: Option<f64>,
    pub source_absent: bool,
    pub target_absent: bool,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ids: Vec<String>,
}

impl StepStats {
    fn check_finite(&self) -> Result<()> {
        let vals = [self.l_pd, self.l_pd_g, self.l_rec, self.l_g_total, Some(self.grad_norm)];
        if vals.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            log::error!("non-finite step: {self:?}");
            Err(Error::NonFinite(format!(
                "{:?} pass, epoch {}, step {}: l_pd={:?} l_pd_g={:?} l_rec={:?} l_g_total={:?} grad_norm={} ids={:?}",
                self.pass,
                self.epoch,
                self.step,
                self.l_pd,
                self.l_pd_g,
                self.l_rec,
                self.l_g_total,
                self.grad_norm,
                self.ids
            )))
        }
    }
}

/// Tensors for one batch, split by domain.
pub struct PreparedBatch<'a> {
    pub samples: Vec<&'a DomainSample>,
    pub input: Tensor,
    source_rows: Option<Tensor>,
    target_rows: Option<Tensor>,
    source_targets: Option<Tensor>,
    target_targets: Option<Tensor>,
    source_layouts: Vec<&'a Layout>,
}

impl PreparedBatch<'_> {
    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }
}

fn pick(t: &Tensor, rows: &Option<Tensor>) -> Result<Option<Tensor>> {
    rows.as_ref().map(|r| Ok(t.index_select(r, 0)?)).transpose()
}

/// Generator, discriminator and their optimizers.
pub struct Trainer {
    pub config: TrainConfig,
    pub image_dims: (usize, usize),
    pub gen_store: ParamStore,
    pub disc_store: ParamStore,
    pub generator: Generator,
    pub discriminator: Discriminator,
    gen_opt: GroupedAdamW,
    disc_opt: GroupedAdamW,
    lr_factor: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig, image_dims: (usize, usize)) -> Result<Self> {
        Self::with_dtype(config, image_dims, DType::F32)
    }

    pub fn with_dtype(config: TrainConfig, image_dims: (usize, usize), dtype: DType) -> Result<Self> {
        config.validate()?;
        let gen_store = ParamStore::new(dtype, config.seed);
        let disc_store = ParamStore::new(dtype, config.seed.wrapping_add(1));
        let generator = Generator::new(config.generator.clone(), &gen_store.root())?;
        let channels = generator.feature_channels(config.disc.feature_level);
        let discriminator = Discriminator::new(config.disc, channels, &disc_store.root())?;
        let (lb, lr) = (config.lr_backbone, config.lr_rest);
        let gen_opt = GroupedAdamW::new(
            &gen_store,
            |name| if name.starts_with(BACKBONE_PREFIX) { lb } else { lr },
            config.weight_decay,
            config.grad_clip,
        )?;
        let ld = config.lr_discriminator.unwrap_or(lr);
        let disc_opt = GroupedAdamW::new(&disc_store, |_| ld, config.weight_decay, None)?;
        Ok(Self {
            config,
            image_dims,
            gen_store,
            disc_store,
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            lr_factor: 1.0,
        })
    }

    /// Rebuilds a trainer from a checkpoint with fresh optimizer state.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let t = Self::new(ckpt.meta.config.clone(), ckpt.meta.image_dims)?;
        ckpt.restore(GENERATOR_PREFIX, &t.gen_store)?;
        ckpt.restore(DISCRIMINATOR_PREFIX, &t.disc_store)?;
        Ok(t)
    }

    pub fn save(&self, path: &Path, epochs_done: usize) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            image_dims: self.image_dims,
            epochs_done,
        };
        save_checkpoint(path, &self.gen_store, &self.disc_store, &meta)
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr_factor = self.config.lr_factor(epoch);
        self.gen_opt.set_lr_factor(self.lr_factor);
        self.disc_opt.set_lr_factor(self.lr_factor);
    }

    /// Current effective `(backbone, rest)` generator rates.
    pub fn learning_rates(&self) -> (f64, f64) {
        (self.config.lr_backbone * self.lr_factor, self.config.lr_rest * self.lr_factor)
    }

    fn label_map(&self, s: &DomainSample) -> Result<Vec<f32>> {
        let w = &self.config.weights;
        let scheme = self.config.smoothing;
        Ok(match self.config.disc.kind {
            DiscriminatorKind::Global => vec![scheme.apply(s.domain == Domain::Source, w) as f32],
            DiscriminatorKind::Pixel => smooth_labels(s.white_patch.values(), scheme, w)?.data,
            DiscriminatorKind::Patch => {
                let (ph, pw) = self.config.disc.output_dims(self.image_dims);
                smooth_labels(s.white_patch.values(), scheme, w)?.resize_area(ph, pw).data
            }
        })
    }

    pub fn prepare_batch<'a>(&self, samples: &[&'a DomainSample]) -> Result<PreparedBatch<'a>> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for s in samples {
            if s.dims() != self.image_dims {
                return Err(Error::Shape(format!("sample {} is {:?}, model expects {:?}", s.id, s.dims(), self.image_dims)));
            }
        }
        let dtype = self.gen_store.dtype();
        let dev = Device::Cpu;
        let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
        let sal: Vec<_> = samples.iter().map(|s| &s.saliency).collect();
        let input = input_tensor(&images, &sal, dtype, &dev)?;
        let (oh, ow) = self.config.disc.output_dims(self.image_dims);
        let mut rows = [Vec::new(), Vec::new()];
        let mut maps = [Vec::new(), Vec::new()];
        let mut source_layouts = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let d = usize::from(s.domain == Domain::Target);
            rows[d].push(i as u32);
            maps[d].extend(self.label_map(s)?);
            if s.domain == Domain::Source {
                let layout = s
                    .gt_layout
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput(format!("source sample {} has no layout", s.id)))?;
                if layout.len() > self.config.generator.n_queries {
                    return Err(Error::Config(format!(
                        "sample {} has {} elements but only {} queries",
                        s.id,
                        layout.len(),
                        self.config.generator.n_queries
                    )));
                }
                source_layouts.push(layout);
            }
        }
        let [src_rows, tgt_rows] = rows;
        let [src_maps, tgt_maps] = maps;
        let mk_rows = |r: Vec<u32>| -> Result<Option<Tensor>> {
            if r.is_empty() {
                return Ok(None);
            }
            let n = r.len();
            Ok(Some(Tensor::from_vec(r, n, &dev)?))
        };
        let mk_maps = |m: Vec<f32>| -> Result<Option<Tensor>> {
            if m.is_empty() {
                return Ok(None);
            }
            let n = m.len() / (oh * ow);
            Ok(Some(Tensor::from_vec(m, (n, 1, oh, ow), &dev)?.to_dtype(dtype)?))
        };
        Ok(PreparedBatch {
            samples: samples.to_vec(),
            input,
            source_rows: mk_rows(src_rows)?,
            target_rows: mk_rows(tgt_rows)?,
            source_targets: mk_maps(src_maps)?,
            target_targets: mk_maps(tgt_maps)?,
            source_layouts,
        })
    }

    fn stats(&self, pass: Pass, epoch: usize, step: usize, batch: &PreparedBatch) -> StepStats {
        let (lb, lr) = self.learning_rates();
        StepStats {
            pass,
            epoch,
            step,
            lr_backbone: lb,
            lr_rest: lr,
            l_pd: None,
            l_pd_g: None,
            l_rec: None,
            l_g_total: None,
            source_absent: batch.source_rows.is_none(),
            target_absent: batch.target_rows.is_none(),
            grad_norm: 0.0,
            ids: Vec::new(),
        }
    }

    /// Updates only the discriminator. Generator features are computed but
    /// cut from the graph.
    pub fn train_step_discriminator(&mut self, batch: &PreparedBatch, epoch: usize, step: usize) -> Result<StepStats> {
        let pyramid = self.generator.extract_features(&batch.input)?;
        let features = self.config.disc.feature_level.select(&pyramid).detach();
        let map = self.discriminator.forward_features(&features, self.image_dims)?;
        let pred_s = pick(&map, &batch.source_rows)?;
        let pred_t = pick(&map, &batch.target_rows)?;
        let maps = |p: &Option<Tensor>, t: &Option<Tensor>| -> Option<(Tensor, Tensor)> { p.clone().zip(t.clone()) };
        let src = maps(&pred_s, &batch.source_targets);
        let tgt = maps(&pred_t, &batch.target_targets);
        let loss = pd_discriminator_loss(
            src.as_ref().map(|(pred, target)| DomainMaps { pred, target }),
            tgt.as_ref().map(|(pred, target)| DomainMaps { pred, target }),
            &self.config.weights,
        )?;
        let mut st = self.stats(Pass::Discriminator, epoch, step, batch);
        st.ids = batch.ids();
        st.l_pd = Some(loss.value()?);
        st.check_finite()?;
        let mut grads = loss.loss.backward()?;
        st.grad_norm = self.disc_opt.step(&mut grads)?;
        Ok(st)
    }

    /// Updates only the generator against reconstruction on source samples
    /// plus the weighted adversarial term through a frozen discriminator.
    pub fn train_step_generator(&mut self, batch: &PreparedBatch, epoch: usize, step: usize) -> Result<StepStats> {
        let w = self.config.weights;
        let (pyramid, pred) = self.generator.forward(&batch.input)?;
        let frozen = self.discriminator.detached();
        let features = self.config.disc.feature_level.select(&pyramid);
        let map = frozen.forward_features(features, self.image_dims)?;
        let pred_s = pick(&map, &batch.source_rows)?;
        let pred_t = pick(&map, &batch.target_rows)?;
        let tgt = pred_t.clone().zip(batch.target_targets.clone());
        let pd_g = pd_generator_loss(
            pred_s.as_ref(),
            tgt.as_ref().map(|(pred, target)| DomainMaps { pred, target }),
            &w,
        )?;
        let mut st = self.stats(Pass::Generator, epoch, step, batch);
        let l_pd_g = pd_g.value()?;
        st.l_pd_g = Some(l_pd_g);

        let rec = match &batch.source_rows {
            Some(rows) => {
                let src_pred = PredictionTensors {
                    logits: pred.logits.index_select(rows, 0)?,
                    boxes: pred.boxes.index_select(rows, 0)?,
                };
                let assignments = src_pred
                    .to_predictions()?
                    .iter()
                    .zip(&batch.source_layouts)
                    .map(|(p, gt)| hungarian_match(p, gt, &self.config.matching))
                    .collect::<Result<Vec<_>>>()?;
                let (t, terms) =
                    reconstruction_loss_tensor(&src_pred, &batch.source_layouts, &assignments, &self.config.matching)?;
                Some((t, terms.total(&self.config.matching)))
            }
            None => None,
        };
        let l_rec = rec.as_ref().map_or(0.0, |r| r.1);
        st.l_rec = rec.as_ref().map(|r| r.1);
        st.l_g_total = Some(generator_total_loss(l_rec, l_pd_g, &w)?);
        st.check_finite()?;

        let objective = match (rec, w.gamma > 0.0) {
            (Some((r, _)), true) => Some((r + (pd_g.loss * w.gamma)?)?),
            (Some((r, _)), false) => Some(r),
            (None, true) => Some((pd_g.loss * w.gamma)?),
            (None, false) => None,
        };
        if let Some(obj) = objective {
            let mut grads = obj.backward()?;
            st.grad_norm = self.gen_opt.step(&mut grads)?;
        }
        Ok(st)
    }
}

/// Result of a full run.
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<StepStats>,
}

/// Runs the full schedule on the ids named by `manifest`. With `out_dir`,
/// writes the JSON-lines log, periodic checkpoints and the final model.
pub fn train(config: &TrainConfig, corpus: &Corpus, manifest: &CorpusManifest, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    manifest.validate()?;
    let dims = corpus.manifest.image_dims;
    if manifest.image_dims != dims {
        return Err(Error::Config(format!("manifest dims {:?} vs corpus dims {dims:?}", manifest.image_dims)));
    }
    for id in manifest.source_ids.iter().chain(&manifest.target_ids) {
        let s = corpus.require(id)?;
        let expected = if manifest.source_ids.contains(id) { Domain::Source } else { Domain::Target };
        if s.domain != expected {
            return Err(Error::Config(format!("sample {id} listed under the wrong domain")));
        }
    }
    let sampler = EpochSampler::new(manifest, config.n_per_domain, config.seed, false)?;
    let mut trainer = Trainer::new(config.clone(), dims)?;

    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join(LOG_FILE))?))
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        trainer.set_epoch(epoch);
        let ids = sampler.epoch(epoch);
        for chunk in ids.chunks(config.batch_size) {
            let samples = corpus.select(chunk)?;
            let batch = trainer.prepare_batch(&samples)?;
            let d = trainer.train_step_discriminator(&batch, epoch, step)?;
            let g = trainer.train_step_generator(&batch, epoch, step)?;
            for rec in [d, g] {
                if let Some(w) = writer.as_mut() {
                    serde_json::to_writer(&mut *w, &rec)?;
                    w.write_all(b"\n")?;
                }
                log.push(rec);
            }
            step += 1;
        }
        log::info!("epoch {epoch} done, {step} steps");
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
                trainer.save(&dir.join("checkpoints").join(format!("epoch_{:04}.safetensors", epoch + 1)), epoch + 1)?;
            }
        }
    }
    if let Some(mut w) = writer {
        w.flush()?;
    }
    if let Some(dir) = out_dir {
        trainer.save(&dir.join(MODEL_FILE), config.epochs)?;
    }
    Ok(TrainOutcome { trainer, log })
}

const EVAL_BATCH: usize = 16;

/// Decoded layouts for `samples`, in order.
pub fn predict_layouts(generator: &Generator, samples: &[&DomainSample], score_threshold: f64, dtype: DType) -> Result<Vec<Layout>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let sal: Vec<_> = chunk.iter().map(|s| &s.saliency).collect();
        let x = input_tensor(&images, &sal, dtype, &Device::Cpu)?;
        let (_, pred) = generator.forward(&x)?;
        for (p, s) in pred.to_predictions()?.iter().zip(chunk) {
            out.push(decode_layout(p, score_threshold, &s.id)?);
        }
    }
    Ok(out)
}

/// Decoded layout for a single image.
pub fn predict_layout(generator: &Generator, image: &RgbImage, saliency: &Grid, score_threshold: f64, dtype: DType, id: &str) -> Result<Layout> {
    let x = input_tensor(&[image], &[saliency], dtype, &Device::Cpu)?;
    let (_, pred) = generator.forward(&x)?;
    decode_layout(&pred.to_predictions()?[0], score_threshold, id)
}

/// Metrics of the trainer's generator on `samples`.
pub fn evaluate(trainer: &Trainer, samples: &[&DomainSample]) -> Result<(Vec<Layout>, MetricsReport)> {
    let layouts = predict_layouts(&trainer.generator, samples, trainer.config.score_threshold, trainer.gen_store.dtype())?;
    let report = evaluate_corpus(&layouts, samples)?;
    Ok((layouts, report))
}
