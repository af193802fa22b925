//! Layout generator: residual CNN backbone over image ⊕ saliency, a fused
//! multi-scale map fed to a transformer encoder-decoder driven by learned
//! element queries, and class / box heads.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{log_softmax_last, sigmoid, softmax_last, Conv2d, LayerNorm, Linear};
use super::params::{Init, ParamPath};
use super::resize::resize_bilinear;
use crate::error::{shape_err, Error, Result};
use crate::layout::{BBox, Category, Layout, LayoutElement};
use crate::raster::{Grid, RgbImage};

/// Number of class slots per query: the element categories plus no-object.
pub const NUM_CLASSES: usize = Category::COUNT + 1;

/// Parameter-name prefix of the backbone (the slower learning-rate group).
pub const BACKBONE_PREFIX: &str = "backbone.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub stem_channels: usize,
    pub block_channels: [usize; 4],
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub n_queries: usize,
    /// Reserved; backbones are always trained from scratch.
    #[serde(default)]
    pub pretrained_backbone: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            stem_channels: 32,
            block_channels: [32, 64, 128, 256],
            d_model: 128,
            n_heads: 4,
            ffn_dim: 256,
            encoder_layers: 2,
            decoder_layers: 2,
            n_queries: 8,
            pretrained_backbone: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 4 != 0 {
            return Err(Error::Config("d_model must be divisible by 4 for 2-D positional encoding".into()));
        }
        if self.n_queries == 0 {
            return Err(Error::Config("n_queries must be positive".into()));
        }
        if self.pretrained_backbone {
            return Err(Error::Config("pretrained backbones are not supported".into()));
        }
        Ok(())
    }
}

/// Spatial dims after one 3×3 stride-2 convolution with padding 1.
pub fn halve(n: usize) -> usize {
    n.div_ceil(2)
}

/// Spatial dims of pyramid level `k` (1-based) for an `h × w` input.
pub fn level_dims(k: usize, (h, w): (usize, usize)) -> (usize, usize) {
    let (mut h, mut w) = (halve(h), halve(w));
    for _ in 0..k {
        h = halve(h);
        w = halve(w);
    }
    (h, w)
}

/// Backbone outputs for one forward pass.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    /// Levels 1–4; level 1 is the shallow stride-4 map.
    pub levels: [Tensor; 4],
    /// Fusion of all four levels at level-2 resolution, `d_model` channels.
    pub fused: Tensor,
}

impl FeaturePyramid {
    pub fn shallow(&self) -> &Tensor {
        &self.levels[0]
    }

    pub fn deep(&self) -> &Tensor {
        &self.levels[3]
    }
}

/// Raw head outputs for a batch: logits `(B, N_q, K+1)` and boxes
/// `(B, N_q, 4)` in `(cx, cy, w, h)` form.
#[derive(Clone, Debug)]
pub struct PredictionTensors {
    pub logits: Tensor,
    pub boxes: Tensor,
}

impl PredictionTensors {
    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.logits.dim(0)?)
    }

    pub fn log_probs(&self) -> Result<Tensor> {
        log_softmax_last(&self.logits)
    }

    /// Detached per-image predictions.
    pub fn to_predictions(&self) -> Result<Vec<LayoutPrediction>> {
        let probs = softmax_last(&self.logits.detach())?.to_dtype(DType::F64)?.to_vec3::<f64>()?;
        let boxes = self.boxes.detach().to_dtype(DType::F64)?.to_vec3::<f64>()?;
        probs
            .into_iter()
            .zip(boxes)
            .map(|(p, b)| {
                let class_probs = p
                    .into_iter()
                    .map(|row| row.try_into().map_err(|_| Error::Shape("class row width".into())))
                    .collect::<Result<Vec<[f64; NUM_CLASSES]>>>()?;
                let boxes = b.into_iter().map(|r| BBox::new(r[0], r[1], r[2], r[3])).collect();
                Ok(LayoutPrediction { class_probs, boxes })
            })
            .collect()
    }
}

/// Set prediction for one image: one normalized class distribution and one
/// box per query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutPrediction {
    pub class_probs: Vec<[f64; NUM_CLASSES]>,
    pub boxes: Vec<BBox>,
}

impl LayoutPrediction {
    pub fn n_queries(&self) -> usize {
        self.class_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_probs.len() != self.boxes.len() {
            return shape_err(format!("{} class rows vs {} boxes", self.class_probs.len(), self.boxes.len()));
        }
        Ok(())
    }
}

/// Keeps queries whose arg-max class is a real category with probability at
/// least `score_threshold`; boxes are clamped into the unit square and the
/// result is order-normalized.
pub fn decode_layout(pred: &LayoutPrediction, score_threshold: f64, image_id: &str) -> Result<Layout> {
    if !(0.0..1.0).contains(&score_threshold) {
        return Err(Error::InvalidInput(format!("score threshold {score_threshold} outside [0, 1)")));
    }
    pred.validate()?;
    let mut elements = Vec::new();
    for (probs, bbox) in pred.class_probs.iter().zip(&pred.boxes) {
        let (best, p) = probs
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
        let Some(category) = Category::from_index(best) else {
            continue;
        };
        if p < score_threshold {
            continue;
        }
        if let Some(e) = LayoutElement::clamped(category, *bbox) {
            elements.push(e);
        }
    }
    Ok(Layout::new(image_id, elements).normalized())
}

/// Packs images and saliency maps into a `(B, 4, H, W)` tensor.
pub fn input_tensor(images: &[&RgbImage], saliency: &[&Grid], dtype: DType, device: &Device) -> Result<Tensor> {
    if images.len() != saliency.len() || images.is_empty() {
        return shape_err(format!("{} images vs {} saliency maps", images.len(), saliency.len()));
    }
    let (h, w) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * 4 * h * w);
    for (img, sal) in images.iter().zip(saliency) {
        if img.dims() != (h, w) || sal.dims() != (h, w) {
            return shape_err(format!("batch mixes dims {:?}/{:?} with {h}x{w}", img.dims(), sal.dims()));
        }
        for ch in 0..3 {
            data.extend(img.data.iter().skip(ch).step_by(3));
        }
        data.extend_from_slice(&sal.data);
    }
    Ok(Tensor::from_vec(data, (images.len(), 4, h, w), device)?.to_dtype(dtype)?)
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Conv2d,
}

impl ResBlock {
    fn new(p: &ParamPath, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&p.pp("conv1"), c_in, c_out, 3, 2, 1)?,
            conv2: Conv2d::new(&p.pp("conv2"), c_out, c_out, 3, 1, 1)?,
            shortcut: Conv2d::new(&p.pp("shortcut"), c_in, c_out, 1, 2, 0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward(&self.conv1.forward(x)?.relu()?)?;
        Ok((y + self.shortcut.forward(x)?)?.relu()?)
    }
}

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    fn new(p: &ParamPath, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&p.pp("q"), d, d)?,
            k: Linear::new(&p.pp("k"), d, d)?,
            v: Linear::new(&p.pp("v"), d, d)?,
            out: Linear::new(&p.pp("out"), d, d)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, d) = x.dims3()?;
        Ok(x.reshape((b, n, self.heads, d / self.heads))?.transpose(1, 2)?.contiguous()?)
    }

    fn forward(&self, query: &Tensor, key: &Tensor, value: &Tensor) -> Result<Tensor> {
        let (b, nq, d) = query.dims3()?;
        let q = self.split(&self.q.forward(query)?)?;
        let k = self.split(&self.k.forward(key)?)?;
        let v = self.split(&self.v.forward(value)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        let attn = softmax_last(&scores)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, nq, d))?;
        self.out.forward(&ctx)
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    lin1: Linear,
    lin2: Linear,
}

impl FeedForward {
    fn new(p: &ParamPath, d: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            lin1: Linear::new(&p.pp("lin1"), d, hidden)?,
            lin2: Linear::new(&p.pp("lin2"), hidden, d)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.lin2.forward(&self.lin1.forward(x)?.relu()?)
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: Attention,
    ffn: FeedForward,
    norm1: LayerNorm,
    norm2: LayerNorm,
}

impl EncoderLayer {
    fn new(p: &ParamPath, cfg: &GeneratorConfig) -> Result<Self> {
        Ok(Self {
            attn: Attention::new(&p.pp("attn"), cfg.d_model, cfg.n_heads)?,
            ffn: FeedForward::new(&p.pp("ffn"), cfg.d_model, cfg.ffn_dim)?,
            norm1: LayerNorm::new(&p.pp("norm1"), cfg.d_model)?,
            norm2: LayerNorm::new(&p.pp("norm2"), cfg.d_model)?,
        })
    }

    fn forward(&self, src: &Tensor, pos: &Tensor) -> Result<Tensor> {
        let qk = src.broadcast_add(pos)?;
        let src = self.norm1.forward(&(src + self.attn.forward(&qk, &qk, src)?)?)?;
        self.norm2.forward(&(&src + self.ffn.forward(&src)?)?)
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: Attention,
    cross_attn: Attention,
    ffn: FeedForward,
    norm1: LayerNorm,
    norm2: LayerNorm,
    norm3: LayerNorm,
}

impl DecoderLayer {
    fn new(p: &ParamPath, cfg: &GeneratorConfig) -> Result<Self> {
        Ok(Self {
            self_attn: Attention::new(&p.pp("self_attn"), cfg.d_model, cfg.n_heads)?,
            cross_attn: Attention::new(&p.pp("cross_attn"), cfg.d_model, cfg.n_heads)?,
            ffn: FeedForward::new(&p.pp("ffn"), cfg.d_model, cfg.ffn_dim)?,
            norm1: LayerNorm::new(&p.pp("norm1"), cfg.d_model)?,
            norm2: LayerNorm::new(&p.pp("norm2"), cfg.d_model)?,
            norm3: LayerNorm::new(&p.pp("norm3"), cfg.d_model)?,
        })
    }

    fn forward(&self, tgt: &Tensor, query_pos: &Tensor, memory: &Tensor, pos: &Tensor) -> Result<Tensor> {
        let qk = (tgt + query_pos)?;
        let tgt = self.norm1.forward(&(tgt + self.self_attn.forward(&qk, &qk, tgt)?)?)?;
        let q = (&tgt + query_pos)?;
        let k = memory.broadcast_add(pos)?;
        let tgt = self.norm2.forward(&(&tgt + self.cross_attn.forward(&q, &k, memory)?)?)?;
        self.norm3.forward(&(&tgt + self.ffn.forward(&tgt)?)?)
    }
}

/// Fixed 2-D sine positional encoding, `(1, h·w, d)`: the first half of the
/// channels encodes the row, the second half the column.
pub fn sine_position_encoding(h: usize, w: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = d / 2;
    let tau = std::f64::consts::TAU;
    let mut data = Vec::with_capacity(h * w * d);
    for r in 0..h {
        for c in 0..w {
            for (coord, n) in [(r, h), (c, w)] {
                let e = (coord as f64 + 1.0) / n as f64 * tau;
                for i in 0..half {
                    let dim_t = 10000f64.powf((2 * (i / 2)) as f64 / half as f64);
                    let v = e / dim_t;
                    data.push(if i % 2 == 0 { v.sin() } else { v.cos() });
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (1, h * w, d), device)?.to_dtype(dtype)?)
}

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
    laterals: Vec<Conv2d>,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    query_embed: Tensor,
    class_head: Linear,
    box_hidden: Linear,
    box_out: Linear,
}

impl Generator {
    pub const INPUT_CHANNELS: usize = 4;

    pub fn new(cfg: GeneratorConfig, root: &ParamPath) -> Result<Self> {
        cfg.validate()?;
        let bb = root.pp("backbone");
        let stem = Conv2d::new(&bb.pp("stem"), Self::INPUT_CHANNELS, cfg.stem_channels, 3, 2, 1)?;
        let mut blocks = Vec::with_capacity(4);
        let mut c_in = cfg.stem_channels;
        for (i, &c_out) in cfg.block_channels.iter().enumerate() {
            blocks.push(ResBlock::new(&bb.pp(format!("block{}", i + 1)), c_in, c_out)?);
            c_in = c_out;
        }
        let fusion = root.pp("fusion");
        let laterals = cfg
            .block_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv2d::new(&fusion.pp(format!("lateral{}", i + 1)), c, cfg.d_model, 1, 1, 0))
            .collect::<Result<Vec<_>>>()?;
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(&root.pp("encoder").pp(i), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(&root.pp("decoder").pp(i), &cfg))
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = LayerNorm::new(&root.pp("decoder").pp("norm"), cfg.d_model)?;
        let query_embed = root.get("query_embed", &[cfg.n_queries, cfg.d_model], Init::Normal(1.0))?;
        let heads = root.pp("heads");
        let class_head = Linear::new(&heads.pp("class"), cfg.d_model, NUM_CLASSES)?;
        let box_hidden = Linear::new(&heads.pp("box_hidden"), cfg.d_model, cfg.d_model)?;
        let box_out = Linear::new(&heads.pp("box_out"), cfg.d_model, 4)?;
        Ok(Self {
            cfg,
            stem,
            blocks,
            laterals,
            encoder,
            decoder,
            decoder_norm,
            query_embed,
            class_head,
            box_hidden,
            box_out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Channel count of the map selected by `level`.
    pub fn feature_channels(&self, level: crate::nn::FeatureLevel) -> usize {
        match level {
            crate::nn::FeatureLevel::Shallow => self.cfg.block_channels[0],
            crate::nn::FeatureLevel::Deep => self.cfg.block_channels[3],
            crate::nn::FeatureLevel::Fusion => self.cfg.d_model,
        }
    }

    /// Backbone pass over a `(B, 4, H, W)` input.
    pub fn extract_features(&self, x: &Tensor) -> Result<FeaturePyramid> {
        let (_, c, h, w) = x.dims4()?;
        if c != Self::INPUT_CHANNELS {
            return shape_err(format!("expected {} input channels, got {c}", Self::INPUT_CHANNELS));
        }
        let mut feat = self.stem.forward(x)?.relu()?;
        let mut levels = Vec::with_capacity(4);
        for block in &self.blocks {
            feat = block.forward(&feat)?;
            levels.push(feat.clone());
        }
        let (fh, fw) = level_dims(2, (h, w));
        let mut fused: Option<Tensor> = None;
        for (lvl, lateral) in levels.iter().zip(&self.laterals) {
            let proj = resize_bilinear(&lateral.forward(lvl)?, fh, fw)?;
            fused = Some(match fused {
                None => proj,
                Some(acc) => (acc + proj)?,
            });
        }
        let levels: [Tensor; 4] = levels.try_into().map_err(|_| Error::Shape("pyramid depth".into()))?;
        Ok(FeaturePyramid {
            levels,
            fused: fused.expect("four levels"),
        })
    }

    /// Transformer and heads over a feature pyramid.
    pub fn forward_layout(&self, pyramid: &FeaturePyramid) -> Result<PredictionTensors> {
        let (b, d, h, w) = pyramid.fused.dims4()?;
        let dev = pyramid.fused.device();
        let dt = pyramid.fused.dtype();
        let src = pyramid.fused.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let pos = sine_position_encoding(h, w, d, dt, dev)?;
        let mut memory = src;
        for layer in &self.encoder {
            memory = layer.forward(&memory, &pos)?;
        }
        let query_pos = self.query_embed.unsqueeze(0)?.broadcast_as((b, self.cfg.n_queries, d))?.contiguous()?;
        let mut tgt = Tensor::zeros((b, self.cfg.n_queries, d), dt, dev)?;
        for layer in &self.decoder {
            tgt = layer.forward(&tgt, &query_pos, &memory, &pos)?;
        }
        let hs = self.decoder_norm.forward(&tgt)?;
        let logits = self.class_head.forward(&hs)?;
        let boxes = sigmoid(&self.box_out.forward(&self.box_hidden.forward(&hs)?.relu()?)?)?;
        Ok(PredictionTensors { logits, boxes })
    }

    pub fn forward(&self, x: &Tensor) -> Result<(FeaturePyramid, PredictionTensors)> {
        let pyramid = self.extract_features(x)?;
        let pred = self.forward_layout(&pyramid)?;
        Ok((pyramid, pred))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            stem_channels: 8,
            block_channels: [8, 8, 16, 16],
            d_model: 16,
            n_heads: 2,
            ffn_dim: 32,
            encoder_layers: 1,
            decoder_layers: 1,
            n_queries: 8,
            pretrained_backbone: false,
        }
    }

    #[test]
    fn level_dims_follow_ceil_quarter() {
        assert_eq!(level_dims(1, (64, 64)), (16, 16));
        assert_eq!(level_dims(1, (350, 240)), (88, 60));
        assert_eq!(level_dims(4, (64, 64)), (2, 2));
    }

    #[test]
    fn shapes_and_bounds() {
        let store = ParamStore::new(DType::F32, 1);
        let g = Generator::new(small_cfg(), &store.root()).unwrap();
        let x = Tensor::rand(0f32, 1.0, (2, 4, 40, 36), &Device::Cpu).unwrap();
        let (pyr, pred) = g.forward(&x).unwrap();
        assert_eq!(pyr.shallow().dims(), &[2, 8, 10, 9]);
        assert_eq!(pred.logits.dims(), &[2, 8, NUM_CLASSES]);
        assert_eq!(pred.boxes.dims(), &[2, 8, 4]);
        for p in pred.to_predictions().unwrap() {
            for row in &p.class_probs {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
            for b in &p.boxes {
                assert!(b.to_array().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn decode_thresholds() {
        let mut probs = [[0.0; NUM_CLASSES]; 3];
        for row in &mut probs {
            row[Category::NO_OBJECT] = 1.0;
        }
        let boxes = vec![BBox::new(0.5, 0.5, 0.2, 0.2); 3];
        let pred = LayoutPrediction {
            class_probs: probs.to_vec(),
            boxes: boxes.clone(),
        };
        assert!(decode_layout(&pred, 0.5, "a").unwrap().is_empty());

        probs[1] = [0.0, 0.9, 0.05, 0.0, 0.05];
        let pred = LayoutPrediction {
            class_probs: probs.to_vec(),
            boxes: boxes.clone(),
        };
        let l = decode_layout(&pred, 0.5, "a").unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.elements[0].category, Category::Text);

        let pred = LayoutPrediction {
            class_probs: vec![[0.3, 0.2, 0.2, 0.2, 0.1]; 3],
            boxes,
        };
        assert_eq!(decode_layout(&pred, 0.0, "a").unwrap().len(), 3);
        assert!(decode_layout(&pred, 1.0, "a").is_err());
    }

    #[test]
    fn input_packing_is_planar() {
        let img = RgbImage::new(1, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let sal = Grid::new(1, 2, vec![0.7, 0.8]).unwrap();
        let t = input_tensor(&[&img], &[&sal], DType::F32, &Device::Cpu).unwrap();
        let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6, 0.7, 0.8]);
    }
}
