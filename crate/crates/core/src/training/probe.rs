//! Feature-alignment probe: a fresh per-location logistic regression on
//! frozen shallow generator features, trained to find inpainted pixels.
//! Its pixel-level ROC-AUC on held-out images measures how much domain
//! evidence the features still carry.

use candle_core::{DType, Device};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, DomainSample};
use crate::error::{Error, Result};
use crate::nn::{input_tensor, Generator};
use crate::raster::Grid;

pub const MIN_PROBE_PER_DOMAIN: usize = 20;
const FEATURE_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Newton iterations.
    pub iterations: usize,
    /// L2 penalty on the non-bias weights.
    pub ridge: f64,
    /// Seed for the random-label control.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            ridge: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub auc: f64,
    pub n_train_images: usize,
    pub n_eval_images: usize,
}

/// ROC-AUC via the rank-sum statistic; tied scores share their mean rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("probe score".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mean_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Shallow feature maps, one `(channels × h × w)` buffer per sample.
struct Features {
    maps: Vec<Vec<f64>>,
    channels: usize,
    dims: (usize, usize),
}

fn shallow_features(generator: &Generator, samples: &[&DomainSample]) -> Result<Features> {
    let mut maps = Vec::with_capacity(samples.len());
    let (mut channels, mut dims) = (0, (0, 0));
    for chunk in samples.chunks(FEATURE_BATCH) {
        let images: Vec<_> = chunk.iter().map(|s| &s.image).collect();
        let sal: Vec<_> = chunk.iter().map(|s| &s.saliency).collect();
        let x = input_tensor(&images, &sal, DType::F32, &Device::Cpu)?;
        let f = generator.extract_features(&x)?.shallow().to_dtype(DType::F64)?;
        let (b, c, h, w) = f.dims4()?;
        (channels, dims) = (c, (h, w));
        let flat = f.flatten_all()?.to_vec1::<f64>()?;
        maps.extend((0..b).map(|i| flat[i * c * h * w..(i + 1) * c * h * w].to_vec()));
    }
    Ok(Features { maps, channels, dims })
}

/// Per-location rows `[x_1 .. x_C, 1]` of one feature buffer.
fn rows(map: &[f64], channels: usize, n_loc: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..n_loc).map(move |p| {
        let mut r: Vec<f64> = (0..channels).map(|c| map[c * n_loc + p]).collect();
        r.push(1.0);
        r
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major).
fn cholesky_solve(mut a: Vec<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NonFinite("probe Hessian is not positive definite".into()));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}

/// Ridge logistic regression with soft targets, fit by Newton's method on
/// standardized inputs. Returns weights for the raw (unstandardized) rows.
fn fit_logistic(xs: &[Vec<f64>], ys: &[f64], cfg: &ProbeConfig) -> Result<Vec<f64>> {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for x in xs {
        for k in 0..d - 1 {
            mean[k] += x[k] / n;
        }
    }
    for x in xs {
        for k in 0..d - 1 {
            sd[k] += (x[k] - mean[k]).powi(2) / n;
        }
    }
    for s in sd.iter_mut().take(d - 1) {
        *s = s.sqrt().max(1e-8);
    }
    let (mean, sd) = (mean, sd);
    let z = |x: &[f64]| -> Vec<f64> { (0..d).map(|k| if k == d - 1 { 1.0 } else { (x[k] - mean[k]) / sd[k] }).collect() };
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| z(x)).collect();

    let mut w = vec![0.0; d];
    for _ in 0..cfg.iterations {
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        for (x, y) in zs.iter().zip(ys) {
            let p = sigmoid(x.iter().zip(&w).map(|(a, b)| a * b).sum());
            let r = (p - y) / n;
            let c = (p * (1.0 - p)).max(1e-12) / n;
            for i in 0..d {
                grad[i] += r * x[i];
                for j in 0..=i {
                    hess[i * d + j] += c * x[i] * x[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                hess[j * d + i] = hess[i * d + j];
            }
            if i < d - 1 {
                grad[i] += cfg.ridge * w[i];
                hess[i * d + i] += cfg.ridge;
            } else {
                hess[i * d + i] += 1e-9;
            }
        }
        let step = cholesky_solve(hess, &grad)?;
        let mut moved = 0.0f64;
        for (wi, s) in w.iter_mut().zip(&step) {
            *wi -= s;
            moved = moved.max(s.abs());
        }
        if moved < 1e-10 {
            break;
        }
    }
    // fold the standardization into the weights
    let mut raw = vec![0.0; d];
    raw[d - 1] = w[d - 1];
    for k in 0..d - 1 {
        raw[k] = w[k] / sd[k];
        raw[d - 1] -= w[k] * mean[k] / sd[k];
    }
    Ok(raw)
}

fn split_domains<'a>(samples: &[&'a DomainSample]) -> Result<(Vec<&'a DomainSample>, Vec<&'a DomainSample>)> {
    let src: Vec<_> = samples.iter().copied().filter(|s| s.domain == Domain::Source).collect();
    let tgt: Vec<_> = samples.iter().copied().filter(|s| s.domain == Domain::Target).collect();
    if src.len() < MIN_PROBE_PER_DOMAIN || tgt.len() < MIN_PROBE_PER_DOMAIN {
        return Err(Error::InvalidInput(format!(
            "probe needs at least {MIN_PROBE_PER_DOMAIN} samples per domain, got {}/{}",
            src.len(),
            tgt.len()
        )));
    }
    let (sh, th) = (src.len() / 2, tgt.len() / 2);
    let train = src[..sh].iter().chain(&tgt[..th]).copied().collect();
    let eval = src[sh..].iter().chain(&tgt[th..]).copied().collect();
    Ok((train, eval))
}

enum Labels {
    WhitePatch,
    Random(ChaCha8Rng),
}

fn run_probe(generator: &Generator, samples: &[&DomainSample], cfg: &ProbeConfig, mut labels: Labels) -> Result<ProbeResult> {
    let (train, eval) = split_domains(samples)?;
    let ft = shallow_features(generator, &train)?;
    let (fh, fw) = ft.dims;
    let n_loc = fh * fw;
    let pos_rate = train.iter().map(|s| s.white_patch.ones() as f64).sum::<f64>()
        / train.iter().map(|s| s.white_patch.pixel_count() as f64).sum::<f64>();

    let mut xs = Vec::with_capacity(train.len() * n_loc);
    let mut ys = Vec::with_capacity(train.len() * n_loc);
    for (map, s) in ft.maps.iter().zip(&train) {
        xs.extend(rows(map, ft.channels, n_loc));
        match &mut labels {
            Labels::WhitePatch => ys.extend(s.white_patch.values().resize_area(fh, fw).data.iter().map(|v| f64::from(*v))),
            Labels::Random(rng) => ys.extend((0..n_loc).map(|_| f64::from(u8::from(rng.random_bool(pos_rate))))),
        }
    }
    let w = fit_logistic(&xs, &ys, cfg)?;

    let fe = shallow_features(generator, &eval)?;
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for (map, s) in fe.maps.iter().zip(&eval) {
        let logits: Vec<f32> = rows(map, fe.channels, n_loc)
            .map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() as f32)
            .collect();
        let (h, wd) = s.dims();
        let up = Grid::new(fh, fw, logits)?.resize_bilinear(h, wd);
        scores.extend(up.data.iter().map(|v| f64::from(*v)));
        match &mut labels {
            Labels::WhitePatch => truth.extend(s.white_patch.values().data.iter().map(|v| *v > 0.5)),
            Labels::Random(rng) => truth.extend((0..h * wd).map(|_| rng.random_bool(pos_rate))),
        }
    }
    Ok(ProbeResult {
        auc: roc_auc(&scores, &truth)?,
        n_train_images: train.len(),
        n_eval_images: eval.len(),
    })
}

/// Pixel ROC-AUC of inpainted-pixel detection from frozen shallow features.
/// The first half of each domain trains the probe; the second half scores it.
pub fn probe_alignment(generator: &Generator, samples: &[&DomainSample], cfg: &ProbeConfig) -> Result<ProbeResult> {
    run_probe(generator, samples, cfg, Labels::WhitePatch)
}

/// Same protocol with labels drawn independently of the images, for both
/// fitting and scoring. Should land at chance.
pub fn probe_random_labels(generator: &Generator, samples: &[&DomainSample], cfg: &ProbeConfig) -> Result<ProbeResult> {
    run_probe(generator, samples, cfg, Labels::Random(ChaCha8Rng::seed_from_u64(cfg.seed)))
}
