//! Tiny f64 network and finite-difference harness shared by the gradient
//! check and the acceptance suite.

#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use layout_da::layout::{BBox, Category, Layout, LayoutElement};
use layout_da::losses::{
    hungarian_match, pd_discriminator_loss, pd_generator_loss, reconstruction_loss_tensor, Assignment, DomainMaps, LossWeights,
    MatchWeights,
};
use layout_da::nn::layers::{Conv2d, Linear};
use layout_da::nn::{Discriminator, DiscriminatorConfig, ParamStore, PredictionTensors, NUM_CLASSES};

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
pub const PASS_FRACTION: f64 = 0.95;
pub const DIMS: (usize, usize) = (8, 8);
pub const N_QUERIES: usize = 2;

/// Two strided convs feeding a pixel discriminator and a pooled set head.
pub struct TinyNet {
    pub gen: ParamStore,
    pub disc_store: ParamStore,
    conv1: Conv2d,
    conv2: Conv2d,
    head: Linear,
    pub disc: Discriminator,
}

impl TinyNet {
    pub fn new() -> Self {
        let gen = ParamStore::new(DType::F64, 11);
        let disc_store = ParamStore::new(DType::F64, 12);
        let root = gen.root();
        let conv1 = Conv2d::new(&root.pp("conv1"), 4, 4, 3, 2, 1).unwrap();
        let conv2 = Conv2d::new(&root.pp("conv2"), 4, 4, 3, 2, 1).unwrap();
        let head = Linear::new(&root.pp("head"), 4, N_QUERIES * (NUM_CLASSES + 4)).unwrap();
        let disc = Discriminator::new(DiscriminatorConfig::default(), 4, &disc_store.root()).unwrap();
        // nonzero biases keep the ReLUs away from exact kinks
        for store in [&gen, &disc_store] {
            for (name, var) in store.vars() {
                if name.ends_with("bias") {
                    let n = var.as_tensor().elem_count();
                    let v: Vec<f64> = (0..n).map(|i| 0.05 + 0.01 * i as f64).collect();
                    store.assign(&name, &Tensor::from_vec(v, n, &Device::Cpu).unwrap()).unwrap();
                }
            }
        }
        Self {
            gen,
            disc_store,
            conv1,
            conv2,
            head,
            disc,
        }
    }

    pub fn n_params(&self) -> usize {
        self.gen.num_params() + self.disc_store.num_params()
    }

    pub fn features(&self, x: &Tensor) -> Tensor {
        let h = self.conv1.forward(x).unwrap().relu().unwrap();
        self.conv2.forward(&h).unwrap()
    }

    pub fn layout(&self, features: &Tensor) -> PredictionTensors {
        let b = features.dim(0).unwrap();
        let pooled = features.mean(3).unwrap().mean(2).unwrap();
        let out = self.head.forward(&pooled).unwrap().reshape((b, N_QUERIES, NUM_CLASSES + 4)).unwrap();
        let logits = out.narrow(2, 0, NUM_CLASSES).unwrap().contiguous().unwrap();
        let raw = out.narrow(2, NUM_CLASSES, 4).unwrap().contiguous().unwrap();
        let boxes = (raw.neg().unwrap().exp().unwrap() + 1.0).unwrap().recip().unwrap();
        PredictionTensors { logits, boxes }
    }
}

pub struct Batch {
    pub x: Tensor,
    pub source_target: Tensor,
    pub target_target: Tensor,
    pub layouts: Vec<Layout>,
}

pub fn batch() -> Batch {
    let (h, w) = DIMS;
    let x: Vec<f64> = (0..2 * 4 * h * w).map(|i| (i * 37 % 101) as f64 / 101.0).collect();
    let x = Tensor::from_vec(x, (2, 4, h, w), &Device::Cpu).unwrap();
    let mut src = vec![0.2; h * w];
    for r in 1..4 {
        for c in 2..7 {
            src[r * w + c] = 1.0;
        }
    }
    let source_target = Tensor::from_vec(src, (1, 1, h, w), &Device::Cpu).unwrap();
    let target_target = Tensor::full(0.2f64, (1, 1, h, w), &Device::Cpu).unwrap();
    let layouts = vec![Layout::new(
        "s",
        vec![
            LayoutElement::new(Category::Text, BBox::new(0.55, 0.3, 0.6, 0.2)).unwrap(),
            LayoutElement::new(Category::Logo, BBox::new(0.2, 0.8, 0.2, 0.15)).unwrap(),
        ],
    )];
    Batch {
        x,
        source_target,
        target_target,
        layouts,
    }
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

pub fn disc_loss(net: &TinyNet, b: &Batch) -> Tensor {
    let f = net.features(&b.x).detach();
    let map = net.disc.forward_features(&f, DIMS).unwrap();
    let ps = map.narrow(0, 0, 1).unwrap();
    let pt = map.narrow(0, 1, 1).unwrap();
    pd_discriminator_loss(
        Some(DomainMaps {
            pred: &ps,
            target: &b.source_target,
        }),
        Some(DomainMaps {
            pred: &pt,
            target: &b.target_target,
        }),
        &LossWeights::default(),
    )
    .unwrap()
    .loss
}

pub fn gen_pd_loss(net: &TinyNet, b: &Batch) -> Tensor {
    let frozen = net.disc.detached();
    let map = frozen.forward_features(&net.features(&b.x), DIMS).unwrap();
    let ps = map.narrow(0, 0, 1).unwrap();
    let pt = map.narrow(0, 1, 1).unwrap();
    pd_generator_loss(
        Some(&ps),
        Some(DomainMaps {
            pred: &pt,
            target: &b.target_target,
        }),
        &LossWeights::default(),
    )
    .unwrap()
    .loss
}

pub fn rec_loss(net: &TinyNet, b: &Batch, assignments: &[Assignment]) -> Tensor {
    let pred = net.layout(&net.features(&b.x.narrow(0, 0, 1).unwrap()));
    let refs: Vec<&Layout> = b.layouts.iter().collect();
    reconstruction_loss_tensor(&pred, &refs, assignments, &MatchWeights::default()).unwrap().0
}

pub fn total_loss(net: &TinyNet, b: &Batch, assignments: &[Assignment]) -> Tensor {
    let gamma = LossWeights::default().gamma;
    (rec_loss(net, b, assignments) + (gen_pd_loss(net, b) * gamma).unwrap()).unwrap()
}

pub const MAX_REL: f64 = 1e-2;

/// Per-coordinate agreement between analytic and central-difference
/// gradients of `loss` over every parameter of `store`.
#[derive(Clone, Copy, Debug)]
pub struct Agreement {
    pub passed: usize,
    pub total: usize,
    pub max_rel: f64,
}

impl Agreement {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.total as f64
    }

    pub fn holds(&self) -> bool {
        self.fraction() >= PASS_FRACTION && self.max_rel < MAX_REL
    }
}

pub fn agreement(store: &ParamStore, loss: &dyn Fn() -> Tensor) -> Agreement {
    let grads = loss().backward().unwrap();
    let (mut ok, mut total, mut max_rel) = (0usize, 0usize, 0f64);
    for (name, var) in store.vars() {
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; var.as_tensor().elem_count()],
        };
        let base: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let shape = var.as_tensor().dims().to_vec();
        for i in 0..base.len() {
            let eval_at = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                store.assign(&name, &Tensor::from_vec(v, shape.as_slice(), &Device::Cpu).unwrap()).unwrap();
                scalar(&loss())
            };
            let numeric = (eval_at(STEP) - eval_at(-STEP)) / (2.0 * STEP);
            store.assign(&name, &Tensor::from_vec(base.clone(), shape.as_slice(), &Device::Cpu).unwrap()).unwrap();
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel < REL_TOL {
                ok += 1;
            }
            max_rel = max_rel.max(rel);
            if std::env::var_os("GRAD_DEBUG").is_some() && rel >= REL_TOL {
                eprintln!("{name}[{i}] analytic {a} numeric {numeric}");
            }
            total += 1;
        }
    }
    Agreement {
        passed: ok,
        total,
        max_rel,
    }
}

pub fn assignments(net: &TinyNet, b: &Batch) -> Vec<Assignment> {
    let pred = net.layout(&net.features(&b.x.narrow(0, 0, 1).unwrap()));
    pred.to_predictions()
        .unwrap()
        .iter()
        .zip(&b.layouts)
        .map(|(p, gt)| hungarian_match(p, gt, &MatchWeights::default()).unwrap())
        .collect()
}

