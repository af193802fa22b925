//! Named, seeded parameter storage.
//!
//! Every parameter is a [`Var`] registered under a dotted path. Layers hold
//! clones of the var tensors, which share storage with the vars, so in-place
//! optimizer updates are visible to the layers without rebuilding them.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

struct Inner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("dtype", &self.dtype)
            .field("num_params", &self.num_params())
            .finish()
    }
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            })),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> ParamPath<'_> {
        ParamPath {
            store: self,
            prefix: String::new(),
        }
    }

    /// All vars, sorted by name.
    pub fn vars(&self) -> Vec<(String, Var)> {
        let inner = self.inner.lock().expect("param store poisoned");
        inner.vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.inner.lock().expect("param store poisoned").vars.get(name).cloned()
    }

    pub fn num_params(&self) -> usize {
        self.vars().iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Copies every value out as `f64`, keyed by name.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        self.vars()
            .into_iter()
            .map(|(k, v)| Ok((k, v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)))
            .collect()
    }

    /// Overwrites the named var with `value` (converted to the store dtype).
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self.get(name).ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))?;
        if var.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name} is {:?}, value is {:?}",
                var.shape(),
                value.shape()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    fn register(&self, name: String, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut inner = self.inner.lock().expect("param store poisoned");
        if inner.vars.contains_key(&name) {
            return Err(Error::Config(format!("parameter {name} registered twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Uniform(bound) => (0..n).map(|_| inner.rng.random_range(-bound..=bound)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut inner.rng);
                    z * std
                })
                .collect(),
            Init::Const(v) => vec![v; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(name, var);
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

/// Builder handle that prefixes parameter names.
#[derive(Clone)]
pub struct ParamPath<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> ParamPath<'a> {
    pub fn pp(&self, name: impl std::fmt::Display) -> ParamPath<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamPath { store: self.store, prefix }
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        self.store.register(full, shape, init)
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }
}
