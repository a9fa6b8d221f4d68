//! Named parameter storage, initialization, the Adam optimizer, and the
//! self-describing checkpoint format.
//!
//! Every model keeps its weights in a [`ParamStore`]: an ordered collection
//! of named `f64` matrices. The flat layout serves four consumers with one
//! representation: tape binding for training, Adam state alignment,
//! finite-difference perturbation in tests, and checkpoint serialization.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, Tape, VarId};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Ordered, named `f64` matrices.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<Array2<f64>>,
    index: BTreeMap<String, usize>,
}

/// How a freshly registered array is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform Glorot: `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    Zeros,
    Ones,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new array initialized per `init`, with its RNG stream
    /// derived from `(seed, name)` so registration order does not matter.
    pub fn register(&mut self, name: &str, rows: usize, cols: usize, init: Init, seed: u64) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        let arr = match init {
            Init::Zeros => Array2::zeros((rows, cols)),
            Init::Ones => Array2::ones((rows, cols)),
            Init::Glorot => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                let mut rng = rng_for(seed, name);
                Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
            }
        };
        self.index.insert(name.to_string(), self.arrays.len());
        self.names.push(name.to_string());
        self.arrays.push(arr);
    }

    /// Insert an array with explicit contents.
    pub fn insert(&mut self, name: &str, arr: Array2<f64>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name: {name}"
        );
        self.index.insert(name.to_string(), self.arrays.len());
        self.names.push(name.to_string());
        self.arrays.push(arr);
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        let i = self.index[name];
        &self.arrays[i]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let i = self.index[name];
        &mut self.arrays[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn array(&self, i: usize) -> &Array2<f64> {
        &self.arrays[i]
    }

    pub fn array_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.arrays[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.arrays.iter())
    }

    /// Total number of scalar entries across all arrays.
    pub fn scalar_count(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }

    /// Bind every array onto a tape as a leaf, in store order.
    pub fn bind<'s>(&'s self, tape: &mut Tape) -> Bound<'s> {
        let ids = self.arrays.iter().map(|a| tape.leaf(a.clone())).collect();
        Bound { store: self, ids }
    }

    /// Indices of parameters whose name starts with `prefix`.
    pub fn indices_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.iter().all(|x| x.is_finite()))
    }
}

/// Tape bindings for every array of a store, for one forward/backward pass.
pub struct Bound<'s> {
    store: &'s ParamStore,
    ids: Vec<VarId>,
}

impl Bound<'_> {
    pub fn id(&self, name: &str) -> VarId {
        self.ids[self.store.index[name]]
    }

    /// Gradients per parameter in store order; zeros for parameters no path
    /// reached.
    pub fn collect_grads(&self, grads: &Grads) -> Vec<Array2<f64>> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| match grads.get(*id) {
                Some(g) => g.clone(),
                None => Array2::zeros(self.store.arrays[i].raw_dim()),
            })
            .collect()
    }
}

/// Adam with decoupled-from-nothing classic L2 weight decay folded into the
/// gradient, matching the usual `Adam(weight_decay=...)` behaviour.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: store.arrays.iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
            v: store.arrays.iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
        }
    }

    /// Apply one update. `grads` is aligned with the store; `trainable`
    /// restricts the update to a subset of parameter indices when given.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Array2<f64>],
        trainable: Option<&[usize]>,
    ) {
        assert_eq!(grads.len(), store.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let update = |i: usize, m: &mut [Array2<f64>], v: &mut [Array2<f64>], store: &mut ParamStore| {
            let p = &mut store.arrays[i];
            let g = if self.weight_decay != 0.0 {
                &grads[i] + &p.mapv(|x| x * self.weight_decay)
            } else {
                grads[i].clone()
            };
            m[i] = m[i].mapv(|x| x * self.beta1) + g.mapv(|x| x * (1.0 - self.beta1));
            v[i] = v[i].mapv(|x| x * self.beta2) + g.mapv(|x| x * x * (1.0 - self.beta2));
            let mhat = m[i].mapv(|x| x / bc1);
            let vhat = v[i].mapv(|x| x / bc2);
            let delta = &mhat / &vhat.mapv(|x| x.sqrt() + self.eps);
            *p -= &delta.mapv(|x| x * self.lr);
        };
        match trainable {
            Some(idx) => {
                for &i in idx {
                    update(i, &mut self.m, &mut self.v, store);
                }
            }
            None => {
                for i in 0..store.len() {
                    update(i, &mut self.m, &mut self.v, store);
                }
            }
        }
    }
}

// ── checkpoints ─────────────────────────────────────────────────────────

/// One named array in a checkpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub data: Vec<f64>,
}

/// Self-describing checkpoint: a manifest (kind, config, vocab) plus named
/// flat arrays. JSON round-trips `f64` exactly, so save/load is stable.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub vocab: Option<Vec<String>>,
    pub params: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_store(
        kind: &str,
        config: serde_json::Value,
        config_hash: &str,
        vocab: Option<Vec<String>>,
        store: &ParamStore,
    ) -> Self {
        let params = store
            .iter()
            .map(|(name, arr)| NamedArray {
                name: name.to_string(),
                shape: [arr.nrows(), arr.ncols()],
                dtype: "f64".to_string(),
                data: arr.iter().cloned().collect(),
            })
            .collect();
        Checkpoint {
            kind: kind.to_string(),
            config,
            config_hash: config_hash.to_string(),
            vocab,
            params,
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for p in &self.params {
            if p.dtype != "f64" {
                return Err(Error::Checkpoint(format!(
                    "unsupported dtype {} for {}",
                    p.dtype, p.name
                )));
            }
            let expected = p.shape[0] * p.shape[1];
            if p.data.len() != expected {
                return Err(Error::Checkpoint(format!(
                    "array {} has {} values, shape says {}",
                    p.name,
                    p.data.len(),
                    expected
                )));
            }
            let arr = Array2::from_shape_vec((p.shape[0], p.shape[1]), p.data.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.insert(&p.name, arr);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let r = std::io::BufReader::new(file);
        Ok(serde_json::from_reader(r)?)
    }
}
