use std::path::Path;

use dcr_tensor::{ParamStore, Scalar, Tensor};

use crate::error::{DcrError, Result};
use crate::objectives::{HeadConfig, HeadSet};
use crate::reasoners::{load_checkpoint, save_checkpoint, Reasoner, ReasonerConfig};
use crate::rng;

/// A reasoner, optional classification heads, and their parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub reasoner: Reasoner,
    pub heads: Option<HeadSet>,
    pub store: ParamStore<T>,
    pub order_pretrained: bool,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from a stream keyed by `seed`.
    pub fn new(reasoner: ReasonerConfig, heads: Option<HeadConfig>, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut init = rng::keyed(seed, "init", 0, "reasoner");
        let reasoner = Reasoner::new(reasoner, &mut store, &mut init)?;
        let mut head_init = rng::keyed(seed, "init", 0, "heads");
        let heads = heads.map(|h| HeadSet::new(h, &mut store, &mut head_init)).transpose()?;
        Ok(Model {
            reasoner,
            heads,
            store,
            order_pretrained: false,
        })
    }

    /// Copies every parameter of `other` whose name and shape exist here
    /// and that `keep` accepts by name. Returns how many were copied.
    pub fn copy_matching<U: Scalar>(&mut self, other: &ParamStore<U>, keep: impl Fn(&str) -> bool) -> usize {
        let mut copied = 0;
        for (_, src) in other.iter().filter(|(_, p)| keep(&p.name)) {
            if let Some(id) = self.store.find(&src.name) {
                let dst = &mut self.store.get_mut(id).value;
                if dst.shape() == src.value.shape() {
                    *dst = src.value.cast();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Fresh heads (initialized from `seed`) on top of `pretrained`'s
    /// reasoner weights.
    pub fn with_heads_from(pretrained: &Model<T>, heads: HeadConfig, seed: u64) -> Result<Self> {
        let mut m = Model::new(pretrained.reasoner.config.clone(), Some(heads), seed)?;
        m.copy_matching(&pretrained.store, |name| !name.starts_with("head."));
        m.order_pretrained = pretrained.order_pretrained;
        Ok(m)
    }

    pub fn head_config(&self) -> Option<&HeadConfig> {
        self.heads.as_ref().map(|h| &h.config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &self.reasoner.config,
            self.head_config(),
            self.order_pretrained,
            &self.store,
        )
    }

    /// Rebuilds the architecture from the header and loads the stored
    /// values; every tensor must match by name and shape.
    pub fn load(path: &Path) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let mut m = Model::new(ck.header.reasoner.clone(), ck.header.heads.clone(), 0)?;
        if m.store.len() != ck.store.len() {
            return Err(DcrError::Invalid(format!(
                "{}: {} tensors stored, architecture has {}",
                path.display(),
                ck.store.len(),
                m.store.len()
            )));
        }
        for ((_, dst), (_, src)) in m.store.iter().zip(ck.store.iter()) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(DcrError::Invalid(format!(
                    "{}: tensor {} {:?} does not match {} {:?}",
                    path.display(),
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                )));
            }
        }
        let values: Vec<Tensor<T>> = ck.store.iter().map(|(_, p)| p.value.cast()).collect();
        for (p, v) in m.store.iter_mut().zip(values) {
            p.value = v;
        }
        m.order_pretrained = ck.header.order_pretrained;
        Ok(m)
    }

    /// Every parameter value in store order, as `f64`.
    pub fn flat_values(&self) -> Vec<f64> {
        self.store
            .iter()
            .flat_map(|(_, p)| p.value.data().iter().map(|v| v.as_f64()))
            .collect()
    }
}
