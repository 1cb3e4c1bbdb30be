//! Named, grouped parameters with seeded initialization.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apfm::DetachMask;
use crate::error::{Error, Result};

/// Ownership of a parameter for branch-wise fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// Timestep embedding and output head; trainable in every phase.
    Shared,
    Spatial,
    Spectral,
}

/// Forward-pass context: which group (if any) is frozen.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ctx {
    pub mask: DetachMask,
}

impl Ctx {
    pub fn new(mask: DetachMask) -> Self {
        Self { mask }
    }

    pub fn frozen(&self, g: Group) -> bool {
        self.mask.frozen_group() == Some(g)
    }
}

/// Handle to a stored parameter. Frozen parameters enter the graph as
/// detached tensors so they collect no gradient at all.
#[derive(Debug, Clone)]
pub struct P {
    t: Tensor,
    group: Group,
}

impl P {
    pub fn get(&self, ctx: &Ctx) -> Tensor {
        if ctx.frozen(self.group) {
            self.t.detach()
        } else {
            self.t.clone()
        }
    }

    pub fn group(&self) -> Group {
        self.group
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub var: Var,
    pub group: Group,
}

#[derive(Debug)]
pub struct ParamStore {
    entries: BTreeMap<String, Entry>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, device: Device) -> Self {
        Self {
            entries: BTreeMap::new(),
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.entries.values().map(|e| e.var.elem_count()).sum()
    }

    pub fn count_group(&self, g: Group) -> usize {
        self.entries.values().filter(|e| e.group == g).map(|e| e.var.elem_count()).sum()
    }

    /// Deep copy of every parameter value.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.entries
            .iter()
            .map(|(k, e)| Ok((k.clone(), e.var.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrites parameters in place from a name → tensor map. Every stored
    /// parameter must be present with the same shape.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, e) in &self.entries {
            let v = values.get(name).ok_or_else(|| Error::Config {
                key: name.clone(),
                reason: "missing from checkpoint".into(),
            })?;
            if v.dims() != e.var.dims() {
                return Err(Error::Config {
                    key: name.clone(),
                    reason: format!("shape {:?} vs model {:?}", v.dims(), e.var.dims()),
                });
            }
            e.var.set(&v.to_dtype(self.dtype)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    fn insert(&mut self, name: String, t: Tensor, group: Group) -> Result<P> {
        if self.entries.contains_key(&name) {
            return Err(Error::invalid("parameter", format!("duplicate name {name}")));
        }
        let var = Var::from_tensor(&t)?;
        let handle = P {
            t: var.as_tensor().clone(),
            group,
        };
        self.entries.insert(name, Entry { var, group });
        Ok(handle)
    }
}

/// Scoped builder: names are `prefix.name`, values come from a seeded RNG.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    group: Group,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, group: Group) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
            group,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn pp(&mut self, name: impl AsRef<str>) -> ParamBuilder<'_> {
        let prefix = self.full_name(name.as_ref());
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
            group: self.group,
        }
    }

    pub fn with_group(&mut self, group: Group) -> ParamBuilder<'_> {
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix: self.prefix.clone(),
            group,
        }
    }

    pub fn group(&self) -> Group {
        self.group
    }

    fn tensor(&self, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::from_vec(values, shape, &self.store.device)?.to_dtype(self.store.dtype)?)
    }

    /// Uniform in `[-bound, bound)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<P> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = if bound > 0.0 {
            (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
        } else {
            vec![0.0; n]
        };
        let t = self.tensor(values, shape)?;
        let name = self.full_name(name);
        self.store.insert(name, t, self.group)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<P> {
        let n: usize = shape.iter().product();
        let t = self.tensor(vec![value; n], shape)?;
        let name = self.full_name(name);
        self.store.insert(name, t, self.group)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_groups_and_counts() {
        let mut store = ParamStore::new(DType::F32, Device::Cpu);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng, Group::Spatial);
        let mut blk = b.pp("blk");
        blk.uniform("w", &[3, 4], 0.5).unwrap();
        let mut spe = blk.with_group(Group::Spectral);
        spe.constant("b", &[4], 0.0).unwrap();
        assert!(blk_dup(&mut b).is_err());
        assert_eq!(store.count(), 16);
        assert_eq!(store.count_group(Group::Spatial), 12);
        assert_eq!(store.get("blk.b").unwrap().group, Group::Spectral);
    }

    fn blk_dup(b: &mut ParamBuilder<'_>) -> Result<P> {
        b.pp("blk").constant("w", &[1], 0.0)
    }

    #[test]
    fn frozen_handles_are_detached() {
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ParamBuilder::new(&mut store, &mut rng, Group::Spatial)
            .uniform("w", &[2], 1.0)
            .unwrap();
        let live = p.get(&Ctx::default());
        let loss = live.sqr().unwrap().sum_all().unwrap();
        assert!(loss.backward().unwrap().get(&live).is_some());
        let frozen = p.get(&Ctx::new(DetachMask::SPATIAL));
        let loss = frozen.sqr().unwrap().sum_all().unwrap();
        assert!(loss.backward().unwrap().get(&frozen).is_none());
    }

    #[test]
    fn same_seed_same_values() {
        let build = || {
            let mut store = ParamStore::new(DType::F64, Device::Cpu);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            ParamBuilder::new(&mut store, &mut rng, Group::Shared)
                .uniform("w", &[5], 1.0)
                .unwrap();
            store.snapshot().unwrap()["w"].to_vec1::<f64>().unwrap()
        };
        assert_eq!(build(), build());
    }
}
