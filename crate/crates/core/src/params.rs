//! Named, group-tagged parameter tensors.
//!
//! Each task owns one [`ParameterStore`]. Entries are reference-counted so a
//! hard sharing plan can point two stores at the same underlying tensor;
//! iteration order is the lexicographic name order, which keeps training
//! walks deterministic.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::sharing::LayerGroup;
use crate::tensor::Tensor;

/// One named parameter: the tensor plus the layer group it belongs to.
#[derive(Debug)]
pub struct Param {
    pub name: String,
    pub group: LayerGroup,
    pub tensor: Tensor,
}

/// Shared ownership of a parameter. Two stores holding clones of the same
/// handle see each other's updates (the hard-sharing mechanism).
pub type ParamHandle = Rc<RefCell<Param>>;

/// All parameters of one task's model, keyed by name.
#[derive(Debug, Default)]
pub struct ParameterStore {
    task: String,
    entries: BTreeMap<String, ParamHandle>,
}

impl ParameterStore {
    pub fn new(task: &str) -> Self {
        ParameterStore {
            task: task.to_string(),
            entries: BTreeMap::new(),
        }
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    /// Registers a fresh parameter. Names are unique within a store.
    pub fn insert(&mut self, name: &str, group: LayerGroup, tensor: Tensor) -> ParamHandle {
        assert!(
            !self.entries.contains_key(name),
            "duplicate parameter name {name:?} in store {:?}",
            self.task
        );
        let handle = Rc::new(RefCell::new(Param {
            name: name.to_string(),
            group,
            tensor,
        }));
        self.entries.insert(name.to_string(), handle.clone());
        handle
    }

    /// Replaces the entry under `name` with an existing handle (aliasing).
    /// The handle's own name/group metadata is left untouched.
    pub fn alias(&mut self, name: &str, handle: ParamHandle) -> Result<()> {
        if !self.entries.contains_key(name) {
            return Err(Error::Contract(format!(
                "cannot alias unknown parameter {name:?} in store {:?}",
                self.task
            )));
        }
        self.entries.insert(name.to_string(), handle);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamHandle> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&ParamHandle> {
        self.entries.get(name).ok_or_else(|| {
            Error::Contract(format!(
                "store {:?} has no parameter named {name:?}",
                self.task
            ))
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamHandle)> {
        self.entries.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Handles whose group is `group`, in name order.
    pub fn group_members(&self, group: LayerGroup) -> Vec<ParamHandle> {
        self.entries
            .values()
            .filter(|h| h.borrow().group == group)
            .cloned()
            .collect()
    }

    /// Total scalar count across all tensors.
    pub fn param_count(&self) -> usize {
        self.entries
            .values()
            .map(|h| h.borrow().tensor.numel())
            .sum()
    }

    pub fn zero_grads(&self) {
        for handle in self.entries.values() {
            handle.borrow_mut().tensor.zero_grad();
        }
    }

    /// Global gradient norm over every tensor in the store.
    pub fn grad_norm(&self) -> f64 {
        let mut sumsq = 0.0;
        for handle in self.entries.values() {
            let p = handle.borrow();
            if let Some(g) = p.tensor.grad() {
                sumsq += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        sumsq.sqrt()
    }

    /// Scales all gradients so the global norm is at most `max_norm`; a norm
    /// already at or under the threshold is untouched. Returns the pre-clip
    /// norm.
    pub fn clip_grads(&self, max_norm: f64) -> f64 {
        assert!(max_norm > 0.0, "clip threshold must be positive");
        let norm = self.grad_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for handle in self.entries.values() {
                let mut p = handle.borrow_mut();
                if let Some(g) = p.tensor.grad_mut() {
                    g.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }

    /// Copies of every tensor's values, in name order. Used to compare
    /// training runs for exact equality.
    pub fn snapshot(&self) -> Vec<(String, Vec<f64>)> {
        self.entries
            .iter()
            .map(|(n, h)| (n.clone(), h.borrow().tensor.values().to_vec()))
            .collect()
    }
}
