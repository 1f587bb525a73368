//! Named flat parameter groups shared by the trainers.

use std::collections::BTreeMap;

use crate::error::{LpsError, Result};

/// Flat `f64` vectors keyed by group name (one per trainable block).
/// Shapes are fixed at registration; names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    groups: BTreeMap<String, Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, init: Vec<f64>) -> Result<()> {
        if self.groups.contains_key(name) {
            return Err(LpsError::Usage(format!(
                "parameter group '{name}' already registered"
            )));
        }
        self.groups.insert(name.to_string(), init);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.groups
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| LpsError::Usage(format!("unknown parameter group '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.groups
            .get_mut(name)
            .map(Vec::as_mut_slice)
            .ok_or_else(|| LpsError::Usage(format!("unknown parameter group '{name}'")))
    }

    pub fn set(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let g = self.get_mut(name)?;
        if g.len() != values.len() {
            return Err(LpsError::Usage(format!(
                "group '{name}' has fixed shape {} but got {}",
                g.len(),
                values.len()
            )));
        }
        g.copy_from_slice(values);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    /// Immutable snapshot, e.g. for checkpointing.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<f64>> {
        self.groups.clone()
    }

    pub fn restore(&mut self, snap: &BTreeMap<String, Vec<f64>>) {
        for (k, v) in snap {
            if let Some(g) = self.groups.get_mut(k) {
                g.copy_from_slice(v);
            }
        }
    }
}
