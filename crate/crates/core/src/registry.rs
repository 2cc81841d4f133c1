//! Name-keyed registries for interchangeable backends.
//!
//! Every model family (privacy classifiers, sentence embedders, review
//! generators, issue generators) is a trait; concrete implementations are
//! registered under a stable name and picked at runtime from the run config.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a backend runs offline in-process or needs an external model runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Real,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Stub => f.write_str("stub"),
            BackendKind::Real => f.write_str("real"),
        }
    }
}

/// Implemented by every registrable factory.
pub trait Named {
    fn name(&self) -> &str;
    fn kind(&self) -> BackendKind;
}

pub struct Registry<T: ?Sized> {
    family: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized + Named> Registry<T> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: BTreeMap::new(),
        }
    }

    pub fn family(&self) -> &'static str {
        self.family
    }

    /// Registers `entry` under its own name, returning any entry it replaced.
    pub fn register(&mut self, entry: Arc<T>) -> Option<Arc<T>> {
        self.entries.insert(entry.name().to_string(), entry)
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownBackend {
                family: self.family,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// First registered stub, in name order.
    pub fn default_stub(&self) -> Option<Arc<T>> {
        self.entries
            .values()
            .find(|e| e.kind() == BackendKind::Stub)
            .cloned()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<T>> {
        self.entries.values()
    }
}

impl<T: ?Sized + Named> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("entries", &self.names())
            .finish()
    }
}

/// Error returned by registered backends that need a model runtime this build lacks.
pub fn unavailable(name: &str, stub: &str) -> Error {
    Error::Capability {
        name: name.to_string(),
        reason: "no neural model runtime is linked into this build".to_string(),
        stub: stub.to_string(),
    }
}
