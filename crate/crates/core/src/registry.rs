//! Name-keyed registry of interchangeable strategy implementations.
//!
//! Each family (outlier filters, dimension policies) is a trait object; a
//! registry maps a stable name to a factory that builds the strategy from a
//! parameter struct, so the choice can come from a config file or the CLI.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type Factory<T, P> = Box<dyn Fn(&P) -> Result<Box<T>> + Send + Sync>;

pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&P) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_owned(), Box::new(factory));
        self
    }

    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(f) => f(params),
            None => Err(Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_owned(),
                available: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }
}

impl<T: ?Sized, P> std::fmt::Debug for Registry<T, P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}
