//! Shared component health flags.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Feed,
    Backend,
    Store,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Status {
    Ok,
    Degraded(String),
}

#[derive(Debug, Clone, Default)]
pub struct Health {
    inner: Arc<RwLock<BTreeMap<Component, Status>>>,
}

impl Health {
    pub fn set_ok(&self, c: Component) {
        self.inner.write().insert(c, Status::Ok);
    }

    pub fn set_degraded(&self, c: Component, reason: impl Into<String>) {
        self.inner.write().insert(c, Status::Degraded(reason.into()));
    }

    pub fn get(&self, c: Component) -> Status {
        self.inner.read().get(&c).cloned().unwrap_or(Status::Ok)
    }

    pub fn is_ok(&self) -> bool {
        self.inner.read().values().all(|s| *s == Status::Ok)
    }

    pub fn snapshot(&self) -> BTreeMap<Component, Status> {
        self.inner.read().clone()
    }
}
