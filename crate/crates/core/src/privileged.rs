//! Training-only data behind an access counter.
//!
//! Ground-truth poses and everything derived from them are wrapped in
//! [`Privileged`]. Every read goes through [`Privileged::reveal`], which bumps
//! the shared [`AccessTracker`], so tests can assert that an inference path
//! never touched them.

use alloc::sync::Arc;
use core::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Clone, Default)]
pub struct AccessTracker(Arc<AtomicUsize>);

impl AccessTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reads(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    pub fn record(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone)]
pub struct Privileged<T> {
    value: T,
    tracker: AccessTracker,
}

impl<T> Privileged<T> {
    pub fn new(value: T, tracker: AccessTracker) -> Self {
        Self { value, tracker }
    }

    pub fn reveal(&self) -> &T {
        self.tracker.record();
        &self.value
    }

    pub fn tracker(&self) -> &AccessTracker {
        &self.tracker
    }
}
