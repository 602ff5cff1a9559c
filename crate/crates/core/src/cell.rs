//! Single-producer / single-consumer latest-value cell. Writers overwrite
//! unread values; readers always see the freshest sample.

use std::sync::Arc;

use parking_lot::Mutex;

#[derive(Debug)]
pub struct Latest<T> {
    slot: Mutex<Option<Stamped<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stamped<T> {
    pub value: T,
    /// Time the value was published, in clock milliseconds.
    pub t_ms: f64,
    /// Publication counter, starting at 1.
    pub seq: u64,
}

impl<T: Clone> Latest<T> {
    pub fn new() -> Self {
        Self {
            slot: Mutex::new(None),
        }
    }

    pub fn shared() -> Arc<Self> {
        Arc::new(Self::new())
    }

    pub fn publish(&self, value: T, t_ms: f64) {
        let mut slot = self.slot.lock();
        let seq = slot.as_ref().map_or(1, |s| s.seq + 1);
        *slot = Some(Stamped { value, t_ms, seq });
    }

    pub fn get(&self) -> Option<Stamped<T>> {
        self.slot.lock().clone()
    }

    pub fn clear(&self) {
        *self.slot.lock() = None;
    }
}

impl<T: Clone> Default for Latest<T> {
    fn default() -> Self {
        Self::new()
    }
}
