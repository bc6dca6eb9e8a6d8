//! Per-thread floating-point operation counter.
//!
//! Every primitive in [`super::DenseMatrix`] reports its cost here. Counts are
//! only accumulated while a [`FlopScope`] is alive on the current thread, so
//! unrelated work (tests, training) never pays for bookkeeping it does not
//! read.
//!
//! Convention: one multiply = 1, one add = 1, a length-`r` dot product costs
//! `2r - 1`, a mean over `r` values costs `r` (the division is folded into the
//! add chain), and materialising a broadcast costs one operation per produced
//! entry.

use std::cell::Cell;
use std::marker::PhantomData;

use crate::error::{HutError, Result};

thread_local! {
    static ACTIVE: Cell<Option<u64>> = const { Cell::new(None) };
}

pub(crate) fn record(flops: u64) {
    ACTIVE.with(|c| {
        if let Some(n) = c.get() {
            c.set(Some(n + flops));
        }
    });
}

/// Whether a measurement scope is open on this thread.
pub fn scope_active() -> bool {
    ACTIVE.with(|c| c.get().is_some())
}

/// A single measurement scope. The counter starts at zero when the scope is
/// opened and is discarded when it is dropped.
#[derive(Debug)]
pub struct FlopScope {
    // Scopes are thread-confined.
    _not_send: PhantomData<*const ()>,
}

impl FlopScope {
    pub fn begin() -> Result<Self> {
        ACTIVE.with(|c| {
            if c.get().is_some() {
                return Err(HutError::NestedScope);
            }
            c.set(Some(0));
            Ok(FlopScope {
                _not_send: PhantomData,
            })
        })
    }

    pub fn count(&self) -> u64 {
        ACTIVE.with(|c| c.get().unwrap_or(0))
    }
}

impl Drop for FlopScope {
    fn drop(&mut self) {
        ACTIVE.with(|c| c.set(None));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_recorded_outside_scope() {
        record(10);
        let scope = FlopScope::begin().unwrap();
        assert_eq!(scope.count(), 0);
        record(3);
        record(4);
        assert_eq!(scope.count(), 7);
    }

    #[test]
    fn nested_scope_is_rejected() {
        let _outer = FlopScope::begin().unwrap();
        assert!(matches!(FlopScope::begin(), Err(HutError::NestedScope)));
    }

    #[test]
    fn scope_resets_on_drop() {
        {
            let _s = FlopScope::begin().unwrap();
            record(5);
        }
        assert!(!scope_active());
        let s = FlopScope::begin().unwrap();
        assert_eq!(s.count(), 0);
    }
}
