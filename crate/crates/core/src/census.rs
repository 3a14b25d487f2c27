//! Per-thread kernel invocation counters.
//!
//! Every matmul/SpMM/SDDMM execution bumps a thread-local counter, so a test
//! (or the verify command) can `reset`, run one attention block, and then
//! `snapshot` to assert the exact kernel decomposition. Each simulated worker
//! runs on its own thread and therefore owns an independent census.

use std::cell::Cell;

/// Counts of kernel executions since the last [`reset`] on this thread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelCensus {
    /// Dense matrix-matrix multiplications.
    pub mm: usize,
    /// Sparse-matrix x dense-matrix products.
    pub spmm: usize,
    /// Sampled dense-dense products.
    pub sddmm: usize,
}

thread_local! {
    static CURRENT: Cell<KernelCensus> = const { Cell::new(KernelCensus { mm: 0, spmm: 0, sddmm: 0 }) };
}

/// Zero this thread's counters.
pub fn reset() {
    CURRENT.with(|c| c.set(KernelCensus::default()));
}

/// Current counters for this thread.
pub fn snapshot() -> KernelCensus {
    CURRENT.with(|c| c.get())
}

pub(crate) fn record_mm() {
    CURRENT.with(|c| {
        let mut v = c.get();
        v.mm += 1;
        c.set(v);
    });
}

pub(crate) fn record_spmm() {
    CURRENT.with(|c| {
        let mut v = c.get();
        v.spmm += 1;
        c.set(v);
    });
}

pub(crate) fn record_sddmm() {
    CURRENT.with(|c| {
        let mut v = c.get();
        v.sddmm += 1;
        c.set(v);
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_are_per_thread() {
        reset();
        record_mm();
        record_spmm();
        record_spmm();
        let here = snapshot();
        assert_eq!(here, KernelCensus { mm: 1, spmm: 2, sddmm: 0 });

        let other = std::thread::spawn(|| {
            reset();
            record_sddmm();
            snapshot()
        })
        .join()
        .unwrap();
        assert_eq!(other, KernelCensus { mm: 0, spmm: 0, sddmm: 1 });
        // This thread's census is untouched by the other thread.
        assert_eq!(snapshot(), here);
    }
}
