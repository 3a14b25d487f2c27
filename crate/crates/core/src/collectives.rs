//! Deterministic in-process simulation of `p` communicating workers.
//!
//! Each worker runs on its own thread; collectives are synchronous rendezvous
//! points. Every rank deposits its contribution, the last arriver computes
//! all results under the group lock (reductions in ascending-rank order, so
//! repeated runs are bit-identical), and the ranks pick up their results and
//! leave. The group keeps an exact per-rank, per-primitive ledger of element
//! counts — the measurement instrument for the communication-cost checks.
//!
//! A mismatched call (different primitive or parameters across ranks, or a
//! malformed contribution) poisons the group: every current and future call
//! returns a protocol error instead of deadlocking.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::partition::PartitionPlan;
use crate::scalar::Scalar;

/// Collective primitive kinds tracked by the ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PrimitiveKind {
    AllGather,
    ReduceScatter,
    AllToAll,
    AllReduce,
    Barrier,
}

impl PrimitiveKind {
    pub fn label(self) -> &'static str {
        match self {
            PrimitiveKind::AllGather => "all_gather",
            PrimitiveKind::ReduceScatter => "reduce_scatter",
            PrimitiveKind::AllToAll => "all_to_all",
            PrimitiveKind::AllReduce => "all_reduce",
            PrimitiveKind::Barrier => "barrier",
        }
    }
}

/// Concatenation axis for the blocks received in an all-to-all.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConcatAxis {
    Rows,
    Cols,
}

/// Per-(rank, primitive) call and element counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LedgerEntry {
    pub calls: usize,
    pub elements_sent: usize,
    pub elements_received: usize,
}

/// Exact communication accounting, in elements (bytes = elements x width).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommLedger {
    entries: BTreeMap<(usize, PrimitiveKind), LedgerEntry>,
}

impl CommLedger {
    fn record(&mut self, rank: usize, kind: PrimitiveKind, sent: usize, received: usize) {
        let e = self.entries.entry((rank, kind)).or_default();
        e.calls += 1;
        e.elements_sent += sent;
        e.elements_received += received;
    }

    pub fn entry(&self, rank: usize, kind: PrimitiveKind) -> LedgerEntry {
        self.entries.get(&(rank, kind)).copied().unwrap_or_default()
    }

    pub fn calls(&self, rank: usize, kind: PrimitiveKind) -> usize {
        self.entry(rank, kind).calls
    }

    pub fn received(&self, rank: usize, kind: PrimitiveKind) -> usize {
        self.entry(rank, kind).elements_received
    }

    pub fn sent(&self, rank: usize, kind: PrimitiveKind) -> usize {
        self.entry(rank, kind).elements_sent
    }

    /// Elements received by `rank` summed over the given primitives.
    pub fn received_over(&self, rank: usize, kinds: &[PrimitiveKind]) -> usize {
        kinds.iter().map(|&k| self.received(rank, k)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, PrimitiveKind), &LedgerEntry)> {
        self.entries.iter()
    }

    /// Fold another ledger into this one (used to aggregate training steps).
    pub fn merge(&mut self, other: &CommLedger) {
        for (&(rank, kind), e) in &other.entries {
            let slot = self.entries.entry((rank, kind)).or_default();
            slot.calls += e.calls;
            slot.elements_sent += e.elements_sent;
            slot.elements_received += e.elements_received;
        }
    }

    /// Line-delimited report: `rank,primitive,calls,elements_sent,elements_received`.
    pub fn export(&self) -> String {
        let mut out = String::from("rank,primitive,calls,elements_sent,elements_received\n");
        for (&(rank, kind), e) in &self.entries {
            out.push_str(&format!(
                "{rank},{},{},{},{}\n",
                kind.label(),
                e.calls,
                e.elements_sent,
                e.elements_received
            ));
        }
        out
    }
}

enum Payload<T> {
    Matrix(DenseMatrix<T>),
    Blocks(Vec<DenseMatrix<T>>),
    Unit,
}

impl<T> Payload<T> {
    fn into_matrix(self) -> DenseMatrix<T> {
        match self {
            Payload::Matrix(m) => m,
            _ => unreachable!("payload kind checked by the collective"),
        }
    }
}

/// Parameters of the collective currently in flight; all ranks must agree.
#[derive(Clone, Debug, PartialEq)]
enum PendingOp {
    AllGather,
    ReduceScatter(PartitionPlan),
    AllToAll(ConcatAxis),
    AllReduce,
    Barrier,
}

impl PendingOp {
    fn kind(&self) -> PrimitiveKind {
        match self {
            PendingOp::AllGather => PrimitiveKind::AllGather,
            PendingOp::ReduceScatter(_) => PrimitiveKind::ReduceScatter,
            PendingOp::AllToAll(_) => PrimitiveKind::AllToAll,
            PendingOp::AllReduce => PrimitiveKind::AllReduce,
            PendingOp::Barrier => PrimitiveKind::Barrier,
        }
    }
}

struct Pending<T> {
    op: PendingOp,
    deposits: Vec<Option<Payload<T>>>,
    arrived: usize,
    results: Vec<Option<Payload<T>>>,
    ready: bool,
    departed: usize,
}

struct GroupState<T> {
    sequence: u64,
    barrier_generation: u64,
    pending: Option<Pending<T>>,
    ledger: CommLedger,
    poisoned: Option<String>,
}

/// Handle to `p` simulated workers. Shareable across threads; every rank
/// calls the collectives with its own `rank` index.
pub struct WorkerGroup<T> {
    size: usize,
    state: Mutex<GroupState<T>>,
    cv: Condvar,
}

impl<T: Scalar> WorkerGroup<T> {
    pub fn new(size: usize) -> Result<Arc<Self>> {
        if size == 0 {
            return Err(Error::InvalidArgument("worker group of size 0".into()));
        }
        Ok(Arc::new(Self {
            size,
            state: Mutex::new(GroupState {
                sequence: 0,
                barrier_generation: 0,
                pending: None,
                ledger: CommLedger::default(),
                poisoned: None,
            }),
            cv: Condvar::new(),
        }))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Completed collective count.
    pub fn sequence(&self) -> u64 {
        self.state.lock().unwrap().sequence
    }

    pub fn barrier_generation(&self) -> u64 {
        self.state.lock().unwrap().barrier_generation
    }

    /// Snapshot of the accounting so far.
    pub fn ledger(&self) -> CommLedger {
        self.state.lock().unwrap().ledger.clone()
    }

    /// Poison the group so that all current and future collective calls fail
    /// with a protocol error. Called when a rank bails out early, so the
    /// remaining ranks unblock instead of waiting forever.
    pub fn abort(&self, reason: &str) {
        let mut st = self.state.lock().unwrap();
        if st.poisoned.is_none() {
            st.poisoned = Some(reason.to_string());
        }
        self.cv.notify_all();
    }

    /// Row-wise concatenation of every rank's matrix, in rank order. Ranks
    /// may hold different row counts; column counts must match.
    pub fn all_gather(&self, rank: usize, local: DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.exchange(rank, PendingOp::AllGather, Payload::Matrix(local))
            .map(Payload::into_matrix)
    }

    /// Element-wise sum of every rank's full matrix (ascending rank order),
    /// restricted to the caller's partition rows.
    pub fn reduce_scatter(
        &self,
        rank: usize,
        full: DenseMatrix<T>,
        plan: &PartitionPlan,
    ) -> Result<DenseMatrix<T>> {
        self.exchange(
            rank,
            PendingOp::ReduceScatter(plan.clone()),
            Payload::Matrix(full),
        )
        .map(Payload::into_matrix)
    }

    /// Block exchange: block `j` of the caller goes to rank `j`; the caller
    /// receives block `rank` from every rank, concatenated in rank order
    /// along `axis`.
    pub fn all_to_all(
        &self,
        rank: usize,
        blocks: Vec<DenseMatrix<T>>,
        axis: ConcatAxis,
    ) -> Result<DenseMatrix<T>> {
        if blocks.len() != self.size {
            let msg = format!(
                "all_to_all: rank {rank} supplied {} blocks for {} ranks",
                blocks.len(),
                self.size
            );
            self.abort(&msg);
            return Err(Error::Protocol(msg));
        }
        self.exchange(rank, PendingOp::AllToAll(axis), Payload::Blocks(blocks))
            .map(Payload::into_matrix)
    }

    /// Element-wise sum of every rank's matrix, replicated to all ranks.
    /// Modeled as an all-gather plus a local ascending-rank sum; the ledger
    /// books it under its own primitive kind so the attention-block census
    /// stays scoped to the strategy collectives.
    pub fn all_reduce(&self, rank: usize, m: DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.exchange(rank, PendingOp::AllReduce, Payload::Matrix(m))
            .map(Payload::into_matrix)
    }

    /// Block until all ranks arrive; bumps the generation counter once per
    /// completed barrier.
    pub fn barrier(&self, rank: usize) -> Result<()> {
        self.exchange(rank, PendingOp::Barrier, Payload::Unit)?;
        Ok(())
    }

    fn exchange(&self, rank: usize, op: PendingOp, payload: Payload<T>) -> Result<Payload<T>> {
        if rank >= self.size {
            return Err(Error::InvalidArgument(format!(
                "rank {rank} out of range for group of {}",
                self.size
            )));
        }
        let mut st = self.state.lock().unwrap();
        // Wait out the drain phase of a previous collective.
        loop {
            if let Some(msg) = &st.poisoned {
                return Err(Error::Protocol(msg.clone()));
            }
            match &st.pending {
                Some(p) if p.ready => st = self.cv.wait(st).unwrap(),
                _ => break,
            }
        }
        let sequence = st.sequence;
        match &mut st.pending {
            None => {
                let mut deposits: Vec<Option<Payload<T>>> =
                    (0..self.size).map(|_| None).collect();
                deposits[rank] = Some(payload);
                st.pending = Some(Pending {
                    op,
                    deposits,
                    arrived: 1,
                    results: (0..self.size).map(|_| None).collect(),
                    ready: false,
                    departed: 0,
                });
            }
            Some(p) => {
                if p.op != op {
                    let msg = format!(
                        "sequence {sequence}: rank {rank} called {:?} while {:?} is in flight",
                        op, p.op
                    );
                    st.poisoned = Some(msg.clone());
                    self.cv.notify_all();
                    return Err(Error::Protocol(msg));
                }
                if p.deposits[rank].is_some() {
                    let msg = format!(
                        "sequence {sequence}: rank {rank} deposited twice into {:?}",
                        p.op
                    );
                    st.poisoned = Some(msg.clone());
                    self.cv.notify_all();
                    return Err(Error::Protocol(msg));
                }
                p.deposits[rank] = Some(payload);
                p.arrived += 1;
            }
        }

        let complete = st.pending.as_ref().is_some_and(|p| p.arrived == self.size);
        if complete {
            let mut pending = st.pending.take().unwrap();
            let deposits: Vec<Payload<T>> =
                pending.deposits.drain(..).map(Option::unwrap).collect();
            match complete_collective(&pending.op, deposits, self.size) {
                Ok((results, accounting)) => {
                    for (r, (sent, received)) in accounting.into_iter().enumerate() {
                        st.ledger.record(r, pending.op.kind(), sent, received);
                    }
                    if pending.op == PendingOp::Barrier {
                        st.barrier_generation += 1;
                    }
                    pending.results = results.into_iter().map(Some).collect();
                    pending.ready = true;
                    st.pending = Some(pending);
                    self.cv.notify_all();
                }
                Err(err) => {
                    let msg = format!("sequence {}: {err}", st.sequence);
                    st.poisoned = Some(msg.clone());
                    self.cv.notify_all();
                    return Err(Error::Protocol(msg));
                }
            }
        } else {
            // Wait for the last arriver (or a poisoning) on this round.
            loop {
                if let Some(msg) = &st.poisoned {
                    return Err(Error::Protocol(msg.clone()));
                }
                if st.pending.as_ref().is_some_and(|p| p.ready) {
                    break;
                }
                st = self.cv.wait(st).unwrap();
            }
        }

        let p = st.pending.as_mut().unwrap();
        let result = p.results[rank].take().expect("result already taken");
        p.departed += 1;
        if p.departed == self.size {
            st.pending = None;
            st.sequence += 1;
            self.cv.notify_all();
        }
        Ok(result)
    }
}

type Accounting = Vec<(usize, usize)>;

/// Compute all ranks' results and (sent, received) element counts for one
/// collective. Runs under the group lock on the last arriving thread, with
/// reductions in ascending-rank order.
fn complete_collective<T: Scalar>(
    op: &PendingOp,
    deposits: Vec<Payload<T>>,
    size: usize,
) -> Result<(Vec<Payload<T>>, Accounting)> {
    match op {
        PendingOp::Barrier => Ok((
            deposits.into_iter().map(|_| Payload::Unit).collect(),
            vec![(0, 0); size],
        )),
        PendingOp::AllGather => {
            let parts: Vec<DenseMatrix<T>> =
                deposits.into_iter().map(Payload::into_matrix).collect();
            let cols = parts[0].cols();
            if parts.iter().any(|m| m.cols() != cols) {
                return Err(Error::Protocol(
                    "all_gather: column counts differ across ranks".into(),
                ));
            }
            let total_rows: usize = parts.iter().map(|m| m.rows()).sum();
            let accounting = parts
                .iter()
                .map(|m| {
                    let sent = m.rows() * cols * (size - 1);
                    let received = (total_rows - m.rows()) * cols;
                    (sent, received)
                })
                .collect();
            let gathered = DenseMatrix::concat_rows(&parts)?;
            let results = (0..size)
                .map(|_| Payload::Matrix(gathered.clone()))
                .collect();
            Ok((results, accounting))
        }
        PendingOp::ReduceScatter(plan) => {
            let parts: Vec<DenseMatrix<T>> =
                deposits.into_iter().map(Payload::into_matrix).collect();
            let rows = parts[0].rows();
            let cols = parts[0].cols();
            if parts.iter().any(|m| m.rows() != rows || m.cols() != cols) {
                return Err(Error::Protocol(
                    "reduce_scatter: contribution shapes differ across ranks".into(),
                ));
            }
            if plan.num_nodes() != rows || plan.num_parts() != size {
                return Err(Error::Protocol(format!(
                    "reduce_scatter: plan {}x{} does not match {rows} rows on {size} ranks",
                    plan.num_nodes(),
                    plan.num_parts()
                )));
            }
            let mut acc = parts[0].clone();
            for m in &parts[1..] {
                acc.add_assign(m)?;
            }
            let mut results = Vec::with_capacity(size);
            let mut accounting = Vec::with_capacity(size);
            for r in 0..size {
                let range = plan.range(r);
                results.push(Payload::Matrix(acc.row_slice(range.start, range.end)));
                let own = plan.part_size(r) * cols;
                accounting.push(((rows * cols) - own, own * (size - 1)));
            }
            Ok((results, accounting))
        }
        PendingOp::AllToAll(axis) => {
            let mats: Vec<Vec<DenseMatrix<T>>> = deposits
                .into_iter()
                .map(|p| match p {
                    Payload::Blocks(b) => b,
                    _ => unreachable!(),
                })
                .collect();
            let mut results = Vec::with_capacity(size);
            let mut accounting = vec![(0usize, 0usize); size];
            for (sender, blocks) in mats.iter().enumerate() {
                for (dest, block) in blocks.iter().enumerate() {
                    if sender != dest {
                        accounting[sender].0 += block.len();
                        accounting[dest].1 += block.len();
                    }
                }
            }
            for r in 0..size {
                let incoming: Vec<DenseMatrix<T>> =
                    mats.iter().map(|blocks| blocks[r].clone()).collect();
                let joined = match axis {
                    ConcatAxis::Rows => DenseMatrix::concat_rows(&incoming),
                    ConcatAxis::Cols => DenseMatrix::concat_cols(&incoming),
                }
                .map_err(|e| {
                    Error::Protocol(format!("all_to_all: incompatible blocks for rank {r}: {e}"))
                })?;
                results.push(Payload::Matrix(joined));
            }
            Ok((results, accounting))
        }
        PendingOp::AllReduce => {
            let parts: Vec<DenseMatrix<T>> =
                deposits.into_iter().map(Payload::into_matrix).collect();
            let rows = parts[0].rows();
            let cols = parts[0].cols();
            if parts.iter().any(|m| m.rows() != rows || m.cols() != cols) {
                return Err(Error::Protocol(
                    "all_reduce: contribution shapes differ across ranks".into(),
                ));
            }
            let mut acc = parts[0].clone();
            for m in &parts[1..] {
                acc.add_assign(m)?;
            }
            let volume = rows * cols * (size - 1);
            let results = (0..size).map(|_| Payload::Matrix(acc.clone())).collect();
            Ok((results, vec![(volume, volume); size]))
        }
    }
}

/// Run `size` workers on scoped threads and collect their results in rank
/// order. A rank that fails poisons the group so siblings blocked in a
/// collective fail fast instead of hanging; the first error by rank order is
/// returned. The group's ledger snapshot is returned alongside.
pub fn run_workers<T, R, F>(size: usize, f: F) -> Result<(Vec<R>, CommLedger)>
where
    T: Scalar,
    R: Send,
    F: Fn(usize, &Arc<WorkerGroup<T>>) -> Result<R> + Sync,
{
    let group = WorkerGroup::<T>::new(size)?;
    let results: Vec<Result<R>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..size)
            .map(|rank| {
                let group = &group;
                let f = &f;
                scope.spawn(move || {
                    let out = f(rank, group);
                    if let Err(e) = &out {
                        group.abort(&format!("rank {rank} failed: {e}"));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let ledger = group.ledger();
    let mut collected = Vec::with_capacity(size);
    for r in results {
        collected.push(r?);
    }
    Ok((collected, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::plan_partition;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn mat(rows: usize, cols: usize, vals: &[f64]) -> DenseMatrix<f64> {
        DenseMatrix::from_rows(rows, cols, vals.to_vec()).unwrap()
    }

    #[test]
    fn all_gather_two_ranks() {
        let (outs, ledger) = run_workers::<f64, _, _>(2, |rank, g| {
            let local = mat(1, 1, &[(rank + 1) as f64]);
            g.all_gather(rank, local)
        })
        .unwrap();
        for out in &outs {
            assert_eq!(out, &mat(2, 1, &[1.0, 2.0]));
        }
        assert_eq!(ledger.received(0, PrimitiveKind::AllGather), 1);
        assert_eq!(ledger.sent(0, PrimitiveKind::AllGather), 1);
    }

    #[test]
    fn all_gather_single_rank_is_identity_and_free() {
        let (outs, ledger) = run_workers::<f64, _, _>(1, |rank, g| {
            g.all_gather(rank, mat(2, 2, &[1.0, 2.0, 3.0, 4.0]))
        })
        .unwrap();
        assert_eq!(outs[0], mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let e = ledger.entry(0, PrimitiveKind::AllGather);
        assert_eq!(e.calls, 1);
        assert_eq!(e.elements_sent, 0);
        assert_eq!(e.elements_received, 0);
    }

    #[test]
    fn all_gather_volume_matches_formula() {
        // p=2, N=8, d=4: received per rank = N*d*(p-1)/p = 16.
        let plan = plan_partition(8, 2).unwrap();
        let (_, ledger) = run_workers::<f64, _, _>(2, |rank, g| {
            let rows = plan.part_size(rank);
            g.all_gather(rank, DenseMatrix::zeros(rows, 4))
        })
        .unwrap();
        for rank in 0..2 {
            assert_eq!(ledger.received(rank, PrimitiveKind::AllGather), 16);
            assert_eq!(ledger.sent(rank, PrimitiveKind::AllGather), 16);
        }
    }

    #[test]
    fn all_gather_ragged_rows() {
        let (outs, _) = run_workers::<f64, _, _>(3, |rank, g| {
            let rows = if rank == 0 { 2 } else { 1 };
            let vals: Vec<f64> = (0..rows).map(|i| (rank * 10 + i) as f64).collect();
            g.all_gather(rank, mat(rows, 1, &vals))
        })
        .unwrap();
        assert_eq!(outs[1], mat(4, 1, &[0.0, 1.0, 10.0, 20.0]));
    }

    #[test]
    fn all_gather_column_mismatch_is_protocol_error() {
        let result = run_workers::<f64, _, _>(2, |rank, g| {
            let cols = rank + 1;
            g.all_gather(rank, DenseMatrix::zeros(1, cols))
        });
        assert!(matches!(result, Err(Error::Protocol(_))));
    }

    #[test]
    fn reduce_scatter_even_split() {
        let plan = plan_partition(2, 2).unwrap();
        let (outs, _) = run_workers::<f64, _, _>(2, |rank, g| {
            let contribution = if rank == 0 {
                mat(2, 1, &[1.0, 2.0])
            } else {
                mat(2, 1, &[3.0, 4.0])
            };
            g.reduce_scatter(rank, contribution, &plan)
        })
        .unwrap();
        assert_eq!(outs[0], mat(1, 1, &[4.0]));
        assert_eq!(outs[1], mat(1, 1, &[6.0]));
    }

    #[test]
    fn reduce_scatter_zero_contribution_is_identity() {
        let plan = plan_partition(4, 2).unwrap();
        let (outs, _) = run_workers::<f64, _, _>(2, |rank, g| {
            let contribution = if rank == 0 {
                DenseMatrix::zeros(4, 1)
            } else {
                mat(4, 1, &[5.0, 6.0, 7.0, 8.0])
            };
            g.reduce_scatter(rank, contribution, &plan)
        })
        .unwrap();
        assert_eq!(outs[0], mat(2, 1, &[5.0, 6.0]));
        assert_eq!(outs[1], mat(2, 1, &[7.0, 8.0]));
    }

    #[test]
    fn all_to_all_transposes_block_matrix() {
        let (outs, _) = run_workers::<f64, _, _>(2, |rank, g| {
            let blocks = vec![
                mat(1, 1, &[(10 * rank) as f64]),
                mat(1, 1, &[(10 * rank + 1) as f64]),
            ];
            g.all_to_all(rank, blocks, ConcatAxis::Rows)
        })
        .unwrap();
        assert_eq!(outs[0], mat(2, 1, &[0.0, 10.0]));
        assert_eq!(outs[1], mat(2, 1, &[1.0, 11.0]));
    }

    #[test]
    fn all_to_all_single_rank_is_identity_and_free() {
        let (outs, ledger) = run_workers::<f64, _, _>(1, |rank, g| {
            g.all_to_all(rank, vec![mat(1, 2, &[7.0, 8.0])], ConcatAxis::Cols)
        })
        .unwrap();
        assert_eq!(outs[0], mat(1, 2, &[7.0, 8.0]));
        let e = ledger.entry(0, PrimitiveKind::AllToAll);
        assert_eq!((e.elements_sent, e.elements_received), (0, 0));
    }

    #[test]
    fn all_to_all_wrong_block_count_is_protocol_error() {
        let result = run_workers::<f64, _, _>(2, |rank, g| {
            let blocks = vec![mat(1, 1, &[0.0]); rank + 1];
            g.all_to_all(rank, blocks, ConcatAxis::Rows)
        });
        assert!(matches!(result, Err(Error::Protocol(_))));
    }

    #[test]
    fn mismatched_collectives_poison_the_group() {
        let result = run_workers::<f64, _, _>(2, |rank, g| {
            if rank == 0 {
                g.all_gather(rank, mat(1, 1, &[1.0]))?;
            } else {
                g.barrier(rank)?;
            }
            Ok(())
        });
        assert!(matches!(result, Err(Error::Protocol(_))));
    }

    #[test]
    fn barrier_releases_all_after_last_arrival() {
        let arrived = AtomicUsize::new(0);
        run_workers::<f64, _, _>(4, |rank, g| {
            std::thread::sleep(std::time::Duration::from_millis(5 * rank as u64));
            arrived.fetch_add(1, Ordering::SeqCst);
            g.barrier(rank)?;
            assert_eq!(arrived.load(Ordering::SeqCst), 4);
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn barrier_generation_increments_once_per_call() {
        let group = WorkerGroup::<f64>::new(1).unwrap();
        assert_eq!(group.barrier_generation(), 0);
        group.barrier(0).unwrap();
        group.barrier(0).unwrap();
        assert_eq!(group.barrier_generation(), 2);
    }

    #[test]
    fn all_reduce_sums_and_replicates() {
        let (outs, ledger) = run_workers::<f64, _, _>(3, |rank, g| {
            g.all_reduce(rank, mat(1, 2, &[rank as f64, 1.0]))
        })
        .unwrap();
        for out in &outs {
            assert_eq!(out, &mat(1, 2, &[3.0, 3.0]));
        }
        assert_eq!(ledger.received(2, PrimitiveKind::AllReduce), 4);
    }

    #[test]
    fn conservation_and_determinism_over_mixed_rounds() {
        let plan = plan_partition(6, 3).unwrap();
        let run = || {
            run_workers::<f64, _, _>(3, |rank, g| {
                let local = DenseMatrix::from_fn(plan.part_size(rank), 2, |i, j| {
                    (rank * 100 + i * 10 + j) as f64
                });
                let gathered = g.all_gather(rank, local)?;
                let reduced = g.reduce_scatter(rank, gathered.scale(0.5), &plan)?;
                let blocks: Vec<_> = (0..3).map(|_| reduced.clone()).collect();
                g.all_to_all(rank, blocks, ConcatAxis::Rows)
            })
            .unwrap()
        };
        let (outs1, ledger1) = run();
        let (outs2, ledger2) = run();
        assert_eq!(outs1, outs2);
        assert_eq!(ledger1, ledger2);
        for kind in [
            PrimitiveKind::AllGather,
            PrimitiveKind::ReduceScatter,
            PrimitiveKind::AllToAll,
        ] {
            let sent: usize = (0..3).map(|r| ledger1.sent(r, kind)).sum();
            let received: usize = (0..3).map(|r| ledger1.received(r, kind)).sum();
            assert_eq!(sent, received, "{kind:?} conservation");
        }
    }

    #[test]
    fn ledger_export_is_line_delimited() {
        let (_, ledger) = run_workers::<f64, _, _>(2, |rank, g| {
            g.all_gather(rank, mat(1, 1, &[rank as f64]))
        })
        .unwrap();
        let report = ledger.export();
        let mut lines = report.lines();
        assert_eq!(
            lines.next().unwrap(),
            "rank,primitive,calls,elements_sent,elements_received"
        );
        assert_eq!(lines.next().unwrap(), "0,all_gather,1,1,1");
        assert_eq!(lines.next().unwrap(), "1,all_gather,1,1,1");
    }
}
