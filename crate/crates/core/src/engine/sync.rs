//! Global aggregation over vertex data.
//!
//! A sync folds every vertex payload into an accumulator, merges the
//! per-machine partial accumulators, finalizes, and publishes the result
//! under its key, where scopes read it via `Scope::global`. Distribution
//! contract: each machine folds its owned vertices (ascending id) starting
//! from `acc0`; the coordinator merges partials in ascending machine id and
//! finalizes. For the result to be independent of the partitioning, `merge`
//! must absorb the extra `acc0`s and tolerate any grouping — true of sums,
//! counts, maxima, and the (sum, count) pairs averages are built from.

use std::sync::Arc;

use crate::graph::VertexId;

type FoldFn = dyn Fn(&[u8], VertexId, &[u8]) -> Vec<u8> + Send + Sync;
type MergeFn = dyn Fn(&[u8], &[u8]) -> Vec<u8> + Send + Sync;
type FinalizeFn = dyn Fn(&[u8]) -> Vec<u8> + Send + Sync;

/// One aggregation: key it publishes under, firing cadence, and the three
/// byte-level functions. All three must be pure.
#[derive(Clone)]
pub struct SyncDef {
    pub key: String,
    /// Fire once per crossed multiple of `tau` committed updates, plus a
    /// final publish when the run terminates.
    pub tau: u64,
    pub acc0: Vec<u8>,
    pub fold: Arc<FoldFn>,
    pub merge: Arc<MergeFn>,
    pub finalize: Arc<FinalizeFn>,
}

impl std::fmt::Debug for SyncDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyncDef").field("key", &self.key).field("tau", &self.tau).finish()
    }
}

impl SyncDef {
    /// Folds a machine's owned vertices, ascending. The iterator must
    /// already be sorted; every engine path iterates `LocalGraph::owned`.
    pub fn fold_partial<'a>(
        &self,
        data: impl Iterator<Item = (VertexId, &'a [u8])>,
    ) -> Vec<u8> {
        let mut acc = self.acc0.clone();
        for (v, bytes) in data {
            acc = (self.fold)(&acc, v, bytes);
        }
        acc
    }

    /// Merges per-machine partials (already in ascending machine order) and
    /// finalizes. With one machine there is nothing to merge.
    pub fn merge_and_finalize(&self, partials: &[Vec<u8>]) -> Vec<u8> {
        let mut iter = partials.iter();
        let first = iter.next().expect("at least one partial").clone();
        let merged = iter.fold(first, |acc, p| (self.merge)(&acc, p));
        (self.finalize)(&merged)
    }
}

/// Folds an entire vertex-data iterator on one machine and finalizes —
/// the single-machine semantics every distributed execution must match.
pub fn direct_sync<'a>(
    def: &SyncDef,
    data: impl Iterator<Item = (VertexId, &'a [u8])>,
) -> Vec<u8> {
    def.merge_and_finalize(&[def.fold_partial(data)])
}
