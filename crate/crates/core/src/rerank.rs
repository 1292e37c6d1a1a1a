//! Extreme-case comparators for re-ranking: pick from the bottom of each
//! long list, or pick uniformly at random.

use rand::seq::index;
use rayon::prelude::*;

use crate::recommend::{RecBatch, RecList};
use crate::seed;

/// Last `n` entries of each long list, least relevant first.
pub fn rerank_reverse(batch: &RecBatch, n: usize) -> RecBatch {
    let lists = batch
        .lists()
        .iter()
        .map(|list| RecList {
            user: list.user,
            entries: list.entries.iter().rev().take(n).copied().collect(),
        })
        .collect();
    batch.with_lists(lists, n.min(batch.list_size()))
}

/// `n` entries per list drawn uniformly without replacement, in draw order.
pub fn rerank_random(batch: &RecBatch, n: usize, seed: u64) -> RecBatch {
    let lists = batch
        .lists()
        .par_iter()
        .map(|list| {
            let mut rng = seed::stream(&[seed, list.user as u64]);
            let k = n.min(list.len());
            let entries = index::sample(&mut rng, list.len(), k)
                .into_iter()
                .map(|pos| list.entries[pos])
                .collect();
            RecList {
                user: list.user,
                entries,
            }
        })
        .collect();
    batch.with_lists(lists, n.min(batch.list_size()))
}
