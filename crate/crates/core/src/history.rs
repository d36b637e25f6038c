//! Append-only candidate store and the two context-selection strategies.

use std::collections::{HashMap, HashSet};

use crate::error::HistoryError;
use crate::model::{CandidateKey, ContextSize, ContextStrategy, ScoredCandidate};
use crate::rng::{stream, DetRng};

#[derive(Debug, Clone)]
pub struct History {
    entries: Vec<ScoredCandidate>,
    keys: HashSet<CandidateKey>,
    rng: DetRng,
}

impl History {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            keys: HashSet::new(),
            rng: DetRng::new(rng_seed, stream::HISTORY),
        }
    }

    pub fn append(&mut self, candidate: ScoredCandidate) -> Result<(), HistoryError> {
        let key = candidate.key();
        if !self.keys.insert(key) {
            return Err(HistoryError::DuplicateCandidateKey(key));
        }
        self.entries.push(candidate);
        Ok(())
    }

    pub fn entries(&self) -> &[ScoredCandidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: CandidateKey) -> bool {
        self.keys.contains(&key)
    }

    /// Non-failed entries deduplicated by prompt text, keeping the
    /// highest-scoring occurrence (earliest on ties), in append order of the
    /// kept occurrence.
    pub fn dedup_view(&self) -> Vec<&ScoredCandidate> {
        self.dedup_indices().into_iter().map(|i| &self.entries[i]).collect()
    }

    fn dedup_indices(&self) -> Vec<usize> {
        let mut best: HashMap<&str, usize> = HashMap::new();
        for (i, c) in self.entries.iter().enumerate() {
            if c.is_failed() {
                continue;
            }
            best.entry(c.prompt.as_str())
                .and_modify(|j| {
                    if c.mean_score > self.entries[*j].mean_score {
                        *j = i;
                    }
                })
                .or_insert(i);
        }
        let mut kept: Vec<usize> = best.into_values().collect();
        kept.sort_unstable();
        kept
    }

    /// Top-`k` distinct prompts by mean score, ordered worst first, best last.
    pub fn select_optimizer_context(&self, k: usize) -> Vec<ScoredCandidate> {
        top_k(self.dedup_view(), k)
    }

    /// Hint-generator context. `Random` draws without replacement from the
    /// history's own stream and returns entries in draw order.
    pub fn select_hint_context(&mut self, k: ContextSize, strategy: ContextStrategy) -> Vec<ScoredCandidate> {
        let view = self.dedup_indices();
        match k {
            ContextSize::All => view.into_iter().map(|i| self.entries[i].clone()).collect(),
            ContextSize::Count(k) => match strategy {
                ContextStrategy::Best => self.select_optimizer_context(k),
                ContextStrategy::Random => {
                    let picks = self.rng.sample_indices(view.len(), k);
                    picks.into_iter().map(|j| self.entries[view[j]].clone()).collect()
                }
            },
        }
    }

    /// `amount` random distinct entries of the dedup view that are not in `exclude`.
    pub fn sample_excluding(
        &self,
        rng: &mut DetRng,
        amount: ContextSize,
        exclude: &[ScoredCandidate],
    ) -> Vec<ScoredCandidate> {
        let excluded: HashSet<&str> = exclude.iter().map(|c| c.prompt.as_str()).collect();
        let pool: Vec<&ScoredCandidate> = self
            .dedup_view()
            .into_iter()
            .filter(|c| !excluded.contains(c.prompt.as_str()))
            .collect();
        match amount {
            ContextSize::All => pool.into_iter().cloned().collect(),
            ContextSize::Count(k) => rng
                .sample_indices(pool.len(), k)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect(),
        }
    }

    /// Highest-scoring non-failed entry; earliest append wins ties.
    pub fn best(&self) -> Option<&ScoredCandidate> {
        let mut best: Option<&ScoredCandidate> = None;
        for c in self.entries.iter().filter(|c| !c.is_failed()) {
            if best.is_none_or(|b| c.mean_score > b.mean_score) {
                best = Some(c);
            }
        }
        best
    }
}

fn top_k(view: Vec<&ScoredCandidate>, k: usize) -> Vec<ScoredCandidate> {
    let mut ranked = view;
    // Stable sort: among equal scores the earlier append stays ahead.
    ranked.sort_by(|a, b| b.mean_score.total_cmp(&a.mean_score));
    ranked.truncate(k);
    ranked.reverse();
    ranked.into_iter().cloned().collect()
}
