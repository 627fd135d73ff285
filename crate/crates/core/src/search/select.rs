use std::collections::{BTreeSet, HashMap};

use super::{Beam, Candidate, CandidatePool, Removed, SearchConfig, SearchError};
use crate::exec::Executor;
use crate::lm::TokenId;
use crate::verify::{aggregate_scores, score_path, sort_scored, ScoredCandidate, Verifier};

/// Removes candidates whose full token sequence (beam context plus
/// continuation) repeats an earlier entry. Entries are in (beam, branch)
/// order, so the first occurrence is the one with the lowest beam index and
/// then the lowest branch index.
pub fn dedup(mut pool: CandidatePool, beams: &[Beam]) -> CandidatePool {
    let mut seen: HashMap<Vec<TokenId>, usize> = HashMap::new();
    let mut kept = Vec::with_capacity(pool.entries.len());
    for candidate in std::mem::take(&mut pool.entries) {
        let mut key = beams[candidate.source_beam].ctx.token_ids().to_vec();
        key.extend(candidate.events.iter().map(|e| e.token_id));
        match seen.get(&key) {
            Some(&survivor) => {
                pool.dedup_removed += 1;
                pool.removed.push(Removed {
                    candidate,
                    survivor,
                });
            }
            None => {
                seen.insert(key, kept.len());
                kept.push(candidate);
            }
        }
    }
    pool.entries = kept;
    pool
}

/// Scored pool entries, best first.
#[derive(Debug, Clone)]
pub struct Ranking {
    pub order: Vec<ScoredCandidate>,
    pub verifier_calls: usize,
}

/// Scores every pool entry and sorts them. New candidates are scored by the
/// verifier, one call each; finished beams keep their frozen aggregate.
pub fn rank_candidates<V: Verifier + ?Sized>(
    pool: &CandidatePool,
    beams: &[Beam],
    cfg: &SearchConfig,
    verifier: &V,
    step: usize,
    exec: &Executor,
) -> Result<Ranking, SearchError> {
    let indexed: Vec<(usize, &Candidate)> = pool.entries.iter().enumerate().collect();
    let scored = exec.map(&indexed, |(i, c)| {
        let beam = &beams[c.source_beam];
        if c.passthrough {
            return Ok(ScoredCandidate {
                candidate: *i,
                source_beam: c.source_beam,
                branch: c.branch,
                step_scores: beam.steps.iter().map(|s| s.score.clone()).collect(),
                aggregate: beam.aggregate,
            });
        }
        let new_text = c.text();
        let mut steps = beam.step_texts();
        steps.push(&new_text);
        let fail = |source| SearchError::Verifier {
            step,
            beam: c.source_beam,
            branch: c.branch,
            source,
        };
        let mut fresh = score_path(verifier, beam.ctx.prompt(), &steps).map_err(fail)?;
        let step_scores = if cfg.rescore_history {
            fresh
        } else {
            let newest = fresh.pop().expect("one score per step");
            let mut kept: Vec<_> = beam.steps.iter().map(|s| s.score.clone()).collect();
            kept.push(newest);
            kept
        };
        let values: Vec<f64> = step_scores.iter().map(|s| s.value).collect();
        let aggregate = aggregate_scores(&values, cfg.aggregation).map_err(fail)?;
        Ok(ScoredCandidate {
            candidate: *i,
            source_beam: c.source_beam,
            branch: c.branch,
            step_scores,
            aggregate,
        })
    });
    let scored = scored.into_iter().collect::<Result<Vec<_>, SearchError>>()?;
    Ok(Ranking {
        verifier_calls: pool.entries.iter().filter(|c| !c.passthrough).count(),
        order: sort_scored(scored),
    })
}

/// Where a selected beam comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    /// A ranked pool entry (index into `Ranking::order`).
    Ranked(usize),
    /// A removed duplicate (index into `CandidatePool::removed`), scored as
    /// its survivor (index into `Ranking::order`).
    Readmitted { removed: usize, rank: usize },
    /// A copy of a ranked entry.
    Replica(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Selected beams in order, with the lane each one draws from next.
    pub picks: Vec<(Pick, usize)>,
    pub readmitted: usize,
    pub replicated: usize,
}

/// Keeps the top `k` of the ranking. When fewer than `k` distinct entries
/// exist, removed duplicates are re-admitted in the order of their
/// survivors' ranks, and after that ranked entries are replicated
/// cyclically.
///
/// Each selected beam keeps the lane of the candidate it came from unless
/// an earlier pick already holds it; it then takes the lowest free lane.
pub fn select(pool: &CandidatePool, ranking: &Ranking, k: usize) -> Selection {
    let n = ranking.order.len();
    let mut picks: Vec<Pick> = (0..n.min(k)).map(Pick::Ranked).collect();
    let mut readmitted = 0;
    let mut replicated = 0;
    if picks.len() < k {
        let mut rank_of = vec![0; pool.entries.len()];
        for (rank, s) in ranking.order.iter().enumerate() {
            rank_of[s.candidate] = rank;
        }
        let mut removed: Vec<(usize, usize)> = pool
            .removed
            .iter()
            .enumerate()
            .map(|(i, r)| (rank_of[r.survivor], i))
            .collect();
        removed.sort();
        for (rank, i) in removed.into_iter().take(k - picks.len()) {
            picks.push(Pick::Readmitted { removed: i, rank });
            readmitted += 1;
        }
    }
    let mut cycle = 0;
    while picks.len() < k && n > 0 {
        picks.push(Pick::Replica(cycle % n));
        cycle += 1;
        replicated += 1;
    }
    let mut free: BTreeSet<usize> = (0..k).collect();
    let lanes: Vec<usize> = picks
        .iter()
        .map(|pick| {
            let wanted = match *pick {
                Pick::Ranked(r) => Some(pool.entries[ranking.order[r].candidate].lane),
                Pick::Readmitted { removed, .. } => Some(pool.removed[removed].candidate.lane),
                Pick::Replica(_) => None,
            };
            match wanted {
                Some(lane) if free.remove(&lane) => lane,
                _ => free.pop_first().expect("k lanes for k picks"),
            }
        })
        .collect();
    Selection {
        picks: picks.into_iter().zip(lanes).collect(),
        readmitted,
        replicated,
    }
}

impl Selection {
    /// Materializes the selected beams, numbered in selection order.
    pub fn build_beams(&self, pool: &CandidatePool, ranking: &Ranking, beams: &[Beam]) -> Vec<Beam> {
        self.picks
            .iter()
            .enumerate()
            .map(|(id, (pick, lane))| {
                let (candidate, scored) = match *pick {
                    Pick::Ranked(r) | Pick::Replica(r) => {
                        let s = &ranking.order[r];
                        (&pool.entries[s.candidate], s)
                    }
                    Pick::Readmitted { removed, rank } => {
                        (&pool.removed[removed].candidate, &ranking.order[rank])
                    }
                };
                let parent = &beams[candidate.source_beam];
                let mut beam = if candidate.passthrough {
                    parent.clone()
                } else {
                    parent.extend(candidate, &scored.step_scores, scored.aggregate)
                };
                beam.id = id;
                beam.lane = *lane;
                beam
            })
            .collect()
    }
}
