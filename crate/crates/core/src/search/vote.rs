use std::collections::BTreeMap;

use crate::answer::normalize_answer;

/// One trajectory's final answer and verifier aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteEntry {
    pub answer: String,
    pub score: f64,
}

/// Majority vote over normalized answers. Ties go to the answer with the
/// highest mean score, then to the lexicographically smallest. Empty answers
/// only count when every answer is empty. Returns `None` for no entries.
pub fn self_consistency_vote(entries: &[VoteEntry]) -> Option<String> {
    let mut tally: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for e in entries {
        let slot = tally.entry(normalize_answer(&e.answer)).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += e.score;
    }
    if tally.len() > 1 {
        tally.remove("");
    }
    // BTreeMap iterates in lexicographic order; keep the first of equals.
    let mut best: Option<(&String, usize, f64)> = None;
    for (answer, (count, total)) in &tally {
        let mean = total / *count as f64;
        let better = match best {
            None => true,
            Some((_, c, m)) => *count > c || (*count == c && mean > m),
        };
        if better {
            best = Some((answer, *count, mean));
        }
    }
    best.map(|(a, _, _)| a.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(answer: &str, score: f64) -> VoteEntry {
        VoteEntry {
            answer: answer.into(),
            score,
        }
    }

    #[test]
    fn majority_wins() {
        assert_eq!(
            self_consistency_vote(&[e("A", 0.1), e("A", 0.1), e("B", 0.9)]).unwrap(),
            "a"
        );
    }

    #[test]
    fn tie_broken_by_mean_score_then_lexicographically() {
        assert_eq!(self_consistency_vote(&[e("A", 0.8), e("B", 0.6)]).unwrap(), "a");
        assert_eq!(self_consistency_vote(&[e("A", 0.6), e("B", 0.8)]).unwrap(), "b");
        assert_eq!(self_consistency_vote(&[e("B", 0.5), e("A", 0.5)]).unwrap(), "a");
    }

    #[test]
    fn unanimity_and_normalization() {
        let all: Vec<_> = (0..16).map(|_| e("42", 0.3)).collect();
        assert_eq!(self_consistency_vote(&all).unwrap(), "42");
        assert_eq!(self_consistency_vote(&[e("2.0", 0.1), e(" 2 ", 0.1), e("3", 0.9)]).unwrap(), "2");
        assert_eq!(self_consistency_vote(&[e("", 1.0), e("", 1.0), e("7", 0.0)]).unwrap(), "7");
        assert_eq!(self_consistency_vote(&[]), None);
    }
}
