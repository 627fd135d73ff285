use std::collections::HashMap;

use super::{Verifier, VerifyError};
use crate::answer::normalize_answer;
use crate::arith::{parse_prompt, parse_step, prefix_sums, ParsedStep};

/// Ground-truth verifier for the running-sum task.
///
/// A step scores 1.0 when it and every earlier step are correct: step `i`
/// must be `Step i: sum = s_i.` with `s_i` the true prefix sum, and an
/// `Answer:` step must carry the total (and the recorded gold answer for the
/// prompt, when one is known). Anything else scores 0.0.
#[derive(Debug, Clone, Default)]
pub struct OracleVerifier {
    gold: HashMap<String, String>,
}

impl OracleVerifier {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also checks `Answer:` steps against `gold` (prompt -> answer).
    pub fn with_gold<I, P, A>(gold: I) -> Self
    where
        I: IntoIterator<Item = (P, A)>,
        P: AsRef<str>,
        A: AsRef<str>,
    {
        Self {
            gold: gold
                .into_iter()
                .map(|(p, a)| (p.as_ref().trim().to_string(), normalize_answer(a.as_ref())))
                .collect(),
        }
    }
}

impl Verifier for OracleVerifier {
    fn verifier_id(&self) -> &str {
        "oracle"
    }

    fn score_steps(&self, context: &str, steps: &[&str]) -> Result<Vec<f64>, VerifyError> {
        let numbers = parse_prompt(context).ok_or_else(|| {
            VerifyError::Input("oracle verifier needs an `Add: ...` prompt".into())
        })?;
        let sums = prefix_sums(&numbers);
        let total = *sums.last().expect("non-empty prompt");
        let gold = self.gold.get(context.trim());
        let mut ok = true;
        let mut scores = Vec::with_capacity(steps.len());
        for (i, step) in steps.iter().enumerate() {
            ok &= match parse_step(step) {
                ParsedStep::Partial { index, value } => {
                    index == i + 1 && index <= sums.len() && value == sums[index - 1]
                }
                ParsedStep::Answer(a) => {
                    let a = normalize_answer(&a);
                    a == total.to_string() && gold.is_none_or(|g| *g == a)
                }
                ParsedStep::Other => false,
            };
            scores.push(if ok { 1.0 } else { 0.0 });
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::score;

    #[test]
    fn scores_partial_sums() {
        let v = OracleVerifier::new();
        let ctx = "Add: 3 5\n";
        assert_eq!(score(&v, ctx, &["Step 1: sum = 3.\n"]).unwrap().value, 1.0);
        assert_eq!(score(&v, ctx, &["Step 1: sum = 4.\n"]).unwrap().value, 0.0);
        let wrong_then_right = v
            .score_steps(ctx, &["Step 1: sum = 4.\n", "Step 2: sum = 8.\n"])
            .unwrap();
        assert_eq!(wrong_then_right, vec![0.0, 0.0]);
        let full = v
            .score_steps(ctx, &["Step 1: sum = 3.\n", "Step 2: total = 8.\n", "Answer: 8<eos>"])
            .unwrap();
        assert_eq!(full, vec![1.0, 1.0, 1.0]);
        assert!(v.score_steps("What is 2+2?", &["4"]).is_err());
    }

    #[test]
    fn gold_overrides() {
        let v = OracleVerifier::with_gold([("Add: 3 5", "9")]);
        let s = v.score_steps("Add: 3 5\n", &["Answer: 8<eos>"]).unwrap();
        assert_eq!(s, vec![0.0]);
    }
}
