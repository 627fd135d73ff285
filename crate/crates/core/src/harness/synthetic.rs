use serde::{Deserialize, Serialize};

use super::Problem;
use crate::arith::{parse_prompt, parse_step, render_prompt, ParsedStep};
use crate::lm::{ModelContext, ModelError, Prediction, SequenceModel, TokenId, Vocab};
use crate::prob::TokenDistribution;
use crate::seed::{derive, hash_bytes};
use crate::verify::OracleVerifier;

/// Shape of the distribution at a fork.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeProfile {
    /// Number of values offered at a fork (the correct one plus
    /// `fork_arity - 1` wrong ones).
    pub fork_arity: usize,
    /// Probability of the correct value at a fork.
    pub correct_mass: f64,
    /// Probability of writing `total` instead of `sum` in a step; a small
    /// amount of off-fork entropy.
    pub background: f64,
}

impl Default for SpikeProfile {
    fn default() -> Self {
        Self {
            fork_arity: 2,
            correct_mass: 0.5,
            background: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub n_problems: usize,
    /// Forked steps per problem.
    pub fork_depth: usize,
    pub spike_profile: SpikeProfile,
    /// Unforked steps per problem on top of the forked ones.
    pub extra_steps: usize,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            n_problems: 10,
            fork_depth: 3,
            spike_profile: SpikeProfile::default(),
            extra_steps: 1,
            seed: 0,
        }
    }
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let p = &self.spike_profile;
        if self.n_problems == 0 {
            return Err(ModelError::Parameter("n_problems must be >= 1".into()));
        }
        if self.fork_depth + self.extra_steps == 0 {
            return Err(ModelError::Parameter("problems need at least one step".into()));
        }
        if p.fork_arity == 0 {
            return Err(ModelError::Parameter("fork_arity must be >= 1".into()));
        }
        for (name, v) in [("correct_mass", p.correct_mass), ("background", p.background)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::Parameter(format!("{name} {v} is outside [0, 1]")));
            }
        }
        if p.fork_arity == 1 && p.correct_mass != 1.0 {
            return Err(ModelError::Parameter("a 1-way fork needs correct_mass = 1".into()));
        }
        Ok(())
    }

    fn n_steps(&self) -> usize {
        self.fork_depth + self.extra_steps
    }
}

/// Generated benchmark: problems, the model that solves them with forks,
/// and the matching ground-truth verifier.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub problems: Vec<Problem>,
    pub model: ArithmeticModel,
    pub verifier: OracleVerifier,
}

/// Builds `n_problems` running-sum problems. The model writes one partial
/// sum per step; on `fork_depth` steps of each problem the value token splits
/// between the correct sum and `fork_arity - 1` wrong ones, and everything
/// else is (near) deterministic. Wrong values are always too large and later
/// steps add to whatever was written, so one wrong fork makes the answer
/// wrong.
pub fn build_synthetic_suite(spec: &SuiteSpec) -> Result<SyntheticSuite, ModelError> {
    spec.validate()?;
    let model = ArithmeticModel::new(spec.clone())?;
    let problems: Vec<Problem> = (0..spec.n_problems)
        .map(|i| {
            let numbers: Vec<i64> = (0..spec.n_steps())
                .map(|k| 1 + (derive(&[spec.seed, 11, i as u64, k as u64]) % 9) as i64)
                .collect();
            Problem {
                id: format!("syn-{i:04}"),
                prompt: render_prompt(&numbers),
                gold_answer: numbers.iter().sum::<i64>().to_string(),
                tags: vec!["synthetic".into(), format!("forks={}", spec.fork_depth)],
            }
        })
        .collect();
    let verifier = OracleVerifier::with_gold(problems.iter().map(|p| (&p.prompt, &p.gold_answer)));
    Ok(SyntheticSuite {
        problems,
        model,
        verifier,
    })
}

/// Procedural model for the running-sum task. Everything it needs (the
/// numbers and which steps fork) is derived from the prompt and the suite
/// seed, so it serves any prompt of the `Add: ...` form.
#[derive(Debug, Clone)]
pub struct ArithmeticModel {
    spec: SuiteSpec,
    vocab: Vocab,
    max_value: i64,
    delimiter: TokenId,
    eos: TokenId,
}

const WORDS: [&str; 8] = ["Step", "Answer", ":", " sum", " total", " =", ".\n", "<eos>"];

impl ArithmeticModel {
    pub fn new(spec: SuiteSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let n = spec.n_steps() as i64;
        let max_value = 9 * n + (spec.spike_profile.fork_arity as i64) * spec.fork_depth as i64 + n + 9;
        let pieces = std::iter::once("Add:".to_string())
            .chain(WORDS.iter().map(|w| w.to_string()))
            .chain((0..=max_value).map(|v| format!(" {v}")));
        let vocab = Vocab::with_ascii_fallback(pieces)?;
        Ok(Self {
            delimiter: vocab.id(".\n").expect("delimiter"),
            eos: vocab.id("<eos>").expect("eos"),
            spec,
            vocab,
            max_value,
        })
    }

    pub fn spec(&self) -> &SuiteSpec {
        &self.spec
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Steps (1-based) whose value token forks, for `prompt`.
    pub fn fork_steps(&self, prompt: &str) -> Vec<usize> {
        let n = self.spec.n_steps();
        let h = hash_bytes(prompt.trim().as_bytes());
        let mut order: Vec<(u64, usize)> = (1..=n)
            .map(|i| (derive(&[self.spec.seed, 13, h, i as u64]), i))
            .collect();
        order.sort_unstable();
        let mut forks: Vec<usize> = order
            .into_iter()
            .take(self.spec.fork_depth)
            .map(|(_, i)| i)
            .collect();
        forks.sort_unstable();
        forks
    }

    fn id(&self, piece: &str) -> usize {
        self.vocab.id(piece).expect("piece in vocabulary") as usize
    }

    fn number(&self, v: i64) -> Result<usize, ModelError> {
        if !(0..=self.max_value).contains(&v) {
            return Err(ModelError::Parameter(format!("value {v} outside the model's range")));
        }
        Ok(self.id(&format!(" {v}")))
    }

    fn one_hot(&self, index: usize) -> Prediction {
        Prediction::dense(TokenDistribution::one_hot(self.vocab.len(), index))
    }
}

impl SequenceModel for ArithmeticModel {
    fn model_id(&self) -> &str {
        "synthetic-arith"
    }

    fn encode_prompt(&self, prompt: &str) -> Result<Vec<TokenId>, ModelError> {
        self.vocab.encode(prompt)
    }

    fn token_text(&self, id: TokenId) -> Result<String, ModelError> {
        self.vocab
            .piece(id)
            .map(str::to_string)
            .ok_or(ModelError::UnknownToken(id))
    }

    fn next_distribution(&self, ctx: &ModelContext) -> Result<Prediction, ModelError> {
        let numbers = parse_prompt(ctx.prompt())
            .ok_or_else(|| ModelError::Parameter(format!("not an `Add:` prompt: {:?}", ctx.prompt())))?;
        let ids = ctx.generated_ids();
        let done = ids.iter().filter(|id| **id == self.delimiter).count();
        let position = ids
            .iter()
            .rev()
            .take_while(|id| **id != self.delimiter)
            .count();
        if ids.last() == Some(&self.eos) {
            return Ok(self.one_hot(self.eos as usize));
        }
        let prev = ctx
            .generated_text()
            .split_inclusive(".\n")
            .filter(|s| s.ends_with(".\n"))
            .last()
            .and_then(|s| match parse_step(s) {
                ParsedStep::Partial { value, .. } => Some(value),
                _ => None,
            })
            .unwrap_or(0);
        let v = self.vocab.len();
        if done < numbers.len() {
            let index = done + 1;
            let p = &self.spec.spike_profile;
            return Ok(match position {
                0 => self.one_hot(self.id("Step")),
                1 => self.one_hot(self.number(index as i64)?),
                2 => self.one_hot(self.id(":")),
                3 => {
                    let mut probs = vec![0.0; v];
                    probs[self.id(" sum")] = 1.0 - p.background;
                    probs[self.id(" total")] += p.background;
                    Prediction::dense(TokenDistribution::new(probs)?)
                }
                4 => self.one_hot(self.id(" =")),
                5 => {
                    let correct = prev + numbers[done];
                    if self.fork_steps(ctx.prompt()).contains(&index) && p.fork_arity > 1 {
                        let mut probs = vec![0.0; v];
                        probs[self.number(correct)?] = p.correct_mass;
                        let wrong = (1.0 - p.correct_mass) / (p.fork_arity - 1) as f64;
                        for k in 1..p.fork_arity as i64 {
                            probs[self.number(correct + k)?] = wrong;
                        }
                        Prediction::dense(TokenDistribution::new(probs)?)
                    } else {
                        self.one_hot(self.number(correct)?)
                    }
                }
                _ => self.one_hot(self.delimiter as usize),
            });
        }
        Ok(match position {
            0 => self.one_hot(self.id("Answer")),
            1 => self.one_hot(self.id(":")),
            2 => self.one_hot(self.number(prev)?),
            _ => self.one_hot(self.eos as usize),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{generate_step, SamplerSettings, StepBoundaryRule};
    use crate::seed::StreamKey;
    use crate::verify::Verifier;

    fn walk(model: &ArithmeticModel, prompt: &str, seed: u64) -> Vec<String> {
        let rule = StepBoundaryRule::default();
        let mut ctx = ModelContext::from_prompt(model, prompt).unwrap();
        let mut steps = Vec::new();
        for step in 1..20 {
            let out = generate_step(model, &ctx, &rule, SamplerSettings::sampled(1.0), StreamKey::new(seed, step, 0)).unwrap();
            if out.events.is_empty() {
                break;
            }
            for e in &out.events {
                ctx.push(e.token_id, &e.text);
            }
            steps.push(out.text());
        }
        steps
    }

    #[test]
    fn greedy_path_is_correct_and_oracle_agrees() {
        let spec = SuiteSpec {
            n_problems: 3,
            fork_depth: 2,
            extra_steps: 1,
            spike_profile: SpikeProfile {
                fork_arity: 2,
                correct_mass: 1.0,
                background: 0.0,
            },
            seed: 4,
        };
        let suite = build_synthetic_suite(&spec).unwrap();
        for p in &suite.problems {
            let steps = walk(&suite.model, &p.prompt, 0);
            assert_eq!(steps.len(), 4);
            assert!(steps[0].starts_with("Step 1: sum = "));
            assert_eq!(steps[3], format!("Answer: {}<eos>", p.gold_answer));
            let refs: Vec<&str> = steps.iter().map(String::as_str).collect();
            let scores = suite.verifier.score_steps(&p.prompt, &refs).unwrap();
            assert_eq!(scores, vec![1.0; 4]);
        }
    }

    #[test]
    fn forks_split_between_correct_and_wrong() {
        let spec = SuiteSpec {
            n_problems: 1,
            fork_depth: 1,
            extra_steps: 0,
            ..SuiteSpec::default()
        };
        let suite = build_synthetic_suite(&spec).unwrap();
        let p = &suite.problems[0];
        let mut answers = std::collections::BTreeSet::new();
        for seed in 0..40 {
            let steps = walk(&suite.model, &p.prompt, seed);
            answers.insert(steps.last().unwrap().clone());
        }
        let gold: i64 = p.gold_answer.parse().unwrap();
        let expected: std::collections::BTreeSet<String> =
            [gold, gold + 1].iter().map(|v| format!("Answer: {v}<eos>")).collect();
        assert_eq!(answers, expected);
    }

    #[test]
    fn fork_steps_are_deterministic() {
        let suite = build_synthetic_suite(&SuiteSpec::default()).unwrap();
        let p = &suite.problems[0].prompt;
        assert_eq!(suite.model.fork_steps(p), suite.model.fork_steps(p));
        assert_eq!(suite.model.fork_steps(p).len(), 3);
    }
}
