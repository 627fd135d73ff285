use super::{ModelContext, ModelError, Prediction, SequenceModel, TokenId, Vocab};
use crate::prob::TokenDistribution;
use crate::seed::{derive, mix};

/// Shape of the next-token distribution at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    /// One-hot on the preferred token (0 bits).
    Deterministic,
    /// Preferred token with `1 - mass`, one runner-up with `mass`.
    Low(f64),
    /// Uniform over `arity` tokens (`log2 arity` bits).
    Fork(usize),
}

/// Which [`Slot`] each (step, position) gets.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfilePlan {
    /// Slots drawn at random per position. With `context_sensitive` the draw
    /// also depends on the context, so different beams see different
    /// profiles; without it the gating pattern is a function of
    /// (step, position) alone.
    Random {
        fork_rate: f64,
        low_rate: f64,
        max_arity: usize,
        context_sensitive: bool,
    },
    /// Even steps open with a `fork_arity`-way fork, odd steps open with
    /// `certain`; every other position is deterministic.
    Alternating { fork_arity: usize, certain: Slot },
    /// Explicit slots per step (cycled) and position; missing positions are
    /// deterministic.
    Fixed(Vec<Vec<Slot>>),
}

/// Procedural scripted model with a controllable entropy profile.
///
/// Every step has `step_len` tokens: `step_len - 1` filler tokens followed by
/// the `.\n` delimiter, except the last of `n_steps` steps, which ends with
/// `<eos>`. Which filler token is preferred depends on a hash of the full
/// context, so different histories produce different text.
#[derive(Debug, Clone)]
pub struct ProfileModel {
    id: String,
    vocab: Vocab,
    alphabet: usize,
    step_len: usize,
    n_steps: usize,
    seed: u64,
    plan: ProfilePlan,
    delimiter: TokenId,
    eos: TokenId,
}

fn unit(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

impl ProfileModel {
    pub fn new(
        id: impl Into<String>,
        alphabet: usize,
        step_len: usize,
        n_steps: usize,
        seed: u64,
        plan: ProfilePlan,
    ) -> Result<Self, ModelError> {
        if alphabet < 2 || step_len < 2 || n_steps < 1 {
            return Err(ModelError::Parameter(
                "profile model needs alphabet >= 2, step_len >= 2, n_steps >= 1".into(),
            ));
        }
        let fillers = (0..alphabet).map(|i| format!(" t{i}"));
        let vocab = Vocab::with_ascii_fallback(
            fillers.chain([".\n".to_string(), "<eos>".to_string()]),
        )?;
        let delimiter = vocab.id(".\n").expect("delimiter piece");
        let eos = vocab.id("<eos>").expect("eos piece");
        Ok(Self {
            id: id.into(),
            vocab,
            alphabet,
            step_len,
            n_steps,
            seed,
            plan,
            delimiter,
            eos,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step_len(&self) -> usize {
        self.step_len
    }

    /// Slot used at `(step, position)` for a context with hash `context`.
    pub fn slot(&self, step: usize, position: usize, context: u64) -> Slot {
        match &self.plan {
            ProfilePlan::Random {
                fork_rate,
                low_rate,
                max_arity,
                context_sensitive,
            } => {
                let c = if *context_sensitive { context } else { 0 };
                let key = derive(&[self.seed, 1, step as u64, position as u64, c]);
                let u = unit(key);
                if u < *fork_rate {
                    let span = max_arity.saturating_sub(1).max(1) as u64;
                    Slot::Fork(2 + (mix(key) % span) as usize)
                } else if u < fork_rate + low_rate {
                    Slot::Low(0.01 + 0.09 * unit(mix(key ^ 0x55)))
                } else {
                    Slot::Deterministic
                }
            }
            ProfilePlan::Alternating { fork_arity, certain } => match (step % 2, position) {
                (0, 0) => Slot::Fork(*fork_arity),
                (_, 0) => *certain,
                _ => Slot::Deterministic,
            },
            ProfilePlan::Fixed(rows) => rows
                .get(step % rows.len().max(1))
                .and_then(|row| row.get(position))
                .copied()
                .unwrap_or(Slot::Deterministic),
        }
    }

    fn locate(&self, ctx: &ModelContext) -> (usize, usize) {
        let mut step = 0;
        let mut position = 0;
        for id in ctx.generated_ids() {
            if *id == self.delimiter {
                step += 1;
                position = 0;
            } else {
                position += 1;
            }
        }
        (step, position)
    }
}

impl SequenceModel for ProfileModel {
    fn model_id(&self) -> &str {
        &self.id
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
        let v = self.vocab.len();
        let (step, position) = self.locate(ctx);
        if step >= self.n_steps {
            return Ok(Prediction::dense(TokenDistribution::one_hot(v, self.eos as usize)));
        }
        if position + 1 >= self.step_len {
            let end = if step + 1 == self.n_steps { self.eos } else { self.delimiter };
            return Ok(Prediction::dense(TokenDistribution::one_hot(v, end as usize)));
        }
        let context = ctx
            .token_ids()
            .iter()
            .fold(self.seed, |acc, id| mix(acc ^ u64::from(*id)));
        let preferred = (derive(&[self.seed, 2, context]) % self.alphabet as u64) as usize;
        let filler = |k: usize| (preferred + k) % self.alphabet;
        let mut probs = vec![0.0; v];
        match self.slot(step, position, context) {
            Slot::Deterministic => probs[preferred] = 1.0,
            Slot::Low(mass) => {
                probs[filler(0)] = 1.0 - mass;
                probs[filler(1)] += mass;
            }
            Slot::Fork(arity) => {
                let arity = arity.clamp(1, self.alphabet);
                for k in 0..arity {
                    probs[filler(k)] = 1.0 / arity as f64;
                }
            }
        }
        Ok(Prediction::dense(TokenDistribution::new(probs)?))
    }
}
