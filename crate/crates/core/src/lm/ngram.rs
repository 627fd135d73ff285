use std::collections::{BTreeSet, HashMap};

use super::{ModelContext, ModelError, Prediction, SequenceModel, TokenId};
use crate::prob::TokenDistribution;

/// Add-k smoothed n-gram model with backoff to shorter histories.
///
/// Text is split on spaces and tabs; newlines are kept as `"\n"` tokens. A
/// word `w` decodes to the piece `" w"`. At prediction time the longest
/// history of at most `order - 1` tokens that was seen in training is used:
///
/// `P(w | h) = (c(h, w) + k) / (c(h) + k V)`
///
/// Histories never seen (or containing out-of-vocabulary prompt words) back
/// off one order at a time down to the unigram estimate.
#[derive(Debug, Clone)]
pub struct NgramModel {
    id: String,
    words: Vec<String>,
    index: HashMap<String, TokenId>,
    order: usize,
    k: f64,
    /// `levels[n]` maps histories of length `n` to next-token counts.
    levels: Vec<HashMap<Vec<TokenId>, Vec<u64>>>,
}

fn split_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if i > 0 {
            out.push("\n");
        }
        out.extend(line.split([' ', '\t', '\r']).filter(|w| !w.is_empty()));
    }
    out
}

/// Builds an n-gram model whose vocabulary is the set of corpus tokens.
pub fn build_ngram_model(corpus: &str, order: usize, k: f64) -> Result<NgramModel, ModelError> {
    let vocab: BTreeSet<&str> = split_tokens(corpus).into_iter().collect();
    NgramModel::with_vocab(corpus, order, k, vocab.into_iter().map(str::to_string).collect())
}

impl NgramModel {
    /// Builds a model over an explicit vocabulary; every corpus token must be
    /// in it.
    pub fn with_vocab(
        corpus: &str,
        order: usize,
        k: f64,
        vocab: Vec<String>,
    ) -> Result<Self, ModelError> {
        if order < 1 {
            return Err(ModelError::Parameter("n-gram order must be >= 1".into()));
        }
        if !(k >= 0.0) || !k.is_finite() {
            return Err(ModelError::Parameter(format!("add-k constant {k} must be >= 0")));
        }
        let tokens = split_tokens(corpus);
        if tokens.is_empty() {
            return Err(ModelError::Parameter("empty corpus".into()));
        }
        let mut index = HashMap::new();
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i as TokenId).is_some() {
                return Err(ModelError::Parameter(format!("duplicate vocabulary word {w:?}")));
            }
        }
        let ids = tokens
            .iter()
            .map(|t| {
                index
                    .get(*t)
                    .copied()
                    .ok_or_else(|| ModelError::Parameter(format!("corpus word {t:?} not in vocabulary")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let v = vocab.len();
        let mut levels = vec![HashMap::new(); order];
        for (i, next) in ids.iter().enumerate() {
            for (n, level) in levels.iter_mut().enumerate() {
                if n > i {
                    break;
                }
                let counts = level
                    .entry(ids[i - n..i].to_vec())
                    .or_insert_with(|| vec![0u64; v]);
                counts[*next as usize] += 1;
            }
        }
        Ok(Self {
            id: format!("ngram-{order}"),
            words: vocab,
            index,
            order,
            k,
            levels,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn oov(&self) -> TokenId {
        self.words.len() as TokenId
    }

    /// Id of `word`, if in the vocabulary.
    pub fn word_id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    /// Smoothed distribution after the given history of token ids.
    pub fn distribution_after(&self, history: &[TokenId]) -> TokenDistribution {
        let v = self.words.len();
        let oov = self.oov();
        for n in (0..self.order).rev() {
            if history.len() < n {
                continue;
            }
            let key = &history[history.len() - n..];
            if key.contains(&oov) {
                continue;
            }
            if let Some(counts) = self.levels[n].get(key) {
                let total: u64 = counts.iter().sum();
                let denom = total as f64 + self.k * v as f64;
                if denom > 0.0 {
                    let probs = counts.iter().map(|c| (*c as f64 + self.k) / denom).collect();
                    return TokenDistribution::new(probs).expect("normalized n-gram counts");
                }
            }
        }
        unreachable!("the unigram level always has counts for a non-empty corpus")
    }
}

impl SequenceModel for NgramModel {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn encode_prompt(&self, prompt: &str) -> Result<Vec<TokenId>, ModelError> {
        Ok(split_tokens(prompt)
            .into_iter()
            .map(|w| self.word_id(w).unwrap_or(self.oov()))
            .collect())
    }

    fn token_text(&self, id: TokenId) -> Result<String, ModelError> {
        match self.words.get(id as usize) {
            Some(w) if w == "\n" => Ok("\n".into()),
            Some(w) => Ok(format!(" {w}")),
            None if id == self.oov() => Ok(" <unk>".into()),
            None => Err(ModelError::UnknownToken(id)),
        }
    }

    fn next_distribution(&self, ctx: &ModelContext) -> Result<Prediction, ModelError> {
        Ok(Prediction::dense(self.distribution_after(ctx.token_ids())))
    }
}
