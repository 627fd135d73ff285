use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelContext, ModelError, Prediction, SequenceModel, StepBoundaryRule, TokenId, Vocab};
use crate::prob::TokenDistribution;

/// A model that replays a table of `context text -> distribution` entries.
///
/// Contexts are matched on the full text (prompt included); the entry for
/// the empty string is the start distribution. Contexts without an entry fall
/// back to the default distribution when one is set.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    id: String,
    vocab: Vocab,
    window: Option<usize>,
    table: HashMap<String, TokenDistribution>,
    default: Option<TokenDistribution>,
}

/// On-disk form of a [`ScriptedModel`]. Probabilities are keyed by piece.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptFile {
    pub model_id: String,
    pub vocab: Vec<String>,
    #[serde(default)]
    pub ascii_fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub entries: Vec<ScriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub context: String,
    pub probs: BTreeMap<String, f64>,
}

impl ScriptedModel {
    pub fn new(id: impl Into<String>, vocab: Vocab) -> Self {
        Self {
            id: id.into(),
            vocab,
            window: None,
            table: HashMap::new(),
            default: None,
        }
    }

    pub fn with_entry(mut self, context: impl Into<String>, dist: TokenDistribution) -> Self {
        self.insert(context, dist);
        self
    }

    pub fn with_default(mut self, dist: TokenDistribution) -> Self {
        self.default = Some(dist);
        self
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = Some(window);
        self
    }

    pub fn insert(&mut self, context: impl Into<String>, dist: TokenDistribution) {
        assert_eq!(dist.vocab_size(), self.vocab.len(), "distribution size != vocab size");
        self.table.insert(context.into(), dist);
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// A deterministic script that emits `pieces` in order after `prompt`.
    pub fn sequence(
        id: impl Into<String>,
        vocab: Vocab,
        prompt: &str,
        pieces: &[&str],
    ) -> Result<Self, ModelError> {
        let mut model = Self::new(id, vocab);
        let mut context = prompt.to_string();
        for piece in pieces {
            let token = model
                .vocab
                .id(piece)
                .ok_or_else(|| ModelError::Tokenize(format!("piece {piece:?} not in vocab")))?;
            let dist = TokenDistribution::one_hot(model.vocab.len(), token as usize);
            model.insert(context.clone(), dist);
            context.push_str(piece);
        }
        Ok(model)
    }

    fn dist_from_map(&self, probs: &BTreeMap<String, f64>) -> Result<TokenDistribution, ModelError> {
        let mut dense = vec![0.0; self.vocab.len()];
        for (piece, p) in probs {
            let id = self
                .vocab
                .id(piece)
                .ok_or_else(|| ModelError::Parameter(format!("piece {piece:?} not in vocab")))?;
            dense[id as usize] = *p;
        }
        Ok(TokenDistribution::new(dense)?)
    }

    fn dist_to_map(&self, dist: &TokenDistribution) -> BTreeMap<String, f64> {
        dist.probs()
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| (self.vocab.pieces()[i].clone(), *p))
            .collect()
    }

    pub fn from_file(file: ScriptFile) -> Result<Self, ModelError> {
        let vocab = if file.ascii_fallback {
            Vocab::with_ascii_fallback(file.vocab)?
        } else {
            Vocab::new(file.vocab)?
        };
        let mut model = Self::new(file.model_id, vocab);
        model.window = file.window;
        for entry in &file.entries {
            let dist = model.dist_from_map(&entry.probs)?;
            model.insert(entry.context.clone(), dist);
        }
        if let Some(default) = &file.default {
            model.default = Some(model.dist_from_map(default)?);
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Parameter(format!("{}: {e}", path.display())))?;
        let file: ScriptFile = serde_json::from_str(&raw)
            .map_err(|e| ModelError::Parameter(format!("{}: {e}", path.display())))?;
        Self::from_file(file)
    }

    /// Serializable form; the full vocabulary is written out, so the file
    /// does not depend on the ASCII fallback.
    pub fn to_file(&self) -> ScriptFile {
        let mut entries: Vec<ScriptEntry> = self
            .table
            .iter()
            .map(|(context, dist)| ScriptEntry {
                context: context.clone(),
                probs: self.dist_to_map(dist),
            })
            .collect();
        entries.sort_by(|a, b| a.context.cmp(&b.context));
        ScriptFile {
            model_id: self.id.clone(),
            vocab: self.vocab.pieces().to_vec(),
            ascii_fallback: false,
            window: self.window,
            entries,
            default: self.default.as_ref().map(|d| self.dist_to_map(d)),
        }
    }

    /// Tabulates every context reachable from `prompts` under `model`,
    /// following each token with non-zero probability until a terminal
    /// marker. Fails when more than `max_entries` contexts are reachable.
    pub fn record<M: SequenceModel + ?Sized>(
        id: impl Into<String>,
        model: &M,
        vocab: Vocab,
        prompts: &[String],
        rule: &StepBoundaryRule,
        max_entries: usize,
    ) -> Result<Self, ModelError> {
        let mut script = Self::new(id, vocab);
        let mut queue: VecDeque<ModelContext> = prompts
            .iter()
            .map(|p| ModelContext::from_prompt(model, p))
            .collect::<Result<_, _>>()?;
        while let Some(ctx) = queue.pop_front() {
            if script.table.contains_key(ctx.text()) {
                continue;
            }
            if script.table.len() >= max_entries {
                return Err(ModelError::Parameter(format!(
                    "more than {max_entries} reachable contexts"
                )));
            }
            let prediction = model.next_distribution(&ctx)?;
            let dist = prediction.sampling_dist()?;
            if dist.vocab_size() != script.vocab.len() {
                return Err(ModelError::Parameter("model vocabulary differs from script vocabulary".into()));
            }
            for (index, p) in dist.probs().iter().enumerate() {
                if *p <= 0.0 {
                    continue;
                }
                let token = prediction.token_at(index);
                let mut next = ctx.clone();
                next.push(token, &model.token_text(token)?);
                if !rule.is_terminal(next.text()) {
                    queue.push_back(next);
                }
            }
            script.table.insert(ctx.text().to_string(), dist);
        }
        Ok(script)
    }
}

impl SequenceModel for ScriptedModel {
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
        if let Some(window) = self.window {
            if ctx.len() > window {
                return Err(ModelError::ContextOverflow {
                    len: ctx.len(),
                    window,
                });
            }
        }
        self.table
            .get(ctx.text())
            .or(self.default.as_ref())
            .cloned()
            .map(Prediction::dense)
            .ok_or_else(|| ModelError::Unscripted {
                context: ctx.text().to_string(),
            })
    }
}
