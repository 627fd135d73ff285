use std::collections::HashMap;

use super::{ModelError, TokenId};

/// String-piece vocabulary with greedy longest-match encoding.
///
/// Decoding is plain concatenation of pieces, so any id sequence produced by
/// [`Vocab::encode`] decodes back to the input text.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, TokenId>,
    max_piece_chars: usize,
}

impl Vocab {
    pub fn new<S: Into<String>>(pieces: impl IntoIterator<Item = S>) -> Result<Self, ModelError> {
        let mut vocab = Self {
            pieces: Vec::new(),
            index: HashMap::new(),
            max_piece_chars: 0,
        };
        for piece in pieces {
            let piece = piece.into();
            if piece.is_empty() {
                return Err(ModelError::Parameter("empty vocabulary piece".into()));
            }
            if vocab.index.contains_key(&piece) {
                return Err(ModelError::Parameter(format!(
                    "duplicate vocabulary piece {piece:?}"
                )));
            }
            vocab.push(piece);
        }
        if vocab.pieces.is_empty() {
            return Err(ModelError::Parameter("empty vocabulary".into()));
        }
        Ok(vocab)
    }

    /// Like [`Vocab::new`], then appends every printable ASCII character,
    /// newline and tab that is not already a piece, so that any ASCII prompt
    /// can be encoded.
    pub fn with_ascii_fallback<S: Into<String>>(
        pieces: impl IntoIterator<Item = S>,
    ) -> Result<Self, ModelError> {
        let mut vocab = Self::new(pieces)?;
        let fallback = (b' '..=b'~').chain(*b"\n\t").map(|b| (b as char).to_string());
        for piece in fallback {
            if !vocab.index.contains_key(&piece) {
                vocab.push(piece);
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, piece: String) {
        let id = self.pieces.len() as TokenId;
        self.max_piece_chars = self.max_piece_chars.max(piece.chars().count());
        self.index.insert(piece.clone(), id);
        self.pieces.push(piece);
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.index.get(piece).copied()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        let boundaries: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let mut ids = Vec::new();
        let mut at = 0;
        while at + 1 < boundaries.len() {
            let longest = (1..=self.max_piece_chars.min(boundaries.len() - 1 - at))
                .rev()
                .find_map(|n| self.id(&text[boundaries[at]..boundaries[at + n]]).map(|id| (n, id)));
            match longest {
                Some((n, id)) => {
                    ids.push(id);
                    at += n;
                }
                None => {
                    return Err(ModelError::Tokenize(format!(
                        "no piece matches at byte {} of {:?}",
                        boundaries[at], text
                    )))
                }
            }
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, ModelError> {
        ids.iter()
            .map(|id| self.piece(*id).ok_or(ModelError::UnknownToken(*id)))
            .collect()
    }
}
