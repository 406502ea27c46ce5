use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub const EOS: usize = 0;
pub const UNK: usize = 1;
pub const PAD: usize = 2;
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Token ↔ id dictionary with reserved ids `<eos>`=0, `<unk>`=1, `<pad>`=2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

/// Whether `id` may be chosen as an action. `<unk>` and `<pad>` never are.
pub fn is_action(id: usize) -> bool {
    id != UNK && id != PAD
}

impl Vocab {
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut tokens: Vec<String> = vec![EOS_TOKEN.into(), UNK_TOKEN.into(), PAD_TOKEN.into()];
        tokens.extend(words.into_iter().map(String::from));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        let v = Self { tokens, ids };
        if v.id(EOS_TOKEN) != Some(EOS) || v.id(UNK_TOKEN) != Some(UNK) || v.id(PAD_TOKEN) != Some(PAD) {
            return Err(Error::InvalidArgument("reserved tokens must have ids 0, 1, 2".into()));
        }
        Ok(v)
    }

    /// The fixed vocabulary of the caption grammar.
    pub fn standard() -> Self {
        Self::from_words(super::grammar::LEXICON.iter().copied()).expect("lexicon is valid")
    }

    /// Rebuilds from a token → id map, requiring ids `0..len` exactly once.
    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self> {
        let mut tokens = vec![None; map.len()];
        for (t, &i) in map {
            match tokens.get_mut(i) {
                Some(slot @ None) => *slot = Some(t.clone()),
                _ => return Err(Error::InvalidArgument(format!("bad or repeated id {i} for {t:?}"))),
            }
        }
        Self::from_tokens(tokens.into_iter().map(|t| t.expect("every id filled")).collect())
    }

    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.tokens.iter().cloned().zip(0..).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| self.id(w.as_ref()).ok_or_else(|| Error::UnknownToken(w.as_ref().to_string())))
            .collect()
    }

    /// Token strings for ids; out-of-range ids render as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}
