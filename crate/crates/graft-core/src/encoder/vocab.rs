//! Token vocabulary with a reserved unknown id.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Maps token texts to embedding rows. Id 0 is reserved for out-of-vocab
/// tokens; known texts get ids 1.. in sorted text order, so construction
/// from the same text set always yields the same mapping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    pub const UNK_ID: usize = 0;

    pub fn from_texts<I, S>(texts: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let unique: std::collections::BTreeSet<String> =
            texts.into_iter().map(Into::into).collect();
        let ids = unique
            .into_iter()
            .enumerate()
            .map(|(i, text)| (text, i + 1))
            .collect();
        Vocab { ids }
    }

    pub fn id(&self, text: &str) -> usize {
        self.ids.get(text).copied().unwrap_or(Self::UNK_ID)
    }

    /// Number of embedding rows needed (known texts plus the unknown row).
    pub fn size(&self) -> usize {
        self.ids.len() + 1
    }
}

impl From<Vec<String>> for Vocab {
    fn from(texts: Vec<String>) -> Vocab {
        Vocab::from_texts(texts)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(vocab: Vocab) -> Vec<String> {
        vocab.ids.into_keys().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_sorted_dense_and_stable() {
        let v = Vocab::from_texts(["x", "a", "x", "b"]);
        assert_eq!(v.size(), 4);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("x"), 3);
        assert_eq!(v.id("zzz"), Vocab::UNK_ID);
        let again = Vocab::from_texts(["b", "a", "x"]);
        assert_eq!(v, again);
    }

    #[test]
    fn serde_round_trips_as_a_sorted_list() {
        let v = Vocab::from_texts(["while", "x", "1"]);
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, "[\"1\",\"while\",\"x\"]");
        let back: Vocab = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
    }
}
