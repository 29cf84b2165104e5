use std::collections::HashMap;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id map with dense ids; 0 is padding and 1 is unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_tokens(Vec::<String>::new()).expect("reserved tokens only")
    }
}

impl Vocab {
    /// Builds a vocabulary from regular tokens (reserved ids are prepended).
    /// Duplicates are rejected.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD_TOKEN, UNK_TOKEN] {
            v.index.insert(t.to_string(), v.tokens.len());
            v.tokens.push(t.to_string());
        }
        for t in tokens {
            let t = t.into();
            if v.index.contains_key(&t) {
                return Err(format!("duplicate token `{t}`"));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Collects every whitespace token (lowercased) in first-occurrence order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab::default();
        for text in texts {
            for tok in split_tokens(text) {
                if !v.index.contains_key(&tok) {
                    v.index.insert(tok.clone(), v.tokens.len());
                    v.tokens.push(tok);
                }
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Regular tokens, without the reserved ones, in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

fn split_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Lowercases, splits on whitespace, maps through `vocab` and truncates to
/// `max_len`. Input with no tokens becomes a single unknown token.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Vec<usize> {
    let ids: Vec<usize> = split_tokens(text).take(max_len.max(1)).map(|t| vocab.id(&t)).collect();
    if ids.is_empty() {
        log::warn!("empty text after tokenization; using a single unknown token");
        return vec![UNK_ID];
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_lookup_and_case_folding() {
        let v = Vocab::from_tokens(["good", "book"]).unwrap();
        assert_eq!(v.id("good"), 2);
        assert_eq!(tokenize("Good BOOK", &v, 512), vec![2, 3]);
    }

    #[test]
    fn unknowns_and_empty_input() {
        let v = Vocab::from_tokens(["good"]).unwrap();
        assert_eq!(tokenize("zzz", &v, 512), vec![UNK_ID]);
        assert_eq!(tokenize("   ", &v, 512), vec![UNK_ID]);
    }

    #[test]
    fn truncates_to_max_len() {
        let v = Vocab::from_tokens(["w"]).unwrap();
        let text = vec!["w"; 600].join(" ");
        let ids = tokenize(&text, &v, 512);
        assert_eq!(ids.len(), 512);
        assert!(ids.iter().all(|&i| i == 2));
    }

    #[test]
    fn build_round_trips_and_ids_are_dense() {
        let v = Vocab::build(["a b a", "C b d"]);
        assert_eq!(v.len(), 6);
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
        assert_eq!(v.regular_tokens(), &["a", "b", "c", "d"]);
        assert!(Vocab::from_tokens(["x", "x"]).is_err());
    }
}
