//! Corpus preprocessing, vocabulary construction, and integer encoding.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::error::{Error, Result};

/// Reserved token absorbing out-of-vocabulary words. Uppercase on purpose:
/// preprocessing lowercases everything, so it can never collide with a
/// corpus token.
pub const UNK_TOKEN: &str = "UNK";

fn is_punct_or_symbol(c: char) -> bool {
    matches!(
        c.general_category_group(),
        GeneralCategoryGroup::Punctuation | GeneralCategoryGroup::Symbol
    )
}

/// Lowercase, strip punctuation/symbols, map digit runs to "0", split on
/// whitespace. Runs of digits and punctuation that contain at least one
/// digit collapse to a single "0", so "3.14" and "1,000" both become "0".
pub fn preprocess_text(raw: &str) -> Vec<String> {
    let lowered = raw.to_lowercase();
    let mut out = Vec::new();
    for token in lowered.split_whitespace() {
        let mut cleaned = String::new();
        let chars: Vec<char> = token.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_numeric() || is_punct_or_symbol(c) {
                let mut has_digit = false;
                while i < chars.len() && (chars[i].is_numeric() || is_punct_or_symbol(chars[i])) {
                    has_digit |= chars[i].is_numeric();
                    i += 1;
                }
                if has_digit {
                    cleaned.push('0');
                }
            } else {
                cleaned.push(c);
                i += 1;
            }
        }
        if !cleaned.is_empty() {
            out.push(cleaned);
        }
    }
    out
}

/// Token-to-id map over the most frequent corpus tokens plus a reserved UNK.
///
/// Ids are dense in [0, size): tokens sorted by descending count with
/// lexicographic ascending tie-break, UNK last with id size-1. Immutable
/// after construction.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    tokens: Vec<String>,
    counts: Vec<u64>,
    unk_id: u32,
}

impl Vocabulary {
    /// Build from an iterator of documents (token sequences), keeping the
    /// `max_size` most frequent tokens.
    pub fn build<I, D, S>(corpus: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = D>,
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        assert!(max_size >= 1, "max_size must be >= 1");
        let mut freq: HashMap<String, u64> = HashMap::new();
        let mut total: u64 = 0;
        for doc in corpus {
            for tok in doc {
                *freq.entry(tok.as_ref().to_string()).or_insert(0) += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }

        let mut entries: Vec<(String, u64)> = freq.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let truncated_mass: u64 = entries
            .iter()
            .skip(max_size)
            .map(|&(_, count)| count)
            .sum();
        entries.truncate(max_size);

        let mut token_to_id = HashMap::with_capacity(entries.len() + 1);
        let mut tokens = Vec::with_capacity(entries.len() + 1);
        let mut counts = Vec::with_capacity(entries.len() + 1);
        for (id, (token, count)) in entries.into_iter().enumerate() {
            token_to_id.insert(token.clone(), id as u32);
            tokens.push(token);
            counts.push(count);
        }
        let unk_id = tokens.len() as u32;
        token_to_id.insert(UNK_TOKEN.to_string(), unk_id);
        tokens.push(UNK_TOKEN.to_string());
        counts.push(truncated_mass);

        Ok(Vocabulary {
            token_to_id,
            tokens,
            counts,
            unk_id,
        })
    }

    /// Total entries including UNK.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    /// Id of a token, falling back to UNK for out-of-vocabulary input.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(self.unk_id)
    }

    /// Id of a token only if it is actually in the vocabulary.
    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (token, count) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{token}\t{count}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno + 1, "expected token<TAB>count"))?;
            let count: u64 = count
                .parse()
                .map_err(|e| Error::parse(path, lineno + 1, format!("bad count: {e}")))?;
            tokens.push(token.to_string());
            counts.push(count);
        }
        if tokens.is_empty() {
            return Err(Error::parse(path, 0, "empty vocabulary file"));
        }
        if tokens.last().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::parse(
                path,
                tokens.len(),
                format!("last entry must be {UNK_TOKEN}"),
            ));
        }
        let unk_id = (tokens.len() - 1) as u32;
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            tokens,
            counts,
            unk_id,
        })
    }
}

/// Integer-encoded documents with stable iteration order.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    documents: Vec<Vec<u32>>,
    total_tokens: u64,
}

impl EncodedCorpus {
    pub fn new(documents: Vec<Vec<u32>>) -> Self {
        let total_tokens = documents.iter().map(|d| d.len() as u64).sum();
        EncodedCorpus {
            documents,
            total_tokens,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.documents.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn document(&self, i: usize) -> &[u32] {
        &self.documents[i]
    }

    pub fn documents(&self) -> &[Vec<u32>] {
        &self.documents
    }

    pub fn is_empty(&self) -> bool {
        self.total_tokens == 0
    }
}

/// Map each token to its id, OOV tokens to UNK. Length preserved.
pub fn encode_document<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<u32> {
    tokens.iter().map(|t| vocab.id(t.as_ref())).collect()
}

/// Read a one-document-per-line token file (whitespace-separated tokens,
/// already preprocessed) and encode it.
pub fn encode_token_file(path: &Path, vocab: &Vocabulary) -> Result<EncodedCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        documents.push(encode_document(&tokens, vocab));
    }
    Ok(EncodedCorpus::new(documents))
}

/// Stream a one-document-per-line token file as token sequences.
pub fn read_token_file(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut docs = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        docs.push(line.split_whitespace().map(str::to_string).collect());
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_mixed_sentence() {
        assert_eq!(
            preprocess_text("The Bank, 42 dogs."),
            vec!["the", "bank", "0", "dogs"]
        );
    }

    #[test]
    fn preprocess_empty() {
        assert_eq!(preprocess_text(""), Vec::<String>::new());
    }

    #[test]
    fn preprocess_punct_and_case() {
        assert_eq!(preprocess_text("Hello!!! WORLD"), vec!["hello", "world"]);
    }

    #[test]
    fn preprocess_decimal_number_collapses() {
        assert_eq!(preprocess_text("3.14"), vec!["0"]);
        assert_eq!(preprocess_text("1,000,000"), vec!["0"]);
        assert_eq!(preprocess_text("x86 and 20% off"), vec!["x0", "and", "0", "off"]);
    }

    #[test]
    fn preprocess_idempotent() {
        let once = preprocess_text("The Bank, 42 dogs. 3.14 Hello!!!");
        let twice = preprocess_text(&once.join(" "));
        assert_eq!(once, twice);
    }

    #[test]
    fn vocab_frequency_truncation() {
        let corpus = vec![vec!["a"; 5], vec!["b"; 3], vec!["c"; 1]];
        let vocab = Vocabulary::build(corpus, 2).unwrap();
        assert_eq!(vocab.size(), 3);
        assert_eq!(vocab.count(vocab.id("a")), 5);
        assert_eq!(vocab.count(vocab.id("b")), 3);
        assert_eq!(vocab.id("c"), vocab.unk_id());
        assert_eq!(vocab.count(vocab.unk_id()), 1);
    }

    #[test]
    fn vocab_lexicographic_tie_break() {
        let corpus = vec![vec!["b", "b", "a", "a"]];
        let vocab = Vocabulary::build(corpus, 1).unwrap();
        assert_eq!(vocab.size(), 2);
        assert!(vocab.lookup("a").is_some());
        assert!(vocab.lookup("b").is_none());
    }

    #[test]
    fn vocab_max_size_exceeds_distinct() {
        let corpus = vec![vec!["a"]];
        let vocab = Vocabulary::build(corpus, 10).unwrap();
        assert_eq!(vocab.size(), 2);
        assert_eq!(vocab.unk_id(), 1);
    }

    #[test]
    fn vocab_empty_corpus_errors() {
        let corpus: Vec<Vec<&str>> = vec![vec![]];
        assert!(matches!(
            Vocabulary::build(corpus, 5),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn encode_oov_and_identity() {
        let vocab = Vocabulary::build(vec![vec!["a", "a", "b"]], 10).unwrap();
        assert_eq!(
            encode_document(&["a", "zzz"], &vocab),
            vec![vocab.id("a"), vocab.unk_id()]
        );
        assert_eq!(encode_document::<&str>(&[], &vocab), Vec::<u32>::new());
        assert_eq!(
            encode_document(&["a", "a", "b"], &vocab),
            vec![vocab.id("a"), vocab.id("a"), vocab.id("b")]
        );
    }

    #[test]
    fn decode_encode_identity_in_vocab() {
        let vocab = Vocabulary::build(vec![vec!["dog", "cat", "fish"]], 10).unwrap();
        for tok in ["dog", "cat", "fish"] {
            assert_eq!(vocab.token(vocab.id(tok)), tok);
        }
    }

    #[test]
    fn vocab_counts_bounded_by_corpus_total() {
        let corpus = vec![vec!["a"; 5], vec!["b"; 3], vec!["c"; 2]];
        let total: u64 = 10;
        let full = Vocabulary::build(corpus.clone(), 10).unwrap();
        let retained: u64 = (0..full.size() as u32 - 1).map(|i| full.count(i)).sum();
        assert_eq!(retained, total);
        let cut = Vocabulary::build(corpus, 2).unwrap();
        let retained: u64 = (0..cut.size() as u32 - 1).map(|i| cut.count(i)).sum();
        assert!(retained < total);
    }

    #[test]
    fn vocab_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("mswe_vocab_rt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.tsv");
        let vocab =
            Vocabulary::build(vec![vec!["a", "a", "b", "c", "c", "c"]], 2).unwrap();
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        let path2 = dir.join("vocab2.tsv");
        loaded.save(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
        assert_eq!(loaded.size(), vocab.size());
        assert_eq!(loaded.unk_id(), vocab.unk_id());
    }
}
