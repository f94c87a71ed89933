//! Corpus ingestion and sliding-window datasets for next-symbol prediction
//! over character, word, and integer (pitch) streams.

use crate::autodiff::Tensor;
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// What one symbol of the stream is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Char,
    Word,
    Integer,
}

/// Reserved vocabulary slot for out-of-vocabulary symbols in val/test.
pub const UNK: usize = 0;
pub const UNK_SYMBOL: &str = "<unk>";

/// A tokenised stream with contiguous splits and a train-derived vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub kind: UnitKind,
    /// Symbol for each dense index; index 0 is always the UNK sentinel.
    pub symbols: Vec<String>,
    pub index: HashMap<String, usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Corpus {
    pub fn vocabulary_size(&self) -> usize {
        self.symbols.len()
    }

    /// Builds a corpus from an already tokenised symbol stream.
    ///
    /// The stream is split contiguously by `split_ratios` (three non-negative
    /// weights); the vocabulary is built from the training portion only, and
    /// val/test symbols outside it map to [`UNK`].
    pub fn from_symbols(
        kind: UnitKind,
        stream: &[String],
        split_ratios: (f64, f64, f64),
    ) -> Result<Self> {
        let (a, b, c) = split_ratios;
        if a <= 0.0 || b < 0.0 || c < 0.0 {
            return Err(Error::Config(format!(
                "split ratios must be positive train and non-negative val/test, got {a}/{b}/{c}"
            )));
        }
        let total = a + b + c;
        let n = stream.len();
        let train_end = ((a / total) * n as f64).round() as usize;
        let val_end = train_end + (((b / total) * n as f64).round() as usize).min(n - train_end);
        if train_end == 0 {
            return Err(Error::Generation("empty training split".into()));
        }
        let mut symbols = vec![UNK_SYMBOL.to_string()];
        let mut index = HashMap::from([(UNK_SYMBOL.to_string(), UNK)]);
        for s in &stream[..train_end] {
            if !index.contains_key(s) {
                index.insert(s.clone(), symbols.len());
                symbols.push(s.clone());
            }
        }
        let map = |part: &[String]| -> Vec<usize> {
            part.iter().map(|s| *index.get(s).unwrap_or(&UNK)).collect()
        };
        Ok(Corpus {
            kind,
            train: map(&stream[..train_end]),
            validation: map(&stream[train_end..val_end]),
            test: map(&stream[val_end..]),
            symbols,
            index,
        })
    }

    pub fn from_text(kind: UnitKind, text: &str, split_ratios: (f64, f64, f64)) -> Result<Self> {
        let stream = tokenise(kind, text)?;
        Self::from_symbols(kind, &stream, split_ratios)
    }
}

fn tokenise(kind: UnitKind, text: &str) -> Result<Vec<String>> {
    match kind {
        UnitKind::Char => Ok(text.chars().map(String::from).collect()),
        UnitKind::Word => Ok(text.split_whitespace().map(String::from).collect()),
        UnitKind::Integer => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<i64>()
                    .map(|v| v.to_string())
                    .map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("expected an integer, got {:?}", l.trim()),
                    })
            })
            .collect(),
    }
}

/// Reads and splits a corpus file. Char/word modes read the file as UTF-8
/// text; integer mode expects one integer per line.
pub fn load_corpus(
    path: &Path,
    kind: UnitKind,
    split_ratios: (f64, f64, f64),
) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Corpus::from_text(kind, &text, split_ratios)
}

/// Token → dense vector table; unknown tokens read as the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.vectors
            .get(token)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dimension])
    }
}

/// Parses "token v1 ... vd" lines; every line must carry exactly `d` values.
pub fn load_embeddings(path: &Path, d: usize) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_embeddings(&text, d)
}

pub fn parse_embeddings(text: &str, d: usize) -> Result<EmbeddingTable> {
    let mut vectors = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field");
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("non-numeric embedding value {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != d {
            return Err(Error::Parse {
                line: i + 1,
                message: format!(
                    "embedding for {token:?} has {} values, expected {d}",
                    values.len()
                ),
            });
        }
        vectors.insert(token.to_string(), values);
    }
    Ok(EmbeddingTable {
        dimension: d,
        vectors,
    })
}

/// How each symbol of a window is turned into reals.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    /// One real per symbol (m = 1): the raw code, or code / V if normalised.
    IntegerScalar { normalised: bool },
    /// One-hot over the vocabulary (m = V).
    OneHot,
    /// Table lookup by symbol string (m = table dimension).
    Embedding(EmbeddingTable),
}

impl Encoding {
    pub fn symbol_width(&self, vocab: usize) -> usize {
        match self {
            Encoding::IntegerScalar { .. } => 1,
            Encoding::OneHot => vocab,
            Encoding::Embedding(t) => t.dimension,
        }
    }
}

/// Sliding windows of `n` encoded symbols with the next symbol as target.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub context: usize,
    /// Width of one encoded symbol.
    pub symbol_width: usize,
    /// (flattened window of n·symbol_width reals, next-symbol index).
    pub samples: Vec<(Tensor, usize)>,
}

fn encode_symbol(corpus: &Corpus, encoding: &Encoding, idx: usize, out: &mut Vec<f64>) {
    match encoding {
        Encoding::IntegerScalar { normalised } => {
            // The raw code is the symbol's own numeric value where it has one
            // (integer corpora); other units fall back to the dense index.
            let v = corpus.symbols[idx].parse::<f64>().unwrap_or(idx as f64);
            out.push(if *normalised {
                v / corpus.vocabulary_size() as f64
            } else {
                v
            });
        }
        Encoding::OneHot => {
            let start = out.len();
            out.resize(start + corpus.vocabulary_size(), 0.0);
            out[start + idx] = 1.0;
        }
        Encoding::Embedding(table) => out.extend(table.lookup(&corpus.symbols[idx])),
    }
}

fn windows_of(corpus: &Corpus, split: &[usize], n: usize, encoding: &Encoding) -> Result<WindowedDataset> {
    if split.len() < n + 1 {
        return Err(Error::Generation(format!(
            "split of {} symbols is too short for context {n}",
            split.len()
        )));
    }
    let symbol_width = encoding.symbol_width(corpus.vocabulary_size());
    let samples = (0..split.len() - n)
        .map(|start| {
            let mut data = Vec::with_capacity(n * symbol_width);
            for &idx in &split[start..start + n] {
                encode_symbol(corpus, encoding, idx, &mut data);
            }
            (Tensor::vector(data), split[start + n])
        })
        .collect();
    Ok(WindowedDataset {
        context: n,
        symbol_width,
        samples,
    })
}

/// Windows each split independently; boundaries never cross splits.
pub fn make_windows(
    corpus: &Corpus,
    n: usize,
    encoding: &Encoding,
) -> Result<(WindowedDataset, WindowedDataset, WindowedDataset)> {
    if n < 2 {
        return Err(Error::Config(format!("context length must be >= 2, got {n}")));
    }
    Ok((
        windows_of(corpus, &corpus.train, n, encoding)?,
        windows_of(corpus, &corpus.validation, n, encoding)?,
        windows_of(corpus, &corpus.test, n, encoding)?,
    ))
}

/// Perplexity from a mean negative log-likelihood in nats.
pub fn perplexity(mean_nll_nats: f64) -> f64 {
    mean_nll_nats.exp()
}

/// Synthetic locally-periodic text: segments of random letters repeated with
/// small substitution noise. Repetition at short lags is exactly what the
/// comparison units can exploit.
pub fn synth_periodic_text(length: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet: Vec<char> = ('a'..='j').collect();
    let mut out = String::with_capacity(length);
    while out.len() < length {
        let period = rng.gen_range(2..=5);
        let motif: Vec<char> = (0..period)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
            .collect();
        let repeats = rng.gen_range(4..=12);
        for _ in 0..repeats {
            for &ch in &motif {
                if rng.gen_bool(0.03) {
                    out.push(alphabet[rng.gen_range(0..alphabet.len())]);
                } else {
                    out.push(ch);
                }
                if out.len() >= length {
                    return out;
                }
            }
        }
    }
    out
}

/// Synthetic integer walk over a small range where a fraction of steps repeat
/// an earlier value exactly, emitted one integer per line.
pub fn synth_repeat_walk(length: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<i64> = Vec::with_capacity(length);
    let mut current: i64 = 60;
    // Repeats arrive in bursts: a latent copy mode replays the value from two
    // steps back and persists for a geometric duration. Enter with p=0.06,
    // leave with p=0.14, so the stationary copy fraction is 0.06/0.20 = 30%.
    let mut copying = false;
    for i in 0..length {
        if copying {
            if rng.gen_bool(0.14) {
                copying = false;
            }
        } else if i >= 2 && rng.gen_bool(0.06) {
            copying = true;
        }
        if copying && i >= 2 {
            current = values[i - 2];
        } else {
            current = (current + rng.gen_range(-3..=3)).clamp(48, 72);
        }
        values.push(current);
    }
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashSet;
    use std::io::Write;

    fn split(text: &str, kind: UnitKind) -> Corpus {
        Corpus::from_text(kind, text, (0.5, 0.25, 0.25)).unwrap()
    }

    #[test]
    fn char_split_and_vocab() {
        let c = split("abcabc", UnitKind::Char);
        assert_eq!(c.train.len(), 3);
        // UNK + a, b, c.
        assert_eq!(c.vocabulary_size(), 4);
        assert_eq!(c.train, vec![1, 2, 3]);
    }

    #[test]
    fn word_vocab_counts_distinct_words() {
        let c = Corpus::from_text(UnitKind::Word, "the cat the", (1.0, 0.0, 0.0)).unwrap();
        assert_eq!(c.vocabulary_size() - 1, 2);
    }

    #[test]
    fn out_of_vocabulary_maps_to_unk() {
        let c = split("aaaazzzz", UnitKind::Char);
        assert_eq!(c.train, vec![1, 1, 1, 1]);
        assert!(c.validation.iter().all(|&i| i == UNK));
        assert!(c.test.iter().all(|&i| i == UNK));
    }

    #[test]
    fn vocabulary_matches_scan_oracle_on_large_sample() {
        let text = synth_periodic_text(200_000, 7);
        let c = Corpus::from_text(UnitKind::Char, &text, (0.5, 0.25, 0.25)).unwrap();
        let train_chars: HashSet<char> = text.chars().take(c.train.len()).collect();
        let vocab_chars: HashSet<char> = c.symbols[1..]
            .iter()
            .map(|s| s.chars().next().unwrap())
            .collect();
        assert_eq!(train_chars, vocab_chars);
    }

    #[test]
    fn splits_are_contiguous_and_cover_stream() {
        // Every symbol occurs in the train half, so no UNK mapping interferes.
        let text = "ababababab";
        let c = Corpus::from_text(UnitKind::Char, text, (0.5, 0.25, 0.25)).unwrap();
        let rebuilt: String = c
            .train
            .iter()
            .chain(&c.validation)
            .chain(&c.test)
            .map(|&i| c.symbols[i].clone())
            .collect();
        assert_eq!(rebuilt, text);
        assert_eq!((c.train.len(), c.validation.len(), c.test.len()), (5, 3, 2));
    }

    #[test]
    fn integer_mode_rejects_bad_lines() {
        let err = Corpus::from_text(UnitKind::Integer, "60\n61\nsixty\n", (1.0, 0.0, 0.0));
        match err {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_training_split_rejected() {
        assert!(Corpus::from_text(UnitKind::Char, "", (0.5, 0.25, 0.25)).is_err());
    }

    #[test]
    fn load_corpus_reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pitch.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "60\n62\n64\n60").unwrap();
        let c = load_corpus(&path, UnitKind::Integer, (1.0, 0.0, 0.0)).unwrap();
        assert_eq!(c.train.len(), 4);
        assert_eq!(c.symbols[c.train[0]], "60");
    }

    #[test]
    fn embeddings_parse_and_default() {
        let t = parse_embeddings("cat 0.1 0.2\ndog -1 3\n", 2).unwrap();
        assert_eq!(t.lookup("cat"), vec![0.1, 0.2]);
        assert_eq!(t.lookup("bird"), vec![0.0, 0.0]);
    }

    #[test]
    fn embeddings_reject_wrong_dimension() {
        match parse_embeddings("cat 0.1 0.2\ndog 3\n", 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn embeddings_roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let original = parse_embeddings("x 0.125 -7.5\ny 1e-3 2.5\n", 2).unwrap();
        let mut text = String::new();
        let mut tokens: Vec<&String> = original.vectors.keys().collect();
        tokens.sort();
        for tok in tokens {
            let vals: Vec<String> = original.vectors[tok].iter().map(|v| v.to_string()).collect();
            text.push_str(&format!("{tok} {}\n", vals.join(" ")));
        }
        std::fs::write(&path, text).unwrap();
        let reread = load_embeddings(&path, 2).unwrap();
        assert_eq!(reread.vectors, original.vectors);
    }

    #[test]
    fn make_windows_covers_all_splits() {
        let stream: Vec<String> = (0..16).map(|i| (i % 4).to_string()).collect();
        let c = Corpus::from_symbols(UnitKind::Integer, &stream, (0.5, 0.25, 0.25)).unwrap();
        let (train, val, test) =
            make_windows(&c, 2, &Encoding::IntegerScalar { normalised: false }).unwrap();
        assert_eq!(train.samples.len(), c.train.len() - 2);
        assert_eq!(val.samples.len(), c.validation.len() - 2);
        assert_eq!(test.samples.len(), c.test.len() - 2);
    }

    #[test]
    fn window_contents_and_count() {
        let c = Corpus::from_symbols(
            UnitKind::Integer,
            &["1", "2", "3", "4", "1", "2", "3", "4"].map(String::from),
            (0.5, 0.25, 0.25),
        )
        .unwrap();
        // train = [1,2,3,4] (codes 1..4), windows n=2: [1,2]->3, [2,3]->4.
        let enc = Encoding::IntegerScalar { normalised: false };
        let ds = super::windows_of(&c, &c.train, 2, &enc).unwrap();
        assert_eq!(ds.samples.len(), c.train.len() - 2);
        assert_eq!(ds.samples[0].0.data(), &[1.0, 2.0]);
        assert_eq!(c.symbols[ds.samples[0].1], "3");
        assert_eq!(ds.samples[1].0.data(), &[2.0, 3.0]);
    }

    #[test]
    fn windows_reconstruct_stream() {
        let text = synth_periodic_text(400, 3);
        let c = Corpus::from_text(UnitKind::Char, &text, (1.0, 0.0, 0.0)).unwrap();
        let n = 5;
        let enc = Encoding::IntegerScalar { normalised: false };
        let ds = super::windows_of(&c, &c.train, n, &enc).unwrap();
        let mut rebuilt: Vec<usize> = ds.samples[0].0.data().iter().map(|&v| v as usize).collect();
        for (_, target) in &ds.samples {
            rebuilt.push(*target);
        }
        assert_eq!(rebuilt, c.train);
    }

    #[test]
    fn one_hot_and_embedding_widths() {
        let c = Corpus::from_symbols(
            UnitKind::Word,
            &["a", "b", "a", "b", "a", "b"].map(String::from),
            (1.0, 0.0, 0.0),
        )
        .unwrap();
        let one_hot = super::windows_of(&c, &c.train, 2, &Encoding::OneHot).unwrap();
        assert_eq!(one_hot.symbol_width, c.vocabulary_size());
        let sum: f64 = one_hot.samples[0].0.data().iter().sum();
        assert_eq!(sum, 2.0);

        let table = parse_embeddings("a 1 2 3\nb 4 5 6\n", 3).unwrap();
        let emb = super::windows_of(&c, &c.train, 2, &Encoding::Embedding(table)).unwrap();
        assert_eq!(emb.symbol_width, 3);
        assert_eq!(emb.samples[0].0.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn integer_scalar_uses_numeric_value() {
        let c = Corpus::from_symbols(
            UnitKind::Integer,
            &["7", "8", "7", "8"].map(String::from),
            (1.0, 0.0, 0.0),
        )
        .unwrap();
        let raw = super::windows_of(
            &c,
            &c.train,
            2,
            &Encoding::IntegerScalar { normalised: false },
        )
        .unwrap();
        assert_relative_eq!(raw.samples[0].0.data()[0], 7.0);
        assert_relative_eq!(raw.samples[0].0.data()[1], 8.0);

        let v = c.vocabulary_size() as f64;
        let norm = super::windows_of(
            &c,
            &c.train,
            2,
            &Encoding::IntegerScalar { normalised: true },
        )
        .unwrap();
        assert_relative_eq!(norm.samples[0].0.data()[0], 7.0 / v);
    }

    #[test]
    fn short_split_rejected() {
        let c = Corpus::from_symbols(
            UnitKind::Char,
            &["a", "b"].map(String::from),
            (1.0, 0.0, 0.0),
        )
        .unwrap();
        assert!(make_windows(&c, 2, &Encoding::OneHot).is_err());
    }

    #[test]
    fn perplexity_definitions() {
        assert_eq!(perplexity(0.0), 1.0);
        assert_relative_eq!(perplexity((27.0f64).ln()), 27.0, max_relative = 1e-12);
    }

    #[test]
    fn perplexity_matches_accumulation_oracle() {
        // Toy stream with known next-symbol probabilities.
        let probs: [f64; 5] = [0.5, 0.25, 0.125, 0.125, 0.5];
        let mut total = 0.0;
        for p in probs {
            total += -p.ln();
        }
        let mean = total / probs.len() as f64;
        let direct: f64 = probs
            .iter()
            .map(|p| p.powf(-1.0 / probs.len() as f64))
            .product();
        assert_relative_eq!(perplexity(mean), direct, max_relative = 1e-12);
    }

    #[test]
    fn perplexity_monotone() {
        assert!(perplexity(1.0) < perplexity(1.5));
    }

    #[test]
    fn synth_generators_deterministic() {
        assert_eq!(synth_periodic_text(1000, 5), synth_periodic_text(1000, 5));
        assert_ne!(synth_periodic_text(1000, 5), synth_periodic_text(1000, 6));
        let walk = synth_repeat_walk(500, 1);
        assert_eq!(walk, synth_repeat_walk(500, 1));
        let c = Corpus::from_text(UnitKind::Integer, &walk, (1.0, 0.0, 0.0)).unwrap();
        assert_eq!(c.train.len(), 500);
    }
}
