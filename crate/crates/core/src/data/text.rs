use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::DataError;

/// Word → embedding table in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    dim: usize,
    words: IndexMap<String, Vec<f64>>,
}

impl Vocabulary {
    pub fn new(dim: usize) -> Self {
        Vocabulary { dim, words: IndexMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<(), DataError> {
        let word = word.into();
        if vector.len() != self.dim {
            return Err(DataError::Dimension(format!(
                "word `{word}` has {} values, vocabulary dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!("word `{word}` has a non-finite component")));
        }
        self.words.insert(word, vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.words.get(word).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.words.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    /// Load the Word2Vec text format: an optional `count dim` header line,
    /// then one `word v1 … vD` line per word.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
        let parse = |line: usize, msg: String| DataError::Parse { path: path.to_path_buf(), line, msg };
        let mut vocab: Option<Vocabulary> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DataError::io(path, e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                vocab = Some(Vocabulary::new(fields[1].parse().expect("checked")));
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse(i + 1, e.to_string()))?;
            let v = vocab.get_or_insert_with(|| Vocabulary::new(values.len()));
            v.insert(fields[0], values).map_err(|e| parse(i + 1, e.to_string()))?;
        }
        vocab.filter(|v| !v.is_empty()).ok_or_else(|| parse(1, "vocabulary is empty".into()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let io = |e| DataError::io(path, e);
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        writeln!(w, "{} {}", self.len(), self.dim).map_err(io)?;
        for (word, v) in &self.words {
            write!(w, "{word}").map_err(io)?;
            for x in v {
                write!(w, " {x}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Lowercased alphanumeric tokens of a transcript.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Mean embedding of the in-vocabulary words and the fraction that matched.
///
/// With no match the result is the zero vector and coverage 0.
pub fn average_word_embeddings<S: AsRef<str>>(words: &[S], vocab: &Vocabulary) -> (Vec<f64>, f64) {
    let mut sum = vec![0.0; vocab.dim()];
    let mut hits = 0usize;
    for w in words {
        if let Some(v) = vocab.get(w.as_ref()) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            hits += 1;
        }
    }
    if hits == 0 {
        return (sum, 0.0);
    }
    for s in &mut sum {
        *s /= hits as f64;
    }
    (sum, hits as f64 / words.len() as f64)
}
