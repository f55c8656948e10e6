//! Loading embedding files and gold-label files.
//!
//! Three text formats are accepted:
//!
//! * `word2vec` text: a header line `N d`, then one whitespace-free token
//!   followed by `d` floats per line.
//! * `csv`: `id,f1,...,fd` per row, no quoting of numeric fields. A first row
//!   whose first field is literally `id` is treated as a header.
//! * `jsonl`: one `{"id": str, "vector": [float], "label": str?}` object per
//!   line. Inline labels are collected into the set's label map.
//!
//! Vectors are stored as `f32`; every consumer widens to `f64` before doing
//! arithmetic.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vectors whose Euclidean norm falls below this are rejected.
pub const MIN_NORM: f64 = 1e-12;

/// Gold labels keyed by item id.
pub type Labels = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("header declares {declared} vectors but {found} were read")]
    CountMismatch { declared: usize, found: usize },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: empty id")]
    EmptyId { line: usize },
    #[error("line {line}: non-finite value in vector {id:?}")]
    NonFinite { line: usize, id: String },
    #[error("vector {id:?} has zero norm")]
    ZeroNorm { id: String },
    #[error("line {line}: empty label for id {id:?}")]
    EmptyLabel { line: usize, id: String },
    #[error("embedding file contains no vectors")]
    Empty,
}

/// Supported embedding file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[value(name = "word2vec")]
    #[serde(rename = "word2vec")]
    Word2VecText,
    Csv,
    Jsonl,
}

/// An immutable, validated collection of embedding vectors.
///
/// Item `i` is the `i`-th record of the source file. All vectors share one
/// dimension, ids are unique and non-empty, and no vector is (numerically)
/// zero.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    data: Vec<f32>,
    dim: usize,
    index: HashMap<String, usize>,
    labels: Option<Labels>,
}

/// Outcome of joining a label map onto an [`EmbeddingSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelJoin {
    pub attached: usize,
    /// Labels whose id does not name any embedding; they are dropped.
    pub unresolved: usize,
}

impl EmbeddingSet {
    /// Builds a set from parallel id and vector lists, enforcing every
    /// invariant. Errors refer to 1-based record positions.
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f32>>) -> Result<Self, EmbeddingError> {
        let mut builder = Builder::default();
        for (i, (id, v)) in ids.into_iter().zip(vectors).enumerate() {
            builder.push(i + 1, id, v)?;
        }
        builder.finish()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels
            .as_ref()
            .and_then(|l| l.get(&self.ids[i]))
            .map(String::as_str)
    }

    /// Merges `labels` into the set. Entries naming unknown ids are dropped
    /// and counted; entries for known ids override inline labels.
    pub fn attach_labels(&mut self, labels: Labels) -> LabelJoin {
        let mut join = LabelJoin {
            attached: 0,
            unresolved: 0,
        };
        let target = self.labels.get_or_insert_with(Labels::new);
        for (id, label) in labels {
            if self.index.contains_key(&id) {
                target.insert(id, label);
                join.attached += 1;
            } else {
                join.unresolved += 1;
            }
        }
        join
    }

    /// Writes the set as jsonl, including inline labels when present.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, id) in self.ids.iter().enumerate() {
            let record = JsonRecordRef {
                id,
                vector: self.vector(i),
                label: self.label(i),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Builder {
    ids: Vec<String>,
    data: Vec<f32>,
    dim: Option<usize>,
    index: HashMap<String, usize>,
    labels: Labels,
}

impl Builder {
    fn push(&mut self, line: usize, id: String, vector: Vec<f32>) -> Result<(), EmbeddingError> {
        if id.is_empty() {
            return Err(EmbeddingError::EmptyId { line });
        }
        match self.dim {
            None if vector.is_empty() => {
                return Err(EmbeddingError::Malformed {
                    line,
                    message: format!("vector {id:?} has no components"),
                })
            }
            None => self.dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(EmbeddingError::DimensionMismatch {
                    line,
                    expected: d,
                    found: vector.len(),
                })
            }
            Some(_) => {}
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite { line, id });
        }
        let norm = vector
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt();
        if norm < MIN_NORM {
            return Err(EmbeddingError::ZeroNorm { id });
        }
        if self.index.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId { line, id });
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(&vector);
        Ok(())
    }

    fn label(&mut self, line: usize, id: &str, label: String) -> Result<(), EmbeddingError> {
        if label.is_empty() {
            return Err(EmbeddingError::EmptyLabel {
                line,
                id: id.to_owned(),
            });
        }
        self.labels.insert(id.to_owned(), label);
        Ok(())
    }

    fn finish(self) -> Result<EmbeddingSet, EmbeddingError> {
        let dim = self.dim.ok_or(EmbeddingError::Empty)?;
        Ok(EmbeddingSet {
            ids: self.ids,
            data: self.data,
            dim,
            index: self.index,
            labels: (!self.labels.is_empty()).then_some(self.labels),
        })
    }
}

fn open(path: &Path) -> Result<BufReader<File>, EmbeddingError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| EmbeddingError::Io {
            path: path.to_owned(),
            source,
        })
}

/// Reads an embedding file. Item order equals file order.
pub fn load_embeddings(path: &Path, format: Format) -> Result<EmbeddingSet, EmbeddingError> {
    read_embeddings(open(path)?, format).map_err(|e| match e {
        EmbeddingError::Io { source, .. } => EmbeddingError::Io {
            path: path.to_owned(),
            source,
        },
        other => other,
    })
}

pub fn read_embeddings<R: BufRead>(
    reader: R,
    format: Format,
) -> Result<EmbeddingSet, EmbeddingError> {
    match format {
        Format::Word2VecText => read_word2vec_text(reader),
        Format::Csv => read_csv(reader),
        Format::Jsonl => read_jsonl(reader),
    }
}

fn io_err(source: io::Error) -> EmbeddingError {
    EmbeddingError::Io {
        path: PathBuf::new(),
        source,
    }
}

fn parse_component(line: usize, field: &str) -> Result<f32, EmbeddingError> {
    let value: f64 = field
        .trim()
        .parse()
        .map_err(|_| EmbeddingError::Malformed {
            line,
            message: format!("cannot parse {field:?} as a number"),
        })?;
    // Out-of-range values become infinite here and are rejected by the builder.
    Ok(value as f32)
}

fn read_word2vec_text<R: BufRead>(reader: R) -> Result<EmbeddingSet, EmbeddingError> {
    let mut lines = reader.lines().enumerate();
    let (declared, dim) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(EmbeddingError::Empty);
        };
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let header: Vec<&str> = line.split_whitespace().collect();
        let parsed = match header.as_slice() {
            [n, d] => n.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some((n, d)) if d > 0 => break (n, d),
            _ => {
                return Err(EmbeddingError::Malformed {
                    line: i + 1,
                    message: "expected header \"<count> <dim>\"".into(),
                })
            }
        }
    };

    let mut builder = Builder {
        dim: Some(dim),
        ..Builder::default()
    };
    for (i, line) in lines {
        let line = line.map_err(io_err)?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let vector = fields
            .map(|f| parse_component(i + 1, f))
            .collect::<Result<Vec<_>, _>>()?;
        builder.push(i + 1, token.to_owned(), vector)?;
    }
    if builder.ids.len() != declared {
        return Err(EmbeddingError::CountMismatch {
            declared,
            found: builder.ids.len(),
        });
    }
    builder.finish()
}

fn read_csv<R: Read>(reader: R) -> Result<EmbeddingSet, EmbeddingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut builder = Builder::default();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| EmbeddingError::Malformed {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        let Some(id) = record.get(0) else { continue };
        if i == 0 && id == "id" {
            continue;
        }
        if record.len() == 1 && id.is_empty() {
            continue;
        }
        let vector = record
            .iter()
            .skip(1)
            .map(|f| parse_component(line, f))
            .collect::<Result<Vec<_>, _>>()?;
        builder.push(line, id.to_owned(), vector)?;
    }
    builder.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    id: String,
    vector: Vec<f64>,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Serialize)]
struct JsonRecordRef<'a> {
    id: &'a str,
    vector: &'a [f32],
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

fn read_jsonl<R: BufRead>(reader: R) -> Result<EmbeddingSet, EmbeddingError> {
    let mut builder = Builder::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonRecord =
            serde_json::from_str(&line).map_err(|e| EmbeddingError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        let vector: Vec<f32> = record.vector.iter().map(|&x| x as f32).collect();
        if let Some(label) = record.label {
            builder.label(i + 1, &record.id, label)?;
        }
        builder.push(i + 1, record.id, vector)?;
    }
    builder.finish()
}

/// Reads a two-column TSV of `id<TAB>label`.
pub fn load_labels(path: &Path, has_header: bool) -> Result<Labels, EmbeddingError> {
    read_labels(open(path)?, has_header).map_err(|e| match e {
        EmbeddingError::Io { source, .. } => EmbeddingError::Io {
            path: path.to_owned(),
            source,
        },
        other => other,
    })
}

pub fn read_labels<R: Read>(reader: R, has_header: bool) -> Result<Labels, EmbeddingError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(has_header)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);
    let mut labels = Labels::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| EmbeddingError::Malformed {
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 2 {
            return Err(EmbeddingError::Malformed {
                line,
                message: format!("expected 2 tab-separated columns, found {}", record.len()),
            });
        }
        let id = record[0].trim();
        let label = record[1].trim();
        if id.is_empty() {
            return Err(EmbeddingError::EmptyId { line });
        }
        if label.is_empty() {
            return Err(EmbeddingError::EmptyLabel {
                line,
                id: id.to_owned(),
            });
        }
        if labels.insert(id.to_owned(), label.to_owned()).is_some() {
            return Err(EmbeddingError::DuplicateId {
                line,
                id: id.to_owned(),
            });
        }
    }
    Ok(labels)
}
