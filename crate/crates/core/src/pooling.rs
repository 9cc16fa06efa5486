//! Sentence-embedding pooling: collapse a per-layer hidden-state tensor
//! into one fixed-width vector under eight modes — a Mean family (average
//! over non-PAD tokens) and a Cls family (first token only), each crossed
//! with four layer ranges (last / all / top-4 / top-6).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::dataset::Corpus;
use crate::encoder::{encode, EncoderModel, LayerTensor, PAD};
use crate::error::{Error, Result};

/// One of the eight pooling modes. Modes 1–4 average over non-PAD token
/// positions; modes 5–8 read the first (CLS) position only. Within each
/// family the four layer ranges are: last layer, all layers (including the
/// embedding layer), top 4, top 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PoolingMode(u8);

impl PoolingMode {
    pub const ALL: [PoolingMode; 8] = [
        PoolingMode(1),
        PoolingMode(2),
        PoolingMode(3),
        PoolingMode(4),
        PoolingMode(5),
        PoolingMode(6),
        PoolingMode(7),
        PoolingMode(8),
    ];

    pub fn new(number: u8) -> Result<PoolingMode> {
        if (1..=8).contains(&number) {
            Ok(PoolingMode(number))
        } else {
            Err(Error::InvalidParameter(format!(
                "pooling mode must be 1..=8, got {number}"
            )))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// Mean family averages across non-PAD tokens; the Cls family keeps
    /// only the first position.
    pub fn is_mean_family(self) -> bool {
        self.0 <= 4
    }

    /// Number of topmost layers to average; `None` means all layers.
    pub fn top_k(self) -> Option<usize> {
        match (self.0 - 1) % 4 {
            0 => Some(1),
            1 => None,
            2 => Some(4),
            _ => Some(6),
        }
    }
}

impl TryFrom<u8> for PoolingMode {
    type Error = Error;
    fn try_from(number: u8) -> Result<PoolingMode> {
        PoolingMode::new(number)
    }
}

impl From<PoolingMode> for u8 {
    fn from(mode: PoolingMode) -> u8 {
        mode.0
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for PoolingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<PoolingMode> {
        let number: u8 = s
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("not a pooling mode: `{s}`")))?;
        PoolingMode::new(number)
    }
}

/// A pooled sentence embedding, joinable against a corpus by id.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub values: Array1<f64>,
    pub mode: PoolingMode,
    pub sentence_id: String,
}

/// Pool one sentence's layer tensor. The selected layers are averaged
/// elementwise first (order is immaterial for plain means), then the Mean
/// family averages the non-PAD token rows while the Cls family keeps row 0.
pub fn pool(
    tensor: &LayerTensor,
    mode: PoolingMode,
    sentence_id: impl Into<String>,
) -> Result<PooledVector> {
    let layers = tensor.num_layers();
    let tokens = tensor.token_count();
    if layers == 0 || tokens == 0 {
        return Err(Error::InvalidParameter(
            "cannot pool an empty tensor".into(),
        ));
    }
    let start = match mode.top_k() {
        Some(k) if layers < k => {
            return Err(Error::LayerRangeUnavailable {
                mode: mode.number(),
                needed: k,
                available: layers,
            })
        }
        Some(k) => layers - k,
        None => 0,
    };

    let mut layer_mean = Array2::<f64>::zeros((tokens, tensor.hidden_dim()));
    for layer in start..layers {
        layer_mean += &tensor.values.index_axis(Axis(0), layer);
    }
    layer_mean /= (layers - start) as f64;

    let values = if mode.is_mean_family() {
        let keep: Vec<usize> = (0..tokens)
            .filter(|&t| tensor.token_ids.get(t).copied() != Some(PAD))
            .collect();
        if keep.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot pool a tensor with zero non-PAD tokens".into(),
            ));
        }
        let mut sum = Array1::<f64>::zeros(tensor.hidden_dim());
        for &t in &keep {
            sum += &layer_mean.row(t);
        }
        sum / keep.len() as f64
    } else {
        layer_mean.row(0).to_owned()
    };

    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("pooled vector (mode {mode})"),
            row: pos,
        });
    }
    Ok(PooledVector {
        values,
        mode,
        sentence_id: sentence_id.into(),
    })
}

/// Encode and pool every sentence of a corpus, in corpus order. Sentences
/// are independent, so the work is parallelized; results are identical to
/// sequential execution.
pub fn pool_corpus(
    model: &EncoderModel,
    corpus: &Corpus,
    mode: PoolingMode,
) -> Result<Vec<PooledVector>> {
    corpus
        .sentences()
        .par_iter()
        .map(|s| {
            let tokens = model.tokenize(&s.text);
            let tensor = encode(model, &tokens)?;
            pool(&tensor, mode, s.id.as_str())
        })
        .collect()
}

/// Magic prefix of the embedding file format.
const EMBEDDING_HEADER_PREFIX: &str = "#utos-embeddings";
const EMBEDDING_VERSION: &str = "v1";

/// Write embeddings as a versioned tab-separated text file:
/// `#utos-embeddings v1 dim=<d> mode=<m>` followed by one
/// `<id>\t<floats…>` row per sentence. Floats carry 17 significant digits,
/// enough for bit-exact f64 round-trips.
pub fn write_embeddings(path: impl AsRef<Path>, vectors: &[PooledVector]) -> Result<()> {
    let first = vectors.first().ok_or_else(|| {
        Error::InvalidParameter("cannot write an empty embedding set".into())
    })?;
    let dim = first.values.len();
    let mode = first.mode;
    for v in vectors {
        if v.values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.values.len(),
                context: format!("embedding row `{}`", v.sentence_id),
            });
        }
        if v.mode != mode {
            return Err(Error::InvalidParameter(format!(
                "mixed pooling modes in one file: {} and {}",
                mode, v.mode
            )));
        }
    }

    let loc = path.as_ref().display().to_string();
    let ioerr = |e: std::io::Error| Error::io(loc.clone(), e);
    let file = File::create(path.as_ref()).map_err(ioerr)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{EMBEDDING_HEADER_PREFIX} {EMBEDDING_VERSION} dim={dim} mode={mode}")
        .map_err(ioerr)?;
    for v in vectors {
        write!(out, "{}", v.sentence_id).map_err(ioerr)?;
        for x in v.values.iter() {
            write!(out, "\t{x:.16e}").map_err(ioerr)?;
        }
        writeln!(out).map_err(ioerr)?;
    }
    out.flush().map_err(ioerr)
}

fn header_err(reason: impl Into<String>) -> Error {
    Error::EmbeddingFile {
        line: 1,
        reason: reason.into(),
    }
}

/// Read an embedding file (ours or user-supplied at any width) back into
/// pooled vectors, validating version, per-row width and finiteness.
pub fn load_external_embeddings(path: impl AsRef<Path>) -> Result<Vec<PooledVector>> {
    let loc = path.as_ref().display().to_string();
    let ioerr = |e: std::io::Error| Error::io(loc.clone(), e);
    let file = File::open(path.as_ref()).map_err(&ioerr)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| header_err("empty file, expected a header line"))?
        .map_err(&ioerr)?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(EMBEDDING_HEADER_PREFIX) {
        return Err(header_err(format!(
            "expected header starting with `{EMBEDDING_HEADER_PREFIX}`"
        )));
    }
    let version = parts.next().unwrap_or_default();
    if version != EMBEDDING_VERSION {
        return Err(header_err(format!(
            "unknown version `{version}`, this reader understands {EMBEDDING_VERSION}"
        )));
    }
    let dim_field = parts
        .next()
        .and_then(|p| p.strip_prefix("dim="))
        .ok_or_else(|| header_err("missing `dim=<d>` field"))?;
    let dim: usize = dim_field
        .parse()
        .map_err(|_| header_err(format!("bad dimension `{dim_field}`")))?;
    if dim == 0 {
        return Err(header_err("dimension must be positive"));
    }
    let mode_field = parts
        .next()
        .and_then(|p| p.strip_prefix("mode="))
        .ok_or_else(|| header_err("missing `mode=<m>` field"))?;
    let mode: PoolingMode = mode_field
        .parse()
        .map_err(|_| header_err(format!("bad mode `{mode_field}`")))?;

    let mut vectors = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(&ioerr)?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(Error::EmbeddingFile {
                line: line_no,
                reason: "missing sentence id".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::EmbeddingFile {
                line: line_no,
                reason: format!("duplicate sentence id `{id}`"),
            });
        }
        let mut values = Vec::with_capacity(dim);
        for field in fields {
            let x: f64 = field.parse().map_err(|_| Error::EmbeddingFile {
                line: line_no,
                reason: format!("row `{id}`: unparsable value `{field}`"),
            })?;
            if !x.is_finite() {
                return Err(Error::EmbeddingFile {
                    line: line_no,
                    reason: format!("row `{id}`: non-finite value `{field}`"),
                });
            }
            values.push(x);
        }
        if values.len() != dim {
            return Err(Error::EmbeddingFile {
                line: line_no,
                reason: format!("row `{id}`: expected {dim} values, got {}", values.len()),
            });
        }
        vectors.push(PooledVector {
            values: Array1::from(values),
            mode,
            sentence_id: id.to_string(),
        });
    }
    Ok(vectors)
}
