//! Labeled ToS-style corpora: schema, ingestion, splitting, synthesis.
//!
//! On-disk schema is JSONL with keys `{id, text, ltd, ter, ch, cr, use, law,
//! j, a, ub}` or a CSV mirror with identical headers. The eight category tags
//! and the unfair-binary tag are validated on load; the loader rejects rows
//! whose `ub` disagrees with the tags instead of silently recomputing it, so
//! annotation corruption surfaces early.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The eight unfair-clause categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Ltd,
    Ter,
    Ch,
    Cr,
    Use,
    Law,
    J,
    A,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Ltd,
        Category::Ter,
        Category::Ch,
        Category::Cr,
        Category::Use,
        Category::Law,
        Category::J,
        Category::A,
    ];

    /// Short tag key as used in file headers.
    pub fn key(self) -> &'static str {
        match self {
            Category::Ltd => "ltd",
            Category::Ter => "ter",
            Category::Ch => "ch",
            Category::Cr => "cr",
            Category::Use => "use",
            Category::Law => "law",
            Category::J => "j",
            Category::A => "a",
        }
    }

    /// Human-readable clause category name.
    pub fn name(self) -> &'static str {
        match self {
            Category::Ltd => "Limitation of liability",
            Category::Ter => "Unilateral termination",
            Category::Ch => "Unilateral change",
            Category::Cr => "Content removal",
            Category::Use => "Contract by using",
            Category::Law => "Choice of law",
            Category::J => "Jurisdiction",
            Category::A => "Arbitration",
        }
    }

    pub fn from_key(key: &str) -> Option<Category> {
        Category::ALL.iter().copied().find(|c| c.key() == key)
    }

    fn index(self) -> usize {
        Category::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Binary tag per category for one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tags([u8; 8]);

impl Tags {
    pub fn new(values: [u8; 8]) -> Tags {
        Tags(values)
    }

    pub fn get(&self, category: Category) -> u8 {
        self.0[category.index()]
    }

    pub fn set(&mut self, category: Category, value: u8) {
        self.0[category.index()] = value;
    }

    /// True when at least one category tag is set.
    pub fn any(&self) -> bool {
        self.0.iter().any(|&v| v == 1)
    }

    pub fn values(&self) -> [u8; 8] {
        self.0
    }
}

/// One ToS statement with its eight category tags and unfair-binary tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    pub tags: Tags,
    pub unfair_binary: u8,
}

impl LabeledSentence {
    /// Check tag values and the `ub == any(tags)` invariant.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for category in Category::ALL {
            let v = self.tags.get(category);
            if v > 1 {
                return Err(format!("tag `{}` has value {v}, expected 0 or 1", category.key()));
            }
        }
        if self.unfair_binary > 1 {
            return Err(format!("tag `ub` has value {}, expected 0 or 1", self.unfair_binary));
        }
        let any = self.tags.any();
        if self.unfair_binary == 1 && !any {
            return Err("ub=1 but all category tags are 0".to_string());
        }
        if self.unfair_binary == 0 && any {
            return Err("ub=0 but at least one category tag is 1".to_string());
        }
        Ok(())
    }
}

/// Flat on-disk row shared by the JSONL and CSV loaders.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    id: String,
    text: String,
    ltd: u8,
    ter: u8,
    ch: u8,
    cr: u8,
    #[serde(rename = "use")]
    use_: u8,
    law: u8,
    j: u8,
    a: u8,
    ub: u8,
}

impl From<&LabeledSentence> for Row {
    fn from(s: &LabeledSentence) -> Row {
        Row {
            id: s.id.clone(),
            text: s.text.clone(),
            ltd: s.tags.get(Category::Ltd),
            ter: s.tags.get(Category::Ter),
            ch: s.tags.get(Category::Ch),
            cr: s.tags.get(Category::Cr),
            use_: s.tags.get(Category::Use),
            law: s.tags.get(Category::Law),
            j: s.tags.get(Category::J),
            a: s.tags.get(Category::A),
            ub: s.ub(),
        }
    }
}

impl LabeledSentence {
    fn from_row(row: Row) -> LabeledSentence {
        LabeledSentence {
            id: row.id,
            text: row.text,
            tags: Tags::new([
                row.ltd, row.ter, row.ch, row.cr, row.use_, row.law, row.j, row.a,
            ]),
            unfair_binary: row.ub,
        }
    }

    fn ub(&self) -> u8 {
        self.unfair_binary
    }
}

/// File format for corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Guess the format from a path extension; defaults to JSONL.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(format!("unknown corpus format `{other}` (expected jsonl or csv)")),
        }
    }
}

/// Ordered, id-unique collection of labeled sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sentences: Vec<LabeledSentence>,
    provenance: String,
}

impl Corpus {
    /// Build a corpus, validating per-sentence invariants and id uniqueness.
    pub fn from_sentences(
        sentences: Vec<LabeledSentence>,
        provenance: impl Into<String>,
    ) -> Result<Corpus> {
        let mut seen = HashSet::new();
        for (i, s) in sentences.iter().enumerate() {
            let row = i + 1;
            s.validate()
                .map_err(|reason| Error::InconsistentLabel { row, id: s.id.clone(), reason })?;
            if !seen.insert(s.id.clone()) {
                return Err(Error::DuplicateId { id: s.id.clone(), row });
            }
        }
        Ok(Corpus {
            sentences,
            provenance: provenance.into(),
        })
    }

    pub fn sentences(&self) -> &[LabeledSentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Unfair-binary labels in corpus order.
    pub fn unfair_labels(&self) -> Vec<u8> {
        self.sentences.iter().map(|s| s.unfair_binary).collect()
    }

    /// Labels for one category tag in corpus order.
    pub fn category_labels(&self, category: Category) -> Vec<u8> {
        self.sentences.iter().map(|s| s.tags.get(category)).collect()
    }

    /// Sub-corpus of sentences with `ub == 1`, preserving order.
    pub fn unfair_subset(&self) -> Result<Corpus> {
        let subset: Vec<_> = self
            .sentences
            .iter()
            .filter(|s| s.unfair_binary == 1)
            .cloned()
            .collect();
        Corpus::from_sentences(subset, format!("{} (ub==1 subset)", self.provenance))
    }

    /// SHA-256 of the canonical JSONL serialization; used for run provenance.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.sentences {
            let row = Row::from(s);
            hasher.update(serde_json::to_string(&row).expect("row serializes"));
            hasher.update(b"\n");
        }
        format!("{:x}", hasher.finalize())
    }

    /// Load and validate a corpus from disk.
    pub fn load(path: &Path, format: CorpusFormat) -> Result<Corpus> {
        let sentences = match format {
            CorpusFormat::Jsonl => load_jsonl(path)?,
            CorpusFormat::Csv => load_csv(path)?,
        };
        let mut corpus = Corpus::from_sentences(sentences, path.display().to_string())?;
        corpus.provenance = path.display().to_string();
        Ok(corpus)
    }

    /// Write the corpus to disk in the canonical schema.
    pub fn save(&self, path: &Path, format: CorpusFormat) -> Result<()> {
        match format {
            CorpusFormat::Jsonl => save_jsonl(self, path),
            CorpusFormat::Csv => save_csv(self, path),
        }
    }
}

fn load_jsonl(path: &Path) -> Result<Vec<LabeledSentence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut sentences = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row_no = i + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        sentences.push(LabeledSentence::from_row(row));
    }
    Ok(sentences)
}

fn load_csv(path: &Path) -> Result<Vec<LabeledSentence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut sentences = Vec::new();
    for (i, record) in reader.deserialize::<Row>().enumerate() {
        let row_no = i + 1;
        let row = record.map_err(|e| Error::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        sentences.push(LabeledSentence::from_row(row));
    }
    Ok(sentences)
}

fn save_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for s in corpus.sentences() {
        let row = Row::from(s);
        serde_json::to_writer(&mut out, &row)
            .map_err(|e| Error::Other(format!("serialize row: {e}")))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

fn save_csv(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for s in corpus.sentences() {
        writer
            .serialize(Row::from(s))
            .map_err(|e| Error::Other(format!("serialize row: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Other(format!("flush csv: {e}")))?;
    write_atomic(path, &bytes)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// What to stratify a split on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StratifyOn {
    #[default]
    UnfairBinary,
    Category(Category),
    None,
}

/// Parameters for a train/test split.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub stratify_on: StratifyOn,
}

impl SplitSpec {
    pub fn new(test_fraction: f64, seed: u64) -> SplitSpec {
        SplitSpec {
            test_fraction,
            seed,
            stratify_on: StratifyOn::default(),
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Deterministic stratified train/test split.
///
/// Test size is `round(n * fraction)` overall. Per-stratum quotas are
/// round-half-up; any residual against the overall total is absorbed by the
/// larger strata first.
pub fn train_test_split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("train_test_split"));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test_fraction must be in (0,1), got {}",
            spec.test_fraction
        )));
    }

    let n = corpus.len();
    let label_of = |s: &LabeledSentence| -> u8 {
        match spec.stratify_on {
            StratifyOn::UnfairBinary => s.unfair_binary,
            StratifyOn::Category(c) => s.tags.get(c),
            StratifyOn::None => 0,
        }
    };

    // Strata in fixed label order so the rng stream is stable.
    let mut strata: Vec<(u8, Vec<usize>)> = Vec::new();
    for (i, s) in corpus.sentences().iter().enumerate() {
        let label = label_of(s);
        match strata.iter_mut().find(|(l, _)| *l == label) {
            Some((_, idx)) => idx.push(i),
            None => strata.push((label, vec![i])),
        }
    }
    strata.sort_by_key(|(l, _)| *l);

    for (label, idx) in &strata {
        if idx.len() < 2 {
            return Err(Error::StratumTooSmall {
                stratum: label.to_string(),
                count: idx.len(),
            });
        }
    }

    let total_test = round_half_up(n as f64 * spec.test_fraction);
    if total_test == 0 {
        return Err(Error::EmptySplit {
            fraction: spec.test_fraction,
            side: "test",
        });
    }
    if total_test >= n {
        return Err(Error::EmptySplit {
            fraction: spec.test_fraction,
            side: "train",
        });
    }

    let mut quotas: Vec<usize> = strata
        .iter()
        .map(|(_, idx)| round_half_up(idx.len() as f64 * spec.test_fraction).min(idx.len()))
        .collect();

    // Absorb rounding residual into the larger strata first.
    let mut by_size: Vec<usize> = (0..strata.len()).collect();
    by_size.sort_by_key(|&i| std::cmp::Reverse(strata[i].1.len()));
    let mut assigned: usize = quotas.iter().sum();
    'outer: while assigned != total_test {
        for &i in &by_size {
            if assigned > total_test && quotas[i] > 0 {
                quotas[i] -= 1;
                assigned -= 1;
            } else if assigned < total_test && quotas[i] < strata[i].1.len() {
                quotas[i] += 1;
                assigned += 1;
            }
            if assigned == total_test {
                break 'outer;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut test_idx = Vec::with_capacity(total_test);
    let mut train_idx = Vec::with_capacity(n - total_test);
    for ((_, idx), quota) in strata.iter().zip(&quotas) {
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut rng);
        test_idx.extend_from_slice(&shuffled[..*quota]);
        train_idx.extend_from_slice(&shuffled[*quota..]);
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let pick = |indices: &[usize]| -> Vec<LabeledSentence> {
        indices
            .iter()
            .map(|&i| corpus.sentences()[i].clone())
            .collect()
    };
    let train = Corpus::from_sentences(
        pick(&train_idx),
        format!("{} [train split seed={}]", corpus.provenance(), spec.seed),
    )?;
    let test = Corpus::from_sentences(
        pick(&test_idx),
        format!("{} [test split seed={}]", corpus.provenance(), spec.seed),
    )?;
    Ok((train, test))
}

/// Relative category frequencies used by the synthetic generator. Heavily
/// imbalanced, like real ToS annotation data.
pub const DEFAULT_CATEGORY_WEIGHTS: [u32; 8] = [296, 236, 188, 118, 117, 70, 68, 44];

const MIN_SENTENCE_WORDS: usize = 5;
const MAX_SENTENCE_WORDS: usize = 12;

/// Generate a labeled synthetic corpus with a planted marker-token signal.
///
/// Word indices 0..8 of the vocabulary are category marker words (the tag
/// keys themselves); the rest are filler words `w8..`. A sentence is unfair
/// iff it contains exactly one marker word, and that marker determines its
/// category tag, so labels are learnable from text alone.
pub fn synthesize_corpus(
    n: usize,
    positive_rate: f64,
    seed: u64,
    vocab_size: usize,
) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if !(positive_rate > 0.0 && positive_rate < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "positive_rate must be in (0,1), got {positive_rate}"
        )));
    }
    if vocab_size < 9 {
        return Err(Error::InvalidParameter(format!(
            "vocab_size {vocab_size} is degenerate: need 8 marker words plus at least one filler"
        )));
    }

    let fillers: Vec<String> = (8..vocab_size).map(|i| format!("w{i}")).collect();
    let n_pos = round_half_up(n as f64 * positive_rate);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_positive = vec![false; n];
    for &i in order.iter().take(n_pos) {
        is_positive[i] = true;
    }

    let weight_total: u32 = DEFAULT_CATEGORY_WEIGHTS.iter().sum();
    let mut sentences = Vec::with_capacity(n);
    for i in 0..n {
        let len = rng.gen_range(MIN_SENTENCE_WORDS..=MAX_SENTENCE_WORDS);
        let mut words: Vec<&str> = (0..len)
            .map(|_| fillers[rng.gen_range(0..fillers.len())].as_str())
            .collect();

        let mut tags = Tags::default();
        let unfair_binary = if is_positive[i] {
            let mut draw = rng.gen_range(0..weight_total);
            let mut category = Category::A;
            for (c, &w) in Category::ALL.iter().zip(&DEFAULT_CATEGORY_WEIGHTS) {
                if draw < w {
                    category = *c;
                    break;
                }
                draw -= w;
            }
            tags.set(category, 1);
            let pos = rng.gen_range(0..=words.len());
            words.insert(pos, category.key());
            1
        } else {
            0
        };

        sentences.push(LabeledSentence {
            id: format!("s{i:06}"),
            text: words.join(" "),
            tags,
            unfair_binary,
        });
    }

    Corpus::from_sentences(
        sentences,
        format!("synthetic n={n} rate={positive_rate} seed={seed} vocab={vocab_size}"),
    )
}
