//! Dataset model and on-disk formats.
//!
//! A dataset is a dense matrix of token vectors (the `SVEC` file) plus one
//! metadata record per token (a JSON-lines file). Equivalence groups are not
//! stored; they are rebuilt from the token records on load.
//!
//! # SVEC layout (little-endian)
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `b"SVEC"`            |
//! | 4      | 2    | version (`u16`, = 1)       |
//! | 6      | 4    | dim (`u32`)                |
//! | 10     | 8    | count (`u64`)              |
//! | 18     | ...  | `count * dim` `f32`, rows  |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SVEC_MAGIC: [u8; 4] = *b"SVEC";
pub const SVEC_VERSION: u16 = 1;
pub const SVEC_HEADER_LEN: usize = 18;
pub const META_FORMAT_VERSION: u32 = 1;

/// File names used when a dataset lives in a directory.
pub const VECTORS_FILE: &str = "vectors.svec";
pub const META_FILE: &str = "meta.jsonl";

#[derive(Debug, Error)]
pub enum VecStoreError {
    #[error("bad magic bytes {found:?}, expected \"SVEC\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported {what} version {found}")]
    UnsupportedVersion { what: &'static str, found: u32 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("vector count mismatch: header says {header}, file holds {found}")]
    CountMismatch { header: u64, found: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("token {token} references row {row} but the store holds {count} rows")]
    RowOutOfRange { token: usize, row: usize, count: usize },
    #[error("inconsistent group {group_id}: {reason}")]
    InconsistentGroup { group_id: u64, reason: String },
    #[error("metadata line {line}: {source}")]
    Metadata {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("metadata file is missing its header line")]
    MissingHeader,
    #[error("invalid dataset: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Dense row-major matrix of token vectors kept at storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    data: Vec<f32>,
}

impl VectorStore {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, VecStoreError> {
        if dim == 0 {
            return Err(VecStoreError::DimMismatch("dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(VecStoreError::DimMismatch(format!(
                "{} values do not form whole rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self, VecStoreError> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(VecStoreError::DimMismatch(format!(
                    "row {i} has {} entries, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Returns the first non-finite entry as `(row, col)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.dim, i % self.dim))
    }
}

/// One word occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub group_id: u64,
    pub sent_id: u64,
    /// 0 is the original sentence of the group.
    pub variant: u32,
    pub tok_idx: usize,
    pub form: String,
    pub lex_id: u64,
    pub pos: String,
    pub is_function: bool,
    pub dep: String,
    pub head_dep: String,
    /// Distance from the dependency root. Signed so that malformed input can
    /// be represented and reported by [`validate`].
    pub depth: i64,
    /// Constituency labels from the smallest enclosing phrase up to the root.
    pub cpath: Vec<String>,
    pub row: usize,
}

/// First line of a metadata file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaHeader {
    pub format_version: u32,
    pub has_constituency: bool,
    pub has_dependency: bool,
}

/// Sentence variants sharing token positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceGroup {
    pub group_id: u64,
    pub sentence_ids: Vec<u64>,
    pub length: usize,
    /// Positions eligible for pairing, ascending.
    pub content_indices: Vec<usize>,
}

impl EquivalenceGroup {
    /// A group can feed training only with two sentences and two content words.
    pub fn is_usable(&self) -> bool {
        self.sentence_ids.len() >= 2 && self.content_indices.len() >= 2
    }
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    RowOutOfRange { token: usize, row: usize, count: usize },
    NegativeDepth { token: usize, depth: i64 },
    NonFinite { row: usize, col: usize },
    DuplicatePosition { token: usize, sent_id: u64, tok_idx: usize },
    SentenceInSeveralGroups { sent_id: u64 },
    InconsistentGroup { group_id: u64, reason: String },
    EmptyConstituencyPath { token: usize },
    LexIdConflict { form: String },
    SingleSentenceGroup { group_id: u64 },
    StaleGroups,
}

impl Violation {
    /// Fatal violations make a dataset unloadable. The rest are reported but
    /// tolerated (a single-sentence group is still valid evaluation data).
    pub fn is_fatal(&self) -> bool {
        !matches!(
            self,
            Violation::SingleSentenceGroup { .. } | Violation::LexIdConflict { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowOutOfRange { token, row, count } => {
                write!(f, "token {token}: row {row} out of range (count {count})")
            }
            Violation::NegativeDepth { token, depth } => {
                write!(f, "token {token}: negative depth {depth}")
            }
            Violation::NonFinite { row, col } => write!(f, "row {row}: non-finite value at column {col}"),
            Violation::DuplicatePosition { token, sent_id, tok_idx } => {
                write!(f, "token {token}: duplicate position {tok_idx} in sentence {sent_id}")
            }
            Violation::SentenceInSeveralGroups { sent_id } => {
                write!(f, "sentence {sent_id} appears in more than one group")
            }
            Violation::InconsistentGroup { group_id, reason } => write!(f, "group {group_id}: {reason}"),
            Violation::EmptyConstituencyPath { token } => {
                write!(f, "token {token}: empty constituency path in a dataset with constituency annotations")
            }
            Violation::LexIdConflict { form } => write!(f, "form {form:?} carries several lex_ids"),
            Violation::SingleSentenceGroup { group_id } => {
                write!(f, "group {group_id}: single sentence, unusable for training")
            }
            Violation::StaleGroups => write!(f, "group table does not match the token records"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub store: VectorStore,
    pub tokens: Vec<TokenRecord>,
    pub groups: Vec<EquivalenceGroup>,
    pub has_constituency: bool,
    pub has_dependency: bool,
}

impl Dataset {
    /// Builds the group table and rejects data with fatal violations.
    pub fn new(
        store: VectorStore,
        tokens: Vec<TokenRecord>,
        has_constituency: bool,
        has_dependency: bool,
    ) -> Result<Self, VecStoreError> {
        let (groups, mut violations) = build_groups(&tokens);
        let d = Dataset {
            store,
            tokens,
            groups,
            has_constituency,
            has_dependency,
        };
        violations.extend(check_records(&d));
        violations.retain(Violation::is_fatal);
        if let Some(v) = violations.first() {
            return Err(match v.clone() {
                Violation::RowOutOfRange { token, row, count } => {
                    VecStoreError::RowOutOfRange { token, row, count }
                }
                Violation::NonFinite { row, col } => VecStoreError::NonFinite { row, col },
                Violation::InconsistentGroup { group_id, reason } => {
                    VecStoreError::InconsistentGroup { group_id, reason }
                }
                _ => VecStoreError::Invalid(violations),
            });
        }
        Ok(d)
    }

    pub fn empty(dim: usize) -> Self {
        Dataset {
            store: VectorStore { dim, data: Vec::new() },
            tokens: Vec::new(),
            groups: Vec::new(),
            has_constituency: false,
            has_dependency: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    pub fn vector(&self, token: usize) -> &[f32] {
        self.store.row(self.tokens[token].row)
    }

    /// Maps `(sent_id, tok_idx)` to token index.
    pub fn position_index(&self) -> HashMap<(u64, usize), usize> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| ((t.sent_id, t.tok_idx), i))
            .collect()
    }

    pub fn usable_groups(&self) -> impl Iterator<Item = &EquivalenceGroup> {
        self.groups.iter().filter(|g| g.is_usable())
    }
}

/// Rebuilds groups from token records. Groups and their sentences are ordered
/// by id.
fn build_groups(tokens: &[TokenRecord]) -> (Vec<EquivalenceGroup>, Vec<Violation>) {
    let mut violations = Vec::new();
    // group -> sentence -> tok_idx -> is_function
    let mut tree: BTreeMap<u64, BTreeMap<u64, BTreeMap<usize, bool>>> = BTreeMap::new();
    let mut owner: HashMap<u64, u64> = HashMap::new();
    let mut reported = BTreeSet::new();

    for (i, t) in tokens.iter().enumerate() {
        if let Some(&g) = owner.get(&t.sent_id) {
            if g != t.group_id && reported.insert(t.sent_id) {
                violations.push(Violation::SentenceInSeveralGroups { sent_id: t.sent_id });
            }
        } else {
            owner.insert(t.sent_id, t.group_id);
        }
        let sent = tree.entry(t.group_id).or_default().entry(t.sent_id).or_default();
        if sent.insert(t.tok_idx, t.is_function).is_some() {
            violations.push(Violation::DuplicatePosition {
                token: i,
                sent_id: t.sent_id,
                tok_idx: t.tok_idx,
            });
        }
    }

    let mut groups = Vec::with_capacity(tree.len());
    for (group_id, sentences) in tree {
        let mut iter = sentences.iter();
        let (&first_id, first) = iter.next().expect("group has at least one sentence");
        for (&sid, sent) in iter {
            if sent.len() != first.len() {
                violations.push(Violation::InconsistentGroup {
                    group_id,
                    reason: format!(
                        "sentence {sid} has {} tokens, sentence {first_id} has {}",
                        sent.len(),
                        first.len()
                    ),
                });
            } else if sent != first {
                violations.push(Violation::InconsistentGroup {
                    group_id,
                    reason: format!("sentences {first_id} and {sid} differ in positions or function-word mask"),
                });
            }
        }
        if sentences.len() < 2 {
            violations.push(Violation::SingleSentenceGroup { group_id });
        }
        groups.push(EquivalenceGroup {
            group_id,
            sentence_ids: sentences.keys().copied().collect(),
            length: first.len(),
            content_indices: first.iter().filter(|(_, &f)| !f).map(|(&i, _)| i).collect(),
        });
    }
    (groups, violations)
}

fn check_records(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let count = d.store.count();
    if let Some((row, col)) = d.store.first_non_finite() {
        out.push(Violation::NonFinite { row, col });
    }
    let mut lex: BTreeMap<&str, u64> = BTreeMap::new();
    let mut conflicts = BTreeSet::new();
    for (i, t) in d.tokens.iter().enumerate() {
        if t.row >= count {
            out.push(Violation::RowOutOfRange { token: i, row: t.row, count });
        }
        if t.depth < 0 {
            out.push(Violation::NegativeDepth { token: i, depth: t.depth });
        }
        if d.has_constituency && t.cpath.is_empty() {
            out.push(Violation::EmptyConstituencyPath { token: i });
        }
        match lex.get(t.form.as_str()) {
            Some(&id) if id != t.lex_id => {
                conflicts.insert(t.form.clone());
            }
            Some(_) => {}
            None => {
                lex.insert(&t.form, t.lex_id);
            }
        }
    }
    out.extend(conflicts.into_iter().map(|form| Violation::LexIdConflict { form }));
    out
}

/// Lists every invariant violation; empty iff the dataset is fully valid.
pub fn validate(d: &Dataset) -> Vec<Violation> {
    let (groups, mut out) = build_groups(&d.tokens);
    if groups != d.groups {
        out.push(Violation::StaleGroups);
    }
    out.extend(check_records(d));
    out
}

pub fn read_vectors(path: &Path) -> Result<VectorStore, VecStoreError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; SVEC_HEADER_LEN];
    r.read_exact(&mut header)?;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != SVEC_MAGIC {
        return Err(VecStoreError::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
    if version != SVEC_VERSION {
        return Err(VecStoreError::UnsupportedVersion {
            what: "SVEC",
            found: version as u32,
        });
    }
    let dim = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[10..18].try_into().unwrap());

    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if dim == 0 {
        return Err(VecStoreError::DimMismatch("header dim is 0".into()));
    }
    let row_bytes = 4 * dim;
    if !body.len().is_multiple_of(row_bytes) {
        return Err(VecStoreError::DimMismatch(format!(
            "{} payload bytes are not a whole number of {dim}-wide rows",
            body.len()
        )));
    }
    let found = (body.len() / row_bytes) as u64;
    if found != count {
        return Err(VecStoreError::CountMismatch { header: count, found });
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let store = VectorStore { dim, data };
    if let Some((row, col)) = store.first_non_finite() {
        return Err(VecStoreError::NonFinite { row, col });
    }
    Ok(store)
}

pub fn write_vectors(store: &VectorStore, path: &Path) -> Result<(), VecStoreError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&SVEC_MAGIC)?;
    w.write_all(&SVEC_VERSION.to_le_bytes())?;
    let dim = u32::try_from(store.dim)
        .map_err(|_| VecStoreError::DimMismatch(format!("dim {} exceeds u32", store.dim)))?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(store.count() as u64).to_le_bytes())?;
    for v in &store.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_meta(path: &Path) -> Result<(MetaHeader, Vec<TokenRecord>), VecStoreError> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(VecStoreError::MissingHeader),
            Some((_, l)) if l.as_ref().is_ok_and(|s| s.trim().is_empty()) => continue,
            Some((i, l)) => {
                let h: MetaHeader = serde_json::from_str(&l?)
                    .map_err(|source| VecStoreError::Metadata { line: i + 1, source })?;
                break h;
            }
        }
    };
    if header.format_version != META_FORMAT_VERSION {
        return Err(VecStoreError::UnsupportedVersion {
            what: "metadata",
            found: header.format_version,
        });
    }
    let mut tokens = Vec::new();
    for (i, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        tokens.push(
            serde_json::from_str(&l).map_err(|source| VecStoreError::Metadata { line: i + 1, source })?,
        );
    }
    Ok((header, tokens))
}

fn write_meta(d: &Dataset, path: &Path) -> Result<(), VecStoreError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = MetaHeader {
        format_version: META_FORMAT_VERSION,
        has_constituency: d.has_constituency,
        has_dependency: d.has_dependency,
    };
    serde_json::to_writer(&mut w, &header).map_err(io::Error::from)?;
    w.write_all(b"\n")?;
    for t in &d.tokens {
        serde_json::to_writer(&mut w, t).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads and validates a dataset. Input files are only read.
pub fn load_dataset(vector_path: &Path, meta_path: &Path) -> Result<Dataset, VecStoreError> {
    let store = read_vectors(vector_path)?;
    let (header, tokens) = read_meta(meta_path)?;
    Dataset::new(store, tokens, header.has_constituency, header.has_dependency)
}

pub fn write_dataset(d: &Dataset, vector_path: &Path, meta_path: &Path) -> Result<(), VecStoreError> {
    write_vectors(&d.store, vector_path)?;
    write_meta(d, meta_path)
}

pub fn load_dataset_dir(dir: &Path) -> Result<Dataset, VecStoreError> {
    load_dataset(&dir.join(VECTORS_FILE), &dir.join(META_FILE))
}

pub fn write_dataset_dir(d: &Dataset, dir: &Path) -> Result<(), VecStoreError> {
    std::fs::create_dir_all(dir)?;
    write_dataset(d, &dir.join(VECTORS_FILE), &dir.join(META_FILE))
}
