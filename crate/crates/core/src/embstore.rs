//! Embedding records, sets, manifests and the two on-disk formats.
//!
//! JSONL holds one record object per line. The binary layout is little-endian:
//!
//! ```text
//! "FPRK" | u16 version (1) | u32 dimension | u64 record count
//! per record:
//!   u16 len + id | u16 len + subject | u8 role | u16 len + encoder
//!   u16 len + variant | u16 len + method | dimension x f32
//! ```
//!
//! Role bytes: 0 reference, 1 gallery, 2 generated, 3 prompt.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};

pub const MAGIC: &[u8; 4] = b"FPRK";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reference,
    Gallery,
    Generated,
    Prompt,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Reference, Role::Gallery, Role::Generated, Role::Prompt];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Reference => "reference",
            Role::Gallery => "gallery",
            Role::Generated => "generated",
            Role::Prompt => "prompt",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Role::Reference => 0,
            Role::Gallery => 1,
            Role::Generated => 2,
            Role::Prompt => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Role::ALL.get(code as usize).copied()
    }

    /// Reference and gallery records are real images.
    pub fn is_real(self) -> bool {
        matches!(self, Role::Reference | Role::Gallery)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown role {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub subject: String,
    pub role: Role,
    pub encoder: String,
    pub variant: String,
    #[serde(default)]
    pub method: String,
    #[serde(deserialize_with = "f32_lossy")]
    pub vector: Vec<f32>,
}

// Values past the f32 range become infinities and are rejected by validation
// with the offending id, rather than failing as an anonymous parse error.
fn f32_lossy<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f32>, D::Error> {
    let wide: Vec<f64> = Deserialize::deserialize(d)?;
    Ok(wide.into_iter().map(|v| v as f32).collect())
}

impl EmbeddingRecord {
    /// Id with a trailing `@<variant>` tag removed, used to match the same
    /// image across variants.
    pub fn base_id(&self) -> &str {
        self.id
            .strip_suffix(self.variant.as_str())
            .and_then(|rest| rest.strip_suffix('@'))
            .filter(|rest| !rest.is_empty())
            .unwrap_or(&self.id)
    }

    pub fn norm(&self) -> f64 {
        self.vector
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    fn check(&self, dimension: usize, encoder: &str) -> Result<(), ValidationError> {
        let id = || self.id.clone();
        if self.id.is_empty() || self.subject.is_empty() {
            return Err(ValidationError::EmptyKey { id: id() });
        }
        if self.vector.is_empty() {
            return Err(ValidationError::EmptyVector { id: id() });
        }
        if self.vector.len() != dimension {
            return Err(ValidationError::DimensionMismatch {
                id: id(),
                expected: dimension,
                found: self.vector.len(),
            });
        }
        if let Some(index) = self.vector.iter().position(|x| !x.is_finite()) {
            return Err(ValidationError::NonFinite { id: id(), index });
        }
        if self.norm() == 0.0 {
            return Err(ValidationError::ZeroNorm { id: id() });
        }
        if self.encoder != encoder {
            return Err(ValidationError::EncoderMismatch {
                id: id(),
                expected: encoder.to_string(),
                found: self.encoder.clone(),
            });
        }
        match self.role {
            Role::Generated if self.method.is_empty() => {
                Err(ValidationError::MissingMethod { id: id() })
            }
            Role::Reference | Role::Gallery if !self.method.is_empty() => {
                Err(ValidationError::UnexpectedMethod {
                    id: id(),
                    method: self.method.clone(),
                })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Binary,
}

impl Format {
    /// `.jsonl`/`.json` map to JSONL, `.bin`/`.fprk` to binary.
    pub fn from_path(path: &Path) -> Result<Format> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Ok(Format::Jsonl),
            Some("bin") | Some("fprk") => Ok(Format::Binary),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer embedding format from {}",
                path.display()
            ))),
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "binary" | "bin" => Ok(Format::Binary),
            _ => Err(Error::InvalidArgument(format!("unknown format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub dimension: usize,
    pub encoder: String,
    pub subjects: Vec<String>,
    pub counts: BTreeMap<String, BTreeMap<Role, usize>>,
    pub format_version: u16,
}

impl DatasetManifest {
    fn from_records(name: &str, records: &[EmbeddingRecord]) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<Role, usize>> = BTreeMap::new();
        for r in records {
            *counts
                .entry(r.subject.clone())
                .or_default()
                .entry(r.role)
                .or_default() += 1;
        }
        DatasetManifest {
            name: name.to_string(),
            dimension: records.first().map_or(0, |r| r.vector.len()),
            encoder: records.first().map_or_else(String::new, |r| r.encoder.clone()),
            subjects: counts.keys().cloned().collect(),
            counts,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn count(&self, subject: &str, role: Role) -> usize {
        self.counts
            .get(subject)
            .and_then(|c| c.get(&role))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().flat_map(|c| c.values()).sum()
    }

    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Immutable, validated collection of embedding records with lookup indices.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    manifest: DatasetManifest,
    records: Vec<EmbeddingRecord>,
    by_id: HashMap<String, usize>,
    by_subject_role: BTreeMap<(String, Role), Vec<usize>>,
    by_role: BTreeMap<Role, Vec<usize>>,
}

impl PartialEq for EmbeddingSet {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest && self.records == other.records
    }
}

impl EmbeddingSet {
    /// Validates `records` and builds the indices. Dimension and encoder are
    /// taken from the first record.
    pub fn new(name: &str, records: Vec<EmbeddingRecord>) -> Result<EmbeddingSet> {
        let first = records.first().ok_or(ValidationError::EmptySet)?;
        let dimension = first.vector.len();
        let encoder = first.encoder.clone();

        let mut by_id = HashMap::with_capacity(records.len());
        let mut by_subject_role: BTreeMap<(String, Role), Vec<usize>> = BTreeMap::new();
        let mut by_role: BTreeMap<Role, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            r.check(dimension, &encoder)?;
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(ValidationError::DuplicateId { id: r.id.clone() }.into());
            }
            by_subject_role
                .entry((r.subject.clone(), r.role))
                .or_default()
                .push(i);
            by_role.entry(r.role).or_default().push(i);
        }

        // Query-only sets (no real records at all) are allowed so that
        // generated files can be kept apart and merged later.
        let has_real = by_role.contains_key(&Role::Reference) || by_role.contains_key(&Role::Gallery);
        if has_real {
            let orphans: BTreeSet<String> = by_subject_role
                .keys()
                .filter(|(s, role)| {
                    *role == Role::Generated
                        && !by_subject_role.contains_key(&(s.clone(), Role::Gallery))
                })
                .map(|(s, _)| s.clone())
                .collect();
            if !orphans.is_empty() {
                return Err(ValidationError::GeneratedWithoutGallery {
                    subjects: orphans.into_iter().collect(),
                }
                .into());
            }
        }

        Ok(EmbeddingSet {
            manifest: DatasetManifest::from_records(name, &records),
            records,
            by_id,
            by_subject_role,
            by_role,
        })
    }

    /// Concatenates sets that share dimension and encoder.
    pub fn merge(name: &str, sets: &[&EmbeddingSet]) -> Result<EmbeddingSet> {
        let records = sets.iter().flat_map(|s| s.records.iter().cloned()).collect();
        EmbeddingSet::new(name, records)
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn dimension(&self) -> usize {
        self.manifest.dimension
    }

    pub fn encoder(&self) -> &str {
        &self.manifest.encoder
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn subjects(&self) -> &[String] {
        &self.manifest.subjects
    }

    pub fn by_subject_role(&self, subject: &str, role: Role) -> Vec<&EmbeddingRecord> {
        self.by_subject_role
            .get(&(subject.to_string(), role))
            .map(|ix| ix.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    pub fn by_role(&self, role: Role) -> Vec<&EmbeddingRecord> {
        self.by_role
            .get(&role)
            .map(|ix| ix.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    /// Distinct non-empty method names of generated records, sorted.
    pub fn methods(&self) -> Vec<String> {
        self.by_role(Role::Generated)
            .into_iter()
            .map(|r| r.method.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn variants(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.variant.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// New set holding the records accepted by `predicate`; `self` is untouched.
    pub fn filter<F>(&self, predicate: F) -> Result<EmbeddingSet>
    where
        F: Fn(&EmbeddingRecord) -> bool,
    {
        let records = self.records.iter().filter(|r| predicate(r)).cloned().collect();
        EmbeddingSet::new(&self.manifest.name, records)
    }

    /// Checks a standalone manifest against the loaded records.
    pub fn check_manifest(&self, declared: &DatasetManifest) -> Result<(), ValidationError> {
        if declared.dimension != self.dimension() {
            let id = self.records[0].id.clone();
            return Err(ValidationError::DimensionMismatch {
                id,
                expected: declared.dimension,
                found: self.dimension(),
            });
        }
        if declared.encoder != self.encoder() {
            return Err(ValidationError::EncoderMismatch {
                id: self.records[0].id.clone(),
                expected: declared.encoder.clone(),
                found: self.encoder().to_string(),
            });
        }
        if declared.subjects != self.manifest.subjects {
            return Err(ValidationError::Manifest("subject list differs".into()));
        }
        if declared.counts != self.manifest.counts {
            return Err(ValidationError::Manifest("per-(subject, role) counts differ".into()));
        }
        Ok(())
    }
}

/// Reads and validates a set. The dataset name is the file stem.
pub fn load_set(path: &Path, format: Format) -> Result<EmbeddingSet> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = match format {
        Format::Jsonl => parse_jsonl(path, &bytes)?,
        Format::Binary => parse_binary(path, &bytes)?,
    };
    EmbeddingSet::new(&name, records)
}

/// Like [`load_set`] with the format inferred from the extension.
pub fn load_set_auto(path: &Path) -> Result<EmbeddingSet> {
    load_set(path, Format::from_path(path)?)
}

pub fn write_set(set: &EmbeddingSet, path: &Path, format: Format) -> Result<()> {
    if set.is_empty() {
        return Err(ValidationError::EmptySet.into());
    }
    let bytes = match format {
        Format::Jsonl => encode_jsonl(set.records())?,
        Format::Binary => encode_binary(set.dimension(), set.records())?,
    };
    write_atomic(path, &bytes)
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn parse_jsonl(path: &Path, bytes: &[u8]) -> Result<Vec<EmbeddingRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("invalid UTF-8: {e}"),
    })?;
    let mut records = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn encode_jsonl(records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn encode_binary(dimension: usize, records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    let dim = u32::try_from(dimension)
        .map_err(|_| Error::InvalidArgument(format!("dimension {dimension} exceeds u32")))?;
    let mut out = Vec::with_capacity(18 + records.len() * (dimension * 4 + 32));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        put_str(&mut out, &r.id)?;
        put_str(&mut out, &r.subject)?;
        out.push(r.role.code());
        put_str(&mut out, &r.encoder)?;
        put_str(&mut out, &r.variant)?;
        put_str(&mut out, &r.method)?;
        for x in &r.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::InvalidArgument(format!("string field longer than 65535 bytes: {s:.32}...")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.record,
            message: format!("byte {}: {}", self.pos, message.into()),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail("unexpected end of file")),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail("invalid UTF-8 string"))
    }
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Vec<EmbeddingRecord>> {
    let mut rd = Reader {
        path,
        bytes,
        pos: 0,
        record: 0,
    };
    if rd.take(4)? != MAGIC {
        return Err(rd.fail("bad magic, expected FPRK"));
    }
    let version = rd.u16()?;
    if version != FORMAT_VERSION {
        return Err(rd.fail(format!("unsupported version {version}")));
    }
    let dimension = rd.u32()? as usize;
    let count = rd.u64()?;
    // A record needs at least 11 header bytes plus its vector.
    let min_record = 11 + dimension * 4;
    if count.saturating_mul(min_record as u64) > (bytes.len() - rd.pos) as u64 {
        return Err(rd.fail(format!("record count {count} exceeds file size")));
    }
    let mut records = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        rd.record = i + 1;
        let id = rd.string()?;
        let subject = rd.string()?;
        let code = rd.u8()?;
        let role = Role::from_code(code).ok_or_else(|| rd.fail(format!("bad role byte {code}")))?;
        let encoder = rd.string()?;
        let variant = rd.string()?;
        let method = rd.string()?;
        let raw = rd.take(dimension * 4)?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(EmbeddingRecord {
            id,
            subject,
            role,
            encoder,
            variant,
            method,
            vector,
        });
    }
    if rd.pos != bytes.len() {
        rd.record = 0;
        return Err(rd.fail("trailing bytes after last record"));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(id: &str, subject: &str, role: Role, vector: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            subject: subject.into(),
            role,
            encoder: "stub".into(),
            variant: "default".into(),
            method: if role == Role::Generated { "m".into() } else { String::new() },
            vector: vector.to_vec(),
        }
    }

    fn ten_subject_set() -> EmbeddingSet {
        let mut records = Vec::new();
        for s in 0..10 {
            for k in 0..3 {
                let role = [Role::Reference, Role::Gallery, Role::Generated][k];
                records.push(rec(&format!("s{s}-{k}"), &format!("s{s}"), role, &[1.0 + s as f32, k as f32]));
            }
        }
        EmbeddingSet::new("ten", records).unwrap()
    }

    #[test]
    fn two_valid_records() {
        let set = EmbeddingSet::new(
            "t",
            vec![rec("a", "x", Role::Gallery, &[1.0, 0.0]), rec("b", "x", Role::Gallery, &[0.0, 1.0])],
        )
        .unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.dimension(), 2);
    }

    #[test]
    fn nan_component_is_rejected_with_id() {
        let err = EmbeddingSet::new("t", vec![rec("bad", "x", Role::Gallery, &[1.0, f32::NAN])]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite component") && msg.contains("bad"), "{msg}");
    }

    #[test]
    fn dimension_mismatch_against_manifest() {
        let set = EmbeddingSet::new("t", vec![rec("a", "x", Role::Gallery, &[1.0, 0.0, 2.0])]).unwrap();
        let mut declared = set.manifest().clone();
        declared.dimension = 2;
        let err = set.check_manifest(&declared).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));

        let err = EmbeddingSet::new(
            "t",
            vec![rec("a", "x", Role::Gallery, &[1.0, 0.0]), rec("b", "x", Role::Gallery, &[1.0, 0.0, 2.0])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn structural_rules() {
        let dup = EmbeddingSet::new(
            "t",
            vec![rec("a", "x", Role::Gallery, &[1.0]), rec("a", "y", Role::Gallery, &[1.0])],
        );
        assert!(matches!(dup, Err(Error::Validation(ValidationError::DuplicateId { .. }))));

        let zero = EmbeddingSet::new("t", vec![rec("z", "x", Role::Gallery, &[0.0, 0.0])]);
        assert!(matches!(zero, Err(Error::Validation(ValidationError::ZeroNorm { .. }))));

        let mut g = rec("g", "x", Role::Generated, &[1.0]);
        g.method.clear();
        let no_method = EmbeddingSet::new("t", vec![g]);
        assert!(matches!(no_method, Err(Error::Validation(ValidationError::MissingMethod { .. }))));

        let mut r = rec("r", "x", Role::Gallery, &[1.0]);
        r.method = "dreambooth".into();
        assert!(matches!(
            EmbeddingSet::new("t", vec![r]),
            Err(Error::Validation(ValidationError::UnexpectedMethod { .. }))
        ));

        let orphan = EmbeddingSet::new(
            "t",
            vec![rec("r", "x", Role::Reference, &[1.0]), rec("g", "x", Role::Generated, &[1.0])],
        );
        assert!(matches!(
            orphan,
            Err(Error::Validation(ValidationError::GeneratedWithoutGallery { .. }))
        ));

        assert!(matches!(
            EmbeddingSet::new("t", vec![]),
            Err(Error::Validation(ValidationError::EmptySet))
        ));
    }

    #[test]
    fn filter_by_role() {
        let set = ten_subject_set();
        let gallery = set.filter(|r| r.role == Role::Gallery).unwrap();
        assert_eq!(gallery.len(), 10);
        assert!(gallery.records().iter().all(|r| r.role == Role::Gallery));
        assert_eq!(gallery.manifest().count("s3", Role::Reference), 0);
        assert_eq!(set.len(), 30);
    }

    #[test]
    fn filter_missing_variant_is_empty_set() {
        let set = ten_subject_set();
        let err = set.filter(|r| r.variant == "bg-removed").unwrap_err();
        assert!(matches!(err, Error::Validation(ValidationError::EmptySet)));
    }

    #[test]
    fn filter_that_drops_galleries_but_keeps_generated_and_references() {
        let set = ten_subject_set();
        let err = set.filter(|r| r.role != Role::Gallery).unwrap_err();
        assert!(matches!(err, Error::Validation(ValidationError::GeneratedWithoutGallery { .. })));
    }

    #[test]
    fn filter_by_method_gives_query_only_set() {
        let set = ten_subject_set();
        let only = set.filter(|r| r.method == "m").unwrap();
        assert_eq!(only.len(), 10);
        assert!(only.records().iter().all(|r| r.role == Role::Generated));
        let real = set.filter(|r| r.role.is_real()).unwrap();
        let merged = EmbeddingSet::merge("ten", &[&real, &only]).unwrap();
        assert_eq!(merged.len(), 30);
    }

    #[test]
    fn indices_agree_with_scan() {
        let set = ten_subject_set();
        for s in set.subjects() {
            for role in Role::ALL {
                let indexed: Vec<&str> = set.by_subject_role(s, role).iter().map(|r| r.id.as_str()).collect();
                let scanned: Vec<&str> = set
                    .records()
                    .iter()
                    .filter(|r| &r.subject == s && r.role == role)
                    .map(|r| r.id.as_str())
                    .collect();
                assert_eq!(indexed, scanned);
            }
        }
    }

    #[test]
    fn base_id_strips_variant_tag() {
        let mut r = rec("img7@bg-removed", "x", Role::Gallery, &[1.0]);
        r.variant = "bg-removed".into();
        assert_eq!(r.base_id(), "img7");
        r.variant = "default".into();
        assert_eq!(r.base_id(), "img7@bg-removed");
    }

    #[test]
    fn binary_rejects_garbage() {
        let p = Path::new("mem.bin");
        assert!(parse_binary(p, b"NOPE").is_err());
        let mut bytes = encode_binary(1, &[rec("a", "x", Role::Gallery, &[1.0])]).unwrap();
        bytes.push(0);
        assert!(parse_binary(p, &bytes).is_err());
        bytes.truncate(bytes.len() - 3);
        assert!(parse_binary(p, &bytes).is_err());
    }

    #[test]
    fn jsonl_overflowing_component_is_non_finite() {
        let line = r#"{"id":"a","subject":"x","role":"gallery","encoder":"e","variant":"v","method":"","vector":[1e39,0.5]}"#;
        let records = parse_jsonl(Path::new("m.jsonl"), line.as_bytes()).unwrap();
        let err = EmbeddingSet::new("m", records).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }
}
