//! File formats.
//!
//! Feature grids (`.ufg`): the magic `UFG1`, then `gh`, `gw`, `dim`,
//! `patch_size` as little-endian u32, then `gh*gw*dim` little-endian f32
//! values ordered by row, column, channel. Crop grids for a mask are named
//! `<image_id>_<mask_id>.ufg`, whole-image grids `<image_id>.ufg`.
//!
//! Annotation sets are JSON:
//! `{ image_id, height, width, masks: [ { id, rle, score, level, parent_id?, provenance? } ] }`.
//! A file holds one such object or an array of them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::mask::BinaryMask;
use crate::postprocess::AnnotationSet;
use crate::scored::{MaskId, ScoredMask};

pub const UFG_MAGIC: [u8; 4] = *b"UFG1";
pub const UFG_HEADER_LEN: usize = 20;

pub fn encode_feature_grid(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(UFG_HEADER_LEN + grid.data().len() * 4);
    out.extend_from_slice(&UFG_MAGIC);
    for v in [grid.gh() as u32, grid.gw() as u32, grid.dim() as u32, grid.patch_size()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a UFG1 buffer. `path` only labels errors.
pub fn decode_feature_grid(bytes: &[u8], path: &Path) -> Result<FeatureGrid> {
    let path_buf = || path.to_path_buf();
    if bytes.len() >= 4 && bytes[..4] != UFG_MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(Error::BadMagic {
            path: path_buf(),
            found,
        });
    }
    if bytes.len() < UFG_HEADER_LEN {
        return Err(Error::TruncatedPayload {
            path: path_buf(),
            expected: UFG_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let (gh, gw, dim, ps) = (word(0) as usize, word(1) as usize, word(2) as usize, word(3));
    let expected = gh
        .checked_mul(gw)
        .and_then(|v| v.checked_mul(dim))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(UFG_HEADER_LEN))
        .ok_or_else(|| Error::InvalidGrid(format!("{gh}x{gw}x{dim} overflows")))?;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            path: path_buf(),
            found: bytes.len() - expected,
        });
    }
    let mut data = Vec::with_capacity(gh * gw * dim);
    for (index, chunk) in bytes[UFG_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature {
                path: path_buf(),
                index,
            });
        }
        data.push(v);
    }
    FeatureGrid::new(gh, gw, dim, ps, data)
}

pub fn read_feature_grid(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_grid(&bytes, path)
}

pub fn write_feature_grid(path: impl AsRef<Path>, grid: &FeatureGrid) -> Result<()> {
    write_atomic(path.as_ref(), &encode_feature_grid(grid))
}

/// `<image_id>.ufg`, or `<image_id>_<mask_id>.ufg` for a mask crop.
pub fn feature_file_name(image_id: &str, mask: Option<MaskId>) -> String {
    match mask {
        Some(id) => format!("{image_id}_{id}.ufg"),
        None => format!("{image_id}.ufg"),
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRecord {
    id: u64,
    rle: Vec<u32>,
    score: f64,
    level: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetRecord {
    image_id: String,
    height: u32,
    width: u32,
    masks: Vec<MaskRecord>,
}

fn to_record(set: &AnnotationSet) -> SetRecord {
    SetRecord {
        image_id: set.image_id.clone(),
        height: set.height,
        width: set.width,
        masks: set
            .masks
            .iter()
            .map(|m| MaskRecord {
                id: m.id.0,
                rle: m.mask.counts().to_vec(),
                score: m.score,
                level: m.level,
                parent_id: m.parent_id.map(|p| p.0),
                provenance: m.provenance.clone(),
            })
            .collect(),
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

fn from_record(rec: SetRecord, path: &Path, prefix: &str) -> Result<AnnotationSet> {
    let schema = |pointer: String, message: String| Error::Schema {
        path: path.to_path_buf(),
        pointer: format!("{prefix}{pointer}"),
        message,
    };
    let mut set = AnnotationSet::new(rec.image_id, rec.height, rec.width);
    let mut seen = std::collections::HashSet::new();
    for (i, m) in rec.masks.into_iter().enumerate() {
        let mask = BinaryMask::from_counts(rec.height, rec.width, &m.rle)
            .map_err(|e| schema(format!("/masks/{i}/rle"), e.to_string()))?;
        if !seen.insert(m.id) {
            return Err(schema(format!("/masks/{i}/id"), format!("duplicate mask id {}", m.id)));
        }
        let sm = ScoredMask {
            id: MaskId(m.id),
            mask,
            score: m.score,
            level: m.level,
            parent_id: m.parent_id.map(MaskId),
            provenance: m.provenance,
        };
        if !(0.0..=1.0).contains(&sm.score) {
            return Err(schema(format!("/masks/{i}/score"), format!("{} not in [0, 1]", sm.score)));
        }
        sm.validate()
            .map_err(|e| schema(format!("/masks/{i}/parent_id"), e.to_string()))?;
        set.masks.push(sm);
    }
    Ok(set)
}

fn parse_set(value: Value, path: &Path, prefix: &str) -> Result<AnnotationSet> {
    let rec: SetRecord = serde_path_to_error::deserialize(value).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        pointer: format!("{prefix}{}", pointer_of(e.path())),
        message: e.into_inner().to_string(),
    })?;
    from_record(rec, path, prefix)
}

/// Parses a JSON document holding one annotation set or an array of them.
pub fn decode_annotation_sets(text: &str, path: &Path) -> Result<Vec<AnnotationSet>> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        pointer: String::new(),
        message: e.to_string(),
    })?;
    match value {
        Value::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| parse_set(v, path, &format!("/{i}")))
            .collect(),
        v => Ok(vec![parse_set(v, path, "")?]),
    }
}

/// Compact JSON, one line, newline-terminated. Scores use the shortest
/// decimal that parses back to the same f64.
pub fn encode_annotation_set(set: &AnnotationSet) -> String {
    let mut s = serde_json::to_string(&to_record(set)).expect("annotation records serialise");
    s.push('\n');
    s
}

pub fn encode_annotation_sets(sets: &[AnnotationSet]) -> String {
    let recs: Vec<SetRecord> = sets.iter().map(to_record).collect();
    let mut s = serde_json::to_string(&recs).expect("annotation records serialise");
    s.push('\n');
    s
}

/// Reads a file, or every `*.json` file of a directory in name order.
pub fn read_annotation_sets(path: impl AsRef<Path>) -> Result<Vec<AnnotationSet>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut out = Vec::new();
        for file in list_files(path, "json")? {
            out.extend(read_annotation_file(&file)?);
        }
        return Ok(out);
    }
    read_annotation_file(path)
}

fn read_annotation_file(path: &Path) -> Result<Vec<AnnotationSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_annotation_sets(&text, path)
}

/// Reads a file that must hold exactly one annotation set.
pub fn read_annotation_set(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let mut sets = read_annotation_file(path)?;
    if sets.len() != 1 {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            pointer: String::new(),
            message: format!("expected one annotation set, found {}", sets.len()),
        });
    }
    Ok(sets.pop().expect("one set"))
}

pub fn write_annotation_set(path: impl AsRef<Path>, set: &AnnotationSet) -> Result<()> {
    set.validate()?;
    write_atomic(path.as_ref(), encode_annotation_set(set).as_bytes())
}

/// A single set is written as an object, several as an array.
pub fn write_annotation_sets(path: impl AsRef<Path>, sets: &[AnnotationSet]) -> Result<()> {
    if let [one] = sets {
        return write_annotation_set(path, one);
    }
    sets.iter().try_for_each(AnnotationSet::validate)?;
    write_atomic(path.as_ref(), encode_annotation_sets(sets).as_bytes())
}

/// Regular files in `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
