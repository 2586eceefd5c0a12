//! Dataset plumbing: JSONL manifests, WAV I/O, the synthetic corpus
//! generator, and stratified fold assignment for cross-validation.

pub mod synth;
pub mod wav;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AudioClip;

/// Which portion of the corpus a clip belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One corpus clip. `path` is relative to the manifest's directory and
/// `label` is the severity class index; the binary detection label is
/// derived from it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: usize,
    pub split: Split,
}

impl ManifestEntry {
    /// Detection collapses severity to absent (class 0) versus present.
    pub fn detection_label(&self) -> usize {
        usize::from(self.label > 0)
    }
}

/// Reads a JSONL manifest, one entry per non-blank line. Errors carry the
/// 1-based line number; duplicate ids are rejected.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
            Error::Parse(format!(
                "{}:{}: bad manifest entry: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Data(format!(
                "{}:{}: duplicate clip id {:?}",
                path.display(),
                lineno + 1,
                entry.id
            )));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: manifest is empty", path.display())));
    }
    Ok(entries)
}

/// Writes entries as JSONL, one per line, in the order given.
pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = Vec::new();
    for entry in entries {
        serde_json::to_writer(&mut out, entry)
            .map_err(|e| Error::Parse(format!("manifest serialization failed: {e}")))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(&out)?;
    Ok(())
}

/// Loads every clip referenced by a manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<Vec<(ManifestEntry, AudioClip)>> {
    let manifest_path = manifest_path.as_ref();
    let entries = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    entries
        .into_iter()
        .map(|entry| {
            let clip = wav::read_wav(base.join(&entry.path))?;
            Ok((entry, clip))
        })
        .collect()
}

/// Assigns items to `k` folds, stratified by class.
///
/// Each `(id, class)` key is grouped by class, the ids in a class are
/// sorted then shuffled with a seed-fixed generator, and the items are
/// dealt round-robin, with the dealing cursor carried across classes so
/// global fold sizes also stay within one of each other. The assignment
/// depends only on the key set, the fold count, and the seed, never on
/// the input order.
pub fn stratified_folds(keys: &[(String, usize)], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if keys.is_empty() {
        return Err(Error::Data("no items to fold".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<(&str, usize)>> = BTreeMap::new();
    let mut seen = HashSet::new();
    for (idx, (id, class)) in keys.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("duplicate id {id:?} in fold keys")));
        }
        by_class.entry(*class).or_default().push((id, idx));
    }
    for (class, members) in &by_class {
        if members.len() < k {
            return Err(Error::Data(format!(
                "class {class} has {} items, fewer than {k} folds",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for members in by_class.values_mut() {
        members.sort_by_key(|&(id, _)| id);
        members.shuffle(&mut rng);
        for &(_, idx) in members.iter() {
            folds[cursor].push(idx);
            cursor = (cursor + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
