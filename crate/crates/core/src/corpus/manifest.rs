use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

use super::{parse_timeml_with, Corpus, ParseOptions, Split};

/// One line of a corpus manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub doc_id: String,
    pub language: String,
    pub split: Split,
}

/// Load every document listed in a manifest, grouped into one corpus per
/// split. The corpus name is the manifest's file stem.
pub fn load_manifest(path: &Path, fallback_dct: Option<NaiveDate>) -> Result<Vec<Corpus>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&raw).map_err(|e| CorpusError::Manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());

    let mut by_split: BTreeMap<Split, Vec<_>> = BTreeMap::new();
    for entry in entries {
        let file = base.join(&entry.path);
        let text = fs::read_to_string(&file).map_err(|source| CorpusError::Io {
            path: file.clone(),
            source,
        })?;
        let opts = ParseOptions {
            fallback_dct,
            language: entry.language.clone(),
        };
        let doc = parse_timeml_with(&text, &entry.doc_id, &opts).map_err(|e| match e {
            CorpusError::Parse { line, column, message } => CorpusError::Parse {
                line,
                column,
                message: format!("{}: {message}", file.display()),
            },
            other => other,
        })?;
        by_split.entry(entry.split).or_default().push(doc);
    }
    by_split
        .into_iter()
        .map(|(split, docs)| Corpus::new(name.clone(), split, docs))
        .collect()
}
