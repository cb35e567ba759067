//! Training corpus: framework module classes found in a file tree,
//! canonicalized and deduplicated, stored as JSONL per framework.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::canon::{
    canonicalize, extract_keywords_at, extract_module_classes, ApiKeyword, CanonError, Framework,
    KeywordOccurrence, ModuleBases, SignatureDatabase, UnitRef,
};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid glob `{pattern}`: {message}")]
    Glob { pattern: String, message: String },
    #[error("notebook is not valid JSON: {0}")]
    Notebook(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("manifest does not match stored units: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// A file is kept only if its text contains one of these.
    pub markers: Vec<String>,
    pub max_file_bytes: u64,
    pub include: Vec<String>,
    pub exclude: Vec<String>,
    pub bases: ModuleBases,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            markers: Framework::ALL
                .iter()
                .map(|f| f.marker().to_string())
                .collect(),
            max_file_bytes: 1 << 20,
            include: Vec::new(),
            exclude: Vec::new(),
            bases: ModuleBases::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredUnit {
    pub id: u64,
    pub origin: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub id: usize,
    pub keyword: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkManifest {
    pub unit_count: usize,
    pub vocabulary: Vec<VocabEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpe: Option<String>,
    pub content_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub frameworks: BTreeMap<Framework, FrameworkManifest>,
}

impl CorpusManifest {
    pub fn vocabulary(&self, fw: Framework) -> Vec<ApiKeyword> {
        self.frameworks
            .get(&fw)
            .map(|m| {
                m.vocabulary
                    .iter()
                    .map(|e| crate::eval::parse_qualified(fw, &e.keyword))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("manifest serializes"),
        ))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    units: BTreeMap<Framework, Vec<StoredUnit>>,
    seen: HashSet<(Framework, [u8; 32])>,
    pub skipped: Vec<SkippedFile>,
}

/// Code cells of a notebook in order, with magic and shell lines removed.
pub fn notebook_extract(json: &str) -> Result<String, CorpusError> {
    let nb: serde_json::Value =
        serde_json::from_str(json).map_err(|e| CorpusError::Notebook(e.to_string()))?;
    let cells = nb
        .get("cells")
        .and_then(|c| c.as_array())
        .ok_or_else(|| CorpusError::Notebook("missing `cells` array".into()))?;
    let mut out = String::new();
    for cell in cells {
        if cell.get("cell_type").and_then(|t| t.as_str()) != Some("code") {
            continue;
        }
        let source = match cell.get("source") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Array(lines)) => {
                lines.iter().filter_map(|l| l.as_str()).collect()
            }
            _ => continue,
        };
        let mut in_cell_magic = false;
        for line in source.lines() {
            let t = line.trim_start();
            if t.starts_with("%%") {
                in_cell_magic = true;
            }
            if in_cell_magic || t.starts_with('%') || t.starts_with('!') {
                continue;
            }
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Keywords by descending count, ties by qualified name.
pub fn build_vocab<'a>(
    occs: impl IntoIterator<Item = &'a KeywordOccurrence>,
) -> Vec<(ApiKeyword, u64)> {
    let mut counts: HashMap<&ApiKeyword, u64> = HashMap::new();
    for o in occs {
        *counts.entry(&o.keyword).or_default() += 1;
    }
    let mut v: Vec<(String, &ApiKeyword, u64)> = counts
        .into_iter()
        .map(|(k, c)| (k.qualified(), k, c))
        .collect();
    v.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(_, k, c)| (k.clone(), c)).collect()
}

fn glob_set(patterns: &[String]) -> Result<Option<GlobSet>, CorpusError> {
    if patterns.is_empty() {
        return Ok(None);
    }
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        b.add(Glob::new(p).map_err(|e| CorpusError::Glob {
            pattern: p.clone(),
            message: e.to_string(),
        })?);
    }
    b.build().map(Some).map_err(|e| CorpusError::Glob {
        pattern: patterns.join(","),
        message: e.to_string(),
    })
}

struct Candidate {
    framework: Framework,
    origin: String,
    text: String,
}

enum FileOutcome {
    Units(Vec<Candidate>, Vec<SkippedFile>),
    Skipped(SkippedFile),
}

fn process_file(
    path: &Path,
    origin: &str,
    dbs: &[&SignatureDatabase],
    opts: &IngestOptions,
) -> FileOutcome {
    let skip = |reason: String| {
        FileOutcome::Skipped(SkippedFile {
            path: origin.to_string(),
            reason,
        })
    };
    match fs::metadata(path) {
        Ok(m) if m.len() > opts.max_file_bytes => {
            return skip(format!("larger than {} bytes", opts.max_file_bytes))
        }
        Err(e) => return skip(e.to_string()),
        _ => {}
    }
    let raw = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return skip(e.to_string()),
    };
    if !opts.markers.iter().any(|m| raw.contains(m.as_str())) {
        return skip("no framework marker".into());
    }
    let text = if path.extension().is_some_and(|e| e == "ipynb") {
        match notebook_extract(&raw) {
            Ok(t) => t,
            Err(e) => return skip(e.to_string()),
        }
    } else {
        raw
    };
    let classes = match extract_module_classes(&text, origin, dbs, &opts.bases) {
        Ok(c) => c,
        Err(e) => return skip(format!("parse: {e}")),
    };
    if classes.units.is_empty() {
        return skip("no framework module classes".into());
    }
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for unit in classes.units {
        let Some(db) = dbs.iter().find(|d| d.framework == unit.framework) else {
            continue;
        };
        match canonicalize(&unit, db) {
            Ok(c) => out.push(Candidate {
                framework: c.framework,
                origin: c.origin,
                text: c.text,
            }),
            Err(e) => skipped.push(SkippedFile {
                path: unit.origin,
                reason: format!("canonicalize: {e}"),
            }),
        }
    }
    FileOutcome::Units(out, skipped)
}

fn content_hash<'a>(units: impl Iterator<Item = &'a StoredUnit>) -> String {
    let mut h = Sha256::new();
    for u in units {
        h.update((u.text.len() as u64).to_le_bytes());
        h.update(u.text.as_bytes());
    }
    hex::encode(h.finalize())
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Walks `roots` in sorted path order. Files that cannot be used are
    /// recorded in [`Corpus::skipped`]; only bad glob patterns are errors.
    pub fn ingest(
        roots: &[PathBuf],
        dbs: &[&SignatureDatabase],
        opts: &IngestOptions,
    ) -> Result<Self, CorpusError> {
        let include = glob_set(&opts.include)?;
        let exclude = glob_set(&opts.exclude)?;
        let mut corpus = Corpus::new();
        let mut files = Vec::new();
        for root in roots {
            for entry in WalkDir::new(root).sort_by_file_name() {
                let entry = match entry {
                    Ok(e) => e,
                    Err(e) => {
                        corpus.skipped.push(SkippedFile {
                            path: root.display().to_string(),
                            reason: e.to_string(),
                        });
                        continue;
                    }
                };
                if !entry.file_type().is_file() {
                    continue;
                }
                let path = entry.path();
                if !path.extension().is_some_and(|e| e == "py" || e == "ipynb") {
                    continue;
                }
                let rel = path.strip_prefix(root).unwrap_or(path);
                if include.as_ref().is_some_and(|g| !g.is_match(rel))
                    || exclude.as_ref().is_some_and(|g| g.is_match(rel))
                {
                    continue;
                }
                files.push((path.to_path_buf(), rel.display().to_string()));
            }
        }
        let outcomes: Vec<FileOutcome> = files
            .par_iter()
            .map(|(path, origin)| process_file(path, origin, dbs, opts))
            .collect();
        for outcome in outcomes {
            match outcome {
                FileOutcome::Units(units, skipped) => {
                    for c in units {
                        if corpus.add(c.framework, c.origin.clone(), c.text).is_none() {
                            corpus.skipped.push(SkippedFile {
                                path: c.origin,
                                reason: "duplicate unit".into(),
                            });
                        }
                    }
                    corpus.skipped.extend(skipped);
                }
                FileOutcome::Skipped(s) => corpus.skipped.push(s),
            }
        }
        for s in &corpus.skipped {
            debug!("skipped {}: {}", s.path, s.reason);
        }
        info!(
            "ingested {} files: {} units, {} skipped",
            files.len(),
            corpus.units.values().map(Vec::len).sum::<usize>(),
            corpus.skipped.len()
        );
        Ok(corpus)
    }

    /// Adds a canonicalized unit unless its text was seen before. Returns the new id.
    pub fn add(&mut self, framework: Framework, origin: String, text: String) -> Option<u64> {
        let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        if !self.seen.insert((framework, digest)) {
            return None;
        }
        let units = self.units.entry(framework).or_default();
        let id = units.len() as u64;
        units.push(StoredUnit { id, origin, text });
        Some(id)
    }

    /// Appends the units of `other` not already present. Returns how many were added.
    pub fn merge(&mut self, other: &Corpus) -> usize {
        let mut added = 0;
        for (&fw, units) in &other.units {
            for u in units {
                added += self.add(fw, u.origin.clone(), u.text.clone()).is_some() as usize;
            }
        }
        added
    }

    pub fn units(&self, fw: Framework) -> &[StoredUnit] {
        self.units.get(&fw).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn frameworks(&self) -> impl Iterator<Item = Framework> + '_ {
        self.units.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.units.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keyword occurrences of every unit of `db.framework`, located as `framework:id`.
    pub fn occurrences(
        &self,
        db: &SignatureDatabase,
    ) -> Result<Vec<KeywordOccurrence>, CorpusError> {
        let fw = db.framework;
        let per_unit: Vec<Vec<KeywordOccurrence>> = self
            .units(fw)
            .par_iter()
            .map(|u| {
                let unit = crate::canon::SourceUnit {
                    text: u.text.clone(),
                    framework: fw,
                    origin: u.origin.clone(),
                };
                extract_keywords_at(
                    &unit,
                    db,
                    UnitRef {
                        corpus: fw.id().to_string(),
                        unit: u.id,
                    },
                )
                .map(|e| e.occurrences)
            })
            .collect::<Result<_, _>>()?;
        Ok(per_unit.into_iter().flatten().collect())
    }

    pub fn manifest(
        &self,
        dbs: &[&SignatureDatabase],
        bpe: Option<&str>,
    ) -> Result<CorpusManifest, CorpusError> {
        let mut m = CorpusManifest::default();
        for (&fw, units) in &self.units {
            let vocabulary = match dbs.iter().find(|d| d.framework == fw) {
                Some(db) => build_vocab(&self.occurrences(db)?)
                    .into_iter()
                    .enumerate()
                    .map(|(id, (k, count))| VocabEntry {
                        id,
                        keyword: k.qualified(),
                        count,
                    })
                    .collect(),
                None => Vec::new(),
            };
            m.frameworks.insert(
                fw,
                FrameworkManifest {
                    unit_count: units.len(),
                    vocabulary,
                    bpe: bpe.map(String::from),
                    content_hash: content_hash(units.iter()),
                },
            );
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path, manifest: &CorpusManifest) -> Result<(), CorpusError> {
        fs::create_dir_all(dir)?;
        for (fw, units) in &self.units {
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("{fw}.jsonl")))?);
            for u in units {
                serde_json::to_writer(&mut w, u).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        let text = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// Loads units and manifest, checking counts and hashes agree.
    pub fn load(dir: &Path) -> Result<(Self, CorpusManifest), CorpusError> {
        let mpath = dir.join(MANIFEST_FILE);
        let manifest: CorpusManifest =
            serde_json::from_str(&fs::read_to_string(&mpath)?).map_err(|e| {
                CorpusError::Format {
                    path: mpath.clone(),
                    message: e.to_string(),
                }
            })?;
        let mut corpus = Corpus::new();
        for (&fw, fm) in &manifest.frameworks {
            let path = dir.join(format!("{fw}.jsonl"));
            let mut units = Vec::new();
            if path.exists() {
                for (i, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let u: StoredUnit =
                        serde_json::from_str(&line).map_err(|e| CorpusError::Format {
                            path: path.clone(),
                            message: format!("line {}: {e}", i + 1),
                        })?;
                    units.push(u);
                }
            }
            if units.len() != fm.unit_count
                || units.iter().enumerate().any(|(i, u)| u.id != i as u64)
            {
                return Err(CorpusError::Inconsistent(format!(
                    "{fw}: expected {} dense ids",
                    fm.unit_count
                )));
            }
            if content_hash(units.iter()) != fm.content_hash {
                return Err(CorpusError::Inconsistent(format!(
                    "{fw}: content hash differs"
                )));
            }
            for u in units {
                corpus.add(fw, u.origin, u.text);
            }
        }
        Ok((corpus, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::ApiSignature;

    fn torch_db() -> SignatureDatabase {
        let aliases = [("torch.nn", "nn"), ("torch", "torch")]
            .into_iter()
            .map(|(a, b)| (a.into(), b.into()))
            .collect();
        SignatureDatabase::new(
            Framework::Pytorch,
            aliases,
            vec![
                ApiSignature::new("nn.Linear", &["in_features", "out_features", "bias"]),
                ApiSignature::new("nn.ReLU", &["inplace"]),
                ApiSignature::new("nn.Module", &[]),
            ],
        )
        .unwrap()
    }

    const NET: &str = "import torch.nn as nn\n\nclass Net(nn.Module):\n    def __init__(self):\n        super().__init__()\n        self.fc = nn.Linear(4, 2)\n        self.act = nn.ReLU()\n";

    fn write(dir: &Path, rel: &str, text: &str) {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    #[test]
    fn empty_tree_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let db = torch_db();
        let c = Corpus::ingest(
            &[dir.path().to_path_buf()],
            &[&db],
            &IngestOptions::default(),
        )
        .unwrap();
        assert!(c.is_empty());
        assert!(c.manifest(&[&db], None).unwrap().frameworks.is_empty());
    }

    #[test]
    fn identical_classes_are_deduplicated() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.py", NET);
        write(
            dir.path(),
            "sub/b.py",
            &NET.replace("import torch.nn as nn", "from torch import nn"),
        );
        write(dir.path(), "c.py", "print('no marker')\n");
        write(dir.path(), "d.txt", NET);
        let db = torch_db();
        let c = Corpus::ingest(
            &[dir.path().to_path_buf()],
            &[&db],
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(c.units(Framework::Pytorch).len(), 1);
        assert_eq!(c.units(Framework::Pytorch)[0].origin, "a.py#Net");
        assert!(c
            .skipped
            .iter()
            .any(|s| s.path == "sub/b.py#Net" && s.reason == "duplicate unit"));
        assert!(c
            .skipped
            .iter()
            .any(|s| s.path.ends_with("c.py") && s.reason == "no framework marker"));

        let mut again = c.clone();
        assert_eq!(again.merge(&c), 0);
    }

    #[test]
    fn globs_and_size_cap_filter_files() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "keep/a.py", NET);
        write(dir.path(), "drop/b.py", &NET.replace("Net", "Other"));
        let db = torch_db();
        let opts = IngestOptions {
            exclude: vec!["drop/**".into()],
            ..Default::default()
        };
        let c = Corpus::ingest(&[dir.path().to_path_buf()], &[&db], &opts).unwrap();
        assert_eq!(c.len(), 1);
        let opts = IngestOptions {
            max_file_bytes: 10,
            ..Default::default()
        };
        let c = Corpus::ingest(&[dir.path().to_path_buf()], &[&db], &opts).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.skipped.len(), 2);
        let bad = IngestOptions {
            include: vec!["[".into()],
            ..Default::default()
        };
        assert!(Corpus::ingest(&[dir.path().to_path_buf()], &[&db], &bad).is_err());
    }

    #[test]
    fn notebook_cells_concatenate_without_magics() {
        assert_eq!(notebook_extract(r#"{"cells": []}"#).unwrap(), "");
        let nb = r##"{"cells": [
            {"cell_type": "code", "source": ["%matplotlib inline\n", "import torch\n"]},
            {"cell_type": "markdown", "source": "# title"},
            {"cell_type": "code", "source": "!pip install x\nx = torch.zeros(1)"},
            {"cell_type": "code", "source": ["%%time\n", "slow()\n"]}
        ]}"##;
        assert_eq!(
            notebook_extract(nb).unwrap(),
            "import torch\nx = torch.zeros(1)\n"
        );
        assert!(notebook_extract("[]").is_err());
    }

    #[test]
    fn vocab_orders_by_count_then_name() {
        let db = torch_db();
        let mut c = Corpus::new();
        let canon = |t: &str| {
            canonicalize(&crate::canon::SourceUnit::new(t, Framework::Pytorch), &db)
                .unwrap()
                .text
        };
        c.add(
            Framework::Pytorch,
            "x".into(),
            canon("a = nn.Linear(1, 2)\nb = nn.ReLU()\nc = nn.ReLU()\n"),
        );
        let occs = c.occurrences(&db).unwrap();
        let v = build_vocab(&occs);
        let names: Vec<String> = v.iter().map(|(k, _)| k.qualified()).collect();
        assert_eq!(
            names,
            [
                "nn.ReLU",
                "nn.Linear",
                "nn.Linear::in_features",
                "nn.Linear::out_features"
            ]
        );
        assert_eq!(v[0].1, 2);
        let mut brute: HashMap<String, u64> = HashMap::new();
        for o in &occs {
            *brute.entry(o.keyword.qualified()).or_default() += 1;
        }
        for (k, n) in &v {
            assert_eq!(brute[&k.qualified()], *n);
        }
        assert!(build_vocab(&[]).is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let src = tempfile::tempdir().unwrap();
        write(src.path(), "a.py", NET);
        let db = torch_db();
        let c = Corpus::ingest(
            &[src.path().to_path_buf()],
            &[&db],
            &IngestOptions::default(),
        )
        .unwrap();
        let m = c.manifest(&[&db], Some("bpe.json")).unwrap();
        let out = tempfile::tempdir().unwrap();
        c.save(out.path(), &m).unwrap();
        let (back, m2) = Corpus::load(out.path()).unwrap();
        assert_eq!(m2, m);
        assert_eq!(back.units(Framework::Pytorch), c.units(Framework::Pytorch));
        assert_eq!(
            back.manifest(&[&db], Some("bpe.json")).unwrap().hash(),
            m.hash()
        );

        fs::write(out.path().join("pytorch.jsonl"), "").unwrap();
        assert!(matches!(
            Corpus::load(out.path()),
            Err(CorpusError::Inconsistent(_))
        ));
    }
}
