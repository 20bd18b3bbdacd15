//! Dataset manifests: UTF-8 CSV with header `path,label,generator` and an
//! optional `id` column. Relative paths resolve against the manifest's
//! directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{Label, SampleRecord, REAL_GENERATOR};

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<SampleRecord>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose file does not exist.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        self.entries
            .iter()
            .map(|r| self.resolve(r))
            .filter(|p| !p.is_file())
            .collect()
    }

    /// Concatenates manifests, rewriting paths so each keeps resolving to the
    /// same file. Ids must stay unique across the union.
    pub fn merge(parts: &[Manifest]) -> Result<Manifest> {
        let root = parts.first().map(|m| m.root.clone()).unwrap_or_default();
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for part in parts {
            for r in &part.entries {
                if !seen.insert(r.id.clone()) {
                    return Err(Error::Manifest(format!("duplicate id `{}` across manifests", r.id)));
                }
                let mut r = r.clone();
                if part.root != root {
                    r.path = part.resolve(&r).to_string_lossy().into_owned();
                }
                entries.push(r);
            }
        }
        Ok(Manifest { entries, root })
    }

    /// File extensions (lower case) per label; used by the format-bias check.
    pub fn formats_by_label(&self) -> BTreeMap<Label, BTreeSet<String>> {
        let mut out: BTreeMap<Label, BTreeSet<String>> = BTreeMap::new();
        for r in &self.entries {
            let ext = Path::new(&r.path)
                .extension()
                .map(|e| e.to_string_lossy().to_ascii_lowercase())
                .map(|e| if e == "jpg" { "jpeg".to_string() } else { e })
                .unwrap_or_default();
            out.entry(r.label).or_default().insert(ext);
        }
        out
    }

    /// Warning text when real and generated images are stored in different
    /// formats, which lets a detector key on codec traces.
    pub fn format_warning(&self) -> Option<String> {
        let formats = self.formats_by_label();
        let real = formats.get(&Label::Real)?;
        let fake = formats.get(&Label::Fake)?;
        if real == fake && real.len() == 1 {
            return None;
        }
        let show = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join("/");
        Some(format!(
            "mixed image formats: real images are {}, generated images are {}; \
             store both classes in the same format to avoid format bias",
            show(real),
            show(fake)
        ))
    }
}

/// Reads and validates a manifest; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, root)?;
    let missing = manifest.missing_files();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Manifest(format!(
            "{}: {} missing file(s): {}",
            path.display(),
            missing.len(),
            list.join(", ")
        )));
    }
    Ok(manifest)
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, root: PathBuf) -> Result<Manifest> {
    if text.trim().is_empty() {
        return Err(Error::Manifest("empty manifest".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("line 1: {e}")))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(path_col), Some(label_col), Some(gen_col)) = (column("path"), column("label"), column("generator"))
    else {
        return Err(Error::Manifest(format!(
            "line 1: header must contain path,label,generator (got `{}`)",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    };
    let id_col = column("id");

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Manifest(format!("line {line}: {e}"))
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let path = field(path_col);
        if path.is_empty() {
            return Err(Error::Manifest(format!("line {line}: empty path")));
        }
        let label: Label = field(label_col)
            .parse()
            .map_err(|e| Error::Manifest(format!("line {line}: {e}")))?;
        let mut generator = field(gen_col).to_string();
        if generator.is_empty() && label == Label::Real {
            generator = REAL_GENERATOR.to_string();
        }
        let id = id_col.map(field).filter(|s| !s.is_empty()).unwrap_or(path).to_string();
        let record =
            SampleRecord::new(id, path, label, generator).map_err(|e| Error::Manifest(format!("line {line}: {e}")))?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Manifest(format!("line {line}: duplicate id `{}`", record.id)));
        }
        entries.push(record);
    }
    if entries.is_empty() {
        return Err(Error::Manifest("empty manifest".into()));
    }
    Ok(Manifest { entries, root })
}

/// Writes `id,path,label,generator` rows.
pub fn write_manifest(path: &Path, entries: &[SampleRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Manifest(format!("{}: {e}", path.display()));
    writer
        .write_record(["id", "path", "label", "generator"])
        .map_err(to_err)?;
    for r in entries {
        writer
            .write_record([r.id.as_str(), r.path.as_str(), r.label.as_str(), r.generator.as_str()])
            .map_err(to_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
