//! Tab-separated `split<TAB>id<TAB>path` listing. `#` starts a comment line;
//! relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{Result, SdfieldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Serialises with paths written as given.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# split\tid\tarchive\n");
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.split, e.id, e.path.display()));
        }
        s
    }
}

pub fn parse_manifest(text: &str, base: &Path, name: &str) -> Result<Manifest> {
    let err = |line: usize, msg: String| SdfieldError::Manifest { path: name.to_string(), line, msg };
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [split, id, path] = fields.as_slice() else {
            return Err(err(i + 1, format!("expected 3 tab-separated fields, found {}", fields.len())));
        };
        let split = split.trim().parse().map_err(|m| err(i + 1, m))?;
        let (id, path) = (id.trim(), path.trim());
        if id.is_empty() || path.is_empty() {
            return Err(err(i + 1, "empty shape id or path".into()));
        }
        if !seen.insert(id.to_string()) {
            return Err(SdfieldError::DuplicateId { path: name.to_string(), id: id.to_string() });
        }
        let p = Path::new(path);
        let path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        entries.push(ManifestEntry { split, id: id.to_string(), path });
    }
    Ok(Manifest { entries })
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| SdfieldError::Io { path: name.clone(), source })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")), &name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_lines_in_order() {
        let m = parse_manifest("train\ta\ta.salf\ntest\tb\t/abs/b.salf\ntrain\tc\tsub/c.salf\n", Path::new("/d"), "m")
            .unwrap();
        let ids: Vec<_> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(m.entries[0].path, PathBuf::from("/d/a.salf"));
        assert_eq!(m.entries[1].path, PathBuf::from("/abs/b.salf"));
        assert_eq!(m.split(Split::Train).count(), 2);
    }

    #[test]
    fn duplicate_id_is_named() {
        let e = parse_manifest("train\tdup\ta\ntest\tdup\tb\n", Path::new("."), "m").unwrap_err();
        assert!(e.to_string().contains("\"dup\""), "{e}");
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let m = parse_manifest("# header\n\n   \ntrain\ta\tx\n  # indented\n", Path::new("."), "m").unwrap();
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        for text in ["# c\ntrain a x\n", "# c\nvalidate\ta\tx\n", "# c\ntrain\t\tx\n"] {
            match parse_manifest(text, Path::new("."), "m") {
                Err(SdfieldError::Manifest { line, .. }) => assert_eq!(line, 2),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let m = parse_manifest("train\ta\t/x/a.salf\ntest\tb\t/x/b.salf\n", Path::new("/"), "m").unwrap();
        assert_eq!(parse_manifest(&m.to_text(), Path::new("/"), "m").unwrap(), m);
    }
}
