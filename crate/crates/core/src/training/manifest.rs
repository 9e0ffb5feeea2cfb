use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One stereo pair with ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub left: PathBuf,
    pub right: PathBuf,
    pub ground_truth: PathBuf,
}

/// Parses whitespace-separated `left right gt` triples, one per line.
/// Blank lines and `#` comments are ignored; relative paths resolve
/// against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [l, r, g] = fields[..] else {
            return Err(Error::Parse(format!(
                "manifest line {}: expected 3 paths, found {}",
                n + 1,
                fields.len()
            )));
        };
        entries.push(ManifestEntry {
            left: base.join(l),
            right: base.join(r),
            ground_truth: base.join(g),
        });
    }
    Ok(entries)
}

/// Reads a manifest and checks that every referenced file exists.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    if entries.is_empty() {
        return Err(Error::format(path, "manifest lists no image pairs"));
    }
    for e in &entries {
        for p in [&e.left, &e.right, &e.ground_truth] {
            if !p.is_file() {
                return Err(Error::format(path, format!("missing file {}", p.display())));
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_triples_and_comments() {
        let text = "# header\na.png b.png c.png\n\n  x/l.png x/r.png x/g.png  # tail\n";
        let m = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].right, PathBuf::from("/data/x/r.png"));
        assert!(parse_manifest("a.png b.png\n", Path::new(".")).is_err());
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        fs::write(&p, "# nothing\n").unwrap();
        assert!(read_manifest(&p).is_err());
        fs::write(&p, "l.png r.png g.png\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Format { .. })));
    }
}
