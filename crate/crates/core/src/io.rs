//! Small file helpers shared by the on-disk formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Reads the `#`-prefixed schema line that heads every CSV this crate writes.
pub fn read_schema_line(text: &str) -> Option<&str> {
    text.lines().next().and_then(|l| l.strip_prefix("# schema="))
}

/// `# schema=<name>/<version>` plus newline.
pub fn schema_line(name: &str, version: u32) -> String {
    format!("# schema={name}/{version}\n")
}

/// Checks the schema line of `text` against `name/version` and returns the
/// remaining CSV body.
pub fn strip_schema<'a>(text: &'a str, name: &str, version: u32) -> Result<&'a str> {
    let expected = format!("{name}/{version}");
    match read_schema_line(text) {
        Some(found) if found.trim() == expected => {
            Ok(text.split_once('\n').map(|(_, rest)| rest).unwrap_or(""))
        }
        found => Err(Error::Schema {
            expected,
            found: found.unwrap_or("<missing>").trim().to_string(),
        }),
    }
}

/// Nine significant digits in scientific notation; exact zero prints as `0`.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{v:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_round_trip() {
        let text = format!("{}a,b\n1,2\n", schema_line("demo", 3));
        assert_eq!(strip_schema(&text, "demo", 3).unwrap(), "a,b\n1,2\n");
        assert!(matches!(strip_schema(&text, "demo", 4), Err(Error::Schema { .. })));
        assert!(matches!(strip_schema("a,b\n", "demo", 3), Err(Error::Schema { .. })));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
