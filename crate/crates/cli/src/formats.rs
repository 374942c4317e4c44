//! File formats and atomic output.
//!
//! Point clouds are plain text, one point per line, coordinates separated by
//! commas. Blank lines and lines starting with `#` are ignored. Reals are
//! written in shortest round-trip form, so a written cloud reads back
//! bit-for-bit.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use graphskel::PointCloud;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Bumped whenever a JSON artifact changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;

pub fn parse_cloud(text: &str, path: &Path, header: bool) -> CliResult<PointCloud> {
    let mut coords = Vec::new();
    let mut dim = None;
    let mut skip_header = header;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if skip_header {
            skip_header = false;
            continue;
        }
        let parse_err = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message,
        };
        let mut n = 0;
        for field in line.split(',') {
            let field = field.trim();
            let value: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("cannot parse {field:?} as a number")))?;
            if !value.is_finite() {
                return Err(parse_err(format!("coordinate {field:?} is not finite")));
            }
            coords.push(value);
            n += 1;
        }
        match dim {
            None => dim = Some(n),
            Some(d) if d != n => return Err(parse_err(format!("expected {d} coordinates, found {n}"))),
            _ => {}
        }
    }
    let dim = dim.ok_or_else(|| CliError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "no points in input".to_string(),
    })?;
    Ok(PointCloud::new(dim, coords)?)
}

pub fn read_cloud(path: &Path, header: bool) -> CliResult<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_cloud(&text, path, header)
}

/// Text form of a cloud, preceded by `comment` lines prefixed with `# `.
pub fn format_cloud(cloud: &PointCloud, comment: &str) -> String {
    let mut out = String::new();
    for line in comment.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for p in cloud.points() {
        let fields: Vec<String> = p.iter().map(|x| x.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// Write to a temporary file in the target directory, then rename over the
/// destination, so readers never see a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// `out.json` -> `out.<suffix>`; keeps the directory.
pub fn sibling(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}
