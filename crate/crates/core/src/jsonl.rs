//! Line-oriented JSON helpers with 1-based line numbers in errors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parse every non-blank line of `reader`, handing `(line_no, value)` to
/// `visit`. Errors from `visit` are tagged with the line number.
pub fn visit_lines<T, R, F>(reader: R, mut visit: F) -> Result<()>
where
    T: DeserializeOwned,
    R: BufRead,
    F: FnMut(usize, T) -> Result<()>,
{
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        visit(line_no, value).map_err(|e| e.at_line(line_no))?;
    }
    Ok(())
}

pub fn read<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    visit_lines(BufReader::new(file), |_, v| {
        out.push(v);
        Ok(())
    })?;
    Ok(out)
}

pub fn write<'a, T, I>(path: impl AsRef<Path>, items: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
