//! Plain-text grid dumps: a `# nx ny h t` header, then one line of
//! space-separated values per grid row (increasing `y`).

use std::io::{BufRead, Write};

use super::field::Field;
use super::grid::Grid;
use crate::error::{Error, Result};

pub fn write_field<W: Write>(out: &mut W, grid: &Grid, field: &Field, t: f64) -> Result<()> {
    field.check_on(grid, "dumped field")?;
    writeln!(out, "# {} {} {} {}", grid.nx(), grid.ny(), grid.hx(), t)?;
    for row in field.as_slice().chunks(grid.nx()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Header of a dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DumpHeader {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub t: f64,
}

pub fn read_field<R: BufRead>(input: R) -> Result<(DumpHeader, Field)> {
    let mut lines = input.lines();
    let bad = |line: usize, message: &str| Error::Parse { line, message: message.to_string() };
    let header = lines.next().ok_or_else(|| bad(1, "empty dump"))??;
    let parts: Vec<&str> = header
        .strip_prefix('#')
        .ok_or_else(|| bad(1, "missing '#' header"))?
        .split_whitespace()
        .collect();
    if parts.len() != 4 {
        return Err(bad(1, "header must read '# nx ny h t'"));
    }
    let header = DumpHeader {
        nx: parts[0].parse().map_err(|_| bad(1, "bad nx"))?,
        ny: parts[1].parse().map_err(|_| bad(1, "bad ny"))?,
        h: parts[2].parse().map_err(|_| bad(1, "bad h"))?,
        t: parts[3].parse().map_err(|_| bad(1, "bad t"))?,
    };
    let mut values = Vec::with_capacity(header.nx * header.ny);
    for (k, line) in lines.enumerate() {
        let line = line?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(k + 2, "unparsable value"))?;
        if row.len() != header.nx {
            return Err(bad(k + 2, "row length differs from nx"));
        }
        values.extend(row);
    }
    if values.len() != header.nx * header.ny {
        return Err(bad(header.ny + 1, "row count differs from ny"));
    }
    Ok((header, Field::from_vec(values)))
}
