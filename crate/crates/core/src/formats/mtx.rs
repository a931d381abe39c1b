use super::{CooMatrix, FormatError};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: usize, text: &str) -> Result<(Field, Symmetry), FormatError> {
    let words: Vec<String> = text.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" {
        return Err(parse_err(line, "expected a %%MatrixMarket header"));
    }
    if words[1] != "matrix" || words[2] != "coordinate" {
        return Err(parse_err(line, "only 'matrix coordinate' files are supported"));
    }
    let field = match words[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(parse_err(line, format!("unsupported field '{other}'"))),
    };
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => return Err(parse_err(line, format!("unsupported symmetry '{other}'"))),
    };
    Ok((field, symmetry))
}

fn parse_index(line: usize, word: Option<&str>, bound: usize, what: &str) -> Result<usize, FormatError> {
    let word = word.ok_or_else(|| parse_err(line, format!("missing {what} index")))?;
    let i: usize = word
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} index '{word}'")))?;
    if i == 0 || i > bound {
        return Err(parse_err(
            line,
            format!("{what} index {i} outside declared bound {bound}"),
        ));
    }
    Ok(i - 1)
}

/// Reads a MatrixMarket coordinate file.
///
/// Symmetric and skew-symmetric storage is expanded to both triangles;
/// pattern files get value 1.0. Errors carry the 1-based line number.
pub fn parse_matrix_market(text: &str) -> Result<CooMatrix, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty input"))?;
    let (field, symmetry) = parse_header(hline, header)?;

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });

    let (sline, size) = body
        .next()
        .ok_or_else(|| parse_err(hline, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|w| w.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| parse_err(sline, "size line must be three integers"))?;
    if dims.len() != 3 {
        return Err(parse_err(sline, "size line must be three integers"));
    }
    let (rows, cols, declared) = (dims[0], dims[1], dims[2]);

    let mut entries = Vec::with_capacity(if symmetry == Symmetry::General {
        declared
    } else {
        2 * declared
    });
    let mut seen = 0;
    for (line, l) in body {
        if seen == declared {
            return Err(parse_err(line, "more entries than declared"));
        }
        let mut words = l.split_whitespace();
        let row = parse_index(line, words.next(), rows, "row")?;
        let col = parse_index(line, words.next(), cols, "column")?;
        let value = match field {
            Field::Pattern => 1.0,
            Field::Real | Field::Integer => {
                let w = words
                    .next()
                    .ok_or_else(|| parse_err(line, "missing value"))?;
                w.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("non-numeric value '{w}'")))?
            }
        };
        if words.next().is_some() {
            return Err(parse_err(line, "trailing tokens after entry"));
        }
        entries.push((row, col, value));
        if row != col {
            match symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => entries.push((col, row, value)),
                Symmetry::SkewSymmetric => entries.push((col, row, -value)),
            }
        }
        seen += 1;
    }
    if seen != declared {
        return Err(parse_err(
            text.lines().count(),
            format!("declared {declared} entries, found {seen}"),
        ));
    }
    CooMatrix::new(rows, cols, entries)
}

/// Writes the canonical `real general` form: one entry per line in the
/// order stored, 1-based indices, shortest round-trip float formatting.
pub fn write_matrix_market(m: &CooMatrix) -> String {
    let mut out = String::new();
    out.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", m.rows, m.cols, m.entries.len());
    for &(r, c, v) in &m.entries {
        let _ = writeln!(out, "{} {} {:?}", r + 1, c + 1, v);
    }
    out
}
