use std::io::Write;

use crate::error::{Error, Result};

/// `v` with `digits` significant digits, `%g` style: fixed notation for
/// moderate exponents, scientific otherwise, trailing zeros trimmed.
pub fn format_sig(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{exp}", trim_zeros(mantissa))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A header row and string cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// Writes `# comment` (if any), the header and the rows with LF endings.
pub fn write_csv(out: &mut impl Write, comment: Option<&str>, table: &CsvTable) -> Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&table.header).map_err(csv_err)?;
    for row in &table.rows {
        if row.len() != table.header.len() {
            return Err(Error::invalid(format!("row has {} cells, header {}", row.len(), table.header.len())));
        }
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
