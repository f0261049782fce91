use std::path::Path;

use crate::error::Result;
use crate::matrix::Matrix;

/// Writes a headered CSV with one row per frame: `frame,<prefix>0,<prefix>1,...`.
pub fn write_matrix_csv(path: impl AsRef<Path>, column_prefix: &str, m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = Vec::with_capacity(m.cols() + 1);
    header.push("frame".to_string());
    header.extend((0..m.cols()).map(|c| format!("{column_prefix}{c}")));
    w.write_record(&header)?;
    for (t, row) in m.iter_rows().enumerate() {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(t.to_string());
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
