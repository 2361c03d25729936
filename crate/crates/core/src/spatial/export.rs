use std::io::Write;

use super::{SimilarityMatrix, SpatialError};

/// Dense CSV with a header row and a leading column of node ids.
pub fn write_similarity_csv<W: Write>(
    out: W,
    sim: &SimilarityMatrix,
    row_ids: &[String],
    col_ids: &[String],
) -> Result<(), SpatialError> {
    if row_ids.len() != sim.values.rows() || col_ids.len() != sim.values.cols() {
        return Err(SpatialError::Invalid(
            "id lists do not match the matrix shape".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SpatialError::Invalid(e.to_string());
    let mut header = vec![String::from("node_id")];
    header.extend(col_ids.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(sim.values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| SpatialError::Invalid(e.to_string()))
}

pub fn similarity_csv_string(
    sim: &SimilarityMatrix,
    row_ids: &[String],
    col_ids: &[String],
) -> Result<String, SpatialError> {
    let mut buf = Vec::new();
    write_similarity_csv(&mut buf, sim, row_ids, col_ids)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
