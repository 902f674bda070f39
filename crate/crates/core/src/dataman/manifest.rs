use std::path::Path;

use super::record::SampleRecord;
use super::DataError;

pub const MANIFEST_HEADER: [&str; 7] = [
    "subject_id",
    "birth_year",
    "capture_year",
    "sensor",
    "eye_side",
    "modality",
    "image_path",
];

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(MANIFEST_HEADER).map_err(io)?;
    for r in records {
        w.write_record([
            r.subject_id.as_str(),
            &r.birth_year.to_string(),
            &r.capture_year.to_string(),
            r.sensor.code(),
            r.eye_side.code(),
            r.modality.code(),
            r.image_path.as_str(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Schema(e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DataError::Schema("empty manifest".into()));
    }
    let mut cols = [0usize; 7];
    for (k, name) in MANIFEST_HEADER.iter().enumerate() {
        cols[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| DataError::Schema(format!("missing column {name}")))?;
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let parse_err = |message: String| DataError::ManifestParse { line, message };
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        let field = |k: usize| row.get(cols[k]).unwrap_or("");
        let year = |k: usize| {
            field(k)
                .parse::<i32>()
                .map_err(|_| parse_err(format!("{} {:?} is not a year", MANIFEST_HEADER[k], field(k))))
        };
        let record = SampleRecord::new(
            field(0),
            year(1)?,
            year(2)?,
            field(3).parse().map_err(parse_err)?,
            field(4).parse().map_err(parse_err)?,
            field(5).parse().map_err(parse_err)?,
            field(6),
        )
        .map_err(|e| parse_err(e.to_string()))?;
        if record.subject_id.is_empty() || record.image_path.is_empty() {
            return Err(parse_err("empty subject_id or image_path".into()));
        }
        out.push(record);
    }
    Ok(out)
}

/// Checks that every record's image exists under `root`.
pub fn validate_manifest(records: &[SampleRecord], root: &Path) -> Result<(), DataError> {
    match records.iter().find(|r| !root.join(&r.image_path).is_file()) {
        Some(r) => Err(DataError::MissingImage(r.image_path.clone())),
        None => Ok(()),
    }
}
