//! CSV ingestion and emission: one `<Relation>.csv` per relation, header row
//! matching the schema's attribute names.

use std::path::Path;

use crate::query::Schema;

use super::{DatabaseInstance, EngineError};

pub fn load_csv(dir: &Path, schema: &Schema) -> Result<DatabaseInstance, EngineError> {
    let mut db = DatabaseInstance::new(schema);
    for decl in schema.relations() {
        let path = dir.join(format!("{}.csv", decl.name));
        if !path.exists() {
            return Err(EngineError::MissingFile {
                relation: decl.name.clone(),
                path: path.display().to_string(),
            });
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(&path)?;
        let headers = reader.headers()?.clone();
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            continue; // zero-byte file: empty relation
        }
        let got: Vec<String> = headers.iter().map(str::to_string).collect();
        if got != decl.attributes {
            return Err(EngineError::HeaderMismatch {
                relation: decl.name.clone(),
                expected: decl.attributes.clone(),
                got,
            });
        }
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != decl.arity() {
                return Err(EngineError::RaggedRow {
                    relation: decl.name.clone(),
                    row: i + 2, // 1-based, after the header
                    expected: decl.arity(),
                    got: record.len(),
                });
            }
            let values: Vec<&str> = record.iter().collect();
            db.insert(&decl.name, &values);
        }
    }
    db.canonicalize();
    Ok(db)
}

pub fn write_csv(db: &DatabaseInstance, dir: &Path) -> Result<(), EngineError> {
    std::fs::create_dir_all(dir)?;
    for rel in db.relations.values() {
        let path = dir.join(format!("{}.csv", rel.name));
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(&rel.columns)?;
        for row in &rel.rows {
            writer.write_record(db.externalize(row))?;
        }
        writer.flush()?;
    }
    Ok(())
}
