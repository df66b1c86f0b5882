//! CSV writers. UTF-8, `\n` line endings, header row always present, floats
//! in shortest round-trip form.

use std::fs;
use std::path::Path;

use super::RunError;

pub fn float(x: f64) -> String {
    format!("{x:?}")
}

pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, RunError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner()
            .map_err(|e| RunError::Io(e.into_error().to_string()))
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<(), RunError> {
        fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(name);
        fs::write(&path, self.to_bytes()?)
            .map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
}
