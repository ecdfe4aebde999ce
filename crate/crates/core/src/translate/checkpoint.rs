use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::validate::ValidationStatus;
use crate::protect::hex;

pub fn sha256_hex(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

/// One finished unit. `output` is kept so a resumed run can reassemble
/// without asking the backend again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub sample_id: String,
    pub unit_id: String,
    pub status: ValidationStatus,
    pub output_hash: Option<String>,
    /// Hash of the masked template the unit was built from.
    pub input_hash: String,
    pub output: Option<String>,
}

impl CheckpointRecord {
    /// The stored output, provided the record is a success for this exact
    /// input and the output still matches its hash.
    pub fn reusable_output(&self, input_hash: &str) -> Option<&str> {
        let output = self.output.as_deref()?;
        (self.status == ValidationStatus::Valid
            && self.input_hash == input_hash
            && self.output_hash.as_deref() == Some(sha256_hex(output).as_str()))
        .then_some(output)
    }
}

/// Loads the latest record per `(sample_id, unit_id)`. A missing file is an
/// empty checkpoint; unparsable lines (e.g. a torn final write) are skipped.
pub fn load_checkpoint(path: &Path) -> io::Result<HashMap<(String, String), CheckpointRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(e),
    };
    let mut map = HashMap::new();
    for line in text.lines() {
        if let Ok(rec) = serde_json::from_str::<CheckpointRecord>(line) {
            map.insert((rec.sample_id.clone(), rec.unit_id.clone()), rec);
        }
    }
    Ok(map)
}

/// Appends records, flushing to disk every `every` records.
pub struct CheckpointWriter {
    out: BufWriter<File>,
    every: usize,
    unflushed: usize,
}

impl CheckpointWriter {
    pub fn open(path: &Path, every: usize) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
            every: every.max(1),
            unflushed: 0,
        })
    }

    pub fn append(&mut self, rec: &CheckpointRecord) -> io::Result<()> {
        let line = serde_json::to_string(rec).map_err(io::Error::other)?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.unflushed += 1;
        if self.unflushed >= self.every {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        self.unflushed = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(unit: &str, output: &str) -> CheckpointRecord {
        CheckpointRecord {
            sample_id: "s1".into(),
            unit_id: unit.into(),
            status: ValidationStatus::Valid,
            output_hash: Some(sha256_hex(output)),
            input_hash: sha256_hex("in"),
            output: Some(output.into()),
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.jsonl");
        let mut w = CheckpointWriter::open(&path, 100).unwrap();
        w.append(&rec("t0", "سلام")).unwrap();
        w.append(&rec("t1", "بسلامة")).unwrap();
        w.flush().unwrap();
        fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .unwrap()
            .write_all(b"{\"sample_id\":\"s1\",\"uni")
            .unwrap();
        let map = load_checkpoint(&path).unwrap();
        assert_eq!(map.len(), 2);
        let r = &map[&("s1".to_string(), "t0".to_string())];
        assert_eq!(r.reusable_output(&sha256_hex("in")), Some("سلام"));
        assert_eq!(r.reusable_output(&sha256_hex("other input")), None);
    }

    #[test]
    fn tampered_output_not_reused() {
        let mut r = rec("t0", "a");
        r.output = Some("b".into());
        assert_eq!(r.reusable_output(&sha256_hex("in")), None);
    }

    #[test]
    fn missing_file_is_empty() {
        assert!(load_checkpoint(Path::new("/nonexistent/ck.jsonl")).unwrap().is_empty());
    }
}
