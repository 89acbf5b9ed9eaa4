use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub action_code: u32,
    pub action_name: String,
    pub category: String,
}

/// Code → name/category sidecar. Codes are dense and 0-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabularyEntry>,
    categories: Vec<String>,
}

impl Vocabulary {
    pub fn new(mut entries: Vec<VocabularyEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.action_code);
        for (i, e) in entries.iter().enumerate() {
            if e.action_code as usize != i {
                return Err(Error::Validation(format!(
                    "vocabulary codes must be dense from 0; expected {i}, found {}",
                    e.action_code
                )));
            }
        }
        let mut categories: Vec<String> = entries.iter().map(|e| e.category.clone()).collect();
        categories.sort();
        categories.dedup();
        Ok(Self { entries, categories })
    }

    /// A vocabulary of `size` anonymous actions all in one category.
    pub fn anonymous(size: usize) -> Self {
        let entries = (0..size as u32)
            .map(|c| VocabularyEntry {
                action_code: c,
                action_name: format!("action_{c}"),
                category: "other".into(),
            })
            .collect();
        Self::new(entries).expect("dense by construction")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    /// Sorted distinct category names.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Index into [`Self::categories`] for every action code.
    pub fn category_index(&self) -> Vec<usize> {
        self.entries
            .iter()
            .map(|e| self.categories.binary_search(&e.category).expect("known category"))
            .collect()
    }

    /// SHA-256 over the canonical CSV form, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(format!("{},{},{}\n", e.action_code, e.action_name, e.category).as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for rec in rdr.deserialize() {
            entries.push(rec?);
        }
        Self::new(entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}
