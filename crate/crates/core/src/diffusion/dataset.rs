//! Text-to-sequence datasets: a directory of fseq files listed by an index
//! JSON mapping each file to its condition string.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Channel, FlameSequence};
use crate::error::{Error, Result};

pub const DATASET_VERSION: &str = "dataset-v1";

#[derive(Clone, Debug)]
pub struct DatasetItem {
    pub text: String,
    pub seq: FlameSequence,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: String,
    items: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    text: String,
    file: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The single channel all sequences share.
    pub fn channel(&self) -> Result<Channel> {
        let first = self
            .items
            .first()
            .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?
            .seq
            .channel();
        for (i, item) in self.items.iter().enumerate() {
            if item.seq.channel() != first {
                return Err(Error::InvalidArgument(format!(
                    "dataset mixes channels: item {i} is {:?}",
                    item.seq.channel()
                )));
            }
        }
        Ok(first)
    }

    /// Sorted unique condition labels (split on '+').
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .items
            .iter()
            .flat_map(|item| item.text.split('+'))
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.items.len());
        for (i, item) in self.items.iter().enumerate() {
            let file = format!("seq_{i:05}.fseq.json");
            item.seq.save(dir.join(&file))?;
            entries.push(IndexEntry {
                text: item.text.clone(),
                file,
            });
        }
        let index = IndexFile {
            version: DATASET_VERSION.to_string(),
            items: entries,
        };
        let path = dir.join("index.json");
        let bytes = serde_json::to_vec_pretty(&index).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let path = dir.join("index.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let index: IndexFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
        if index.version != DATASET_VERSION {
            return Err(Error::Format {
                path,
                reason: format!("unsupported version {:?}", index.version),
            });
        }
        let mut items = Vec::with_capacity(index.items.len());
        for entry in index.items {
            items.push(DatasetItem {
                text: entry.text,
                seq: FlameSequence::load(dir.join(&entry.file))?,
            });
        }
        Ok(Dataset { items })
    }
}
