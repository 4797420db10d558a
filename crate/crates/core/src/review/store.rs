//! Append-only review log.
//!
//! One review per line as `<sha256 of json> <json>`. Writes go through a
//! single mutex-guarded writer and are fsynced before the caller is told the
//! write succeeded; readers take a cheap `Arc` snapshot.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scoring::ReviewRecord;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("review store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("review store {path}: line {line} is corrupt ({reason})")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("review for case {case_id} by {reviewer_id} already submitted")]
    Duplicate {
        case_id: String,
        reviewer_id: String,
    },
}

fn checksum(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn encode_line(review: &ReviewRecord) -> String {
    let json = serde_json::to_string(review).expect("review serializes");
    format!("{} {}\n", checksum(&json), json)
}

fn decode_line(line: &str) -> Result<ReviewRecord, String> {
    let (sum, json) = line.split_once(' ').ok_or("missing checksum")?;
    if checksum(json) != sum {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

type Key = (String, String);

fn key(review: &ReviewRecord) -> Key {
    (review.case_id.clone(), review.reviewer_id.clone())
}

struct Writer {
    file: File,
    keys: HashSet<Key>,
}

pub struct ReviewStore {
    path: PathBuf,
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Vec<ReviewRecord>>>,
}

impl ReviewStore {
    /// Opens or creates the log. A torn or checksum-failing final line (an
    /// interrupted write that was never acknowledged) is cut off; damage
    /// anywhere else is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err)?;

        let mut reviews = Vec::new();
        let mut keys = HashSet::new();
        let mut offset = 0usize;
        let mut valid_len = 0usize;
        let mut line_no = 0usize;
        while offset < bytes.len() {
            line_no += 1;
            let end = bytes[offset..].iter().position(|&b| b == b'\n');
            let (line, next) = match end {
                Some(i) => (&bytes[offset..offset + i], offset + i + 1),
                None => (&bytes[offset..], bytes.len()),
            };
            let is_last = next >= bytes.len();
            let parsed = std::str::from_utf8(line)
                .map_err(|e| e.to_string())
                .and_then(decode_line);
            match parsed {
                Ok(review) if end.is_some() => {
                    if !keys.insert(key(&review)) {
                        return Err(StoreError::Corrupt {
                            path,
                            line: line_no,
                            reason: "duplicate review".into(),
                        });
                    }
                    reviews.push(review);
                    valid_len = next;
                }
                Ok(_) => {
                    log::warn!("{}: dropping unterminated final line", path.display());
                    break;
                }
                Err(reason) if is_last => {
                    log::warn!("{}: dropping torn final line ({reason})", path.display());
                    break;
                }
                Err(reason) => {
                    return Err(StoreError::Corrupt {
                        path,
                        line: line_no,
                        reason,
                    })
                }
            }
            offset = next;
        }
        if valid_len < bytes.len() {
            file.set_len(valid_len as u64).map_err(io_err)?;
            file.seek(SeekFrom::End(0)).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }

        Ok(Self {
            path,
            writer: Mutex::new(Writer { file, keys }),
            snapshot: RwLock::new(Arc::new(reviews)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably appends `review`. Returns only after the bytes are synced.
    pub fn append(&self, review: &ReviewRecord) -> Result<(), StoreError> {
        let mut writer = self.writer.lock().expect("store writer poisoned");
        let k = key(review);
        if writer.keys.contains(&k) {
            return Err(StoreError::Duplicate {
                case_id: k.0,
                reviewer_id: k.1,
            });
        }
        let line = encode_line(review);
        let io_err = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        writer.file.write_all(line.as_bytes()).map_err(io_err)?;
        writer.file.sync_data().map_err(io_err)?;
        writer.keys.insert(k);

        let mut snapshot = self.snapshot.write().expect("store snapshot poisoned");
        let mut next = Vec::with_capacity(snapshot.len() + 1);
        next.extend(snapshot.iter().cloned());
        next.push(review.clone());
        *snapshot = Arc::new(next);
        Ok(())
    }

    /// All persisted reviews in submission order.
    pub fn snapshot(&self) -> Arc<Vec<ReviewRecord>> {
        self.snapshot.read().expect("store snapshot poisoned").clone()
    }

    pub fn contains(&self, case_id: &str, reviewer_id: &str) -> bool {
        self.snapshot()
            .iter()
            .any(|r| r.case_id == case_id && r.reviewer_id == reviewer_id)
    }
}
