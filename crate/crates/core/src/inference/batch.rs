//! Bounded-parallel classification of a corpus with a resumable checkpoint.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use thiserror::Error;

use super::client::{classify_record, ChatBackend, InferenceOutcome, ModelConfig};
use crate::ingest::UnifiedRecord;
use crate::prompting::PromptTemplate;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("checkpoint {path}:{line}: corrupt entry")]
    Corrupt { path: PathBuf, line: usize },
}

/// Append-only log of finished outcomes keyed by report id.
///
/// A torn final line (from an interrupted write) is cut off on open; any
/// other unparsable line is an error.
pub struct Checkpoint {
    path: PathBuf,
    file: File,
    done: HashMap<String, InferenceOutcome>,
}

impl Checkpoint {
    pub fn open(path: &Path) -> Result<Self, BatchError> {
        let io_err = |source| BatchError::Checkpoint {
            path: path.to_path_buf(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io_err)?;
        let mut done = HashMap::new();
        let mut good_len = 0u64;
        let mut lines = Vec::new();
        {
            let mut reader = BufReader::new(&file);
            let mut buf = String::new();
            loop {
                buf.clear();
                let n = reader.read_line(&mut buf).map_err(io_err)?;
                if n == 0 {
                    break;
                }
                lines.push((buf.ends_with('\n'), buf.trim_end().to_string(), n as u64));
            }
        }
        let last = lines.len();
        for (idx, (terminated, line, n)) in lines.into_iter().enumerate() {
            if line.is_empty() {
                good_len += n;
                continue;
            }
            match serde_json::from_str::<InferenceOutcome>(&line) {
                Ok(outcome) if terminated => {
                    done.insert(outcome.report_id.clone(), outcome);
                    good_len += n;
                }
                _ if idx + 1 == last => {
                    log::warn!("{}: dropping torn trailing entry", path.display());
                }
                _ => {
                    return Err(BatchError::Corrupt {
                        path: path.to_path_buf(),
                        line: idx + 1,
                    })
                }
            }
        }
        if file.metadata().map_err(io_err)?.len() != good_len {
            file.set_len(good_len).map_err(io_err)?;
            file.seek(SeekFrom::End(0)).map_err(io_err)?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            done,
        })
    }

    pub fn get(&self, report_id: &str) -> Option<&InferenceOutcome> {
        self.done.get(report_id)
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, outcome: &InferenceOutcome) -> Result<(), BatchError> {
        let mut line = serde_json::to_string(outcome).expect("serializable outcome");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| BatchError::Checkpoint {
                path: self.path.clone(),
                source,
            })?;
        self.done.insert(outcome.report_id.clone(), outcome.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub parallelism: usize,
    /// Re-query records whose checkpointed outcome is a failure.
    pub retry_failed: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            retry_failed: false,
        }
    }
}

/// Classify `records` with a pool of `options.parallelism` workers.
///
/// Outcomes come back in input order. Records already in the checkpoint are
/// not sent again; each new outcome is appended to the checkpoint as soon
/// as it arrives.
pub fn run_batch<B: ChatBackend + ?Sized>(
    backend: &B,
    records: &[UnifiedRecord],
    config: &ModelConfig,
    template: &PromptTemplate,
    options: BatchOptions,
    mut checkpoint: Option<&mut Checkpoint>,
) -> Result<Vec<InferenceOutcome>, BatchError> {
    if options.parallelism == 0 {
        return Err(BatchError::ZeroParallelism);
    }
    let mut slots: Vec<Option<InferenceOutcome>> = vec![None; records.len()];
    let mut pending = Vec::new();
    for (idx, rec) in records.iter().enumerate() {
        let cached = checkpoint
            .as_deref()
            .and_then(|c| c.get(&rec.report_id))
            .filter(|o| !(options.retry_failed && o.failure().is_some()));
        match cached {
            Some(o) => slots[idx] = Some(o.clone()),
            None => pending.push(idx),
        }
    }
    if pending.is_empty() {
        return Ok(slots.into_iter().map(|o| o.expect("filled")).collect());
    }

    let next = AtomicUsize::new(0);
    let workers = options.parallelism.min(pending.len());
    let mut write_error = None;
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, InferenceOutcome)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending) = (&next, &pending);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&idx) = pending.get(k) else { break };
                let outcome = classify_record(backend, &records[idx], config, template);
                if tx.send((idx, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (idx, outcome) in rx {
            if let Some(cp) = checkpoint.as_deref_mut() {
                if write_error.is_none() {
                    if let Err(e) = cp.append(&outcome) {
                        // stop handing out work; in-flight records finish
                        next.store(pending.len(), Ordering::Relaxed);
                        write_error = Some(e);
                    }
                }
            }
            slots[idx] = Some(outcome);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    Ok(slots.into_iter().map(|o| o.expect("every pending record was classified")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::client::{ChatMessage, TransportError};
    use crate::ingest::Category;
    use std::sync::Mutex;

    struct Echo {
        sent: Mutex<Vec<String>>,
    }

    const OUT: &str = r#"{"AV_Failed": "N", "Cause": "H", "System": "N", "Late": false}"#;

    impl ChatBackend for Echo {
        fn chat(&self, m: &[ChatMessage], _: &ModelConfig) -> Result<String, TransportError> {
            let id = m[1].content.lines().nth(1).unwrap_or_default().to_string();
            self.sent.lock().unwrap().push(id);
            Ok(OUT.into())
        }
    }

    fn records(n: usize) -> Vec<UnifiedRecord> {
        (0..n)
            .map(|i| UnifiedRecord {
                report_id: format!("R{i}"),
                entity_make: "E".into(),
                full_text: format!("ID R{i}\nNarrative:\nsomething"),
                category: Category::Ads,
            })
            .collect()
    }

    #[test]
    fn zero_records() {
        let b = Echo { sent: Mutex::new(vec![]) };
        let out = run_batch(
            &b,
            &[],
            &ModelConfig::default(),
            &PromptTemplate::default(),
            BatchOptions::default(),
            None,
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn zero_parallelism_rejected() {
        let b = Echo { sent: Mutex::new(vec![]) };
        let opts = BatchOptions {
            parallelism: 0,
            retry_failed: false,
        };
        let r = run_batch(&b, &records(1), &ModelConfig::default(), &PromptTemplate::default(), opts, None);
        assert!(matches!(r, Err(BatchError::ZeroParallelism)));
    }

    #[test]
    fn torn_trailing_line_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.jsonl");
        let b = Echo { sent: Mutex::new(vec![]) };
        let recs = records(2);
        {
            let mut cp = Checkpoint::open(&path).unwrap();
            run_batch(&b, &recs, &ModelConfig::default(), &PromptTemplate::default(), BatchOptions::default(), Some(&mut cp)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"report_id\":\"R9\",\"succ").unwrap();
        drop(f);
        let cp = Checkpoint::open(&path).unwrap();
        assert_eq!(cp.len(), 2);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.jsonl");
        std::fs::write(&path, "not json\n{}\n").unwrap();
        assert!(matches!(Checkpoint::open(&path), Err(BatchError::Corrupt { line: 1, .. })));
    }
}
