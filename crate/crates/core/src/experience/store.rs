//! On-disk layout of the experience repository.
//!
//! Two row-aligned append-only files live in the store directory:
//!
//! - `experience_log.jsonl`: one `{id, state_text, action_text, reward}`
//!   object per line;
//! - `embeddings.bin`: a 16-byte header (8-byte magic, u32 dimension,
//!   u32 count, little-endian) followed by packed little-endian f32 rows.
//!
//! The header count is patched only after a batch's rows are on disk, so a
//! torn tail from a crash is ignored on load: the readable prefix is
//! `min(log lines, header count, rows present)`.

use super::ExperienceTuple;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const LOG_FILE: &str = "experience_log.jsonl";
pub const SIDECAR_FILE: &str = "embeddings.bin";
const MAGIC: [u8; 8] = *b"EXPEMB01";
const HEADER_LEN: u64 = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("store is corrupt: {0}")]
    Corrupt(String),
    #[error("experience reward {0} is outside [-1, 1]")]
    InvalidReward(f64),
    #[error(transparent)]
    Embed(#[from] super::embed::EmbedError),
    #[error("store dimension {found} does not match embedder dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Log-line schema; embeddings live in the sidecar only.
#[derive(Debug, Serialize, Deserialize)]
struct LogRecord {
    id: u64,
    state_text: String,
    action_text: String,
    reward: f64,
}

pub(super) struct Storage {
    dir: PathBuf,
    log: File,
    sidecar: File,
    dim: usize,
    count: u32,
}

fn read_header(file: &mut File) -> Result<Option<(usize, u32)>, StoreError> {
    let end = file.seek(SeekFrom::End(0))?;
    if end == 0 {
        return Ok(None);
    }
    if end < HEADER_LEN {
        return Err(StoreError::Corrupt(
            "sidecar shorter than its header".into(),
        ));
    }
    file.seek(SeekFrom::Start(0))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    if header[..8] != MAGIC {
        return Err(StoreError::Corrupt("bad sidecar magic".into()));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(header[12..16].try_into().unwrap());
    Ok(Some((dim, count)))
}

fn write_header(file: &mut File, dim: usize, count: u32) -> Result<(), StoreError> {
    file.seek(SeekFrom::Start(0))?;
    file.write_all(&MAGIC)?;
    file.write_all(&(dim as u32).to_le_bytes())?;
    file.write_all(&count.to_le_bytes())?;
    file.flush()?;
    Ok(())
}

impl Storage {
    /// Open (or initialize) the store directory and return the storage
    /// handle plus the reconciled tuples already on disk.
    pub(super) fn open(dir: &Path, dim: usize) -> Result<(Self, Vec<ExperienceTuple>), StoreError> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join(LOG_FILE);
        let sidecar_path = dir.join(SIDECAR_FILE);

        let mut sidecar = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&sidecar_path)?;
        let header = read_header(&mut sidecar)?;
        let header_count = match header {
            None => {
                write_header(&mut sidecar, dim, 0)?;
                0
            }
            Some((stored_dim, count)) => {
                if stored_dim != dim {
                    return Err(StoreError::DimensionMismatch {
                        expected: dim,
                        found: stored_dim,
                    });
                }
                count
            }
        };

        let log = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&log_path)?;

        // Reconcile the readable prefix across both files.
        let mut records = Vec::new();
        for line in BufReader::new(File::open(&log_path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogRecord>(&line) {
                Ok(rec) => records.push(rec),
                // A torn final line from a crash ends the readable prefix.
                Err(_) => break,
            }
        }
        let sidecar_len = sidecar.seek(SeekFrom::End(0))?;
        let rows_present = ((sidecar_len.saturating_sub(HEADER_LEN)) / (4 * dim as u64)) as u32;
        let usable = records
            .len()
            .min(header_count as usize)
            .min(rows_present as usize);

        let mut tuples = Vec::with_capacity(usable);
        sidecar.seek(SeekFrom::Start(HEADER_LEN))?;
        let mut row = vec![0u8; 4 * dim];
        let mut last_id: Option<u64> = None;
        for rec in records.into_iter().take(usable) {
            sidecar.read_exact(&mut row)?;
            let embedding: Vec<f32> = row
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            if let Some(prev) = last_id {
                if rec.id <= prev {
                    return Err(StoreError::Corrupt(format!(
                        "ids not strictly increasing at {}",
                        rec.id
                    )));
                }
            }
            last_id = Some(rec.id);
            tuples.push(ExperienceTuple {
                id: rec.id,
                state_text: rec.state_text,
                action_text: rec.action_text,
                reward: rec.reward,
                embedding,
            });
        }

        let storage = Self {
            dir: dir.to_path_buf(),
            log,
            sidecar,
            dim,
            count: usable as u32,
        };
        Ok((storage, tuples))
    }

    /// Append a committed batch: log lines first, then embedding rows, then
    /// the header count. Only the header patch makes the batch visible.
    pub(super) fn append_batch(&mut self, tuples: &[ExperienceTuple]) -> Result<(), StoreError> {
        if tuples.is_empty() {
            return Ok(());
        }
        let mut lines = String::new();
        for t in tuples {
            let rec = LogRecord {
                id: t.id,
                state_text: t.state_text.clone(),
                action_text: t.action_text.clone(),
                reward: t.reward,
            };
            lines.push_str(&serde_json::to_string(&rec).expect("log record serializes"));
            lines.push('\n');
        }
        self.log.write_all(lines.as_bytes())?;
        self.log.flush()?;

        self.sidecar.seek(SeekFrom::Start(
            HEADER_LEN + self.count as u64 * 4 * self.dim as u64,
        ))?;
        let mut row_bytes = Vec::with_capacity(tuples.len() * self.dim * 4);
        for t in tuples {
            for &v in &t.embedding {
                row_bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        self.sidecar.write_all(&row_bytes)?;
        self.sidecar.flush()?;

        self.count += tuples.len() as u32;
        write_header(&mut self.sidecar, self.dim, self.count)?;
        Ok(())
    }

    /// Rewrite both files to exactly the given tuples, atomically via
    /// temp-file rename, and reopen the handles.
    pub(super) fn rewrite(&mut self, tuples: &[ExperienceTuple]) -> Result<(), StoreError> {
        let tmp_log = self.dir.join(format!("{LOG_FILE}.tmp"));
        let tmp_sidecar = self.dir.join(format!("{SIDECAR_FILE}.tmp"));

        {
            let mut log = File::create(&tmp_log)?;
            let mut sidecar = File::create(&tmp_sidecar)?;
            write_header(&mut sidecar, self.dim, tuples.len() as u32)?;
            sidecar.seek(SeekFrom::End(0))?;
            for t in tuples {
                let rec = LogRecord {
                    id: t.id,
                    state_text: t.state_text.clone(),
                    action_text: t.action_text.clone(),
                    reward: t.reward,
                };
                log.write_all(serde_json::to_string(&rec).expect("serializes").as_bytes())?;
                log.write_all(b"\n")?;
                for &v in &t.embedding {
                    sidecar.write_all(&v.to_le_bytes())?;
                }
            }
            log.flush()?;
            sidecar.flush()?;
        }
        std::fs::rename(&tmp_log, self.dir.join(LOG_FILE))?;
        std::fs::rename(&tmp_sidecar, self.dir.join(SIDECAR_FILE))?;

        self.log = OpenOptions::new()
            .read(true)
            .append(true)
            .open(self.dir.join(LOG_FILE))?;
        self.sidecar = OpenOptions::new()
            .read(true)
            .write(true)
            .open(self.dir.join(SIDECAR_FILE))?;
        self.count = tuples.len() as u32;
        Ok(())
    }

    pub(super) fn count(&self) -> u32 {
        self.count
    }
}
