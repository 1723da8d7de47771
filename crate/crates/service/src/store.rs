//! On-disk state of a log: an append-only entry journal, a root index and
//! a journal of accepted-but-unmerged submissions.
//!
//! Every write is synced before the caller returns a commitment. On open,
//! a torn record at the end of a file is cut off; damage anywhere else
//! aborts.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pkisn_core::crypto::sha256;
use pkisn_core::log::SignedRoot;
use pkisn_core::{CertChain, Digest, PublicKey, RevocationMessage, TimeTreeEntry};
use serde::{Deserialize, Serialize};

const JOURNAL: &str = "entries.journal";
const ROOTS: &str = "roots.jsonl";
const PENDING: &str = "pending.jsonl";
const META: &str = "meta.json";
const LOCK: &str = "LOCK";

/// Settings fixed when the data directory is created.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub genesis: u64,
    pub scheduling_period: u64,
    pub log_public_key: PublicKey,
}

/// A submission the log accepted and promised to merge at the next update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum PendingRecord {
    Chain { chain: CertChain },
    Revocation { chain: CertChain, revocation: RevocationMessage },
    Tcrl { hash: Digest },
}

#[derive(Debug, Default)]
pub struct Recovered {
    pub meta: Option<Meta>,
    pub entries: Vec<TimeTreeEntry>,
    pub roots: Vec<SignedRoot>,
    pub pending: Vec<PendingRecord>,
    /// Bytes cut from torn file ends.
    pub truncated_bytes: u64,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    journal: File,
    roots: File,
    pending: File,
    _lock: File,
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))
}

fn checksum(bytes: &[u8]) -> [u8; 4] {
    sha256(bytes).0[..4].try_into().unwrap()
}

fn encode_record(entry: &TimeTreeEntry, out: &mut Vec<u8>) {
    let bytes = entry.to_bytes();
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(&bytes);
    out.extend_from_slice(&checksum(&bytes));
}

/// Parses journal records, returning the entries and the length of the
/// intact prefix.
fn read_journal(buf: &[u8]) -> Result<(Vec<TimeTreeEntry>, usize)> {
    let mut entries = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let Some(len_bytes) = buf.get(pos..pos + 4) else { break };
        let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        let end = pos + 4 + len + 4;
        if end > buf.len() {
            break;
        }
        let body = &buf[pos + 4..pos + 4 + len];
        if checksum(body) != buf[end - 4..end] {
            ensure!(end == buf.len(), "journal record at byte {pos} is corrupt");
            break;
        }
        let entry = TimeTreeEntry::from_bytes(body).with_context(|| format!("journal record at byte {pos}"))?;
        entries.push(entry);
        pos = end;
    }
    Ok((entries, pos))
}

/// Parses JSON lines; an unparsable last line without a newline is torn.
fn read_lines<T: serde::de::DeserializeOwned>(file: &mut File, what: &str) -> Result<(Vec<T>, u64)> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(&mut *file);
    let mut out = Vec::new();
    let mut good = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        match serde_json::from_str(line.trim_end()) {
            Ok(v) if line.ends_with('\n') => {
                out.push(v);
                good += n as u64;
            }
            Ok(_) => break,
            Err(_) if !line.ends_with('\n') => break,
            Err(e) => bail!("{what} line {} is corrupt: {e}", out.len() + 1),
        }
    }
    Ok((out, good))
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

impl Store {
    /// Opens (creating if needed) a data directory and reads back
    /// everything in it. Holds an exclusive lock until dropped.
    pub fn open(dir: &Path) -> Result<(Store, Recovered)> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let lock = OpenOptions::new().create(true).truncate(false).write(true).open(dir.join(LOCK))?;
        lock.try_lock()
            .map_err(|_| anyhow::anyhow!("data directory {} is in use by another process", dir.display()))?;

        let mut rec = Recovered::default();
        let meta_path = dir.join(META);
        if meta_path.exists() {
            rec.meta = Some(crate::config::read_json(&meta_path)?);
        }

        let mut journal = open_append(&dir.join(JOURNAL))?;
        let mut buf = Vec::new();
        journal.seek(SeekFrom::Start(0))?;
        journal.read_to_end(&mut buf)?;
        let (entries, good) = read_journal(&buf)?;
        if good < buf.len() {
            rec.truncated_bytes += (buf.len() - good) as u64;
            journal.set_len(good as u64)?;
            journal.sync_all()?;
        }
        rec.entries = entries;

        let mut roots = open_append(&dir.join(ROOTS))?;
        let (r, good) = read_lines(&mut roots, "root index")?;
        let len = roots.metadata()?.len();
        if good < len {
            rec.truncated_bytes += len - good;
            roots.set_len(good)?;
            roots.sync_all()?;
        }
        rec.roots = r;

        let mut pending = open_append(&dir.join(PENDING))?;
        let (p, good) = read_lines(&mut pending, "pending journal")?;
        let len = pending.metadata()?.len();
        if good < len {
            rec.truncated_bytes += len - good;
            pending.set_len(good)?;
            pending.sync_all()?;
        }
        rec.pending = p;

        Ok((
            Store {
                dir: dir.to_path_buf(),
                journal,
                roots,
                pending,
                _lock: lock,
            },
            rec,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_meta(&self, meta: &Meta) -> Result<()> {
        let tmp = self.dir.join("meta.json.tmp");
        crate::config::write_json(&tmp, meta)?;
        File::open(&tmp)?.sync_all()?;
        std::fs::rename(&tmp, self.dir.join(META))?;
        sync_dir(&self.dir)
    }

    pub fn append_pending(&mut self, record: &PendingRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.pending.write_all(&line)?;
        self.pending.sync_data()?;
        Ok(())
    }

    /// Persists the entries and roots of completed updates, then forgets
    /// the submissions they merged.
    pub fn commit_updates(&mut self, entries: &[TimeTreeEntry], roots: &[SignedRoot]) -> Result<()> {
        let mut buf = Vec::new();
        for e in entries {
            encode_record(e, &mut buf);
        }
        self.journal.write_all(&buf)?;
        self.journal.sync_data()?;
        self.append_roots(roots)?;
        self.pending.set_len(0)?;
        self.pending.sync_data()?;
        Ok(())
    }

    /// Adds roots to the index without touching the journal; used when
    /// recovery finds the index behind the journal.
    pub fn append_roots(&mut self, roots: &[SignedRoot]) -> Result<()> {
        let mut buf = Vec::new();
        for r in roots {
            buf.extend(serde_json::to_vec(r)?);
            buf.push(b'\n');
        }
        self.roots.write_all(&buf)?;
        self.roots.sync_data()?;
        Ok(())
    }

    /// Replaces the journal with `entries`; used to drop an update that
    /// was only partly written.
    pub fn rewrite_journal(&mut self, entries: &[TimeTreeEntry]) -> Result<()> {
        let tmp = self.dir.join("entries.journal.tmp");
        let mut buf = Vec::new();
        for e in entries {
            encode_record(e, &mut buf);
        }
        let mut f = File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
        std::fs::rename(&tmp, self.journal_path())?;
        sync_dir(&self.dir)?;
        self.journal = open_append(&self.journal_path())?;
        Ok(())
    }

    pub fn journal_path(&self) -> PathBuf {
        self.dir.join(JOURNAL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pkisn_core::EntryKind;

    fn entry(i: u8) -> TimeTreeEntry {
        TimeTreeEntry::new(EntryKind::Tcrl, 7, vec![i; 32])
    }

    #[test]
    fn torn_tail_is_cut_and_the_rest_survives() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut s, rec) = Store::open(dir.path()).unwrap();
            assert!(rec.entries.is_empty());
            s.commit_updates(&[entry(1), entry(2)], &[]).unwrap();
            s.append_pending(&PendingRecord::Tcrl { hash: Digest([5; 32]) }).unwrap();
        }
        let journal = dir.path().join(JOURNAL);
        let mut f = OpenOptions::new().append(true).open(&journal).unwrap();
        f.write_all(&[0, 0, 0, 50, 1, 2, 3]).unwrap();
        let mut p = OpenOptions::new().append(true).open(dir.path().join(PENDING)).unwrap();
        p.write_all(b"{\"op\":\"tc").unwrap();
        drop((f, p));

        let (_, rec) = Store::open(dir.path()).unwrap();
        assert_eq!(rec.entries, vec![entry(1), entry(2)]);
        assert_eq!(rec.pending, vec![PendingRecord::Tcrl { hash: Digest([5; 32]) }]);
        assert_eq!(rec.truncated_bytes, 7 + 9);
        let (_, again) = Store::open(dir.path()).unwrap();
        assert_eq!(again.truncated_bytes, 0);
    }

    #[test]
    fn damage_before_the_tail_aborts() {
        let dir = tempfile::tempdir().unwrap();
        {
            let (mut s, _) = Store::open(dir.path()).unwrap();
            s.commit_updates(&[entry(1), entry(2)], &[]).unwrap();
        }
        let journal = dir.path().join(JOURNAL);
        let mut bytes = std::fs::read(&journal).unwrap();
        bytes[10] ^= 0xff;
        std::fs::write(&journal, bytes).unwrap();
        assert!(Store::open(dir.path()).unwrap_err().to_string().contains("corrupt"));
    }

    #[test]
    fn second_opener_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let _held = Store::open(dir.path()).unwrap();
        assert!(Store::open(dir.path()).unwrap_err().to_string().contains("in use"));
    }
}
