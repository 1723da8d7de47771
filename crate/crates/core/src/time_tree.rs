//! Chronological append-only tree over every object the log accepts.

use serde::{Deserialize, Serialize};

use crate::crypto::{hash_leaf, Digest};
use crate::encoding::{DecodeError, Decoder, Encoder};
use crate::merkle::{self, MerkleLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Cert = 1,
    Revocation = 2,
    RevTreeRoot = 3,
    Tcrl = 4,
}

impl TryFrom<u8> for EntryKind {
    type Error = DecodeError;
    fn try_from(v: u8) -> Result<Self, DecodeError> {
        Ok(match v {
            1 => EntryKind::Cert,
            2 => EntryKind::Revocation,
            3 => EntryKind::RevTreeRoot,
            4 => EntryKind::Tcrl,
            _ => return Err(DecodeError::InvalidValue { field: "entry kind" }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeTreeEntry {
    pub kind: EntryKind,
    pub reg_timestamp: u64,
    #[serde(with = "crate::serde_b64")]
    pub payload: Vec<u8>,
}

impl TimeTreeEntry {
    pub fn new(kind: EntryKind, reg_timestamp: u64, payload: Vec<u8>) -> Self {
        TimeTreeEntry {
            kind,
            reg_timestamp,
            payload,
        }
    }

    pub fn rev_tree_root(root: &Digest, ts: u64) -> Self {
        Self::new(EntryKind::RevTreeRoot, ts, root.0.to_vec())
    }

    /// `kind(1) || reg_timestamp(8) || len(4) || payload`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(self.kind as u8)
            .u64(self.reg_timestamp)
            .bytes(&self.payload);
        enc.finish()
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let kind = EntryKind::try_from(dec.u8()?)?;
        let reg_timestamp = dec.u64()?;
        let payload = dec.bytes()?.to_vec();
        Ok(TimeTreeEntry {
            kind,
            reg_timestamp,
            payload,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let e = Self::decode(&mut dec)?;
        dec.finish()?;
        Ok(e)
    }

    pub fn leaf_hash(&self) -> Digest {
        hash_leaf(&self.to_bytes())
    }
}

/// Decodes a stream of concatenated entry records. A torn final record is
/// dropped; the second value is the byte length of the intact prefix.
pub fn decode_records(bytes: &[u8]) -> (Vec<TimeTreeEntry>, usize) {
    let mut dec = Decoder::new(bytes);
    let mut out = Vec::new();
    let mut good = 0;
    while dec.remaining() > 0 {
        match TimeTreeEntry::decode(&mut dec) {
            Ok(e) => {
                out.push(e);
                good = dec.position();
            }
            Err(_) => break,
        }
    }
    (out, good)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimeTreeError {
    #[error("entry timestamp {got} precedes the last appended timestamp {last}")]
    NonMonotonicTimestamp { last: u64, got: u64 },
    #[error("leaf index {index} outside tree of size {size}")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("invalid size range {old}..{new} for tree of size {size}")]
    SizeOutOfRange { old: u64, new: u64, size: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: u64,
    pub tree_size: u64,
    pub path: Vec<Digest>,
}

impl InclusionProof {
    pub fn root_for(&self, leaf: Digest) -> Option<Digest> {
        merkle::root_from_path(leaf, self.leaf_index, self.tree_size, &self.path)
    }

    /// Recomputes the root from `hash_leaf(entry_bytes)` and compares.
    pub fn verify(&self, entry_bytes: &[u8], root: &Digest) -> bool {
        self.root_for(hash_leaf(entry_bytes)).as_ref() == Some(root)
    }
}

pub fn verify_inclusion(entry_bytes: &[u8], proof: &InclusionProof, root: &Digest) -> bool {
    proof.verify(entry_bytes, root)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyProof {
    pub old_size: u64,
    pub new_size: u64,
    pub nodes: Vec<Digest>,
}

pub fn verify_consistency(old_root: &Digest, new_root: &Digest, proof: &ConsistencyProof) -> bool {
    merkle::verify_consistency(proof.old_size, proof.new_size, old_root, new_root, &proof.nodes)
}

#[derive(Debug, Clone, Default)]
pub struct TimeTree {
    entries: Vec<TimeTreeEntry>,
    hashes: MerkleLog,
}

impl TimeTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn size(&self) -> u64 {
        self.hashes.len()
    }

    pub fn entries(&self) -> &[TimeTreeEntry] {
        &self.entries
    }

    pub fn entry(&self, index: u64) -> Option<&TimeTreeEntry> {
        self.entries.get(index as usize)
    }

    pub fn leaf_hash(&self, index: u64) -> Option<Digest> {
        self.hashes.leaf(index).copied()
    }

    pub fn hashes(&self) -> &MerkleLog {
        &self.hashes
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.entries.last().map(|e| e.reg_timestamp)
    }

    /// Appends a batch; all-or-nothing on timestamp violations.
    pub fn append(&mut self, batch: Vec<TimeTreeEntry>) -> Result<Digest, TimeTreeError> {
        let mut last = self.last_timestamp().unwrap_or(0);
        for e in &batch {
            if e.reg_timestamp < last {
                return Err(TimeTreeError::NonMonotonicTimestamp {
                    last,
                    got: e.reg_timestamp,
                });
            }
            last = e.reg_timestamp;
        }
        for e in batch {
            self.hashes.push(e.leaf_hash());
            self.entries.push(e);
        }
        Ok(self.root())
    }

    pub fn root(&self) -> Digest {
        self.hashes.root()
    }

    pub fn root_at(&self, size: u64) -> Digest {
        self.hashes.root_at(size)
    }

    pub fn inclusion_proof(&self, index: u64) -> Result<InclusionProof, TimeTreeError> {
        self.inclusion_proof_at(index, self.size())
    }

    pub fn inclusion_proof_at(&self, index: u64, size: u64) -> Result<InclusionProof, TimeTreeError> {
        if index >= size || size > self.size() {
            return Err(TimeTreeError::IndexOutOfRange { index, size });
        }
        Ok(InclusionProof {
            leaf_index: index,
            tree_size: size,
            path: self.hashes.inclusion_path(index, size),
        })
    }

    pub fn consistency_proof(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, TimeTreeError> {
        if old_size == 0 || old_size > new_size || new_size > self.size() {
            return Err(TimeTreeError::SizeOutOfRange {
                old: old_size,
                new: new_size,
                size: self.size(),
            });
        }
        Ok(ConsistencyProof {
            old_size,
            new_size,
            nodes: self.hashes.consistency_nodes(old_size, new_size),
        })
    }
}
