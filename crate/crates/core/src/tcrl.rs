//! Transparent CRLs: vendor-signed bundles of every revocation of a
//! non-expired certificate, committed to a log before distribution.

use serde::{Deserialize, Serialize};

use crate::cert::{Certificate, RevocationMessage};
use crate::crypto::{self, hash_leaf, Digest, DomainTag, KeyPair, PublicKey, Signature};
use crate::encoding::Encoder;
use crate::log::{Log, LogCommitment, LogError, LogState, SignedRoot};
use crate::time_tree::{EntryKind, InclusionProof, TimeTreeEntry};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TcrlEntry {
    pub cert_hash: Digest,
    #[serde(with = "crate::serde_b64")]
    pub rev_bytes: Vec<u8>,
    pub reg_ts: u64,
}

impl TcrlEntry {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.cert_hash).bytes(&self.rev_bytes).u64(self.reg_ts);
    }

    pub fn encoded_len(&self) -> usize {
        32 + 4 + self.rev_bytes.len() + 8
    }
}

/// How the log vouches for a TCRL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LogBinding {
    Commitment(LogCommitment),
    Inclusion {
        entry_timestamp: u64,
        proof: InclusionProof,
        signed_root: SignedRoot,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tcrl {
    pub version: u64,
    pub issued_at: u64,
    pub entries: Vec<TcrlEntry>,
    pub vendor_sig: Signature,
    #[serde(default)]
    pub log_commitment: Option<LogBinding>,
}

fn signing_bytes(version: u64, issued_at: u64, entries: &[TcrlEntry]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u64(version).u64(issued_at).u32(entries.len() as u32);
    for e in entries {
        e.encode(&mut enc);
    }
    enc.finish()
}

/// Revocations of every certificate in `state` still valid at `now`
/// (inclusive expiry), sorted by certificate hash.
pub fn collect_entries(state: &LogState, now: u64, filter: impl Fn(&Certificate) -> bool) -> Vec<TcrlEntry> {
    let mut entries: Vec<TcrlEntry> = state
        .certs()
        .filter(|r| !r.revocations.is_empty() && r.cert.tbs.not_after >= now && filter(&r.cert))
        .flat_map(|r| {
            r.revocations.iter().map(move |lr| TcrlEntry {
                cert_hash: r.cert.cert_hash(),
                rev_bytes: lr.revocation.canonical_bytes(),
                reg_ts: lr.reg_ts,
            })
        })
        .collect();
    entries.sort();
    entries
}

impl Tcrl {
    pub fn sign(version: u64, issued_at: u64, entries: Vec<TcrlEntry>, vendor: &KeyPair) -> Self {
        let vendor_sig = vendor.sign_tagged(DomainTag::TcrlVendor, &signing_bytes(version, issued_at, &entries));
        Tcrl {
            version,
            issued_at,
            entries,
            vendor_sig,
            log_commitment: None,
        }
    }

    /// Hash committed to the log. Covers the signed content and the
    /// vendor signature, not the log binding.
    pub fn hash(&self) -> Digest {
        let mut bytes = signing_bytes(self.version, self.issued_at, &self.entries);
        let mut enc = Encoder::new();
        self.vendor_sig.encode(&mut enc);
        bytes.extend(enc.finish());
        hash_leaf(&bytes)
    }

    pub fn encoded_len(&self) -> usize {
        20 + self.entries.iter().map(TcrlEntry::encoded_len).sum::<usize>()
    }

    pub fn vendor_signature_valid(&self, vendor_pub: &PublicKey) -> bool {
        crypto::verify(
            vendor_pub,
            DomainTag::TcrlVendor as u8,
            &signing_bytes(self.version, self.issued_at, &self.entries),
            &self.vendor_sig,
        )
    }

    /// Every revocation listed for `cert_hash`.
    pub fn lookup(&self, cert_hash: &Digest) -> Vec<(RevocationMessage, u64)> {
        let lo = self.entries.partition_point(|e| e.cert_hash < *cert_hash);
        let hi = self.entries.partition_point(|e| e.cert_hash <= *cert_hash);
        self.entries[lo..hi]
            .iter()
            .filter_map(|e| RevocationMessage::from_canonical_bytes(&e.rev_bytes).ok().map(|r| (r, e.reg_ts)))
            .collect()
    }
}

pub fn build_tcrl(state: &LogState, vendor: &KeyPair, version: u64, now: u64) -> Tcrl {
    Tcrl::sign(version, now, collect_entries(state, now, |_| true), vendor)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TcrlError {
    #[error("TCRL vendor signature does not verify")]
    BadVendorSignature,
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Queues the TCRL's hash in the log and returns the log's commitment.
pub fn commit_tcrl(log: &mut Log, tcrl: &Tcrl) -> Result<LogCommitment, TcrlError> {
    if !tcrl.vendor_signature_valid(&log.config().vendor_public_key) {
        return Err(TcrlError::BadVendorSignature);
    }
    Ok(log.submit_tcrl_hash(tcrl.hash())?)
}

/// Inclusion binding for a TCRL already appended to the log.
pub fn inclusion_binding(log: &Log, tcrl: &Tcrl) -> Option<LogBinding> {
    let hash = tcrl.hash();
    let index = log.state().tcrl_index(&hash)?;
    let entry_timestamp = log.state().time_tree().entry(index)?.reg_timestamp;
    Some(LogBinding::Inclusion {
        entry_timestamp,
        proof: log.tcrl_inclusion(&hash)?,
        signed_root: log.latest_root()?.clone(),
    })
}

/// Checks the vendor signature and that the log binding covers this TCRL.
/// With `require_inclusion`, a bare commitment is not enough.
pub fn verify_tcrl(tcrl: &Tcrl, vendor_pub: &PublicKey, log_pub: &PublicKey, require_inclusion: bool) -> bool {
    if !tcrl.vendor_signature_valid(vendor_pub) {
        return false;
    }
    let hash = tcrl.hash();
    match &tcrl.log_commitment {
        None => false,
        Some(LogBinding::Commitment(c)) => {
            !require_inclusion && c.hash == hash && c.verify(DomainTag::TcrlCommitment, log_pub)
        }
        Some(LogBinding::Inclusion {
            entry_timestamp,
            proof,
            signed_root,
        }) => {
            let entry = TimeTreeEntry::new(EntryKind::Tcrl, *entry_timestamp, hash.0.to_vec());
            proof.tree_size == signed_root.tree_size
                && signed_root.verify(log_pub)
                && proof.verify(&entry.to_bytes(), &signed_root.root)
        }
    }
}

/// Difference between two consecutive TCRLs: entries added and
/// certificates dropped because they expired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcrlDelta {
    pub from_version: u64,
    pub to_version: u64,
    pub issued_at: u64,
    pub added: Vec<TcrlEntry>,
    pub removed: Vec<Digest>,
    pub vendor_sig: Signature,
}

fn delta_signing_bytes(from: u64, to: u64, issued_at: u64, added: &[TcrlEntry], removed: &[Digest]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u64(from).u64(to).u64(issued_at).u32(added.len() as u32);
    for e in added {
        e.encode(&mut enc);
    }
    enc.u32(removed.len() as u32);
    for d in removed {
        enc.digest(d);
    }
    enc.finish()
}

impl TcrlDelta {
    pub fn between(old: &Tcrl, new: &Tcrl, vendor: &KeyPair) -> Self {
        let added: Vec<TcrlEntry> = new
            .entries
            .iter()
            .filter(|e| old.entries.binary_search(e).is_err())
            .cloned()
            .collect();
        let mut removed: Vec<Digest> = old
            .entries
            .iter()
            .filter(|e| new.entries.binary_search(e).is_err())
            .map(|e| e.cert_hash)
            .collect();
        removed.dedup();
        let vendor_sig = vendor.sign_tagged(
            DomainTag::TcrlDelta,
            &delta_signing_bytes(old.version, new.version, new.issued_at, &added, &removed),
        );
        TcrlDelta {
            from_version: old.version,
            to_version: new.version,
            issued_at: new.issued_at,
            added,
            removed,
            vendor_sig,
        }
    }

    pub fn verify(&self, vendor_pub: &PublicKey) -> bool {
        crypto::verify(
            vendor_pub,
            DomainTag::TcrlDelta as u8,
            &delta_signing_bytes(self.from_version, self.to_version, self.issued_at, &self.added, &self.removed),
            &self.vendor_sig,
        )
    }

    /// Entry list of the newer TCRL, reconstructed from the older one.
    pub fn apply(&self, base: &[TcrlEntry]) -> Vec<TcrlEntry> {
        let mut out: Vec<TcrlEntry> = base
            .iter()
            .filter(|e| self.removed.binary_search(&e.cert_hash).is_err())
            .cloned()
            .chain(self.added.iter().cloned())
            .collect();
        out.sort();
        out
    }

    pub fn encoded_len(&self) -> usize {
        28 + self.added.iter().map(TcrlEntry::encoded_len).sum::<usize>() + 32 * self.removed.len()
    }
}
