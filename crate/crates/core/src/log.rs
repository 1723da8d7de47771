//! The log's state machine: submissions, commitments, the scheduled update
//! cycle, signed roots and proofs.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cert::{verify_revocation, CertChain, Certificate, ChainError, RevocationKind, RevocationMessage, SignerRole, TrustRoots};
use crate::crypto::{self, DomainTag, Digest, KeyPair, PublicKey, Signature};
use crate::encoding::Encoder;
use crate::rev_tree::{AbsenceProof, LevelProof, LoggedRevocation, RevTree, RevTreeError};
use crate::time_tree::{ConsistencyProof, EntryKind, InclusionProof, TimeTree, TimeTreeEntry, TimeTreeError};

pub const DEFAULT_SCHEDULING_PERIOD: u64 = 3600;

/// Log-signed promise that every certificate of a chain is (or will be)
/// registered at the listed times, leaf first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainCommitment {
    pub leaf_cert_hash: Digest,
    pub timestamps: Vec<u64>,
    pub log_signature: Signature,
}

impl ChainCommitment {
    pub fn signed_payload(leaf: &Digest, timestamps: &[u64]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.digest(leaf).u8(timestamps.len() as u8);
        for t in timestamps {
            enc.u64(*t);
        }
        enc.finish()
    }

    pub fn sign(key: &KeyPair, leaf: Digest, timestamps: Vec<u64>) -> Self {
        let log_signature = key.sign_tagged(DomainTag::ChainCommitment, &Self::signed_payload(&leaf, &timestamps));
        ChainCommitment {
            leaf_cert_hash: leaf,
            timestamps,
            log_signature,
        }
    }

    pub fn verify(&self, log_pub: &PublicKey) -> bool {
        self.timestamps.len() <= u8::MAX as usize
            && self.timestamps.windows(2).all(|w| w[0] >= w[1])
            && crypto::verify(
                log_pub,
                DomainTag::ChainCommitment as u8,
                &Self::signed_payload(&self.leaf_cert_hash, &self.timestamps),
                &self.log_signature,
            )
    }

    /// Timestamps reordered root→leaf to line up with a chain.
    pub fn timestamps_root_first(&self) -> Vec<u64> {
        self.timestamps.iter().rev().copied().collect()
    }
}

/// TimeTree root at an update time. `tree_size` is carried for proof
/// construction but is not part of the signed bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedRoot {
    pub root: Digest,
    pub timestamp: u64,
    pub tree_size: u64,
    pub log_signature: Signature,
}

impl SignedRoot {
    pub fn signed_payload(root: &Digest, timestamp: u64) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.digest(root).u64(timestamp);
        enc.finish()
    }

    pub fn sign(key: &KeyPair, root: Digest, timestamp: u64, tree_size: u64) -> Self {
        let log_signature = key.sign_tagged(DomainTag::SignedRoot, &Self::signed_payload(&root, timestamp));
        SignedRoot {
            root,
            timestamp,
            tree_size,
            log_signature,
        }
    }

    pub fn verify(&self, log_pub: &PublicKey) -> bool {
        crypto::verify(
            log_pub,
            DomainTag::SignedRoot as u8,
            &Self::signed_payload(&self.root, self.timestamp),
            &self.log_signature,
        )
    }
}

/// Promise to append an object (a revocation or a TCRL hash) at
/// `timestamp`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogCommitment {
    pub hash: Digest,
    pub timestamp: u64,
    pub log_signature: Signature,
}

pub type RevocationCommitment = LogCommitment;

impl LogCommitment {
    pub fn signed_payload(hash: &Digest, timestamp: u64) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.digest(hash).u64(timestamp);
        enc.finish()
    }

    pub fn sign(key: &KeyPair, tag: DomainTag, hash: Digest, timestamp: u64) -> Self {
        LogCommitment {
            hash,
            timestamp,
            log_signature: key.sign_tagged(tag, &Self::signed_payload(&hash, timestamp)),
        }
    }

    pub fn verify(&self, tag: DomainTag, log_pub: &PublicKey) -> bool {
        crypto::verify(log_pub, tag as u8, &Self::signed_payload(&self.hash, self.timestamp), &self.log_signature)
    }
}

/// Proves that the TimeTree entry holding the current RevTree root is the
/// last leaf under a signed root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootAnchor {
    pub inclusion: InclusionProof,
}

impl RootAnchor {
    pub fn verify(&self, forest_root: &Digest, signed_root: &SignedRoot) -> bool {
        let p = &self.inclusion;
        let entry = TimeTreeEntry::rev_tree_root(forest_root, signed_root.timestamp);
        p.tree_size == signed_root.tree_size
            && p.leaf_index + 1 == p.tree_size
            && p.verify(&entry.to_bytes(), &signed_root.root)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainPresenceProof {
    /// Root CA subtree first.
    pub levels: Vec<LevelProof>,
    pub anchor: RootAnchor,
}

impl ChainPresenceProof {
    /// Checks the proof against a chain and its commitment timestamps
    /// (root first), and that it is anchored under `signed_root`. Does not
    /// check signatures.
    pub fn verify_chain(&self, chain: &CertChain, timestamps_root_first: &[u64], signed_root: &SignedRoot) -> bool {
        if self.levels.len() != chain.len() || timestamps_root_first.len() != chain.len() {
            return false;
        }
        let ids_match = chain
            .certs
            .iter()
            .zip(timestamps_root_first)
            .zip(&self.levels)
            .all(|((c, t), l)| c.id_hash(*t) == l.id_hash);
        if !ids_match {
            return false;
        }
        match crate::rev_tree::forest_root_from_levels(&self.levels) {
            Some(root) => self.anchor.verify(&root, signed_root),
            None => false,
        }
    }
}

/// Verifies a chain presence proof; the query-side counterpart of
/// [`Log::get_proof`].
pub fn verify_chain(
    chain: &CertChain,
    cc_timestamps_root_first: &[u64],
    proof: &ChainPresenceProof,
    signed_root: &SignedRoot,
) -> bool {
    proof.verify_chain(chain, cc_timestamps_root_first, signed_root)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchoredAbsence {
    pub absence: AbsenceProof,
    pub anchor: RootAnchor,
}

impl AnchoredAbsence {
    pub fn verify(&self, signed_root: &SignedRoot) -> bool {
        match self.absence.forest_root() {
            Some(root) => self.anchor.verify(&root, signed_root),
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingRevocation {
    pub revocation: RevocationMessage,
    pub commitment: RevocationCommitment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofResponse {
    pub proof: ChainPresenceProof,
    pub signed_root: SignedRoot,
    pub pending: Vec<PendingRevocation>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LogError {
    #[error("invalid chain: {0}")]
    InvalidChain(#[from] ChainError),
    #[error("chain root is not a trusted root")]
    UntrustedRoot,
    #[error("CA key already bound to another logged certificate")]
    ConflictingCaKey,
    #[error("chain does not match the logged hierarchy")]
    HierarchyMismatch,
    #[error("submission queue is full")]
    QueueFull,
    #[error("revocation target is not logged")]
    TargetNotLogged,
    #[error("revocation is not legitimate for its target")]
    IllegitimateRevocation,
    #[error("revocation key already used for this certificate")]
    DuplicateRkRevocation,
    #[error("no update due before {next}")]
    UpdateNotDue { next: u64 },
    #[error("the log has not published a root yet")]
    NoSignedRoot,
    #[error("no leaf for the query at level {level}")]
    UnknownLeaf { level: usize, absence: Box<AnchoredAbsence> },
    #[error(transparent)]
    TimeTree(#[from] TimeTreeError),
}

/// A logged certificate.
#[derive(Debug, Clone)]
pub struct CertRecord {
    pub cert: Certificate,
    pub reg_ts: u64,
    pub parent: Option<Digest>,
    pub children: Vec<Digest>,
    pub revocations: Vec<LoggedRevocation>,
    pub entry_index: u64,
}

/// One completed update: the TimeTree range it appended and its roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchInfo {
    pub timestamp: u64,
    pub start: u64,
    pub end: u64,
    pub forest_root: Digest,
    pub time_root: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("entry {index}: {reason}")]
pub struct ReplayError {
    pub index: u64,
    pub reason: String,
}

/// Checks applied when replaying entries not produced locally.
#[derive(Debug, Clone)]
pub struct EntryPolicy {
    pub trust_roots: TrustRoots,
    pub vendor_public_key: PublicKey,
}

/// Everything derivable from the TimeTree entry stream. Shared by the log
/// itself, crash recovery and full monitors.
#[derive(Debug, Clone, Default)]
pub struct LogState {
    time_tree: TimeTree,
    rev_tree: RevTree,
    certs: HashMap<Digest, CertRecord>,
    ca_keys: HashMap<Digest, Digest>,
    id_index: HashMap<Digest, Digest>,
    rev_index: HashMap<Digest, u64>,
    rk_used: HashMap<Digest, Digest>,
    tcrls: HashMap<Digest, u64>,
    batches: Vec<BatchInfo>,
}

impl LogState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time_tree(&self) -> &TimeTree {
        &self.time_tree
    }

    pub fn rev_tree(&self) -> &RevTree {
        &self.rev_tree
    }

    pub fn batches(&self) -> &[BatchInfo] {
        &self.batches
    }

    pub fn last_batch(&self) -> Option<&BatchInfo> {
        self.batches.last()
    }

    pub fn cert(&self, cert_hash: &Digest) -> Option<&CertRecord> {
        self.certs.get(cert_hash)
    }

    pub fn certs(&self) -> impl Iterator<Item = &CertRecord> {
        self.certs.values()
    }

    pub fn cert_by_id(&self, id_hash: &Digest) -> Option<&CertRecord> {
        self.id_index.get(id_hash).and_then(|c| self.certs.get(c))
    }

    pub fn ca_by_key(&self, key_id: &Digest) -> Option<&CertRecord> {
        self.ca_keys.get(key_id).and_then(|c| self.certs.get(c))
    }

    pub fn has_revocation(&self, rev_hash: &Digest) -> bool {
        self.rev_index.contains_key(rev_hash)
    }

    pub fn revocation_reg_ts(&self, rev_hash: &Digest) -> Option<u64> {
        self.rev_index.get(rev_hash).copied()
    }

    pub fn rk_revocation(&self, target: &Digest) -> Option<&Digest> {
        self.rk_used.get(target)
    }

    /// TimeTree index of a committed TCRL hash.
    pub fn tcrl_index(&self, hash: &Digest) -> Option<u64> {
        self.tcrls.get(hash).copied()
    }

    /// The logged chain ending at `cert_hash`, root first.
    pub fn chain_of(&self, cert_hash: &Digest) -> Option<CertChain> {
        let mut certs = Vec::new();
        let mut cur = Some(*cert_hash);
        while let Some(h) = cur {
            let rec = self.certs.get(&h)?;
            certs.push(rec.cert.clone());
            cur = rec.parent;
        }
        certs.reverse();
        Some(CertChain::new(certs))
    }

    /// Registration timestamps of a logged chain, leaf first.
    pub fn chain_timestamps(&self, chain: &CertChain) -> Option<Vec<u64>> {
        chain
            .certs
            .iter()
            .rev()
            .map(|c| self.certs.get(&c.cert_hash()).map(|r| r.reg_ts))
            .collect()
    }

    /// Latest expiry over a certificate and all of its logged descendants.
    pub fn live_until(&self, cert_hash: &Digest) -> u64 {
        let mut max = 0;
        let mut stack = vec![*cert_hash];
        while let Some(h) = stack.pop() {
            if let Some(rec) = self.certs.get(&h) {
                max = max.max(rec.cert.tbs.not_after);
                stack.extend(rec.children.iter().copied());
            }
        }
        max
    }

    fn check_cert(&self, cert: &Certificate, batch_keys: &HashMap<Digest, Digest>, policy: &EntryPolicy) -> Result<(), String> {
        cert.check_invariants().map_err(|e| e.to_string())?;
        let h = cert.cert_hash();
        if self.certs.contains_key(&h) {
            return Err("certificate logged twice".into());
        }
        if cert.is_self_signed() {
            if !policy.trust_roots.contains(&h) {
                return Err("untrusted root certificate".into());
            }
        } else {
            let parent = self
                .ca_keys
                .get(&cert.tbs.issuer_key_id)
                .or_else(|| batch_keys.get(&cert.tbs.issuer_key_id))
                .and_then(|p| self.certs.get(p))
                .ok_or("issuer not logged")?;
            if !cert.signed_by(&parent.cert.tbs.subject_public_key) {
                return Err("bad issuer signature".into());
            }
        }
        Ok(())
    }

    fn check_revocation(&self, rev: &RevocationMessage, policy: &EntryPolicy) -> Result<(), String> {
        let chain = self.chain_of(&rev.target_cert_hash).ok_or("revocation target not logged")?;
        let target = chain.leaf().unwrap();
        if !verify_revocation(rev, target, &chain, &policy.vendor_public_key) {
            return Err("illegitimate revocation".into());
        }
        if rev.signer_role == SignerRole::RevocationKey && self.rk_used.contains_key(&rev.target_cert_hash) {
            return Err("revocation key used twice".into());
        }
        if self.rev_index.contains_key(&rev.rev_hash()) {
            return Err("revocation logged twice".into());
        }
        Ok(())
    }

    /// Appends one update: `items` (certificates, revocations, TCRL hashes,
    /// all stamped `ts`) followed by the new RevTree root entry. With a
    /// policy every item is re-verified; on error the state must be
    /// discarded.
    pub fn apply_batch(&mut self, items: Vec<TimeTreeEntry>, ts: u64, policy: Option<&EntryPolicy>) -> Result<BatchInfo, ReplayError> {
        let start = self.time_tree.size();
        if let Some(last) = self.batches.last() {
            if ts <= last.timestamp {
                return Err(ReplayError {
                    index: start,
                    reason: format!("update time {ts} not after {}", last.timestamp),
                });
            }
        }
        let mut batch_keys = HashMap::new();
        for (i, e) in items.iter().enumerate() {
            let index = start + i as u64;
            let fail = |reason: String| ReplayError { index, reason };
            if e.reg_timestamp != ts {
                return Err(fail("entry timestamp differs from update time".into()));
            }
            match e.kind {
                EntryKind::Cert => {
                    let cert = Certificate::from_canonical_bytes(&e.payload).map_err(|err| fail(err.to_string()))?;
                    if let Some(p) = policy {
                        self.check_cert(&cert, &batch_keys, p).map_err(fail)?;
                    }
                    let h = cert.cert_hash();
                    let parent = if cert.is_self_signed() {
                        None
                    } else {
                        Some(
                            *self
                                .ca_keys
                                .get(&cert.tbs.issuer_key_id)
                                .ok_or_else(|| fail("issuer not logged".into()))?,
                        )
                    };
                    if cert.is_ca() {
                        if let Some(other) = self.ca_keys.get(&cert.subject_key_id()) {
                            if *other != h {
                                return Err(fail("CA key bound to two certificates".into()));
                            }
                        }
                        self.ca_keys.insert(cert.subject_key_id(), h);
                        batch_keys.insert(cert.subject_key_id(), h);
                    }
                    let id = cert.id_hash(ts);
                    self.rev_tree
                        .insert(h, id, parent)
                        .map_err(|err| fail(err.to_string()))?;
                    if let Some(p) = parent {
                        self.certs.get_mut(&p).unwrap().children.push(h);
                    }
                    self.id_index.insert(id, h);
                    self.certs.insert(
                        h,
                        CertRecord {
                            cert,
                            reg_ts: ts,
                            parent,
                            children: Vec::new(),
                            revocations: Vec::new(),
                            entry_index: index,
                        },
                    );
                }
                EntryKind::Revocation => {
                    let rev = RevocationMessage::from_canonical_bytes(&e.payload).map_err(|err| fail(err.to_string()))?;
                    if let Some(p) = policy {
                        self.check_revocation(&rev, p).map_err(fail)?;
                    }
                    let target = rev.target_cert_hash;
                    let logged = LoggedRevocation {
                        revocation: rev.clone(),
                        reg_ts: ts,
                    };
                    self.rev_tree
                        .add_revocation(&target, logged.clone())
                        .map_err(|err| fail(err.to_string()))?;
                    self.certs.get_mut(&target).unwrap().revocations.push(logged);
                    if rev.signer_role == SignerRole::RevocationKey {
                        self.rk_used.insert(target, rev.rev_hash());
                    }
                    self.rev_index.insert(rev.rev_hash(), ts);
                }
                EntryKind::Tcrl => {
                    let hash: [u8; 32] = e
                        .payload
                        .as_slice()
                        .try_into()
                        .map_err(|_| fail("TCRL entry is not a digest".into()))?;
                    self.tcrls.insert(Digest(hash), index);
                }
                EntryKind::RevTreeRoot => return Err(fail("RevTree root inside a batch".into())),
            }
        }
        let forest_root = self.rev_tree.commit();
        let mut entries = items;
        entries.push(TimeTreeEntry::rev_tree_root(&forest_root, ts));
        let time_root = self.time_tree.append(entries).map_err(|err| ReplayError {
            index: start,
            reason: err.to_string(),
        })?;
        let info = BatchInfo {
            timestamp: ts,
            start,
            end: self.time_tree.size(),
            forest_root,
            time_root,
        };
        self.batches.push(info);
        Ok(info)
    }

    /// Splits an entry stream into update batches, each ending with its
    /// RevTree root entry. A trailing incomplete batch is returned
    /// separately.
    pub fn split_batches(entries: &[TimeTreeEntry]) -> (Vec<&[TimeTreeEntry]>, &[TimeTreeEntry]) {
        let mut out = Vec::new();
        let mut start = 0;
        for (i, e) in entries.iter().enumerate() {
            if e.kind == EntryKind::RevTreeRoot {
                out.push(&entries[start..=i]);
                start = i + 1;
            }
        }
        (out, &entries[start..])
    }

    /// Replays a complete batch as received from a log, checking that its
    /// RevTree root entry matches the locally recomputed root.
    pub fn replay_batch(&mut self, batch: &[TimeTreeEntry], policy: Option<&EntryPolicy>) -> Result<BatchInfo, ReplayError> {
        let Some((root_entry, items)) = batch.split_last() else {
            return Err(ReplayError {
                index: self.time_tree.size(),
                reason: "empty batch".into(),
            });
        };
        let root_index = self.time_tree.size() + items.len() as u64;
        if root_entry.kind != EntryKind::RevTreeRoot {
            return Err(ReplayError {
                index: root_index,
                reason: "batch does not end with a RevTree root".into(),
            });
        }
        let info = self.apply_batch(items.to_vec(), root_entry.reg_timestamp, policy)?;
        if root_entry.payload != info.forest_root.0 {
            return Err(ReplayError {
                index: root_index,
                reason: "RevTree root entry differs from the recomputed root".into(),
            });
        }
        Ok(info)
    }

    /// Presence proof for `request` (root first) against the latest batch.
    pub fn prove(&self, request: &[Digest]) -> Result<ChainPresenceProof, LogError> {
        let batch = self.batches.last().ok_or(LogError::NoSignedRoot)?;
        let anchor = self.anchor(batch)?;
        match self.rev_tree.prove_chain(request) {
            Ok(levels) => Ok(ChainPresenceProof { levels, anchor }),
            Err(RevTreeError::NotFoundAtLevel(level)) => {
                let absence = self
                    .rev_tree
                    .prove_absence(&request[..level], request[level])
                    .expect("lookup failed at this level");
                Err(LogError::UnknownLeaf {
                    level,
                    absence: Box::new(AnchoredAbsence { absence, anchor }),
                })
            }
            Err(other) => unreachable!("prove_chain: {other}"),
        }
    }

    fn anchor(&self, batch: &BatchInfo) -> Result<RootAnchor, LogError> {
        Ok(RootAnchor {
            inclusion: self.time_tree.inclusion_proof_at(batch.end - 1, batch.end)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LogConfig {
    pub scheduling_period: u64,
    pub trust_roots: TrustRoots,
    pub max_pending: usize,
    pub vendor_public_key: PublicKey,
    /// The first update happens one period after this time.
    pub genesis: u64,
}

impl LogConfig {
    pub fn new(trust_roots: TrustRoots, vendor_public_key: PublicKey, genesis: u64) -> Self {
        LogConfig {
            scheduling_period: DEFAULT_SCHEDULING_PERIOD,
            trust_roots,
            max_pending: 1_000_000,
            vendor_public_key,
            genesis,
        }
    }

    pub fn policy(&self) -> EntryPolicy {
        EntryPolicy {
            trust_roots: self.trust_roots.clone(),
            vendor_public_key: self.vendor_public_key,
        }
    }
}

#[derive(Debug, Clone)]
enum Queued {
    Cert(Certificate),
    Revocation(RevocationMessage, RevocationCommitment),
    Tcrl(Digest),
}

#[derive(Debug, Clone)]
pub struct Log {
    config: LogConfig,
    key: KeyPair,
    state: LogState,
    roots: Vec<SignedRoot>,
    queue: Vec<Queued>,
    pending_certs: HashSet<Digest>,
    pending_ca_keys: HashMap<Digest, Digest>,
    pending_revs: HashMap<Digest, usize>,
    pending_rk: HashSet<Digest>,
    pending_tcrls: HashMap<Digest, LogCommitment>,
    next_update: u64,
}

impl Log {
    pub fn new(config: LogConfig, key: KeyPair) -> Self {
        assert!(config.scheduling_period > 0, "scheduling period must be positive");
        let next_update = config.genesis + config.scheduling_period;
        Log {
            config,
            key,
            state: LogState::new(),
            roots: Vec::new(),
            queue: Vec::new(),
            pending_certs: HashSet::new(),
            pending_ca_keys: HashMap::new(),
            pending_revs: HashMap::new(),
            pending_rk: HashSet::new(),
            pending_tcrls: HashMap::new(),
            next_update,
        }
    }

    /// Rebuilds a log from its persisted entry stream. Signatures are
    /// deterministic, so the regenerated signed roots are byte-identical.
    pub fn restore(config: LogConfig, key: KeyPair, entries: &[TimeTreeEntry]) -> Result<Self, ReplayError> {
        let mut log = Log::new(config, key);
        let (batches, tail) = LogState::split_batches(entries);
        if !tail.is_empty() {
            return Err(ReplayError {
                index: (entries.len() - tail.len()) as u64,
                reason: "incomplete trailing batch".into(),
            });
        }
        for batch in batches {
            let info = log.state.replay_batch(batch, None)?;
            log.roots
                .push(SignedRoot::sign(&log.key, info.time_root, info.timestamp, info.end));
            log.next_update = info.timestamp + log.config.scheduling_period;
        }
        Ok(log)
    }

    pub fn config(&self) -> &LogConfig {
        &self.config
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public()
    }

    pub fn state(&self) -> &LogState {
        &self.state
    }

    pub fn next_update(&self) -> u64 {
        self.next_update
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn signed_roots(&self) -> &[SignedRoot] {
        &self.roots
    }

    pub fn latest_root(&self) -> Option<&SignedRoot> {
        self.roots.last()
    }

    pub fn root_at_time(&self, ts: u64) -> Option<&SignedRoot> {
        self.roots
            .binary_search_by_key(&ts, |r| r.timestamp)
            .ok()
            .map(|i| &self.roots[i])
    }

    fn registered_ts(&self, h: &Digest) -> Option<u64> {
        if let Some(r) = self.state.cert(h) {
            Some(r.reg_ts)
        } else {
            self.pending_certs.contains(h).then_some(self.next_update)
        }
    }

    fn bound_ca(&self, key_id: &Digest) -> Option<Digest> {
        self.state
            .ca_keys
            .get(key_id)
            .or_else(|| self.pending_ca_keys.get(key_id))
            .copied()
    }

    /// Verifies a chain, queues its unlogged certificates and returns the
    /// chain commitment.
    pub fn submit_chain(&mut self, chain: &CertChain) -> Result<ChainCommitment, LogError> {
        chain.verify_structure()?;
        let root = chain.root().unwrap();
        if !self.config.trust_roots.contains(&root.cert_hash()) {
            return Err(LogError::UntrustedRoot);
        }
        let mut fresh = Vec::new();
        for c in &chain.certs {
            let h = c.cert_hash();
            if c.is_ca() {
                if let Some(bound) = self.bound_ca(&c.subject_key_id()) {
                    if bound != h {
                        return Err(LogError::ConflictingCaKey);
                    }
                }
            }
            if self.registered_ts(&h).is_none() {
                fresh.push(c);
            }
        }
        if self.queue.len() + fresh.len() > self.config.max_pending {
            return Err(LogError::QueueFull);
        }
        for c in fresh {
            let h = c.cert_hash();
            if c.is_ca() {
                self.pending_ca_keys.insert(c.subject_key_id(), h);
            }
            self.pending_certs.insert(h);
            self.queue.push(Queued::Cert(c.clone()));
        }
        let timestamps: Vec<u64> = chain
            .certs
            .iter()
            .rev()
            .map(|c| self.registered_ts(&c.cert_hash()).unwrap())
            .collect();
        Ok(ChainCommitment::sign(&self.key, chain.leaf().unwrap().cert_hash(), timestamps))
    }

    /// Verifies and queues a revocation of `chain`'s last certificate.
    pub fn submit_revocation(&mut self, chain: &CertChain, rev: &RevocationMessage) -> Result<RevocationCommitment, LogError> {
        chain.verify_structure()?;
        let target = chain.leaf().unwrap();
        if rev.target_cert_hash != target.cert_hash() {
            return Err(LogError::IllegitimateRevocation);
        }
        let target_hash = target.cert_hash();
        if self.state.cert(&target_hash).is_none() {
            return Err(LogError::TargetNotLogged);
        }
        match self.state.chain_of(&target_hash) {
            Some(logged) if logged == *chain => {}
            _ => return Err(LogError::HierarchyMismatch),
        }
        if !verify_revocation(rev, target, chain, &self.config.vendor_public_key) {
            return Err(LogError::IllegitimateRevocation);
        }
        let rev_hash = rev.rev_hash();
        if let Some(ts) = self.state.revocation_reg_ts(&rev_hash) {
            return Ok(LogCommitment::sign(&self.key, DomainTag::RevocationCommitment, rev_hash, ts));
        }
        if let Some(&i) = self.pending_revs.get(&rev_hash) {
            let Queued::Revocation(_, c) = &self.queue[i] else {
                unreachable!()
            };
            return Ok(c.clone());
        }
        if rev.signer_role == SignerRole::RevocationKey
            && (self.state.rk_revocation(&target_hash).is_some() || self.pending_rk.contains(&target_hash))
        {
            return Err(LogError::DuplicateRkRevocation);
        }
        if self.queue.len() >= self.config.max_pending {
            return Err(LogError::QueueFull);
        }
        debug_assert!(rev.kind != RevocationKind::CaRevokeFrom || rev.rev_timestamp < Some(target.tbs.not_after));
        let commitment = LogCommitment::sign(&self.key, DomainTag::RevocationCommitment, rev_hash, self.next_update);
        if rev.signer_role == SignerRole::RevocationKey {
            self.pending_rk.insert(target_hash);
        }
        self.pending_revs.insert(rev_hash, self.queue.len());
        self.queue.push(Queued::Revocation(rev.clone(), commitment.clone()));
        Ok(commitment)
    }

    /// Queues the hash of a vendor-signed TCRL. The caller checks the
    /// vendor signature.
    pub fn submit_tcrl_hash(&mut self, hash: Digest) -> Result<LogCommitment, LogError> {
        if let Some(index) = self.state.tcrl_index(&hash) {
            let ts = self.state.time_tree().entry(index).unwrap().reg_timestamp;
            return Ok(LogCommitment::sign(&self.key, DomainTag::TcrlCommitment, hash, ts));
        }
        if let Some(c) = self.pending_tcrls.get(&hash) {
            return Ok(c.clone());
        }
        if self.queue.len() >= self.config.max_pending {
            return Err(LogError::QueueFull);
        }
        let c = LogCommitment::sign(&self.key, DomainTag::TcrlCommitment, hash, self.next_update);
        self.pending_tcrls.insert(hash, c.clone());
        self.queue.push(Queued::Tcrl(hash));
        Ok(c)
    }

    /// Runs the update scheduled at [`Log::next_update`]. Entries are
    /// stamped with the scheduled time, which is what commitments promised.
    pub fn run_update(&mut self, now: u64) -> Result<SignedRoot, LogError> {
        if now < self.next_update {
            return Err(LogError::UpdateNotDue { next: self.next_update });
        }
        let ts = self.next_update;
        let items: Vec<TimeTreeEntry> = std::mem::take(&mut self.queue)
            .into_iter()
            .map(|q| match q {
                Queued::Cert(c) => TimeTreeEntry::new(EntryKind::Cert, ts, c.canonical_bytes()),
                Queued::Revocation(r, _) => TimeTreeEntry::new(EntryKind::Revocation, ts, r.canonical_bytes()),
                Queued::Tcrl(h) => TimeTreeEntry::new(EntryKind::Tcrl, ts, h.0.to_vec()),
            })
            .collect();
        self.pending_certs.clear();
        self.pending_ca_keys.clear();
        self.pending_revs.clear();
        self.pending_rk.clear();
        self.pending_tcrls.clear();
        let info = self
            .state
            .apply_batch(items, ts, None)
            .expect("queued items were verified on submission");
        let root = SignedRoot::sign(&self.key, info.time_root, ts, info.end);
        self.roots.push(root.clone());
        self.next_update = ts + self.config.scheduling_period;
        Ok(root)
    }

    /// Runs every update due at `now`, including empty ones.
    pub fn catch_up(&mut self, now: u64) -> Vec<SignedRoot> {
        let mut out = Vec::new();
        while let Ok(r) = self.run_update(now) {
            out.push(r);
        }
        out
    }

    pub fn pending_revocations_for(&self, cert_hashes: &[Digest]) -> Vec<PendingRevocation> {
        self.queue
            .iter()
            .filter_map(|q| match q {
                Queued::Revocation(r, c) if cert_hashes.contains(&r.target_cert_hash) => Some(PendingRevocation {
                    revocation: r.clone(),
                    commitment: c.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    /// Presence proof for `request` (`H(C_x || t_x)`, root first) with the
    /// current signed root and revocations still waiting for an update.
    pub fn get_proof(&self, request: &[Digest]) -> Result<ProofResponse, LogError> {
        let signed_root = self.roots.last().ok_or(LogError::NoSignedRoot)?.clone();
        let proof = self.state.prove(request)?;
        let members: Vec<Digest> = request
            .iter()
            .filter_map(|id| self.state.cert_by_id(id).map(|r| r.cert.cert_hash()))
            .collect();
        Ok(ProofResponse {
            proof,
            signed_root,
            pending: self.pending_revocations_for(&members),
        })
    }

    pub fn get_consistency(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, LogError> {
        Ok(self.state.time_tree().consistency_proof(old_size, new_size)?)
    }

    pub fn entries(&self, from: u64, to: u64) -> &[TimeTreeEntry] {
        let all = self.state.time_tree().entries();
        let to = (to as usize).min(all.len());
        let from = (from as usize).min(to);
        &all[from..to]
    }

    /// Inclusion proof of a committed TCRL hash under the latest root.
    pub fn tcrl_inclusion(&self, hash: &Digest) -> Option<InclusionProof> {
        let index = self.state.tcrl_index(hash)?;
        self.state.time_tree().inclusion_proof(index).ok()
    }
}
