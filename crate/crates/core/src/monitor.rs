//! Full monitors (log replicas that re-verify every entry) and lightweight
//! monitors (a minimized TimeTree fed by delta updates).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cert::{verify_revocation, CertChain, Certificate, RevocationMessage, TrustRoots};
use crate::crypto::{hash_leaf, hash_node, Digest, DomainTag, PublicKey};
use crate::log::{ChainCommitment, ChainPresenceProof, EntryPolicy, Log, LogCommitment, LogState, SignedRoot};
use crate::merkle::split_point;
use crate::time_tree::{EntryKind, InclusionProof, TimeTreeEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MisbehaviorKind {
    IncorrectCC,
    SuppressedRevocation,
    ForkedRoots,
    InvalidEntry,
    RootMismatch,
}

/// Presence of a logged chain under a signed root; used as context in
/// evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenChain {
    pub chain: CertChain,
    pub timestamps_root_first: Vec<u64>,
    pub proof: ChainPresenceProof,
}

impl ProvenChain {
    fn verify(&self, signed_root: &SignedRoot) -> bool {
        self.proof
            .verify_chain(&self.chain, &self.timestamps_root_first, signed_root)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Evidence {
    /// Two validly signed, different roots for the same update time.
    Fork { first: SignedRoot, second: SignedRoot },
    /// A commitment whose promised registration did not happen: under a
    /// later root the certificate with the promised timestamp is absent.
    IncorrectCc {
        chain: CertChain,
        cc: ChainCommitment,
        signed_root: SignedRoot,
        absence: crate::log::AnchoredAbsence,
    },
    /// A committed revocation missing from its target's leaf under a root
    /// at or after the promised time.
    SuppressedRevocation {
        revocation: RevocationMessage,
        commitment: LogCommitment,
        signed_root: SignedRoot,
        target: ProvenChain,
    },
    /// A logged entry that should have been rejected. `context` proves the
    /// issuer chain (for certificates) or target chain (for revocations).
    InvalidEntry {
        signed_root: SignedRoot,
        entry: TimeTreeEntry,
        inclusion: InclusionProof,
        context: Option<ProvenChain>,
    },
    /// A signed root that differs from the root of the entries the log
    /// served for it.
    RootMismatch {
        signed_root: SignedRoot,
        entries: Vec<TimeTreeEntry>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisbehaviorReport {
    pub kind: MisbehaviorKind,
    pub evidence: Evidence,
}

fn entry_invalid(entry: &TimeTreeEntry, context: Option<&ProvenChain>, policy: &EntryPolicy) -> bool {
    match entry.kind {
        EntryKind::Cert => {
            let Ok(cert) = Certificate::from_canonical_bytes(&entry.payload) else {
                return true;
            };
            if cert.check_invariants().is_err() {
                return true;
            }
            if cert.is_self_signed() {
                return !policy.trust_roots.contains(&cert.cert_hash());
            }
            match context.and_then(|c| c.chain.leaf()) {
                Some(issuer) => {
                    issuer.subject_key_id() == cert.tbs.issuer_key_id
                        && (!issuer.is_ca() || !cert.signed_by(&issuer.tbs.subject_public_key))
                }
                None => false,
            }
        }
        EntryKind::Revocation => {
            let Ok(rev) = RevocationMessage::from_canonical_bytes(&entry.payload) else {
                return true;
            };
            match context {
                Some(c) => {
                    let target = c.chain.leaf().unwrap();
                    target.cert_hash() == rev.target_cert_hash
                        && !verify_revocation(&rev, target, &c.chain, &policy.vendor_public_key)
                }
                None => false,
            }
        }
        EntryKind::Tcrl => entry.payload.len() != 32,
        EntryKind::RevTreeRoot => entry.payload.len() != 32,
    }
}

impl MisbehaviorReport {
    /// Checks the evidence using only public keys and trust roots.
    pub fn verify(&self, log_pub: &PublicKey, policy: &EntryPolicy) -> bool {
        match (&self.kind, &self.evidence) {
            (MisbehaviorKind::ForkedRoots, Evidence::Fork { first, second }) => {
                first.timestamp == second.timestamp
                    && first.root != second.root
                    && first.verify(log_pub)
                    && second.verify(log_pub)
            }
            (
                MisbehaviorKind::IncorrectCC,
                Evidence::IncorrectCc {
                    chain,
                    cc,
                    signed_root,
                    absence,
                },
            ) => {
                let ts = cc.timestamps_root_first();
                let Some(promised) = cc.timestamps.iter().max() else {
                    return false;
                };
                let ids: Vec<Digest> = chain.certs.iter().zip(&ts).map(|(c, t)| c.id_hash(*t)).collect();
                let queried_prefix = &absence.absence.prefix;
                let level = queried_prefix.len();
                cc.verify(log_pub)
                    && chain.leaf().map(|l| l.cert_hash()) == Some(cc.leaf_cert_hash)
                    && ts.len() == chain.len()
                    && signed_root.verify(log_pub)
                    && signed_root.timestamp >= *promised
                    && level < ids.len()
                    && absence.absence.missing == ids[level]
                    && queried_prefix.iter().zip(&ids).all(|(p, id)| p.id_hash == *id)
                    && absence.verify(signed_root)
            }
            (
                MisbehaviorKind::SuppressedRevocation,
                Evidence::SuppressedRevocation {
                    revocation,
                    commitment,
                    signed_root,
                    target,
                },
            ) => {
                let leaf_level = target.proof.levels.last();
                commitment.hash == revocation.rev_hash()
                    && commitment.verify(DomainTag::RevocationCommitment, log_pub)
                    && signed_root.verify(log_pub)
                    && signed_root.timestamp >= commitment.timestamp
                    && target.chain.leaf().map(|l| l.cert_hash()) == Some(revocation.target_cert_hash)
                    && target.verify(signed_root)
                    && leaf_level.is_some_and(|l| l.revocations.iter().all(|r| r.revocation != *revocation))
            }
            (
                MisbehaviorKind::InvalidEntry,
                Evidence::InvalidEntry {
                    signed_root,
                    entry,
                    inclusion,
                    context,
                },
            ) => {
                signed_root.verify(log_pub)
                    && inclusion.tree_size == signed_root.tree_size
                    && inclusion.verify(&entry.to_bytes(), &signed_root.root)
                    && context.as_ref().is_none_or(|c| c.verify(signed_root))
                    && entry_invalid(entry, context.as_ref(), policy)
            }
            (MisbehaviorKind::RootMismatch, Evidence::RootMismatch { signed_root, entries }) => {
                let log = crate::merkle::MerkleLog::from_leaves(entries.iter().map(|e| e.leaf_hash()));
                signed_root.verify(log_pub)
                    && entries.len() as u64 == signed_root.tree_size
                    && log.root() != signed_root.root
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MonitorError {
    #[error("root mismatch")]
    RootMismatch(Option<Box<MisbehaviorReport>>),
    #[error("invalid entry {index}: {reason}")]
    InvalidEntry {
        index: u64,
        reason: String,
        report: Option<Box<MisbehaviorReport>>,
    },
    #[error("delta starts at {got}, local state ends at {expected}")]
    GapInDelta { expected: u64, got: u64 },
    #[error("signed root signature does not verify")]
    BadSignature,
    #[error("no root known for timestamp {0}")]
    UnknownTimestamp(u64),
    #[error("malformed delta: {0}")]
    MalformedDelta(String),
    #[error("log source: {0}")]
    Source(String),
}

/// Where a full monitor gets log data from.
pub trait LogSource {
    fn latest_root(&self) -> Result<Option<SignedRoot>, String>;
    fn entries(&self, from: u64, to: u64) -> Result<Vec<TimeTreeEntry>, String>;
}

impl LogSource for Log {
    fn latest_root(&self) -> Result<Option<SignedRoot>, String> {
        Ok(Log::latest_root(self).cloned())
    }

    fn entries(&self, from: u64, to: u64) -> Result<Vec<TimeTreeEntry>, String> {
        Ok(Log::entries(self, from, to).to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncReport {
    pub new_entries: u64,
    pub batches: usize,
    pub tree_size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RootCheck {
    Consistent,
    Fork(Box<MisbehaviorReport>),
}

/// A complete replica of a log.
#[derive(Debug, Clone)]
pub struct FullMonitor {
    state: LogState,
    policy: EntryPolicy,
    log_pub: PublicKey,
    roots: BTreeMap<u64, SignedRoot>,
}

impl FullMonitor {
    pub fn new(policy: EntryPolicy, log_pub: PublicKey) -> Self {
        FullMonitor {
            state: LogState::new(),
            policy,
            log_pub,
            roots: BTreeMap::new(),
        }
    }

    pub fn state(&self) -> &LogState {
        &self.state
    }

    pub fn roots(&self) -> impl Iterator<Item = &SignedRoot> {
        self.roots.values()
    }

    pub fn tree_size(&self) -> u64 {
        self.state.time_tree().size()
    }

    /// Downloads entries up to the log's current signed root, replays and
    /// re-verifies them, and compares the recomputed root.
    pub fn full_sync(&mut self, source: &impl LogSource) -> Result<SyncReport, MonitorError> {
        let Some(root) = source.latest_root().map_err(MonitorError::Source)? else {
            return Ok(SyncReport {
                new_entries: 0,
                batches: 0,
                tree_size: 0,
            });
        };
        let from = self.tree_size();
        let entries = source.entries(from, root.tree_size).map_err(MonitorError::Source)?;
        self.apply(&entries, &root)
    }

    /// Applies entries `[tree_size, signed_root.tree_size)` received from
    /// the log and checks them against `signed_root`.
    pub fn apply(&mut self, entries: &[TimeTreeEntry], signed_root: &SignedRoot) -> Result<SyncReport, MonitorError> {
        if !signed_root.verify(&self.log_pub) {
            return Err(MonitorError::BadSignature);
        }
        let from = self.tree_size();
        if from + entries.len() as u64 != signed_root.tree_size {
            return Err(MonitorError::GapInDelta {
                expected: signed_root.tree_size,
                got: from + entries.len() as u64,
            });
        }
        let (batches, tail) = LogState::split_batches(entries);
        if !tail.is_empty() {
            return Err(MonitorError::MalformedDelta("entries end mid-batch".into()));
        }
        let mut next = self.state.clone();
        for batch in &batches {
            if let Err(e) = next.replay_batch(batch, Some(&self.policy)) {
                let report = self.invalid_entry_report(entries, from, e.index, signed_root);
                return Err(MonitorError::InvalidEntry {
                    index: e.index,
                    reason: e.reason,
                    report: report.map(Box::new),
                });
            }
        }
        let last_ts = next.last_batch().map(|b| b.timestamp);
        if next.time_tree().root() != signed_root.root || last_ts != Some(signed_root.timestamp) {
            let mut all = self.state.time_tree().entries().to_vec();
            all.extend_from_slice(entries);
            return Err(MonitorError::RootMismatch(Some(Box::new(MisbehaviorReport {
                kind: MisbehaviorKind::RootMismatch,
                evidence: Evidence::RootMismatch {
                    signed_root: signed_root.clone(),
                    entries: all,
                },
            }))));
        }
        self.state = next;
        self.roots.insert(signed_root.timestamp, signed_root.clone());
        Ok(SyncReport {
            new_entries: entries.len() as u64,
            batches: batches.len(),
            tree_size: self.tree_size(),
        })
    }

    /// Builds third-party evidence for an invalid entry. The log's claimed
    /// state is rebuilt without verification so the entry's issuer or
    /// target chain can be proven under the same signed root.
    fn invalid_entry_report(&self, entries: &[TimeTreeEntry], from: u64, index: u64, signed_root: &SignedRoot) -> Option<MisbehaviorReport> {
        let entry = entries.get(index.checked_sub(from)? as usize)?.clone();
        let mut shadow = self.state.clone();
        for batch in LogState::split_batches(entries).0 {
            shadow.replay_batch(batch, None).ok()?;
        }
        if shadow.time_tree().root() != signed_root.root {
            return None;
        }
        let inclusion = shadow.time_tree().inclusion_proof(index).ok()?;
        let context_cert = match entry.kind {
            EntryKind::Revocation => RevocationMessage::from_canonical_bytes(&entry.payload)
                .ok()
                .map(|r| r.target_cert_hash),
            EntryKind::Cert => Certificate::from_canonical_bytes(&entry.payload)
                .ok()
                .filter(|c| !c.is_self_signed())
                .and_then(|c| shadow.ca_by_key(&c.tbs.issuer_key_id).map(|r| r.cert.cert_hash())),
            _ => None,
        };
        let context = context_cert.and_then(|h| prove_in(&shadow, &h));
        Some(MisbehaviorReport {
            kind: MisbehaviorKind::InvalidEntry,
            evidence: Evidence::InvalidEntry {
                signed_root: signed_root.clone(),
                entry,
                inclusion,
                context,
            },
        })
    }

    /// Compares a root seen by a client with the replica's root for the
    /// same update time.
    pub fn check_root(&self, client_root: &SignedRoot) -> Result<RootCheck, MonitorError> {
        let ours = self
            .roots
            .get(&client_root.timestamp)
            .ok_or(MonitorError::UnknownTimestamp(client_root.timestamp))?;
        if ours.root == client_root.root {
            return Ok(RootCheck::Consistent);
        }
        Ok(RootCheck::Fork(Box::new(MisbehaviorReport {
            kind: MisbehaviorKind::ForkedRoots,
            evidence: Evidence::Fork {
                first: ours.clone(),
                second: client_root.clone(),
            },
        })))
    }

    /// Checks that a commitment's promise was kept as of the replica's
    /// latest root.
    pub fn check_cc(&self, chain: &CertChain, cc: &ChainCommitment) -> Option<MisbehaviorReport> {
        let signed_root = self.roots.values().next_back()?;
        let promised = *cc.timestamps.iter().max()?;
        if signed_root.timestamp < promised || !cc.verify(&self.log_pub) {
            return None;
        }
        let ids: Vec<Digest> = chain
            .certs
            .iter()
            .zip(cc.timestamps_root_first())
            .map(|(c, t)| c.id_hash(t))
            .collect();
        match self.state.prove(&ids) {
            Err(crate::log::LogError::UnknownLeaf { absence, .. }) => Some(MisbehaviorReport {
                kind: MisbehaviorKind::IncorrectCC,
                evidence: Evidence::IncorrectCc {
                    chain: chain.clone(),
                    cc: cc.clone(),
                    signed_root: signed_root.clone(),
                    absence: *absence,
                },
            }),
            _ => None,
        }
    }

    /// Checks that a committed revocation was merged by its promised time.
    pub fn check_revocation_commitment(
        &self,
        revocation: &RevocationMessage,
        commitment: &LogCommitment,
    ) -> Option<MisbehaviorReport> {
        let signed_root = self.roots.values().next_back()?;
        if signed_root.timestamp < commitment.timestamp
            || commitment.hash != revocation.rev_hash()
            || !commitment.verify(DomainTag::RevocationCommitment, &self.log_pub)
            || self.state.has_revocation(&commitment.hash)
        {
            return None;
        }
        let target = prove_in(&self.state, &revocation.target_cert_hash)?;
        Some(MisbehaviorReport {
            kind: MisbehaviorKind::SuppressedRevocation,
            evidence: Evidence::SuppressedRevocation {
                revocation: revocation.clone(),
                commitment: commitment.clone(),
                signed_root: signed_root.clone(),
                target,
            },
        })
    }

    /// Proves a logged chain under the replica's latest root.
    pub fn prove_chain(&self, cert_hash: &Digest) -> Option<ProvenChain> {
        prove_in(&self.state, cert_hash)
    }
}

fn prove_in(state: &LogState, cert_hash: &Digest) -> Option<ProvenChain> {
    let chain = state.chain_of(cert_hash)?;
    let timestamps: Vec<u64> = state.chain_timestamps(&chain)?.into_iter().rev().collect();
    let ids: Vec<Digest> = chain.certs.iter().zip(&timestamps).map(|(c, t)| c.id_hash(*t)).collect();
    let proof = state.prove(&ids).ok()?;
    Some(ProvenChain {
        chain,
        timestamps_root_first: timestamps,
        proof,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaKind {
    /// Digest of a complete aligned subtree of prunable entries.
    Cover,
    /// Leaf hash of one entry.
    Hash,
    /// The complete entry bytes.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaItem {
    pub kind: DeltaKind,
    pub level: u8,
    pub index: u64,
    #[serde(with = "crate::serde_b64")]
    pub payload: Vec<u8>,
}

impl DeltaItem {
    fn range(&self) -> (u64, u64) {
        let lo = self.index << self.level;
        (lo, lo + (1u64 << self.level))
    }

    fn digest(&self) -> Option<Digest> {
        match self.kind {
            DeltaKind::Full => Some(hash_leaf(&self.payload)),
            _ => self.payload.as_slice().try_into().ok().map(Digest),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaBatch {
    pub ts: u64,
    pub items: Vec<DeltaItem>,
}

/// New entries since a monitor's horizon, minimized, plus covers that let
/// the monitor compact ranges it already stores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaUpdate {
    pub from_size: u64,
    pub to_size: u64,
    pub batches: Vec<DeltaBatch>,
    #[serde(default)]
    pub compactions: Vec<DeltaItem>,
    pub signed_root: SignedRoot,
}

/// Which entries of `state` a lightweight monitor may drop at `now`:
/// certificates whose whole logged subtree expired more than `grace`
/// ago, and revocations of such certificates.
pub fn prunable_entries(state: &LogState, now: u64, grace: u64) -> Vec<bool> {
    let mut live: HashMap<Digest, u64> = HashMap::new();
    let mut by_index: Vec<&crate::log::CertRecord> = state.certs().collect();
    by_index.sort_by_key(|r| std::cmp::Reverse(r.entry_index));
    for r in by_index {
        let h = r.cert.cert_hash();
        let own = live.get(&h).copied().unwrap_or(0).max(r.cert.tbs.not_after);
        live.insert(h, own);
        if let Some(p) = r.parent {
            let e = live.entry(p).or_insert(0);
            *e = (*e).max(own);
        }
    }
    let expired = |h: &Digest| live.get(h).is_some_and(|&t| t.saturating_add(grace) <= now);
    state
        .time_tree()
        .entries()
        .iter()
        .map(|e| match e.kind {
            EntryKind::Cert => expired(&hash_leaf(&e.payload)),
            EntryKind::Revocation => RevocationMessage::from_canonical_bytes(&e.payload)
                .map(|r| expired(&r.target_cert_hash))
                .unwrap_or(false),
            EntryKind::RevTreeRoot | EntryKind::Tcrl => false,
        })
        .collect()
}

/// Maximal aligned blocks of prunable leaves with at least two leaves,
/// as `(level, index)`.
pub fn maximal_blocks(prunable: &[bool]) -> Vec<(u8, u64)> {
    let n = prunable.len() as u64;
    let mut prefix = vec![0u64; prunable.len() + 1];
    for (i, p) in prunable.iter().enumerate() {
        prefix[i + 1] = prefix[i] + *p as u64;
    }
    let all = |lo: u64, hi: u64| prefix[hi as usize] - prefix[lo as usize] == hi - lo;
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut level = 0u8;
        while level < 63 {
            let size = 1u64 << (level + 1);
            if i % size != 0 || i + size > n || !all(i, i + size) {
                break;
            }
            level += 1;
        }
        if level > 0 {
            out.push((level, i >> level));
        }
        i += 1 << level;
    }
    out
}

/// Builds the delta a lightweight monitor at `from_size` needs to reach
/// `signed_root`, which must be the log's latest root.
pub fn build_delta(state: &LogState, signed_root: &SignedRoot, from_size: u64, now: u64, grace: u64) -> DeltaUpdate {
    let to = signed_root.tree_size;
    let entries = &state.time_tree().entries()[..to as usize];
    let prunable = prunable_entries(state, now, grace);
    let blocks = maximal_blocks(&prunable[..to as usize]);
    let hashes = state.time_tree().hashes();

    let mut covered = vec![false; to as usize];
    let mut new_covers: BTreeMap<u64, DeltaItem> = BTreeMap::new();
    let mut compactions = Vec::new();
    for &(level, index) in &blocks {
        let lo = index << level;
        let hi = lo + (1u64 << level);
        let item = DeltaItem {
            kind: DeltaKind::Cover,
            level,
            index,
            payload: hashes.range_hash(lo, hi).0.to_vec(),
        };
        if lo >= from_size {
            covered[lo as usize..hi as usize].fill(true);
            new_covers.insert(hi - 1, item);
        } else {
            compactions.push(item);
        }
    }

    let mut batches: Vec<DeltaBatch> = Vec::new();
    for i in from_size..to {
        let e = &entries[i as usize];
        if batches.last().is_none_or(|b| b.ts != e.reg_timestamp) {
            batches.push(DeltaBatch {
                ts: e.reg_timestamp,
                items: Vec::new(),
            });
        }
        let items = &mut batches.last_mut().unwrap().items;
        if let Some(cover) = new_covers.remove(&i) {
            items.push(cover);
            continue;
        }
        if covered[i as usize] {
            continue;
        }
        let item = if e.kind == EntryKind::Revocation {
            DeltaItem {
                kind: DeltaKind::Full,
                level: 0,
                index: i,
                payload: e.to_bytes(),
            }
        } else {
            DeltaItem {
                kind: DeltaKind::Hash,
                level: 0,
                index: i,
                payload: hashes.leaf(i).unwrap().0.to_vec(),
            }
        };
        items.push(item);
    }
    DeltaUpdate {
        from_size,
        to_size: to,
        batches,
        compactions,
        signed_root: signed_root.clone(),
    }
}

/// Bytes a stored node costs: level, index and digest.
pub const NODE_RECORD_BYTES: usize = 1 + 8 + 32;

/// Minimized TimeTree: leaf hashes, covering hashes for pruned ranges, and
/// complete revocation entries.
#[derive(Debug, Clone)]
pub struct LightMonitor {
    log_pub: PublicKey,
    nodes: BTreeMap<(u64, u8), Digest>,
    full: BTreeMap<u64, TimeTreeEntry>,
    revocations: HashMap<Digest, Vec<(RevocationMessage, u64)>>,
    size: u64,
    roots: BTreeMap<u64, SignedRoot>,
}

type NodeKey = (u64, u8);

fn node_key(level: u8, index: u64) -> NodeKey {
    (index << level, level)
}

impl LightMonitor {
    pub fn new(log_pub: PublicKey) -> Self {
        LightMonitor {
            log_pub,
            nodes: BTreeMap::new(),
            full: BTreeMap::new(),
            revocations: HashMap::new(),
            size: 0,
            roots: BTreeMap::new(),
        }
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn latest_root(&self) -> Option<&SignedRoot> {
        self.roots.values().next_back()
    }

    /// Persisted bytes: one record per node plus complete entries.
    pub fn storage_bytes(&self) -> usize {
        self.nodes.len() * NODE_RECORD_BYTES + self.full.values().map(|e| e.to_bytes().len()).sum::<usize>()
    }

    /// Revocations received in full for a certificate.
    pub fn revocations_of(&self, cert_hash: &Digest) -> &[(RevocationMessage, u64)] {
        self.revocations.get(cert_hash).map_or(&[], |v| v.as_slice())
    }

    pub fn stores_leaf(&self, index: u64) -> bool {
        self.nodes.contains_key(&(index, 0))
    }

    fn lookup(&self, staged: &HashMap<NodeKey, Digest>, key: NodeKey) -> Option<Digest> {
        staged.get(&key).or_else(|| self.nodes.get(&key)).copied()
    }

    fn range_hash(&self, staged: &HashMap<NodeKey, Digest>, lo: u64, hi: u64) -> Option<Digest> {
        let n = hi - lo;
        if n.is_power_of_two() && lo.is_multiple_of(n) {
            let level = n.trailing_zeros() as u8;
            if let Some(d) = self.lookup(staged, (lo, level)) {
                return Some(d);
            }
            if n == 1 {
                return None;
            }
        }
        let k = split_point(n);
        Some(hash_node(&self.range_hash(staged, lo, lo + k)?, &self.range_hash(staged, lo + k, hi)?))
    }

    pub fn root_at(&self, size: u64) -> Option<Digest> {
        if size == 0 || size > self.size {
            return None;
        }
        self.range_hash(&HashMap::new(), 0, size)
    }

    /// Audit path for a retained leaf, computed from stored nodes only.
    pub fn inclusion_path(&self, index: u64) -> Option<Vec<Digest>> {
        if !self.stores_leaf(index) {
            return None;
        }
        let staged = HashMap::new();
        let mut path = Vec::new();
        let (mut lo, mut hi) = (0, self.size);
        let mut frames = Vec::new();
        while hi - lo > 1 {
            let k = split_point(hi - lo);
            if index < lo + k {
                frames.push((lo + k, hi));
                hi = lo + k;
            } else {
                frames.push((lo, lo + k));
                lo += k;
            }
        }
        for (a, b) in frames.into_iter().rev() {
            path.push(self.range_hash(&staged, a, b)?);
        }
        Some(path)
    }

    /// Applies a delta after checking it tiles the new range and that the
    /// resulting root equals the delta's signed root.
    pub fn apply_delta(&mut self, delta: &DeltaUpdate) -> Result<(), MonitorError> {
        if delta.from_size != self.size {
            return Err(MonitorError::GapInDelta {
                expected: self.size,
                got: delta.from_size,
            });
        }
        if !delta.signed_root.verify(&self.log_pub) {
            return Err(MonitorError::BadSignature);
        }
        if delta.to_size != delta.signed_root.tree_size || delta.to_size < delta.from_size {
            return Err(MonitorError::MalformedDelta("size does not match signed root".into()));
        }
        let mut staged: HashMap<NodeKey, Digest> = HashMap::new();
        let mut full = Vec::new();
        let mut cursor = delta.from_size;
        for item in delta.batches.iter().flat_map(|b| &b.items) {
            let (lo, hi) = item.range();
            if lo != cursor || hi > delta.to_size || (item.kind != DeltaKind::Cover && item.level != 0) {
                return Err(MonitorError::MalformedDelta(format!("item at {lo} does not continue at {cursor}")));
            }
            cursor = hi;
            let d = item
                .digest()
                .ok_or_else(|| MonitorError::MalformedDelta("bad digest length".into()))?;
            staged.insert(node_key(item.level, item.index), d);
            if item.kind == DeltaKind::Full {
                let e = TimeTreeEntry::from_bytes(&item.payload)
                    .map_err(|e| MonitorError::MalformedDelta(e.to_string()))?;
                full.push((item.index, e));
            }
        }
        if cursor != delta.to_size {
            return Err(MonitorError::MalformedDelta("delta does not reach its signed size".into()));
        }
        let root = if delta.to_size == 0 {
            None
        } else {
            self.range_hash(&staged, 0, delta.to_size)
        };
        if root != Some(delta.signed_root.root) {
            return Err(MonitorError::RootMismatch(None));
        }
        self.nodes.extend(staged);
        for (index, e) in full {
            if e.kind == EntryKind::Revocation {
                if let Ok(r) = RevocationMessage::from_canonical_bytes(&e.payload) {
                    self.revocations
                        .entry(r.target_cert_hash)
                        .or_default()
                        .push((r, e.reg_timestamp));
                }
            }
            self.full.insert(index, e);
        }
        self.size = delta.to_size;
        self.roots
            .insert(delta.signed_root.timestamp, delta.signed_root.clone());
        for c in &delta.compactions {
            self.compact(c)?;
        }
        Ok(())
    }

    /// Replaces stored nodes under an aligned range with its covering hash,
    /// after recomputing that hash locally.
    fn compact(&mut self, item: &DeltaItem) -> Result<(), MonitorError> {
        let (lo, hi) = item.range();
        if item.kind != DeltaKind::Cover || item.level == 0 || hi > self.size {
            return Err(MonitorError::MalformedDelta("bad compaction".into()));
        }
        let key = (lo, item.level);
        let already = (item.level..64).any(|l| self.nodes.contains_key(&(lo & !((1u64 << l) - 1), l)));
        if already {
            return Ok(());
        }
        let claimed = item.digest();
        let ours = self.range_hash(&HashMap::new(), lo, hi);
        if ours.is_none() || ours != claimed {
            return Err(MonitorError::RootMismatch(None));
        }
        let inner: Vec<NodeKey> = self.nodes.range((lo, 0)..(hi, 0)).map(|(k, _)| *k).collect();
        for k in inner {
            self.nodes.remove(&k);
        }
        let dropped: Vec<u64> = self.full.range(lo..hi).map(|(i, _)| *i).collect();
        for i in dropped {
            if let Some(e) = self.full.remove(&i) {
                if let Ok(r) = RevocationMessage::from_canonical_bytes(&e.payload) {
                    if let Some(v) = self.revocations.get_mut(&r.target_cert_hash) {
                        v.retain(|(x, _)| *x != r);
                    }
                }
            }
        }
        self.nodes.insert(key, ours.unwrap());
        Ok(())
    }

    /// Verifies a client-supplied proof against the minimized state: the
    /// proof must be anchored under a root this monitor has verified.
    pub fn verify_client_proof(
        &self,
        chain: &CertChain,
        cc: &ChainCommitment,
        proof: &ChainPresenceProof,
        signed_root: &SignedRoot,
    ) -> bool {
        let known = self
            .roots
            .get(&signed_root.timestamp)
            .is_some_and(|r| r.root == signed_root.root);
        known
            && signed_root.verify(&self.log_pub)
            && cc.verify(&self.log_pub)
            && proof.verify_chain(chain, &cc.timestamps_root_first(), signed_root)
    }
}

/// Trust roots plus vendor key, for report verification.
pub fn policy(trust_roots: TrustRoots, vendor_public_key: PublicKey) -> EntryPolicy {
    EntryPolicy {
        trust_roots,
        vendor_public_key,
    }
}
