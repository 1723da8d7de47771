//! Hierarchical Merkle forest mirroring the CA hierarchy.
//!
//! The top subtree holds root certificates. Every CA leaf links the subtree
//! of its children. Leaves within a subtree are sorted by
//! `id_hash = H(C_x || t_x)`, which makes both presence proofs for a whole
//! chain and absence proofs (via adjacent brackets) cheap.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::cert::RevocationMessage;
use crate::crypto::{hash_leaf, Digest};
use crate::encoding::Encoder;
use crate::merkle::{root_from_path, MerkleLog};

/// Root of a subtree with no leaves.
pub fn empty_subtree_root() -> Digest {
    hash_leaf(&[0x02])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RevTreeError {
    #[error("certificate {0} has no registered parent")]
    OrphanCertificate(Digest),
    #[error("no leaf for the query at level {0}")]
    NotFoundAtLevel(usize),
    #[error("certificate {0} is not in the tree")]
    UnknownCertificate(Digest),
    #[error("queried hash is present in the subtree")]
    ActuallyPresent,
}

/// A revocation together with the time it was appended to the log.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LoggedRevocationWire", into = "LoggedRevocationWire")]
pub struct LoggedRevocation {
    pub revocation: RevocationMessage,
    pub reg_ts: u64,
}

#[derive(Serialize, Deserialize)]
struct LoggedRevocationWire {
    #[serde(with = "crate::serde_b64")]
    bytes: Vec<u8>,
    reg_ts: u64,
}

impl From<LoggedRevocation> for LoggedRevocationWire {
    fn from(r: LoggedRevocation) -> Self {
        LoggedRevocationWire {
            bytes: r.revocation.canonical_bytes(),
            reg_ts: r.reg_ts,
        }
    }
}

impl TryFrom<LoggedRevocationWire> for LoggedRevocation {
    type Error = crate::encoding::DecodeError;
    fn try_from(w: LoggedRevocationWire) -> Result<Self, Self::Error> {
        Ok(LoggedRevocation {
            revocation: RevocationMessage::from_canonical_bytes(&w.bytes)?,
            reg_ts: w.reg_ts,
        })
    }
}

/// `hash_leaf(id_hash || rev_count(2) || per-rev(len || rev_bytes || reg_ts) || child_root_or_zeros)`
pub fn rev_leaf_hash(id_hash: &Digest, revocations: &[LoggedRevocation], child_root: Option<&Digest>) -> Digest {
    let mut enc = Encoder::new();
    enc.digest(id_hash).u16(revocations.len() as u16);
    for r in revocations {
        enc.bytes(&r.revocation.canonical_bytes()).u64(r.reg_ts);
    }
    enc.digest(child_root.unwrap_or(&Digest::ZERO));
    hash_leaf(&enc.finish())
}

/// One RevTree leaf and its audit path inside its subtree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelProof {
    pub id_hash: Digest,
    pub revocations: Vec<LoggedRevocation>,
    pub child_root: Option<Digest>,
    pub leaf_index: u64,
    pub subtree_size: u64,
    pub path: Vec<Digest>,
}

impl LevelProof {
    pub fn leaf_hash(&self) -> Digest {
        rev_leaf_hash(&self.id_hash, &self.revocations, self.child_root.as_ref())
    }

    pub fn subtree_root(&self) -> Option<Digest> {
        root_from_path(self.leaf_hash(), self.leaf_index, self.subtree_size, &self.path)
    }
}

/// Folds root→leaf level proofs into the forest root, checking that each
/// level's subtree root is the parent leaf's `child_root`.
pub fn forest_root_from_levels(levels: &[LevelProof]) -> Option<Digest> {
    let (last, upper) = levels.split_last()?;
    let mut root = last.subtree_root()?;
    for level in upper.iter().rev() {
        if level.child_root != Some(root) {
            return None;
        }
        root = level.subtree_root()?;
    }
    Some(root)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SubtreeAbsence {
    /// The subtree has no leaves.
    Empty,
    /// Adjacent leaves with `left.id_hash < missing < right.id_hash`; a
    /// missing side means the query lies beyond that end of the subtree.
    Brackets {
        left: Option<LevelProof>,
        right: Option<LevelProof>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsenceProof {
    pub missing: Digest,
    /// Presence proofs root→down to the CA whose subtree was searched;
    /// empty when the top subtree was searched.
    pub prefix: Vec<LevelProof>,
    pub subtree: SubtreeAbsence,
}

impl AbsenceProof {
    /// Returns the forest root this proof commits to, or `None` if the
    /// proof is malformed or does not establish absence.
    pub fn forest_root(&self) -> Option<Digest> {
        let subtree_root = match &self.subtree {
            SubtreeAbsence::Empty => None,
            SubtreeAbsence::Brackets { left, right } => Some(self.bracket_root(left.as_ref(), right.as_ref())?),
        };
        match (self.prefix.last(), subtree_root) {
            (None, None) => Some(empty_subtree_root()),
            (None, Some(r)) => Some(r),
            (Some(owner), sub) => {
                if owner.child_root != sub {
                    return None;
                }
                forest_root_from_levels(&self.prefix)
            }
        }
    }

    fn bracket_root(&self, left: Option<&LevelProof>, right: Option<&LevelProof>) -> Option<Digest> {
        let m = &self.missing;
        match (left, right) {
            (None, None) => None,
            (Some(l), None) => {
                (l.id_hash < *m && l.leaf_index + 1 == l.subtree_size).then_some(())?;
                l.subtree_root()
            }
            (None, Some(r)) => {
                (*m < r.id_hash && r.leaf_index == 0).then_some(())?;
                r.subtree_root()
            }
            (Some(l), Some(r)) => {
                let ordered = l.id_hash < *m && *m < r.id_hash;
                let adjacent = l.leaf_index + 1 == r.leaf_index && l.subtree_size == r.subtree_size;
                (ordered && adjacent).then_some(())?;
                let root = l.subtree_root()?;
                (r.subtree_root()? == root).then_some(root)
            }
        }
    }
}

/// Input record for a full rebuild.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisteredCert {
    pub cert_hash: Digest,
    pub id_hash: Digest,
    pub parent: Option<Digest>,
    pub revocations: Vec<LoggedRevocation>,
}

#[derive(Debug, Clone)]
struct CertNode {
    id_hash: Digest,
    revocations: Vec<LoggedRevocation>,
    /// Subtree this certificate's leaf lives in.
    home: usize,
    /// Subtree of this certificate's children.
    children: Option<usize>,
}

#[derive(Debug, Clone)]
struct Subtree {
    depth: usize,
    owner: Option<Digest>,
    /// `(id_hash, cert_hash)` sorted by `id_hash`.
    members: Vec<(Digest, Digest)>,
    merkle: MerkleLog,
    root: Digest,
}

impl Subtree {
    fn new(depth: usize, owner: Option<Digest>) -> Self {
        Subtree {
            depth,
            owner,
            members: Vec::new(),
            merkle: MerkleLog::new(),
            root: empty_subtree_root(),
        }
    }

    fn find(&self, id_hash: &Digest) -> Result<usize, usize> {
        self.members.binary_search_by(|(id, _)| id.cmp(id_hash))
    }
}

#[derive(Debug, Clone)]
pub struct RevTree {
    nodes: HashMap<Digest, CertNode>,
    subtrees: Vec<Subtree>,
    dirty: BTreeSet<(usize, usize)>,
}

impl Default for RevTree {
    fn default() -> Self {
        RevTree {
            nodes: HashMap::new(),
            subtrees: vec![Subtree::new(0, None)],
            dirty: BTreeSet::new(),
        }
    }
}

impl RevTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, cert_hash: &Digest) -> bool {
        self.nodes.contains_key(cert_hash)
    }

    pub fn revocations(&self, cert_hash: &Digest) -> Option<&[LoggedRevocation]> {
        self.nodes.get(cert_hash).map(|n| n.revocations.as_slice())
    }

    /// Root of the top subtree. Call [`RevTree::commit`] first after
    /// mutations.
    pub fn root(&self) -> Digest {
        debug_assert!(self.dirty.is_empty(), "uncommitted RevTree changes");
        self.subtrees[0].root
    }

    fn child_root(&self, node: &CertNode) -> Option<Digest> {
        node.children.map(|s| self.subtrees[s].root)
    }

    fn leaf_hash_of(&self, cert_hash: &Digest) -> Digest {
        let n = &self.nodes[cert_hash];
        rev_leaf_hash(&n.id_hash, &n.revocations, self.child_root(n).as_ref())
    }

    fn subtree_for_children(&mut self, parent: &Digest) -> Result<usize, RevTreeError> {
        let node = self
            .nodes
            .get(parent)
            .ok_or(RevTreeError::OrphanCertificate(*parent))?;
        if let Some(s) = node.children {
            return Ok(s);
        }
        let depth = self.subtrees[node.home].depth + 1;
        let idx = self.subtrees.len();
        self.subtrees.push(Subtree::new(depth, Some(*parent)));
        self.nodes.get_mut(parent).unwrap().children = Some(idx);
        Ok(idx)
    }

    /// Places a certificate under `parent` (or in the top subtree). Returns
    /// `false` if it was already present.
    pub fn insert(&mut self, cert_hash: Digest, id_hash: Digest, parent: Option<Digest>) -> Result<bool, RevTreeError> {
        if self.nodes.contains_key(&cert_hash) {
            return Ok(false);
        }
        let home = match parent {
            None => 0,
            Some(p) => self
                .subtree_for_children(&p)
                .map_err(|_| RevTreeError::OrphanCertificate(cert_hash))?,
        };
        let st = &mut self.subtrees[home];
        let pos = st.find(&id_hash).unwrap_or_else(|p| p);
        st.members.insert(pos, (id_hash, cert_hash));
        self.dirty.insert((st.depth, home));
        self.nodes.insert(
            cert_hash,
            CertNode {
                id_hash,
                revocations: Vec::new(),
                home,
                children: None,
            },
        );
        Ok(true)
    }

    pub fn add_revocation(&mut self, cert_hash: &Digest, rev: LoggedRevocation) -> Result<(), RevTreeError> {
        let node = self
            .nodes
            .get_mut(cert_hash)
            .ok_or(RevTreeError::UnknownCertificate(*cert_hash))?;
        let pos = node.revocations.partition_point(|r| r.reg_ts <= rev.reg_ts);
        node.revocations.insert(pos, rev);
        let home = node.home;
        self.dirty.insert((self.subtrees[home].depth, home));
        Ok(())
    }

    /// Recomputes dirty subtrees deepest first and returns the forest root.
    pub fn commit(&mut self) -> Digest {
        while let Some((_, idx)) = self.dirty.pop_last() {
            let hashes: Vec<Digest> = self.subtrees[idx]
                .members
                .iter()
                .map(|(_, c)| self.leaf_hash_of(c))
                .collect();
            let merkle = MerkleLog::from_leaves(hashes);
            let root = if merkle.is_empty() {
                empty_subtree_root()
            } else {
                merkle.root()
            };
            let st = &mut self.subtrees[idx];
            st.merkle = merkle;
            let changed = st.root != root;
            st.root = root;
            if let (true, Some(owner)) = (changed, st.owner) {
                let home = self.nodes[&owner].home;
                self.dirty.insert((self.subtrees[home].depth, home));
            }
        }
        self.subtrees[0].root
    }

    /// Builds the forest from scratch, bottom-up, without the incremental
    /// dirty tracking.
    pub fn rebuild(certs: impl IntoIterator<Item = RegisteredCert>) -> Result<RevTree, RevTreeError> {
        let certs: Vec<RegisteredCert> = certs.into_iter().collect();
        let known: HashMap<Digest, usize> = certs.iter().enumerate().map(|(i, c)| (c.cert_hash, i)).collect();
        let mut children: HashMap<Option<Digest>, Vec<usize>> = HashMap::new();
        for (i, c) in certs.iter().enumerate() {
            if let Some(p) = &c.parent {
                if !known.contains_key(p) {
                    return Err(RevTreeError::OrphanCertificate(c.cert_hash));
                }
            }
            children.entry(c.parent).or_default().push(i);
        }
        let mut tree = RevTree {
            nodes: HashMap::with_capacity(certs.len()),
            subtrees: Vec::new(),
            dirty: BTreeSet::new(),
        };
        tree.build_subtree(None, 0, &certs, &children);
        if tree.nodes.len() != certs.len() {
            // Parent cycles leave certificates unreachable from any root.
            let missing = certs.iter().find(|c| !tree.nodes.contains_key(&c.cert_hash)).unwrap();
            return Err(RevTreeError::OrphanCertificate(missing.cert_hash));
        }
        Ok(tree)
    }

    fn build_subtree(
        &mut self,
        owner: Option<Digest>,
        depth: usize,
        certs: &[RegisteredCert],
        children: &HashMap<Option<Digest>, Vec<usize>>,
    ) -> usize {
        let idx = self.subtrees.len();
        self.subtrees.push(Subtree::new(depth, owner));
        let mut members: Vec<&RegisteredCert> = children
            .get(&owner)
            .map(|v| v.iter().map(|&i| &certs[i]).collect())
            .unwrap_or_default();
        members.sort_by_key(|a| a.id_hash);
        members.dedup_by(|a, b| a.cert_hash == b.cert_hash);
        let mut leaf_hashes = Vec::with_capacity(members.len());
        for c in &members {
            let child_subtree = children
                .contains_key(&Some(c.cert_hash))
                .then(|| self.build_subtree(Some(c.cert_hash), depth + 1, certs, children));
            let mut revocations = c.revocations.clone();
            revocations.sort_by_key(|r| r.reg_ts);
            let child_root = child_subtree.map(|s| self.subtrees[s].root);
            leaf_hashes.push(rev_leaf_hash(&c.id_hash, &revocations, child_root.as_ref()));
            self.nodes.insert(
                c.cert_hash,
                CertNode {
                    id_hash: c.id_hash,
                    revocations,
                    home: idx,
                    children: child_subtree,
                },
            );
        }
        let st = &mut self.subtrees[idx];
        st.members = members.iter().map(|c| (c.id_hash, c.cert_hash)).collect();
        st.merkle = MerkleLog::from_leaves(leaf_hashes);
        if !st.merkle.is_empty() {
            st.root = st.merkle.root();
        }
        idx
    }

    fn level_proof(&self, subtree: usize, pos: usize) -> LevelProof {
        let st = &self.subtrees[subtree];
        let (id_hash, cert_hash) = st.members[pos];
        let node = &self.nodes[&cert_hash];
        let size = st.members.len() as u64;
        LevelProof {
            id_hash,
            revocations: node.revocations.clone(),
            child_root: self.child_root(node),
            leaf_index: pos as u64,
            subtree_size: size,
            path: st.merkle.inclusion_path(pos as u64, size),
        }
    }

    /// Walks `query` (id hashes root→leaf) down the hierarchy. Returns the
    /// `(subtree, position)` found at each level.
    fn locate(&self, query: &[Digest]) -> Result<Vec<(usize, usize)>, RevTreeError> {
        let mut out = Vec::with_capacity(query.len());
        let mut subtree = Some(0);
        for (level, id) in query.iter().enumerate() {
            let st = subtree.ok_or(RevTreeError::NotFoundAtLevel(level))?;
            let pos = self.subtrees[st]
                .find(id)
                .map_err(|_| RevTreeError::NotFoundAtLevel(level))?;
            out.push((st, pos));
            let cert = self.subtrees[st].members[pos].1;
            subtree = self.nodes[&cert].children;
        }
        Ok(out)
    }

    /// Presence proof for a chain given as `H(C_x || t_x)` root→leaf.
    pub fn prove_chain(&self, query: &[Digest]) -> Result<Vec<LevelProof>, RevTreeError> {
        debug_assert!(self.dirty.is_empty());
        if query.is_empty() {
            return Err(RevTreeError::NotFoundAtLevel(0));
        }
        Ok(self
            .locate(query)?
            .into_iter()
            .map(|(st, pos)| self.level_proof(st, pos))
            .collect())
    }

    /// Proves `missing` is not a leaf of the subtree reached by `level_path`.
    pub fn prove_absence(&self, level_path: &[Digest], missing: Digest) -> Result<AbsenceProof, RevTreeError> {
        debug_assert!(self.dirty.is_empty());
        let located = self.locate(level_path)?;
        let prefix: Vec<LevelProof> = located.iter().map(|&(st, pos)| self.level_proof(st, pos)).collect();
        let target = match located.last() {
            None => Some(0),
            Some(&(st, pos)) => self.nodes[&self.subtrees[st].members[pos].1].children,
        };
        let subtree = match target {
            Some(st) if !self.subtrees[st].members.is_empty() => {
                let pos = match self.subtrees[st].find(&missing) {
                    Ok(_) => return Err(RevTreeError::ActuallyPresent),
                    Err(p) => p,
                };
                let n = self.subtrees[st].members.len();
                SubtreeAbsence::Brackets {
                    left: (pos > 0).then(|| self.level_proof(st, pos - 1)),
                    right: (pos < n).then(|| self.level_proof(st, pos)),
                }
            }
            _ => SubtreeAbsence::Empty,
        };
        Ok(AbsenceProof {
            missing,
            prefix,
            subtree,
        })
    }

    /// Every subtree's members are strictly increasing by id hash.
    pub fn is_sorted(&self) -> bool {
        self.subtrees
            .iter()
            .all(|st| st.members.windows(2).all(|w| w[0].0 < w[1].0))
    }

    /// Sizes of all non-top subtrees keyed by owning certificate.
    pub fn subtree_size_of(&self, owner: &Digest) -> usize {
        self.nodes
            .get(owner)
            .and_then(|n| n.children)
            .map_or(0, |s| self.subtrees[s].members.len())
    }
}
