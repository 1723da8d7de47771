//! Append-only Merkle hash tree with the standard transparency-log shape:
//! a range of `n > 1` leaves splits at the largest power of two strictly
//! less than `n`.

use crate::crypto::{hash_node, sha256, Digest};

/// Root of a tree with no leaves.
pub fn empty_root() -> Digest {
    sha256(&[])
}

/// Largest power of two strictly less than `n` (`n >= 2`).
pub fn split_point(n: u64) -> u64 {
    debug_assert!(n >= 2);
    1 << (63 - (n - 1).leading_zeros())
}

/// Leaf hashes plus every complete aligned interior node, so subtree hashes
/// and proofs cost O(log² n) rather than O(n).
#[derive(Debug, Clone, Default)]
pub struct MerkleLog {
    levels: Vec<Vec<Digest>>,
}

impl MerkleLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_leaves<I: IntoIterator<Item = Digest>>(leaves: I) -> Self {
        let mut log = Self::new();
        for l in leaves {
            log.push(l);
        }
        log
    }

    pub fn len(&self) -> u64 {
        self.levels.first().map_or(0, |l| l.len() as u64)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, index: u64) -> Option<&Digest> {
        self.levels.first()?.get(index as usize)
    }

    pub fn push(&mut self, leaf: Digest) {
        if self.levels.is_empty() {
            self.levels.push(Vec::new());
        }
        self.levels[0].push(leaf);
        let mut level = 0;
        while self.levels[level].len().is_multiple_of(2) {
            let n = self.levels[level].len();
            let parent = hash_node(&self.levels[level][n - 2], &self.levels[level][n - 1]);
            if self.levels.len() == level + 1 {
                self.levels.push(Vec::new());
            }
            self.levels[level + 1].push(parent);
            level += 1;
        }
    }

    /// Hash of the leaf range `[lo, hi)`, `lo < hi <= len`.
    pub fn range_hash(&self, lo: u64, hi: u64) -> Digest {
        debug_assert!(lo < hi && hi <= self.len());
        let n = hi - lo;
        if n.is_power_of_two() && lo.is_multiple_of(n) {
            let level = n.trailing_zeros() as usize;
            return self.levels[level][(lo >> level) as usize];
        }
        let k = split_point(n);
        hash_node(&self.range_hash(lo, lo + k), &self.range_hash(lo + k, hi))
    }

    pub fn root_at(&self, size: u64) -> Digest {
        if size == 0 {
            empty_root()
        } else {
            self.range_hash(0, size)
        }
    }

    pub fn root(&self) -> Digest {
        self.root_at(self.len())
    }

    /// Audit path for leaf `index` in the tree of the first `size` leaves,
    /// ordered leaf to root.
    pub fn inclusion_path(&self, index: u64, size: u64) -> Vec<Digest> {
        let mut path = Vec::new();
        self.path_rec(index, 0, size, &mut path);
        path
    }

    fn path_rec(&self, m: u64, lo: u64, hi: u64, out: &mut Vec<Digest>) {
        let n = hi - lo;
        if n <= 1 {
            return;
        }
        let k = split_point(n);
        if m < k {
            self.path_rec(m, lo, lo + k, out);
            out.push(self.range_hash(lo + k, hi));
        } else {
            self.path_rec(m - k, lo + k, hi, out);
            out.push(self.range_hash(lo, lo + k));
        }
    }

    /// Nodes proving the first `old` leaves are a prefix of the first `new`.
    pub fn consistency_nodes(&self, old: u64, new: u64) -> Vec<Digest> {
        let mut out = Vec::new();
        if old > 0 && old < new {
            self.subproof(old, 0, new, true, &mut out);
        }
        out
    }

    fn subproof(&self, m: u64, lo: u64, hi: u64, complete: bool, out: &mut Vec<Digest>) {
        let n = hi - lo;
        if m == n {
            if !complete {
                out.push(self.range_hash(lo, hi));
            }
            return;
        }
        let k = split_point(n);
        if m <= k {
            self.subproof(m, lo, lo + k, complete, out);
            out.push(self.range_hash(lo + k, hi));
        } else {
            self.subproof(m - k, lo + k, hi, false, out);
            out.push(self.range_hash(lo, lo + k));
        }
    }
}

/// Recomputes the root from a leaf hash and its audit path. Returns `None`
/// when the path has the wrong shape for `(index, size)`.
pub fn root_from_path(leaf: Digest, index: u64, size: u64, path: &[Digest]) -> Option<Digest> {
    if index >= size {
        return None;
    }
    let mut fnode = index;
    let mut snode = size - 1;
    let mut r = leaf;
    for p in path {
        if snode == 0 {
            return None;
        }
        if fnode & 1 == 1 || fnode == snode {
            r = hash_node(p, &r);
            while fnode & 1 == 0 && fnode != 0 {
                fnode >>= 1;
                snode >>= 1;
            }
        } else {
            r = hash_node(&r, p);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    (snode == 0).then_some(r)
}

pub fn verify_inclusion(leaf: Digest, index: u64, size: u64, path: &[Digest], root: &Digest) -> bool {
    root_from_path(leaf, index, size, path).as_ref() == Some(root)
}

pub fn verify_consistency(
    old_size: u64,
    new_size: u64,
    old_root: &Digest,
    new_root: &Digest,
    nodes: &[Digest],
) -> bool {
    if old_size == 0 || old_size > new_size {
        return false;
    }
    if old_size == new_size {
        return nodes.is_empty() && old_root == new_root;
    }
    let mut path: Vec<Digest> = Vec::with_capacity(nodes.len() + 1);
    if old_size.is_power_of_two() {
        path.push(*old_root);
    }
    path.extend_from_slice(nodes);
    let Some((first, rest)) = path.split_first() else {
        return false;
    };
    let mut fnode = old_size - 1;
    let mut snode = new_size - 1;
    while fnode & 1 == 1 {
        fnode >>= 1;
        snode >>= 1;
    }
    let mut fr = *first;
    let mut sr = *first;
    for c in rest {
        if snode == 0 {
            return false;
        }
        if fnode & 1 == 1 || fnode == snode {
            fr = hash_node(c, &fr);
            sr = hash_node(c, &sr);
            while fnode & 1 == 0 && fnode != 0 {
                fnode >>= 1;
                snode >>= 1;
            }
        } else {
            sr = hash_node(&sr, c);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    snode == 0 && &fr == old_root && &sr == new_root
}
