//! Reference Merkle hashing written directly against `sha2`, kept separate
//! from the library's implementation.

#![allow(dead_code)]

use sha2::{Digest, Sha256};

pub type H = [u8; 32];

pub fn leaf(bytes: &[u8]) -> H {
    let mut h = Sha256::new();
    h.update([0u8]);
    h.update(bytes);
    h.finalize().into()
}

pub fn node(l: &H, r: &H) -> H {
    let mut h = Sha256::new();
    h.update([1u8]);
    h.update(l);
    h.update(r);
    h.finalize().into()
}

/// Tree head over leaf hashes, splitting at the largest power of two below n.
pub fn mth(leaves: &[H]) -> H {
    match leaves.len() {
        0 => Sha256::digest([]).into(),
        1 => leaves[0],
        n => {
            let mut k = 1;
            while k * 2 < n {
                k *= 2;
            }
            node(&mth(&leaves[..k]), &mth(&leaves[k..]))
        }
    }
}

/// Audit path for leaf `m`, nearest sibling first.
pub fn path(leaves: &[H], m: usize) -> Vec<H> {
    let n = leaves.len();
    if n <= 1 {
        return Vec::new();
    }
    let mut k = 1;
    while k * 2 < n {
        k *= 2;
    }
    if m < k {
        let mut p = path(&leaves[..k], m);
        p.push(mth(&leaves[k..]));
        p
    } else {
        let mut p = path(&leaves[k..], m - k);
        p.push(mth(&leaves[..k]));
        p
    }
}

/// `SUBPROOF(m, D[0:n], true)` from the certificate transparency RFC.
pub fn consistency(leaves: &[H], m: usize) -> Vec<H> {
    fn sub(leaves: &[H], m: usize, complete: bool) -> Vec<H> {
        let n = leaves.len();
        if m == n {
            return if complete { Vec::new() } else { vec![mth(leaves)] };
        }
        let mut k = 1;
        while k * 2 < n {
            k *= 2;
        }
        if m <= k {
            let mut p = sub(&leaves[..k], m, complete);
            p.push(mth(&leaves[k..]));
            p
        } else {
            let mut p = sub(&leaves[k..], m - k, false);
            p.push(mth(&leaves[..k]));
            p
        }
    }
    sub(leaves, m, true)
}

pub fn be16(v: u16) -> [u8; 2] {
    v.to_be_bytes()
}

pub fn be32(v: u32) -> [u8; 4] {
    v.to_be_bytes()
}

pub fn be64(v: u64) -> [u8; 8] {
    v.to_be_bytes()
}

/// `kind || ts || len || payload`, as hashed into the TimeTree.
pub fn entry_bytes(kind: u8, ts: u64, payload: &[u8]) -> Vec<u8> {
    let mut v = vec![kind];
    v.extend(be64(ts));
    v.extend(be32(payload.len() as u32));
    v.extend(payload);
    v
}

/// RevTree leaf: `id || count || (len || rev || reg_ts)* || child_or_zero`.
pub fn rev_leaf(id: &H, revs: &[(Vec<u8>, u64)], child: Option<&H>) -> H {
    let mut v = id.to_vec();
    v.extend(be16(revs.len() as u16));
    for (bytes, ts) in revs {
        v.extend(be32(bytes.len() as u32));
        v.extend(bytes);
        v.extend(be64(*ts));
    }
    v.extend(child.copied().unwrap_or([0; 32]));
    leaf(&v)
}

/// `H(cert || ts)`.
pub fn id_hash(cert_bytes: &[u8], ts: u64) -> H {
    let mut v = cert_bytes.to_vec();
    v.extend(be64(ts));
    leaf(&v)
}
