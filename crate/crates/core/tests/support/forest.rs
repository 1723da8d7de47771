//! Oracle model of the forest example, recomputed with `mth`.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pkisn_core::fixtures::ForestExample;
use pkisn_core::Digest;

use super::mth::{self, H};

pub fn d(h: H) -> Digest {
    Digest(h)
}

/// Oracle model of a forest: label -> (cert bytes, reg_ts, parent, revocations).
pub struct Forest {
    pub certs: BTreeMap<char, (Vec<u8>, u64, Option<char>, Vec<(Vec<u8>, u64)>)>,
}

impl Forest {
    pub fn id(&self, c: char) -> H {
        let (bytes, ts, _, _) = &self.certs[&c];
        mth::id_hash(bytes, *ts)
    }

    /// Children of `parent` sorted by id hash.
    pub fn members(&self, parent: Option<char>) -> Vec<char> {
        let mut v: Vec<char> = self.certs.iter().filter(|(_, x)| x.2 == parent).map(|(c, _)| *c).collect();
        v.sort_by_key(|c| self.id(*c));
        v
    }

    pub fn subtree(&self, parent: Option<char>) -> Option<H> {
        let m = self.members(parent);
        (!m.is_empty()).then(|| mth::mth(&m.iter().map(|c| self.leaf(*c)).collect::<Vec<_>>()))
    }

    pub fn leaf(&self, c: char) -> H {
        mth::rev_leaf(&self.id(c), &self.certs[&c].3, self.subtree(Some(c)).as_ref())
    }

    pub fn leaves(&self, parent: Option<char>) -> Vec<H> {
        self.members(parent).iter().map(|c| self.leaf(*c)).collect()
    }
}

pub fn forest_model(ex: &ForestExample) -> Forest {
    let parent = |c: char| match c {
        'd' | 'e' | 'f' => Some('a'),
        'g' | 'j' | 'k' | 'm' => Some('d'),
        'h' => Some('b'),
        'i' => Some('c'),
        'l' => Some('e'),
        _ => None,
    };
    let certs = ex
        .certs
        .iter()
        .map(|(&c, cert)| {
            let ts = if c <= 'g' { ex.t0 } else { ex.t1 };
            let revs = if c == 'd' {
                vec![(ex.revocation_d.canonical_bytes(), ex.t1)]
            } else {
                vec![]
            };
            (c, (cert.canonical_bytes(), ts, parent(c), revs))
        })
        .collect();
    Forest { certs }
}

pub fn time_leaves(ex: &ForestExample, forest_roots: [H; 2]) -> Vec<H> {
    let mut out = Vec::new();
    for c in "abcdefg".chars() {
        out.push(mth::leaf(&mth::entry_bytes(1, ex.t0, &ex.certs[&c].canonical_bytes())));
    }
    out.push(mth::leaf(&mth::entry_bytes(3, ex.t0, &forest_roots[0])));
    for c in "hijdklm".chars() {
        let payload = if c == 'd' {
            ex.revocation_d.canonical_bytes()
        } else {
            ex.certs[&c].canonical_bytes()
        };
        let kind = if c == 'd' { 2 } else { 1 };
        out.push(mth::leaf(&mth::entry_bytes(kind, ex.t1, &payload)));
    }
    out.push(mth::leaf(&mth::entry_bytes(3, ex.t1, &forest_roots[1])));
    out
}

pub fn check_forest_sort_orders() {
    let ex = ForestExample::build();
    let model = forest_model(&ex);
    assert_eq!(model.members(None), vec!['b', 'a', 'c']);
    assert_eq!(model.members(Some('a')), vec!['e', 'd', 'f']);
    assert_eq!(model.members(Some('d')), vec!['k', 'm', 'g', 'j']);
    assert!(ex.log.state().rev_tree().is_sorted());
}

/// Checks the proof for chain a -> d -> m node by node against the oracle.
pub fn check_forest_proof() {
    let ex = ForestExample::build();
    let model = forest_model(&ex);
    let resp = ex.log.get_proof(&ex.query_adm()).unwrap();
    let [pa, pd, pm] = &resp.proof.levels[..] else {
        panic!("expected three levels, got {}", resp.proof.levels.len());
    };

    // m in the d-subtree [k, m, g, j]: no revocations, no children.
    let dl = model.leaves(Some('d'));
    assert_eq!(pm.id_hash, d(model.id('m')));
    assert!(pm.revocations.is_empty());
    assert_eq!(pm.child_root, None);
    assert_eq!((pm.leaf_index, pm.subtree_size), (1, 4));
    assert_eq!(pm.path, vec![d(dl[0]), d(mth::node(&dl[2], &dl[3]))]);

    // d in the a-subtree [e, d, f]: carries the parent revocation at t1.
    let al = model.leaves(Some('a'));
    assert_eq!(pd.id_hash, d(model.id('d')));
    assert_eq!(pd.revocations.len(), 1);
    assert_eq!(pd.revocations[0].revocation, ex.revocation_d);
    assert_eq!(pd.revocations[0].reg_ts, ex.t1);
    assert_eq!(pd.child_root, Some(d(mth::mth(&dl))));
    assert_eq!((pd.leaf_index, pd.subtree_size), (1, 3));
    assert_eq!(pd.path, vec![d(al[0]), d(al[2])]);

    // a in the top subtree [b, a, c].
    let tl = model.leaves(None);
    assert_eq!(pa.id_hash, d(model.id('a')));
    assert!(pa.revocations.is_empty());
    assert_eq!(pa.child_root, Some(d(mth::mth(&al))));
    assert_eq!((pa.leaf_index, pa.subtree_size), (1, 3));
    assert_eq!(pa.path, vec![d(tl[0]), d(tl[2])]);

    // r1 is leaf 15 of 16; its path is [m, kl, hijd', abcdefgr0].
    let mut first = model.certs.clone();
    first.retain(|_, v| v.1 == ex.t0);
    for v in first.values_mut() {
        v.3.clear();
    }
    let root_t0 = Forest { certs: first }.subtree(None).unwrap();
    let root_t1 = mth::mth(&tl);
    let tt = time_leaves(&ex, [root_t0, root_t1]);
    let anchor = &resp.proof.anchor.inclusion;
    assert_eq!((anchor.leaf_index, anchor.tree_size), (15, 16));
    assert_eq!(
        anchor.path,
        vec![
            d(tt[14]),
            d(mth::node(&tt[12], &tt[13])),
            d(mth::mth(&tt[8..12])),
            d(mth::mth(&tt[..8])),
        ]
    );
    assert_eq!(anchor.path, mth::path(&tt, 15).into_iter().map(d).collect::<Vec<_>>());
    assert_eq!(resp.signed_root.root, d(mth::mth(&tt)));
    assert_eq!(resp.signed_root.timestamp, ex.t1);
    assert!(resp.pending.is_empty());
    assert!(resp.proof.verify_chain(&ex.chain("adm"), &ex.cc_m.timestamps_root_first(), &resp.signed_root));
}

pub fn check_forest_digests() {
    let ex = ForestExample::build();
    let sr = ex.log.latest_root().unwrap();
    assert_eq!(sr.root.to_hex(), GOLDEN_TIME_ROOT);
    assert_eq!(ex.log.state().rev_tree().root().to_hex(), GOLDEN_FOREST_ROOT);
}

const GOLDEN_TIME_ROOT: &str = "205128eef7246bb78589ea1ee2fdca0db7552673c4cd74f393597bf54c837de7";
const GOLDEN_FOREST_ROOT: &str = "c7db7bd1de0569a6d7a7e326fc7425d6ed75d010c956cb58439fd83d0073e9c5";

