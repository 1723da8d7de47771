#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use pkisn_core::cert::{make_revocation, RevocationKind, SignerRole};
use pkisn_core::log::{ChainCommitment, Log, LogConfig};
use pkisn_core::{CertChain, Certificate, Digest, KeyPair, KeyRole, RevocationMessage};
use pkisn_service::bench::make_chains;
use pkisn_service::clock::VirtualClock;
use pkisn_service::node::{Node, NodeParams, Recovery};

pub const T0: u64 = 1_700_000_000;
pub const PERIOD: u64 = 3600;

pub fn log_key() -> KeyPair {
    KeyPair::derive(KeyRole::LogKey, "service-test-log")
}

pub fn vendor_key() -> KeyPair {
    KeyPair::derive(KeyRole::VendorKey, "service-test-vendor")
}

/// Key of every leaf built by `make_chains`.
pub fn chain_leaf_key() -> KeyPair {
    KeyPair::derive(KeyRole::StandardLeaf, "bench-leaf")
}

pub struct Pki {
    pub root: Certificate,
    pub chains: Vec<CertChain>,
}

pub fn pki(n: usize) -> Pki {
    let (root, chains) = make_chains(n, 4);
    Pki { root, chains }
}

pub fn params(dir: &Path, root: &Certificate) -> NodeParams {
    NodeParams {
        data_dir: dir.to_path_buf(),
        scheduling_period: PERIOD,
        genesis: Some(T0),
        trust_roots: [root.cert_hash()].into(),
        vendor_public_key: vendor_key().public(),
        max_pending: None,
    }
}

/// In-memory log with the same parameters as `params`, never restarted.
pub fn reference_log(root: &Certificate) -> Log {
    let mut cfg = LogConfig::new([root.cert_hash()].into(), vendor_key().public(), T0);
    cfg.scheduling_period = PERIOD;
    Log::new(cfg, log_key())
}

pub fn open(dir: &Path, root: &Certificate, clock: &VirtualClock) -> (Node, Recovery) {
    Node::open(&params(dir, root), log_key(), Arc::new(clock.clone())).expect("data directory opens")
}

pub fn revoke_leaf(chain: &CertChain) -> RevocationMessage {
    make_revocation(RevocationKind::LeafRevoke, chain.leaf().unwrap(), None, &chain_leaf_key(), SignerRole::OwnKey).unwrap()
}

pub fn id_hashes(chain: &CertChain, cc: &ChainCommitment) -> Vec<Digest> {
    chain
        .certs
        .iter()
        .zip(cc.timestamps_root_first())
        .map(|(c, t)| c.id_hash(t))
        .collect()
}
