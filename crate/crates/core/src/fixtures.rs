//! Deterministic example logs shared by tests, benchmarks and the CLI.
//!
//! Keys come from [`KeyPair::derive`], and certificate serials are ground
//! until the RevTree sort order matches the intended layout, so every run
//! produces identical bytes.

use std::collections::BTreeMap;

use crate::cert::{make_revocation, CertChain, Certificate, RevocationKind, RevocationMessage, SignerRole, TbsCertificate};
use crate::crypto::{Digest, KeyPair, KeyRole};
use crate::log::{ChainCommitment, Log, LogConfig};

pub const EPOCH: u64 = 1_700_000_000;
pub const PERIOD: u64 = 3600;

pub fn ca_key(label: &str) -> KeyPair {
    KeyPair::derive(KeyRole::StandardCa, label)
}

pub fn rk_key(label: &str) -> KeyPair {
    KeyPair::derive(KeyRole::RevocationKey, label)
}

pub fn leaf_key(label: &str) -> KeyPair {
    KeyPair::derive(KeyRole::StandardLeaf, label)
}

pub fn vendor_key() -> KeyPair {
    KeyPair::derive(KeyRole::VendorKey, "vendor")
}

pub fn log_key() -> KeyPair {
    KeyPair::derive(KeyRole::LogKey, "log")
}

/// Certificate for `label`, signed by `issuer` (self-signed when `None`).
/// CA certificates embed the revocation key `rk_key(label)`.
pub fn issue(label: &str, serial: u64, is_ca: bool, issuer: Option<&KeyPair>, validity: (u64, u64)) -> Certificate {
    let subject = if is_ca { ca_key(label) } else { leaf_key(label) };
    let signer = issuer.unwrap_or(&subject);
    TbsCertificate {
        serial,
        subject_name: if is_ca { format!("{label} CA") } else { format!("{label}.example") },
        issuer_key_id: signer.key_id(),
        subject_public_key: subject.public(),
        is_ca,
        not_before: validity.0,
        not_after: validity.1,
        revocation_public_key: is_ca.then(|| rk_key(label).public()),
    }
    .sign(signer)
}

/// Like [`issue`], trying serials from 1 until `accept(id_hash at reg_ts)`.
pub fn issue_ground(
    label: &str,
    is_ca: bool,
    issuer: Option<&KeyPair>,
    validity: (u64, u64),
    reg_ts: u64,
    accept: impl Fn(&Digest) -> bool,
) -> Certificate {
    (1..)
        .map(|serial| issue(label, serial, is_ca, issuer, validity))
        .find(|c| accept(&c.id_hash(reg_ts)))
        .unwrap()
}

fn chain(certs: &BTreeMap<char, Certificate>, path: &str) -> CertChain {
    CertChain::new(path.chars().map(|c| certs[&c].clone()).collect())
}

fn new_log(roots: &[&Certificate], genesis: u64) -> Log {
    let mut cfg = LogConfig::new(
        roots.iter().map(|c| c.cert_hash()).collect(),
        vendor_key().public(),
        genesis,
    );
    cfg.scheduling_period = PERIOD;
    Log::new(cfg, log_key())
}

/// Roots a, b, c; a issues d, e, f; d issues g, j, k, m; h, i and l hang
/// under b, c and e. The first update holds a–g, the second h–m plus a
/// parent-CA revocation of d inserted after j.
pub struct ForestExample {
    pub log: Log,
    pub certs: BTreeMap<char, Certificate>,
    pub revocation_d: RevocationMessage,
    pub cc_m: ChainCommitment,
    pub t0: u64,
    pub t1: u64,
}

impl ForestExample {
    pub fn build() -> Self {
        let t0 = EPOCH;
        let t1 = EPOCH + PERIOD;
        let validity = (EPOCH - 86_400, EPOCH + 400 * 86_400);
        let (ka, kb, kc, kd, ke) = (ca_key("a"), ca_key("b"), ca_key("c"), ca_key("d"), ca_key("e"));

        let mut certs = BTreeMap::new();
        let a = issue("a", 1, true, None, validity);
        let ida = a.id_hash(t0);
        certs.insert('b', issue_ground("b", true, None, validity, t0, |h| *h < ida));
        certs.insert('c', issue_ground("c", true, None, validity, t0, |h| *h > ida));
        certs.insert('a', a);

        let d = issue("d", 1, true, Some(&ka), validity);
        let idd = d.id_hash(t0);
        certs.insert('e', issue_ground("e", true, Some(&ka), validity, t0, |h| *h < idd));
        certs.insert('f', issue_ground("f", true, Some(&ka), validity, t0, |h| *h > idd));
        certs.insert('d', d);

        let m = issue("m", 1, false, Some(&kd), validity);
        let idm = m.id_hash(t1);
        certs.insert('k', issue_ground("k", false, Some(&kd), validity, t1, |h| *h < idm));
        let g = issue_ground("g", false, Some(&kd), validity, t0, |h| *h > idm);
        let idg = g.id_hash(t0);
        certs.insert('j', issue_ground("j", false, Some(&kd), validity, t1, |h| *h > idg));
        certs.insert('g', g);
        certs.insert('m', m);
        certs.insert('h', issue("h", 1, false, Some(&kb), validity));
        certs.insert('i', issue("i", 1, false, Some(&kc), validity));
        certs.insert('l', issue("l", 1, false, Some(&ke), validity));

        let mut log = new_log(&[&certs[&'a'], &certs[&'b'], &certs[&'c']], t0 - PERIOD);
        for path in ["a", "b", "c", "ad", "ae", "af", "adg"] {
            log.submit_chain(&chain(&certs, path)).unwrap();
        }
        log.run_update(t0).unwrap();

        let revocation_d = make_revocation(
            RevocationKind::CaRevokeFrom,
            &certs[&'d'],
            Some(t0 + PERIOD / 2),
            &ka,
            SignerRole::ParentCa(1),
        )
        .unwrap();
        for path in ["bh", "ci", "adj"] {
            log.submit_chain(&chain(&certs, path)).unwrap();
        }
        log.submit_revocation(&chain(&certs, "ad"), &revocation_d).unwrap();
        for path in ["adk", "ael"] {
            log.submit_chain(&chain(&certs, path)).unwrap();
        }
        let cc_m = log.submit_chain(&chain(&certs, "adm")).unwrap();
        log.run_update(t1).unwrap();
        ForestExample {
            log,
            certs,
            revocation_d,
            cc_m,
            t0,
            t1,
        }
    }

    pub fn chain(&self, path: &str) -> CertChain {
        chain(&self.certs, path)
    }

    /// `H(C_a || t_a), H(C_d || t_d), H(C_m || t_m)`.
    pub fn query_adm(&self) -> Vec<Digest> {
        vec![
            self.certs[&'a'].id_hash(self.t0),
            self.certs[&'d'].id_hash(self.t0),
            self.certs[&'m'].id_hash(self.t1),
        ]
    }
}

/// Three updates: a–f at t0 (all expired before t1), an empty update at
/// t1, and h–m at t2 with a vendor revocation of f after j.
pub struct PrunedExample {
    pub log: Log,
    pub certs: BTreeMap<char, Certificate>,
    pub revocation_f: RevocationMessage,
    pub t0: u64,
    pub t1: u64,
    pub t2: u64,
}

impl PrunedExample {
    pub fn build() -> Self {
        let (t0, t1, t2) = (EPOCH, EPOCH + PERIOD, EPOCH + 2 * PERIOD);
        let short = (EPOCH - 86_400, EPOCH + 100);
        let long = (EPOCH - 86_400, EPOCH + 400 * 86_400);
        let (ka, kh, ki) = (ca_key("a"), ca_key("h"), ca_key("i"));
        let mut certs = BTreeMap::new();
        certs.insert('a', issue("a", 1, true, None, short));
        for (n, l) in [('b', "b"), ('c', "c")] {
            certs.insert(n, issue(l, 1, true, Some(&ka), short));
        }
        for (n, l) in [('d', "d"), ('e', "e"), ('f', "f")] {
            certs.insert(n, issue(l, 1, false, Some(&ka), short));
        }
        certs.insert('h', issue("h", 1, true, None, long));
        certs.insert('i', issue("i", 1, true, Some(&kh), long));
        for (n, l) in [('j', "j"), ('k', "k"), ('l', "l"), ('m', "m")] {
            certs.insert(n, issue(l, 1, false, Some(&ki), long));
        }

        let mut log = new_log(&[&certs[&'a'], &certs[&'h']], t0 - PERIOD);
        for path in ["a", "ab", "ac", "ad", "ae", "af"] {
            log.submit_chain(&chain(&certs, path)).unwrap();
        }
        log.run_update(t0).unwrap();
        log.run_update(t1).unwrap();
        let revocation_f = make_revocation(RevocationKind::LeafRevoke, &certs[&'f'], None, &vendor_key(), SignerRole::Vendor).unwrap();
        for path in ["h", "hi", "hij"] {
            log.submit_chain(&chain(&certs, path)).unwrap();
        }
        log.submit_revocation(&chain(&certs, "af"), &revocation_f).unwrap();
        for path in ["hik", "hil", "him"] {
            log.submit_chain(&chain(&certs, path)).unwrap();
        }
        log.run_update(t2).unwrap();
        PrunedExample {
            log,
            certs,
            revocation_f,
            t0,
            t1,
            t2,
        }
    }
}
