//! Randomized single-chain scenarios executed against a real log, with
//! the brute-force interpreter in `oracle.rs` as the reference.

#![allow(dead_code)]

use pkisn_core::cert::{make_revocation, TrustRoots};
use pkisn_core::log::{ChainCommitment, Log, LogConfig};
use pkisn_core::tcrl::build_tcrl;
use pkisn_core::validator::{decide, is_valid, validate_with_tcrl, Cause, ObservedRevocation, ValidationInput, Verdict};
use pkisn_core::{CertChain, Certificate, KeyPair, KeyRole, RevocationKind, SignerRole, TbsCertificate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{Class, Model, Rev};

pub const PERIOD: u64 = 100;
pub const MAX_ROOT_AGE: u64 = 2 * PERIOD;
pub const LEAF_NAME: &str = "leaf.test";

#[derive(Debug, Clone)]
pub struct CertSpec {
    pub is_ca: bool,
    pub not_before: u64,
    pub not_after: u64,
    /// Update (1-based) that logs this certificate.
    pub reg_update: u64,
}

#[derive(Debug, Clone)]
pub struct RevSpec {
    pub target: usize,
    pub role: SignerRole,
    pub rev_ts: Option<u64>,
    /// Submitted just before this update; past the last update it stays pending.
    pub submit_update: u64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub certs: Vec<CertSpec>,
    pub revs: Vec<RevSpec>,
    pub updates: u64,
    pub now: u64,
}

/// Ordinary scenarios keep every revocation merged and the root fresh.
/// With `transport`, revocations may still be pending and the root may
/// be stale.
pub fn generate(seed: u64, transport: bool) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6usize);
    let updates = rng.gen_range(2..=8u64);
    let age = if transport { rng.gen_range(0..=MAX_ROOT_AGE + 100) } else { rng.gen_range(0..=MAX_ROOT_AGE) };
    let now = updates * PERIOD + age;
    let mut certs = Vec::with_capacity(n);
    let mut reg = rng.gen_range(1..=updates.min(3));
    for k in 0..n {
        if k > 0 {
            reg = (reg + rng.gen_range(0..=2)).min(updates);
        }
        let not_after = match rng.gen_range(0..40) {
            0 => now,
            1 => rng.gen_range(50..now),
            _ => now + rng.gen_range(1..=300),
        };
        certs.push(CertSpec {
            is_ca: k + 1 < n,
            not_before: if rng.gen_ratio(1, 40) { rng.gen_range(0..not_after) } else { 0 },
            not_after,
            reg_update: reg,
        });
    }
    let last = if transport { updates + 1 } else { updates };
    let mut revs = Vec::new();
    for _ in 0..rng.gen_range(0..=8) {
        let target = rng.gen_range(0..n);
        let first = certs[target].reg_update + 1;
        if first > last {
            continue;
        }
        let is_ca = certs[target].is_ca;
        let mut roles = vec![SignerRole::Vendor];
        roles.extend((1..=target).map(|d| SignerRole::ParentCa(d as u8)));
        roles.push(if is_ca { SignerRole::RevocationKey } else { SignerRole::OwnKey });
        let role = roles[rng.gen_range(0..roles.len())];
        revs.push(RevSpec {
            target,
            role,
            rev_ts: is_ca.then(|| rng.gen_range(0..certs[target].not_after)),
            submit_update: rng.gen_range(first..=last),
        });
    }
    Scenario { certs, revs, updates, now }
}

pub struct Built {
    pub log: Log,
    pub chain: CertChain,
    pub cc: ChainCommitment,
    pub model: Model,
    pub trust_roots: TrustRoots,
    pub vendor: KeyPair,
    pub now: u64,
}

fn keys(k: usize, is_ca: bool) -> (KeyPair, KeyPair) {
    let role = if is_ca { KeyRole::StandardCa } else { KeyRole::StandardLeaf };
    (
        KeyPair::derive(role, &format!("pos{k}")),
        KeyPair::derive(KeyRole::RevocationKey, &format!("pos{k}")),
    )
}

pub fn build(s: &Scenario) -> Built {
    let n = s.certs.len();
    let keys: Vec<(KeyPair, KeyPair)> = s.certs.iter().enumerate().map(|(k, c)| keys(k, c.is_ca)).collect();
    let certs: Vec<Certificate> = s
        .certs
        .iter()
        .enumerate()
        .map(|(k, cert)| {
            let issuer = if k == 0 { &keys[0].0 } else { &keys[k - 1].0 };
            TbsCertificate {
                serial: k as u64 + 1,
                subject_name: if cert.is_ca { format!("CA {k}") } else { LEAF_NAME.into() },
                issuer_key_id: issuer.key_id(),
                subject_public_key: keys[k].0.public(),
                is_ca: cert.is_ca,
                not_before: cert.not_before,
                not_after: cert.not_after,
                revocation_public_key: cert.is_ca.then(|| keys[k].1.public()),
            }
            .sign(issuer)
        })
        .collect();
    let chain = CertChain::new(certs.clone());
    let trust_roots: TrustRoots = [certs[0].cert_hash()].into();
    let vendor = KeyPair::derive(KeyRole::VendorKey, "scenario-vendor");
    let mut cfg = LogConfig::new(trust_roots.clone(), vendor.public(), 0);
    cfg.scheduling_period = PERIOD;
    cfg.max_pending = 1 << 20;
    let mut log = Log::new(cfg, KeyPair::derive(KeyRole::LogKey, "scenario-log"));

    let mut logged: Vec<Rev> = Vec::new();
    let mut seen = Vec::new();
    for j in 1..=s.updates + 1 {
        if let Some(top) = (0..n).rev().find(|&k| s.certs[k].reg_update == j) {
            log.submit_chain(&chain.prefix(top + 1)).unwrap();
        }
        for r in s.revs.iter().filter(|r| r.submit_update == j) {
            let signer = match r.role {
                SignerRole::Vendor => &vendor,
                SignerRole::OwnKey => &keys[r.target].0,
                SignerRole::RevocationKey => &keys[r.target].1,
                SignerRole::ParentCa(d) => &keys[r.target - d as usize].0,
            };
            let kind = if s.certs[r.target].is_ca { RevocationKind::CaRevokeFrom } else { RevocationKind::LeafRevoke };
            let msg = make_revocation(kind, &certs[r.target], r.rev_ts, signer, r.role).unwrap();
            if log.submit_revocation(&chain.prefix(r.target + 1), &msg).is_err() || seen.contains(&msg) {
                continue;
            }
            seen.push(msg);
            logged.push(Rev {
                target: r.target,
                class: match r.role {
                    SignerRole::Vendor => Class::Vendor,
                    SignerRole::OwnKey => Class::Own,
                    SignerRole::RevocationKey => Class::Rk,
                    SignerRole::ParentCa(d) => Class::Parent(d as usize),
                },
                rev_ts: r.rev_ts,
                // Pending revocations count from the latest signed root.
                reg_ts: j.min(s.updates) * PERIOD,
            });
        }
        if j <= s.updates {
            log.run_update(j * PERIOD).unwrap();
        }
    }
    let cc = log.submit_chain(&chain).unwrap();
    let tx = cc.timestamps_root_first();
    assert_eq!(tx, s.certs.iter().map(|c| c.reg_update * PERIOD).collect::<Vec<_>>());
    let model = Model {
        tx,
        not_before: s.certs.iter().map(|c| c.not_before).collect(),
        not_after: s.certs.iter().map(|c| c.not_after).collect(),
        revs: logged,
        now: s.now,
        root_ts: s.updates * PERIOD,
        max_root_age: MAX_ROOT_AGE,
    };
    Built {
        log,
        chain,
        cc,
        model,
        trust_roots,
        vendor,
        now: s.now,
    }
}

impl Built {
    pub fn id_hashes(&self) -> Vec<pkisn_core::Digest> {
        self.chain
            .certs
            .iter()
            .zip(self.cc.timestamps_root_first())
            .map(|(c, t)| c.id_hash(t))
            .collect()
    }

    pub fn validate(&self) -> Verdict {
        let resp = self.log.get_proof(&self.id_hashes()).unwrap();
        is_valid(&ValidationInput {
            chain: &self.chain,
            cc: &self.cc,
            proof: &resp.proof,
            signed_root: &resp.signed_root,
            pending: &resp.pending,
            name: LEAF_NAME,
            now: self.now,
            trust_roots: &self.trust_roots,
            log_pub: &self.log.public_key(),
            vendor_pub: &self.vendor.public(),
            max_root_age: MAX_ROOT_AGE,
        })
    }

    pub fn validate_tcrl(&self) -> Verdict {
        let tcrl = build_tcrl(self.log.state(), &self.vendor, 1, self.now);
        validate_with_tcrl(
            &self.chain,
            &self.cc,
            &tcrl,
            LEAF_NAME,
            self.now,
            &self.trust_roots,
            &self.log.public_key(),
            &self.vendor.public(),
        )
    }

    /// Logged revocations per chain position (root first).
    fn observed(&self) -> Vec<Vec<ObservedRevocation>> {
        let resp = self.log.get_proof(&self.id_hashes()).unwrap();
        resp.proof
            .levels
            .iter()
            .map(|l| {
                l.revocations
                    .iter()
                    .map(|r| ObservedRevocation::logged(r.revocation.clone(), r.reg_ts))
                    .collect()
            })
            .collect()
    }
}

fn reason_name(v: &Verdict) -> Option<String> {
    v.reason.map(|r| format!("{r:?}"))
}

/// Compares `is_valid` with the oracle and checks the LP invariants:
/// every LP lies inside `[t_x, not_after]`; a vendor (else revocation-key)
/// revocation fixes a CA's end at its own earliest cutoff; dropping a
/// leaf's revocations never shortens its LP nor touches the ancestors'.
pub fn check_validator(seed: u64, transport: bool) -> Result<Built, String> {
    let s = generate(seed, transport);
    let b = build(&s);
    let v = b.validate();
    let expected = b.model.verdict();
    if reason_name(&v).as_deref() != expected {
        return Err(format!("seed {seed}: is_valid {:?} vs oracle {expected:?}\n{s:#?}", v.reason));
    }
    if v.per_cert.is_empty() {
        return Ok(b);
    }
    let m = &b.model;
    for (k, c) in v.per_cert.iter().enumerate() {
        if c.lp_begin != m.tx[k] || c.lp_end.max(c.lp_begin) > m.not_after[k] {
            return Err(format!("seed {seed}: LP of {k} escapes its bounds: {c:?}"));
        }
        if k + 1 == m.tx.len() {
            continue;
        }
        let applicable = |class: Class| {
            m.revs
                .iter()
                .filter(move |r| r.target == k && r.class == class)
                .filter_map(|r| r.rev_ts)
                .min()
        };
        if let Some(cut) = applicable(Class::Vendor).or_else(|| applicable(Class::Rk)) {
            if c.lp_end != cut.min(m.not_after[k]) {
                return Err(format!("seed {seed}: priority dominance broken at {k}: {c:?}, cutoff {cut}"));
            }
        }
    }
    if !transport {
        let observed = b.observed();
        let mut without_leaf = observed.clone();
        without_leaf.last_mut().unwrap().clear();
        let ts = b.cc.timestamps_root_first();
        let full = decide(&b.chain, &ts, &observed, b.now, &b.vendor.public());
        let relaxed = decide(&b.chain, &ts, &without_leaf, b.now, &b.vendor.public());
        let n = full.per_cert.len();
        if full.per_cert[..n - 1] != relaxed.per_cert[..n - 1] || relaxed.per_cert[n - 1].lp_end < full.per_cert[n - 1].lp_end {
            return Err(format!("seed {seed}: leaf revocations not monotone"));
        }
        if full.is_success() && !relaxed.is_success() {
            return Err(format!("seed {seed}: removing revocations broke a valid chain"));
        }
        if relaxed.per_cert[n - 1].cause != Cause::Unrevoked {
            return Err(format!("seed {seed}: unrevoked leaf reports a revocation cause"));
        }
    }
    Ok(b)
}

/// TCRL-based validation agrees with proof-based validation.
pub fn check_tcrl(seed: u64) -> Result<(), String> {
    let b = build(&generate(seed, false));
    let (p, t) = (b.validate(), b.validate_tcrl());
    if p.decision != t.decision || p.reason != t.reason || (!p.per_cert.is_empty() && p.per_cert != t.per_cert) {
        return Err(format!("seed {seed}: proof {:?} vs tcrl {:?}", p.reason, t.reason));
    }
    Ok(())
}
