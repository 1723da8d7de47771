//! Throughput and latency measurements on the host machine.

use std::time::{Duration, Instant};

use pkisn_core::cert::pre_validate;
use pkisn_core::log::{Log, LogConfig};
use pkisn_core::validator::{check_proofs, is_valid, ValidationInput};
use pkisn_core::{CertChain, Certificate, KeyPair, KeyRole, TbsCertificate};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Chains registered and then merged in one update.
    pub chains: usize,
    pub intermediates: usize,
    pub validations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            chains: 10_000,
            intermediates: 16,
            validations: 1_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub chains: usize,
    pub registration_secs: f64,
    pub chains_per_sec: f64,
    pub update_secs: f64,
    pub validations: usize,
    pub mean_validation_ms: f64,
    pub mean_pre_validation_ms: f64,
    pub mean_proof_check_ms: f64,
}

fn ms(d: Duration, n: usize) -> f64 {
    d.as_secs_f64() * 1000.0 / n.max(1) as f64
}

const T0: u64 = 1_700_000_000;
const PERIOD: u64 = 3600;

fn ca_cert(label: &str, issuer: Option<&KeyPair>) -> (Certificate, KeyPair) {
    let key = KeyPair::derive(KeyRole::StandardCa, label);
    let signer = issuer.unwrap_or(&key);
    let cert = TbsCertificate {
        serial: 1,
        subject_name: format!("{label} CA"),
        issuer_key_id: signer.key_id(),
        subject_public_key: key.public(),
        is_ca: true,
        not_before: T0 - 86_400,
        not_after: T0 + 10 * 365 * 86_400,
        revocation_public_key: Some(KeyPair::derive(KeyRole::RevocationKey, label).public()),
    }
    .sign(signer);
    (cert, key)
}

/// Three-certificate chains under one root, prepared outside the timed
/// sections.
pub fn make_chains(n: usize, intermediates: usize) -> (Certificate, Vec<CertChain>) {
    let (root, root_key) = ca_cert("bench-root", None);
    let inters: Vec<(Certificate, KeyPair)> = (0..intermediates.max(1))
        .map(|i| ca_cert(&format!("bench-inter{i}"), Some(&root_key)))
        .collect();
    let leaf_key = KeyPair::derive(KeyRole::StandardLeaf, "bench-leaf");
    let chains = (0..n)
        .map(|i| {
            let (inter, ik) = &inters[i % inters.len()];
            let leaf = TbsCertificate {
                serial: i as u64,
                subject_name: format!("host{i}.example"),
                issuer_key_id: ik.key_id(),
                subject_public_key: leaf_key.public(),
                is_ca: false,
                not_before: T0 - 86_400,
                not_after: T0 + 365 * 86_400,
                revocation_public_key: None,
            }
            .sign(ik);
            CertChain::new(vec![root.clone(), inter.clone(), leaf])
        })
        .collect();
    (root, chains)
}

pub fn run(cfg: &BenchConfig) -> BenchReport {
    let (root, chains) = make_chains(cfg.chains, cfg.intermediates);
    let vendor = KeyPair::derive(KeyRole::VendorKey, "bench-vendor");
    let mut lc = LogConfig::new([root.cert_hash()].into(), vendor.public(), T0);
    lc.scheduling_period = PERIOD;
    let mut log = Log::new(lc, KeyPair::derive(KeyRole::LogKey, "bench-log"));

    let start = Instant::now();
    let ccs: Vec<_> = chains
        .iter()
        .map(|c| log.submit_chain(c).expect("bench chain accepted"))
        .collect();
    let registration = start.elapsed();

    let start = Instant::now();
    let sr = log.run_update(T0 + PERIOD).expect("update due");
    let update = start.elapsed();

    let now = T0 + PERIOD + 1;
    let n = cfg.validations.min(chains.len());
    let step = (chains.len() / n.max(1)).max(1);
    let mut full = Duration::ZERO;
    let mut pre = Duration::ZERO;
    let mut proofs = Duration::ZERO;
    for i in (0..chains.len()).step_by(step).take(n) {
        let (chain, cc) = (&chains[i], &ccs[i]);
        let ids: Vec<_> = chain
            .certs
            .iter()
            .zip(cc.timestamps_root_first())
            .map(|(c, t)| c.id_hash(t))
            .collect();
        let resp = log.get_proof(&ids).expect("logged chain has a proof");
        let input = ValidationInput {
            chain,
            cc,
            proof: &resp.proof,
            signed_root: &sr,
            pending: &resp.pending,
            name: &chain.leaf().unwrap().tbs.subject_name,
            now,
            trust_roots: &log.config().trust_roots,
            log_pub: &log.public_key(),
            vendor_pub: &vendor.public(),
            max_root_age: 2 * PERIOD,
        };
        let t = Instant::now();
        let verdict = is_valid(&input);
        full += t.elapsed();
        assert!(verdict.is_success(), "bench chain failed validation: {verdict:?}");
        let t = Instant::now();
        assert!(pre_validate(chain, input.name, input.trust_roots, now));
        pre += t.elapsed();
        let t = Instant::now();
        assert!(check_proofs(&input).is_ok());
        proofs += t.elapsed();
    }

    BenchReport {
        chains: chains.len(),
        registration_secs: registration.as_secs_f64(),
        chains_per_sec: chains.len() as f64 / registration.as_secs_f64(),
        update_secs: update.as_secs_f64(),
        validations: n,
        mean_validation_ms: ms(full, n),
        mean_pre_validation_ms: ms(pre, n),
        mean_proof_check_ms: ms(proofs, n),
    }
}
