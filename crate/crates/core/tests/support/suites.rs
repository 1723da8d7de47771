//! Randomized checks that return a description of the first mismatch.

#![allow(dead_code)]

use std::collections::HashMap;

use pkisn_core::cert::make_revocation;
use pkisn_core::log::{Log, LogConfig, LogError};
use pkisn_core::merkle;
use pkisn_core::rev_tree::{AbsenceProof, RegisteredCert, RevTree, RevTreeError, SubtreeAbsence};
use pkisn_core::time_tree::verify_consistency;
use pkisn_core::{
    CertChain, Certificate, Digest, EntryKind, KeyPair, KeyRole, RevocationKind, RevocationMessage, SignerRole,
    TbsCertificate, TimeTree, TimeTreeEntry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mth;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Trees of every size `1..=max` built one entry at a time, compared
/// against the reference hashing, with tampering at every proof.
pub fn check_merkle(seed: u64, max: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = TimeTree::new();
    let mut entries = Vec::new();
    for i in 0..max {
        let mut payload = vec![0u8; rng.gen_range(0..48)];
        rng.fill(&mut payload[..]);
        let e = TimeTreeEntry::new(EntryKind::Cert, i / 3, payload);
        entries.push(e.clone());
        tree.append(vec![e]).map_err(|e| e.to_string())?;
    }
    let leaves: Vec<mth::H> = entries.iter().map(|e| mth::leaf(&e.to_bytes())).collect();
    for n in 1..=max {
        let nu = n as usize;
        let root = tree.root_at(n);
        ensure!(root.0 == mth::mth(&leaves[..nu]), "seed {seed}: root mismatch at size {n}");
        ensure!(
            TimeTree::new().append(entries[..nu].to_vec()).unwrap() == root,
            "seed {seed}: rebuild differs at size {n}"
        );
        for i in 0..n {
            let p = tree.inclusion_proof_at(i, n).map_err(|e| e.to_string())?;
            let bytes = entries[i as usize].to_bytes();
            ensure!(p.verify(&bytes, &root), "seed {seed}: inclusion {i}/{n} rejected");
            ensure!(
                p.path.iter().map(|d| d.0).collect::<Vec<_>>() == mth::path(&leaves[..nu], i as usize),
                "seed {seed}: inclusion path {i}/{n} differs from reference"
            );
            let mut bad = bytes.clone();
            let at = rng.gen_range(0..bad.len());
            bad[at] ^= 1 << rng.gen_range(0..8);
            ensure!(!p.verify(&bad, &root), "seed {seed}: tampered leaf {i}/{n} accepted");
            if !p.path.is_empty() {
                let mut q = p.clone();
                let k = rng.gen_range(0..q.path.len());
                q.path[k].0[rng.gen_range(0..32)] ^= 1;
                ensure!(!q.verify(&bytes, &root), "seed {seed}: tampered path {i}/{n} accepted");
            }
            if n > 1 {
                let mut q = p.clone();
                q.leaf_index = (i + 1) % n;
                ensure!(!q.verify(&bytes, &root), "seed {seed}: wrong index {i}/{n} accepted");
            }
        }
        for m in 1..=n {
            let c = tree.consistency_proof(m, n).map_err(|e| e.to_string())?;
            let old = tree.root_at(m);
            ensure!(verify_consistency(&old, &root, &c), "seed {seed}: consistency {m}->{n} rejected");
            ensure!(
                c.nodes.iter().map(|d| d.0).collect::<Vec<_>>() == mth::consistency(&leaves[..nu], m as usize),
                "seed {seed}: consistency {m}->{n} differs from reference"
            );
            let mut forged = old;
            forged.0[rng.gen_range(0..32)] ^= 1;
            ensure!(!verify_consistency(&forged, &root, &c), "seed {seed}: forged old root {m}->{n} accepted");
            if !c.nodes.is_empty() {
                let mut q = c.clone();
                let k = rng.gen_range(0..q.nodes.len());
                q.nodes[k].0[rng.gen_range(0..32)] ^= 1;
                ensure!(!verify_consistency(&old, &root, &q), "seed {seed}: tampered consistency {m}->{n} accepted");
            }
        }
    }
    ensure!(merkle::empty_root().0 == mth::mth(&[]), "empty root differs");
    Ok(())
}

struct ForestCert {
    cert: Certificate,
    parent: Option<usize>,
    key: KeyPair,
    rk: Option<KeyPair>,
    reg_update: u64,
}

/// Random three-level forest of `n` certificates with about 8% revoked.
/// Every presence proof must carry exactly the logged revocations, and
/// absence must only be provable for hashes that are really absent.
pub fn check_rev_tree(seed: u64, n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vendor = KeyPair::derive(KeyRole::VendorKey, "forest-vendor");
    let n_roots = rng.gen_range(2..=5).min(n);
    let n_cas = n_roots + n / 10;
    let mut certs: Vec<ForestCert> = Vec::with_capacity(n);
    for i in 0..n {
        let is_ca = i < n_cas;
        let parent = match i {
            _ if i < n_roots => None,
            _ if is_ca => Some(rng.gen_range(0..n_roots)),
            _ => Some(rng.gen_range(0..n_cas)),
        };
        let label = format!("forest{seed}-{i}");
        let key = KeyPair::derive(if is_ca { KeyRole::StandardCa } else { KeyRole::StandardLeaf }, &label);
        let rk = is_ca.then(|| KeyPair::derive(KeyRole::RevocationKey, &label));
        let issuer = parent.map_or(&key, |p| &certs[p].key);
        let cert = TbsCertificate {
            serial: i as u64,
            subject_name: label.clone(),
            issuer_key_id: issuer.key_id(),
            subject_public_key: key.public(),
            is_ca,
            not_before: 0,
            not_after: 1_000_000,
            revocation_public_key: rk.as_ref().map(|k| k.public()),
        }
        .sign(issuer);
        let reg_update = match parent {
            None => rng.gen_range(1..=2),
            Some(p) => (certs[p].reg_update + rng.gen_range(0..=1)).min(4),
        };
        certs.push(ForestCert {
            cert,
            parent,
            key,
            rk,
            reg_update,
        });
    }
    let chain_of = |i: usize| {
        let mut v = vec![i];
        while let Some(p) = certs[*v.last().unwrap()].parent {
            v.push(p);
        }
        v.reverse();
        v
    };
    let chain_certs = |path: &[usize]| CertChain::new(path.iter().map(|&k| certs[k].cert.clone()).collect());

    // (target, message, update)
    let mut planned: Vec<(usize, RevocationMessage, u64)> = Vec::new();
    for (i, c) in certs.iter().enumerate() {
        if c.reg_update >= 5 || !rng.gen_ratio(8, 100) {
            continue;
        }
        for _ in 0..if rng.gen_ratio(1, 5) { 2 } else { 1 } {
            let path = chain_of(i);
            let depth = path.len() - 1;
            let mut roles = vec![SignerRole::Vendor];
            roles.extend((1..=depth).map(|d| SignerRole::ParentCa(d as u8)));
            roles.push(if c.cert.is_ca() { SignerRole::RevocationKey } else { SignerRole::OwnKey });
            let role = roles[rng.gen_range(0..roles.len())];
            let signer = match role {
                SignerRole::Vendor => &vendor,
                SignerRole::OwnKey => &c.key,
                SignerRole::RevocationKey => c.rk.as_ref().unwrap(),
                SignerRole::ParentCa(d) => &certs[path[depth - d as usize]].key,
            };
            let (kind, ts) = if c.cert.is_ca() {
                (RevocationKind::CaRevokeFrom, Some(rng.gen_range(0..1_000_000)))
            } else {
                (RevocationKind::LeafRevoke, None)
            };
            let msg = make_revocation(kind, &c.cert, ts, signer, role).map_err(|e| e.to_string())?;
            planned.push((i, msg, rng.gen_range(c.reg_update + 1..=5)));
        }
    }

    let roots = certs[..n_roots].iter().map(|c| c.cert.cert_hash()).collect();
    let mut cfg = LogConfig::new(roots, vendor.public(), 0);
    cfg.scheduling_period = 10;
    cfg.max_pending = usize::MAX;
    let mut log = Log::new(cfg, KeyPair::derive(KeyRole::LogKey, "forest-log"));
    let mut expected: Vec<Vec<(RevocationMessage, u64)>> = vec![Vec::new(); n];
    for j in 1..=5u64 {
        for i in (0..n).filter(|&i| certs[i].reg_update == j) {
            log.submit_chain(&chain_certs(&chain_of(i))).map_err(|e| e.to_string())?;
        }
        for (i, msg, _) in planned.iter().filter(|p| p.2 == j) {
            match log.submit_revocation(&chain_certs(&chain_of(*i)), msg) {
                Ok(_) if !expected[*i].iter().any(|(m, _)| m == msg) => expected[*i].push((msg.clone(), j * 10)),
                Ok(_) | Err(LogError::DuplicateRkRevocation) => {}
                Err(e) => return Err(format!("seed {seed}: revocation rejected: {e}")),
            }
        }
        log.run_update(j * 10).map_err(|e| e.to_string())?;
    }
    let revoked = expected.iter().filter(|e| !e.is_empty()).count();
    ensure!(n < 500 || (revoked * 100 >= n * 5 && revoked * 100 <= n * 11), "seed {seed}: {revoked}/{n} revoked");

    let state = log.state();
    let signed_root = log.latest_root().unwrap();
    let ids: Vec<Digest> = certs.iter().map(|c| c.cert.id_hash(c.reg_update * 10)).collect();
    let mut siblings: HashMap<Option<usize>, Vec<Digest>> = HashMap::new();
    for (c, id) in certs.iter().zip(&ids) {
        siblings.entry(c.parent).or_default().push(*id);
    }
    siblings.values_mut().for_each(|v| v.sort());
    for i in 0..n {
        let path = chain_of(i);
        let query: Vec<Digest> = path.iter().map(|&k| ids[k]).collect();
        let ts: Vec<u64> = path.iter().map(|&k| certs[k].reg_update * 10).collect();
        let resp = log.get_proof(&query).map_err(|e| format!("seed {seed}: proof for {i}: {e}"))?;
        ensure!(
            resp.proof.verify_chain(&chain_certs(&path), &ts, signed_root),
            "seed {seed}: proof for {i} does not verify"
        );
        for (level, &k) in resp.proof.levels.iter().zip(&path) {
            let got: Vec<(RevocationMessage, u64)> =
                level.revocations.iter().map(|r| (r.revocation.clone(), r.reg_ts)).collect();
            ensure!(got == expected[k], "seed {seed}: revocations of {k} differ in proof for {i}");
        }
        let absent = state.rev_tree().prove_absence(&query[..path.len() - 1], ids[i]);
        ensure!(
            matches!(absent, Err(RevTreeError::ActuallyPresent)),
            "seed {seed}: absence constructed for present {i}"
        );
        // Stitch an absence claim from genuine neighbours around a present leaf.
        let me = resp.proof.levels.last().unwrap();
        if me.leaf_index > 0 && me.leaf_index + 1 < me.subtree_size {
            let group = &siblings[&certs[i].parent];
            let neighbour = |idx: u64| {
                let mut q = query[..path.len() - 1].to_vec();
                q.push(group[idx as usize]);
                state.rev_tree().prove_chain(&q).unwrap().pop().unwrap()
            };
            let forged = AbsenceProof {
                missing: ids[i],
                prefix: resp.proof.levels[..path.len() - 1].to_vec(),
                subtree: SubtreeAbsence::Brackets {
                    left: Some(neighbour(me.leaf_index - 1)),
                    right: Some(neighbour(me.leaf_index + 1)),
                },
            };
            ensure!(forged.forest_root().is_none(), "seed {seed}: stitched absence accepted for {i}");
        }
    }
    for _ in 0..50 {
        let mut missing = Digest([0; 32]);
        rng.fill(&mut missing.0);
        let depth = rng.gen_range(0..3usize);
        let owner = rng.gen_range(0..n);
        let mut query: Vec<Digest> = chain_of(owner).iter().map(|&k| ids[k]).collect();
        query.truncate(depth.min(query.len()));
        query.push(missing);
        match log.get_proof(&query) {
            Err(LogError::UnknownLeaf { absence, .. }) => {
                ensure!(absence.verify(signed_root), "seed {seed}: honest absence proof rejected");
            }
            other => return Err(format!("seed {seed}: random hash reported present: {:?}", other.map(|_| ()))),
        }
    }
    let rebuilt = RevTree::rebuild(state.certs().map(|r| RegisteredCert {
        cert_hash: r.cert.cert_hash(),
        id_hash: r.cert.id_hash(r.reg_ts),
        parent: r.parent,
        revocations: r.revocations.clone(),
    }))
    .map_err(|e| e.to_string())?;
    ensure!(rebuilt.root() == state.rev_tree().root(), "seed {seed}: incremental root differs from rebuild");
    ensure!(state.rev_tree().is_sorted(), "seed {seed}: subtree order broken");
    Ok(())
}

pub const EXPIRY_PERIOD: u64 = 100;

pub struct ExpiringLog {
    pub log: Log,
    pub leaves: Vec<(CertChain, pkisn_core::log::ChainCommitment)>,
    pub now: u64,
}

/// Two roots and sixteen long-lived intermediates, then `n_leaves`
/// leaves spread over `updates` updates with lifetimes between a quarter
/// and three quarters of the whole horizon. About `revoke_pct`% of the
/// leaves are revoked during their lifetime. `after_update` runs after
/// every update with the update time.
pub fn expiring_log(
    seed: u64,
    n_leaves: usize,
    updates: u64,
    revoke_pct: u32,
    mut after_update: impl FnMut(&Log, u64) -> Result<(), String>,
) -> Result<ExpiringLog, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = EXPIRY_PERIOD;
    let horizon = updates * p;
    let vendor = KeyPair::derive(KeyRole::VendorKey, "expiry-vendor");
    let far = u64::MAX / 2;
    let ca = |label: &str, issuer: Option<&KeyPair>| {
        let key = KeyPair::derive(KeyRole::StandardCa, label);
        let cert = TbsCertificate {
            serial: 1,
            subject_name: label.into(),
            issuer_key_id: issuer.unwrap_or(&key).key_id(),
            subject_public_key: key.public(),
            is_ca: true,
            not_before: 0,
            not_after: far,
            revocation_public_key: Some(KeyPair::derive(KeyRole::RevocationKey, label).public()),
        }
        .sign(issuer.unwrap_or(&key));
        (cert, key)
    };
    let roots: Vec<(Certificate, KeyPair)> = (0..2).map(|r| ca(&format!("root{r}"), None)).collect();
    let inters: Vec<(Certificate, KeyPair, usize)> = (0..16)
        .map(|i| {
            let (c, k) = ca(&format!("inter{i}"), Some(&roots[i % 2].1));
            (c, k, i % 2)
        })
        .collect();
    let leaf_keys: Vec<KeyPair> = (0..16).map(|i| KeyPair::derive(KeyRole::StandardLeaf, &format!("lk{i}"))).collect();

    let mut cfg = LogConfig::new(roots.iter().map(|r| r.0.cert_hash()).collect(), vendor.public(), 0);
    cfg.scheduling_period = p;
    cfg.max_pending = usize::MAX;
    let mut log = Log::new(cfg, KeyPair::derive(KeyRole::LogKey, "expiry-log"));
    for (c, _, r) in &inters {
        log.submit_chain(&CertChain::new(vec![roots[*r].0.clone(), c.clone()]))
            .map_err(|e| e.to_string())?;
    }

    let mut leaves = Vec::with_capacity(n_leaves);
    let mut revs: Vec<Vec<(usize, RevocationMessage)>> = vec![Vec::new(); updates as usize + 1];
    let per_update = n_leaves.div_ceil(updates as usize);
    for j in 1..=updates {
        let t = j * p;
        for _ in 0..per_update.min(n_leaves - leaves.len()) {
            let i = leaves.len();
            let inter = rng.gen_range(0..inters.len());
            let key = &leaf_keys[i % leaf_keys.len()];
            let life = rng.gen_range(horizon / 4..=3 * horizon / 4);
            let leaf = TbsCertificate {
                serial: i as u64,
                subject_name: format!("leaf{i}.test"),
                issuer_key_id: inters[inter].1.key_id(),
                subject_public_key: key.public(),
                is_ca: false,
                not_before: 0,
                not_after: t - p + life,
                revocation_public_key: None,
            }
            .sign(&inters[inter].1);
            let chain = CertChain::new(vec![roots[inters[inter].2].0.clone(), inters[inter].0.clone(), leaf.clone()]);
            let cc = log.submit_chain(&chain).map_err(|e| e.to_string())?;
            // Leaves of the final update cannot be revoked, so the others
            // are revoked slightly more often.
            if j < updates && rng.gen_ratio(revoke_pct * updates as u32, 100 * (updates as u32 - 1)) {
                let at = rng.gen_range(j + 1..=(j + life / p - 1).min(updates));
                let (signer, role) = match rng.gen_range(0..3) {
                    0 => (&vendor, SignerRole::Vendor),
                    1 => (&inters[inter].1, SignerRole::ParentCa(1)),
                    _ => (key, SignerRole::OwnKey),
                };
                let msg = make_revocation(RevocationKind::LeafRevoke, &leaf, None, signer, role).map_err(|e| e.to_string())?;
                revs[at as usize].push((i, msg));
            }
            leaves.push((chain, cc));
        }
        for (i, msg) in std::mem::take(&mut revs[j as usize]) {
            log.submit_revocation(&leaves[i].0, &msg).map_err(|e| e.to_string())?;
        }
        log.run_update(t).map_err(|e| e.to_string())?;
        after_update(&log, t)?;
    }
    Ok(ExpiringLog {
        log,
        leaves,
        now: horizon,
    })
}

/// Syncs a lightweight and a full monitor alongside an expiring log and
/// checks that the minimized tree reproduces every signed root, serves the
/// same audit paths, and judges client proofs exactly like the replica.
pub fn check_light_monitor(seed: u64, n_leaves: usize, updates: u64) -> Result<(), String> {
    use pkisn_core::monitor::{build_delta, policy, FullMonitor, LightMonitor, RootCheck};
    let mut sync_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let log_pub = KeyPair::derive(KeyRole::LogKey, "expiry-log").public();
    let vendor_pub = KeyPair::derive(KeyRole::VendorKey, "expiry-vendor").public();
    let mut light = LightMonitor::new(log_pub);
    let mut full: Option<FullMonitor> = None;
    let mut seen_roots = Vec::new();
    let built = expiring_log(seed, n_leaves, updates, 8, |log, now| {
        let full = full.get_or_insert_with(|| FullMonitor::new(policy(log.config().trust_roots.clone(), vendor_pub), log_pub));
        full.full_sync(log).map_err(|e| format!("seed {seed}: full sync: {e}"))?;
        seen_roots.push(log.latest_root().unwrap().clone());
        if !sync_rng.gen_ratio(2, 3) {
            return Ok(());
        }
        let sr = log.latest_root().unwrap();
        let delta = build_delta(log.state(), sr, light.size(), now, EXPIRY_PERIOD);
        light.apply_delta(&delta).map_err(|e| format!("seed {seed}: delta at {now}: {e}"))?;
        for r in &seen_roots {
            ensure!(light.root_at(r.tree_size) == Some(r.root), "seed {seed}: light root at {} differs", r.tree_size);
        }
        let hashes = log.state().time_tree().hashes();
        for i in (0..light.size()).filter(|&i| light.stores_leaf(i)).step_by(7) {
            ensure!(
                light.inclusion_path(i) == Some(hashes.inclusion_path(i, light.size())),
                "seed {seed}: audit path for {i} differs"
            );
        }
        Ok(())
    })?;
    let log = &built.log;
    let full = full.unwrap();
    let sr = log.latest_root().unwrap();
    if light.size() != sr.tree_size {
        light
            .apply_delta(&build_delta(log.state(), sr, light.size(), built.now, EXPIRY_PERIOD))
            .map_err(|e| e.to_string())?;
    }
    let prunable = pkisn_core::monitor::prunable_entries(log.state(), built.now, EXPIRY_PERIOD);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..60 {
        let (chain, cc) = &built.leaves[rng.gen_range(0..built.leaves.len())];
        let ids: Vec<Digest> = chain.certs.iter().zip(cc.timestamps_root_first()).map(|(c, t)| c.id_hash(t)).collect();
        let mut resp = log.get_proof(&ids).map_err(|e| e.to_string())?;
        let by_full = |proof: &pkisn_core::log::ChainPresenceProof| {
            matches!(full.check_root(&resp.signed_root), Ok(RootCheck::Consistent))
                && cc.verify(&log_pub)
                && proof.verify_chain(chain, &cc.timestamps_root_first(), &resp.signed_root)
        };
        let honest = (light.verify_client_proof(chain, cc, &resp.proof, &resp.signed_root), by_full(&resp.proof));
        ensure!(honest == (true, true), "seed {seed}: honest proof judged {honest:?}");
        let leaf = chain.leaf().unwrap().cert_hash();
        let record = log.state().cert(&leaf).unwrap();
        let live = !prunable[record.entry_index as usize];
        if live {
            let want: Vec<(RevocationMessage, u64)> =
                record.revocations.iter().map(|r| (r.revocation.clone(), r.reg_ts)).collect();
            ensure!(light.revocations_of(&leaf) == want.as_slice(), "seed {seed}: light monitor lost revocations of a live leaf");
        }
        let last = resp.proof.levels.len() - 1;
        if resp.proof.levels[last].revocations.pop().is_none() {
            resp.proof.levels[last].id_hash.0[0] ^= 1;
        }
        let forged = (light.verify_client_proof(chain, cc, &resp.proof, &resp.signed_root), by_full(&resp.proof));
        ensure!(forged == (false, false), "seed {seed}: forged proof judged {forged:?}");
    }
    Ok(())
}

pub struct StorageReport {
    pub entries: u64,
    pub prunable: f64,
    pub revoked: f64,
    pub full_bytes: usize,
    pub light_bytes: usize,
}

impl StorageReport {
    pub fn ratio(&self) -> f64 {
        self.light_bytes as f64 / self.full_bytes as f64
    }
}

/// Storage of a lightweight monitor synced every few updates, against the
/// bytes of every complete entry.
pub fn light_storage(seed: u64, n_leaves: usize, updates: u64) -> Result<StorageReport, String> {
    use pkisn_core::monitor::{build_delta, prunable_entries, LightMonitor};
    let log_pub = KeyPair::derive(KeyRole::LogKey, "expiry-log").public();
    let mut light = LightMonitor::new(log_pub);
    let built = expiring_log(seed, n_leaves, updates, 8, |log, now| {
        if (now / EXPIRY_PERIOD).is_multiple_of(5) {
            let sr = log.latest_root().unwrap();
            let delta = build_delta(log.state(), sr, light.size(), now, EXPIRY_PERIOD);
            light.apply_delta(&delta).map_err(|e| e.to_string())?;
        }
        Ok(())
    })?;
    let state = built.log.state();
    let sr = built.log.latest_root().unwrap();
    if light.size() != sr.tree_size {
        light
            .apply_delta(&build_delta(state, sr, light.size(), built.now, EXPIRY_PERIOD))
            .map_err(|e| e.to_string())?;
    }
    let prunable = prunable_entries(state, built.now, EXPIRY_PERIOD);
    let leaf_count = state.certs().filter(|r| !r.cert.is_ca()).count();
    let revoked = state.certs().filter(|r| !r.revocations.is_empty()).count();
    let certs_prunable = state
        .certs()
        .filter(|r| !r.cert.is_ca() && prunable[r.entry_index as usize])
        .count();
    Ok(StorageReport {
        entries: state.time_tree().size(),
        prunable: certs_prunable as f64 / leaf_count as f64,
        revoked: revoked as f64 / leaf_count as f64,
        full_bytes: state.time_tree().entries().iter().map(|e| e.to_bytes().len()).sum(),
        light_bytes: light.storage_bytes(),
    })
}
