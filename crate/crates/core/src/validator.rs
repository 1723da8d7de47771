//! Client-side complete certificate validation.
//!
//! A chain is accepted when it passes conventional validation, the proof
//! matches the chain commitment and a fresh signed root, every
//! certificate was registered inside its parent's legitimacy period, and
//! the current time lies inside the leaf's legitimacy period.

use serde::{Deserialize, Serialize};

use crate::cert::{pre_validate, verify_revocation, CertChain, Certificate, RevocationKind, RevocationMessage, SignerRole, TrustRoots};
use crate::crypto::{Digest, DomainTag, PublicKey};
use crate::log::{ChainCommitment, ChainPresenceProof, PendingRevocation, SignedRoot};
use crate::tcrl::Tcrl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cause {
    Expiry,
    VendorRev,
    RkRev,
    ParentRev,
    OwnRev,
    Unrevoked,
}

impl Cause {
    pub fn is_revocation(self) -> bool {
        !matches!(self, Cause::Expiry | Cause::Unrevoked)
    }
}

/// Half-open `[begin, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegitimacyPeriod {
    pub begin: u64,
    pub end: u64,
    pub cause: Cause,
    /// The bounding revocation has not been merged into the log yet.
    #[serde(default)]
    pub pending: bool,
}

impl LegitimacyPeriod {
    pub fn contains(&self, t: u64) -> bool {
        self.begin <= t && t < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.begin
    }
}

/// A revocation as seen by the validator: its registration time and
/// whether it is still only committed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedRevocation {
    pub revocation: RevocationMessage,
    pub reg_ts: u64,
    pub pending: bool,
}

impl ObservedRevocation {
    pub fn logged(revocation: RevocationMessage, reg_ts: u64) -> Self {
        ObservedRevocation {
            revocation,
            reg_ts,
            pending: false,
        }
    }
}

/// Priority rank; higher wins.
fn rank(role: SignerRole) -> u8 {
    match role {
        SignerRole::Vendor => 3,
        SignerRole::RevocationKey => 2,
        SignerRole::ParentCa(_) => 1,
        SignerRole::OwnKey => 0,
    }
}

fn cause_of(role: SignerRole) -> Cause {
    match role {
        SignerRole::Vendor => Cause::VendorRev,
        SignerRole::RevocationKey => Cause::RkRev,
        SignerRole::ParentCa(_) => Cause::ParentRev,
        SignerRole::OwnKey => Cause::OwnRev,
    }
}

/// `ancestor_lps` is root first and ends with the direct parent.
fn applicable(rev: &ObservedRevocation, ancestor_lps: &[LegitimacyPeriod]) -> bool {
    match rev.revocation.signer_role {
        SignerRole::ParentCa(d) => {
            let d = d as usize;
            d >= 1 && d <= ancestor_lps.len() && ancestor_lps[ancestor_lps.len() - d].contains(rev.reg_ts)
        }
        _ => true,
    }
}

/// Legitimacy period of a CA certificate. The highest class (vendor, then
/// revocation key, then parent CA) with an applicable revocation decides;
/// within it the earliest revocation timestamp wins.
pub fn determine_lp_ca(
    cert: &Certificate,
    t_x: u64,
    revocations: &[ObservedRevocation],
    ancestor_lps: &[LegitimacyPeriod],
) -> LegitimacyPeriod {
    let not_after = cert.tbs.not_after;
    let cutoff = |r: &ObservedRevocation| r.revocation.rev_timestamp.unwrap_or(0);
    let candidates = revocations
        .iter()
        .filter(|r| r.revocation.kind == RevocationKind::CaRevokeFrom && applicable(r, ancestor_lps));
    let Some(top) = candidates.clone().map(|r| rank(r.revocation.signer_role)).max() else {
        return LegitimacyPeriod {
            begin: t_x,
            end: not_after,
            cause: Cause::Unrevoked,
            pending: false,
        };
    };
    let winner = candidates
        .filter(|r| rank(r.revocation.signer_role) == top)
        .min_by_key(|r| (cutoff(r), r.pending))
        .unwrap();
    let at = cutoff(winner);
    if at >= not_after {
        return LegitimacyPeriod {
            begin: t_x,
            end: not_after,
            cause: Cause::Expiry,
            pending: false,
        };
    }
    LegitimacyPeriod {
        begin: t_x,
        end: at,
        cause: cause_of(winner.revocation.signer_role),
        pending: winner.pending,
    }
}

/// Legitimacy period of a leaf. It ends at the earliest applicable
/// revocation's registration time; the cause names the highest class
/// (vendor, then parent CA, then owner) among applicable revocations.
pub fn determine_lp_leaf(
    cert: &Certificate,
    t_x: u64,
    revocations: &[ObservedRevocation],
    ancestor_lps: &[LegitimacyPeriod],
) -> LegitimacyPeriod {
    let not_after = cert.tbs.not_after;
    let applicable: Vec<&ObservedRevocation> = revocations
        .iter()
        .filter(|r| r.revocation.kind == RevocationKind::LeafRevoke && applicable(r, ancestor_lps))
        .collect();
    let (Some(first), Some(top)) = (
        applicable.iter().min_by_key(|r| (r.reg_ts, r.pending)),
        applicable.iter().map(|r| rank(r.revocation.signer_role)).max(),
    ) else {
        return LegitimacyPeriod {
            begin: t_x,
            end: not_after,
            cause: Cause::Unrevoked,
            pending: false,
        };
    };
    if first.reg_ts >= not_after {
        return LegitimacyPeriod {
            begin: t_x,
            end: not_after,
            cause: Cause::Expiry,
            pending: false,
        };
    }
    let cause = applicable
        .iter()
        .find(|r| rank(r.revocation.signer_role) == top)
        .map(|r| cause_of(r.revocation.signer_role))
        .unwrap();
    LegitimacyPeriod {
        begin: t_x,
        end: first.reg_ts,
        cause,
        pending: first.pending,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    PreValidateFail,
    ProofMismatch,
    StaleRoot,
    BadSignature,
    RegOutsideParentLP,
    LeafRevoked,
    LeafExpired,
    EmptyLP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Success,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertVerdict {
    pub cert_hash: Digest,
    pub lp_begin: u64,
    pub lp_end: u64,
    pub cause: Cause,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pending: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub reason: Option<Reason>,
    pub per_cert: Vec<CertVerdict>,
}

impl Verdict {
    pub fn fail(reason: Reason) -> Self {
        Verdict {
            decision: Decision::Fail,
            reason: Some(reason),
            per_cert: Vec::new(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.decision == Decision::Success
    }
}

/// Everything a client has when checking a chain.
#[derive(Debug, Clone)]
pub struct ValidationInput<'a> {
    pub chain: &'a CertChain,
    pub cc: &'a ChainCommitment,
    pub proof: &'a ChainPresenceProof,
    pub signed_root: &'a SignedRoot,
    pub pending: &'a [PendingRevocation],
    pub name: &'a str,
    pub now: u64,
    pub trust_roots: &'a TrustRoots,
    pub log_pub: &'a PublicKey,
    pub vendor_pub: &'a PublicKey,
    pub max_root_age: u64,
}

fn cc_matches(chain: &CertChain, cc: &ChainCommitment) -> bool {
    cc.timestamps.len() == chain.len() && chain.leaf().map(|l| l.cert_hash()) == Some(cc.leaf_cert_hash)
}

/// Checks signatures, the chain/commitment/proof match and root
/// freshness. Returns the first failing reason.
pub fn check_proofs(input: &ValidationInput<'_>) -> Result<(), Reason> {
    if !input.cc.verify(input.log_pub) || !input.signed_root.verify(input.log_pub) {
        return Err(Reason::BadSignature);
    }
    if !cc_matches(input.chain, input.cc) {
        return Err(Reason::ProofMismatch);
    }
    if !input
        .proof
        .verify_chain(input.chain, &input.cc.timestamps_root_first(), input.signed_root)
    {
        return Err(Reason::ProofMismatch);
    }
    if input.now.saturating_sub(input.signed_root.timestamp) > input.max_root_age {
        return Err(Reason::StaleRoot);
    }
    Ok(())
}

pub fn verify_proofs(input: &ValidationInput<'_>) -> bool {
    check_proofs(input).is_ok()
}

/// Runs the legitimacy-period part of validation once revocations have
/// been collected per chain position (root first).
pub fn decide(
    chain: &CertChain,
    timestamps_root_first: &[u64],
    revocations: &[Vec<ObservedRevocation>],
    now: u64,
    vendor_pub: &PublicKey,
) -> Verdict {
    for (cert, revs) in chain.certs.iter().zip(revocations) {
        if revs
            .iter()
            .any(|r| !verify_revocation(&r.revocation, cert, chain, vendor_pub))
        {
            return Verdict::fail(Reason::BadSignature);
        }
    }
    let mut lps: Vec<LegitimacyPeriod> = Vec::with_capacity(chain.len());
    let mut per_cert = Vec::with_capacity(chain.len());
    let mut failure = None;
    for (k, cert) in chain.certs.iter().enumerate() {
        let t_x = timestamps_root_first[k];
        if k > 0 && failure.is_none() && !lps[k - 1].contains(t_x) {
            failure = Some(Reason::RegOutsideParentLP);
        }
        let lp = if cert.is_ca() {
            determine_lp_ca(cert, t_x, &revocations[k], &lps)
        } else {
            determine_lp_leaf(cert, t_x, &revocations[k], &lps)
        };
        per_cert.push(CertVerdict {
            cert_hash: cert.cert_hash(),
            lp_begin: lp.begin,
            lp_end: lp.end,
            cause: lp.cause,
            pending: lp.pending,
        });
        lps.push(lp);
    }
    let leaf_lp = lps.last().expect("non-empty chain");
    if failure.is_none() && !leaf_lp.contains(now) {
        failure = Some(if leaf_lp.cause.is_revocation() && now >= leaf_lp.end {
            Reason::LeafRevoked
        } else if now >= chain.leaf().unwrap().tbs.not_after {
            Reason::LeafExpired
        } else {
            Reason::EmptyLP
        });
    }
    Verdict {
        decision: if failure.is_none() { Decision::Success } else { Decision::Fail },
        reason: failure,
        per_cert,
    }
}

/// Complete certificate validation against a presence proof.
pub fn is_valid(input: &ValidationInput<'_>) -> Verdict {
    if input.chain.is_empty() || !pre_validate(input.chain, input.name, input.trust_roots, input.now) {
        return Verdict::fail(Reason::PreValidateFail);
    }
    if let Err(reason) = check_proofs(input) {
        return Verdict::fail(reason);
    }
    let mut revocations: Vec<Vec<ObservedRevocation>> = input
        .proof
        .levels
        .iter()
        .map(|l| {
            l.revocations
                .iter()
                .map(|r| ObservedRevocation::logged(r.revocation.clone(), r.reg_ts))
                .collect()
        })
        .collect();
    for p in input.pending {
        let hash_ok = p.commitment.hash == p.revocation.rev_hash();
        if !hash_ok || !p.commitment.verify(DomainTag::RevocationCommitment, input.log_pub) {
            return Verdict::fail(Reason::BadSignature);
        }
        let Some(pos) = input.chain.position_of(&p.revocation.target_cert_hash) else {
            continue;
        };
        if revocations[pos].iter().any(|r| r.revocation == p.revocation) {
            continue;
        }
        // Not merged yet: treated as registered at the current root.
        revocations[pos].push(ObservedRevocation {
            revocation: p.revocation.clone(),
            reg_ts: input.signed_root.timestamp,
            pending: true,
        });
    }
    decide(
        input.chain,
        &input.cc.timestamps_root_first(),
        &revocations,
        input.now,
        input.vendor_pub,
    )
}

/// Validation with a locally stored TCRL instead of a presence proof.
/// The TCRL must already have passed [`crate::tcrl::verify_tcrl`].
#[allow(clippy::too_many_arguments)]
pub fn validate_with_tcrl(
    chain: &CertChain,
    cc: &ChainCommitment,
    tcrl: &Tcrl,
    name: &str,
    now: u64,
    trust_roots: &TrustRoots,
    log_pub: &PublicKey,
    vendor_pub: &PublicKey,
) -> Verdict {
    if chain.is_empty() || !pre_validate(chain, name, trust_roots, now) {
        return Verdict::fail(Reason::PreValidateFail);
    }
    if !cc.verify(log_pub) {
        return Verdict::fail(Reason::BadSignature);
    }
    if !cc_matches(chain, cc) {
        return Verdict::fail(Reason::ProofMismatch);
    }
    let revocations: Vec<Vec<ObservedRevocation>> = chain
        .certs
        .iter()
        .map(|c| {
            tcrl.lookup(&c.cert_hash())
                .into_iter()
                .map(|(r, ts)| ObservedRevocation::logged(r, ts))
                .collect()
        })
        .collect();
    decide(chain, &cc.timestamps_root_first(), &revocations, now, vendor_pub)
}
