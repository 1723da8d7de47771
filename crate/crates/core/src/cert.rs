//! Native certificates, chains and revocation messages.
//!
//! Certificates use a deterministic canonical encoding in place of DER so
//! hashes and signatures are reproducible byte for byte.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crypto::{self, hash_leaf, Digest, DomainTag, KeyPair, KeyRole, PublicKey, Signature};
use crate::encoding::{DecodeError, Decoder, Encoder};

pub type TrustRoots = BTreeSet<Digest>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CertError {
    #[error("not_before must precede not_after")]
    InvalidValidity,
    #[error("revocation key must be present exactly for CA certificates")]
    RevocationKeyPresence,
    #[error("signer role not permitted for this revocation")]
    PolicyViolation,
    #[error("signing key does not match the declared signer role")]
    KeyMismatch,
    #[error("revocation timestamp must precede the target's expiry")]
    TimestampAfterExpiry,
    #[error("CA revocations require a revocation timestamp")]
    MissingRevTimestamp,
    #[error("leaf revocations carry no revocation timestamp")]
    UnexpectedRevTimestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("empty chain")]
    Empty,
    #[error("certificate {index}: {source}")]
    BadCertificate { index: usize, source: CertError },
    #[error("root certificate is not a self-signed CA")]
    RootNotSelfSigned,
    #[error("certificate {0} is not a CA but has a child")]
    IntermediateNotCa(usize),
    #[error("certificate {0} is not signed by its parent")]
    BadLinkSignature(usize),
}

/// Everything in a certificate except the issuer's signature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TbsCertificate {
    pub serial: u64,
    pub subject_name: String,
    pub issuer_key_id: Digest,
    pub subject_public_key: PublicKey,
    pub is_ca: bool,
    pub not_before: u64,
    pub not_after: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revocation_public_key: Option<PublicKey>,
}

impl TbsCertificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.serial)
            .bytes(self.subject_name.as_bytes())
            .digest(&self.issuer_key_id)
            .bytes(&self.subject_public_key.0)
            .bool(self.is_ca)
            .u64(self.not_before)
            .u64(self.not_after);
        match &self.revocation_public_key {
            Some(rk) => {
                enc.u8(1).bytes(&rk.0);
            }
            None => {
                enc.u8(0);
            }
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let serial = dec.u64()?;
        let subject_name = dec.string("subject_name")?;
        let issuer_key_id = dec.digest()?;
        let subject_public_key = PublicKey::from_slice(dec.bytes()?).map_err(|_| {
            DecodeError::InvalidValue {
                field: "subject_public_key",
            }
        })?;
        let is_ca = dec.bool("is_ca")?;
        let not_before = dec.u64()?;
        let not_after = dec.u64()?;
        let revocation_public_key = if dec.bool("has_rk")? {
            Some(PublicKey::from_slice(dec.bytes()?).map_err(|_| {
                DecodeError::InvalidValue {
                    field: "revocation_public_key",
                }
            })?)
        } else {
            None
        };
        Ok(TbsCertificate {
            serial,
            subject_name,
            issuer_key_id,
            subject_public_key,
            is_ca,
            not_before,
            not_after,
            revocation_public_key,
        })
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.finish()
    }

    pub fn sign(self, issuer: &KeyPair) -> Certificate {
        let issuer_signature = issuer.sign_tagged(DomainTag::Certificate, &self.canonical_bytes());
        Certificate {
            tbs: self,
            issuer_signature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(flatten)]
    pub tbs: TbsCertificate,
    pub issuer_signature: Signature,
}

impl Certificate {
    pub fn canonical_tbs_bytes(&self) -> Vec<u8> {
        self.tbs.canonical_bytes()
    }

    /// Full canonical encoding, signature included.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.tbs.encode(&mut enc);
        self.issuer_signature.encode(&mut enc);
        enc.finish()
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let tbs = TbsCertificate::decode(&mut dec)?;
        let issuer_signature = Signature::decode(&mut dec)?;
        dec.finish()?;
        Ok(Certificate {
            tbs,
            issuer_signature,
        })
    }

    pub fn cert_hash(&self) -> Digest {
        hash_leaf(&self.canonical_bytes())
    }

    /// `H(C_x || t_x)`: identifies the certificate together with its
    /// registration timestamp.
    pub fn id_hash(&self, reg_ts: u64) -> Digest {
        let mut bytes = self.canonical_bytes();
        bytes.extend_from_slice(&reg_ts.to_be_bytes());
        hash_leaf(&bytes)
    }

    pub fn is_ca(&self) -> bool {
        self.tbs.is_ca
    }

    pub fn subject_key_id(&self) -> Digest {
        self.tbs.subject_public_key.key_id()
    }

    pub fn is_self_signed(&self) -> bool {
        self.tbs.issuer_key_id == self.subject_key_id()
            && self.signed_by(&self.tbs.subject_public_key)
    }

    pub fn signed_by(&self, issuer: &PublicKey) -> bool {
        self.tbs.issuer_key_id == issuer.key_id()
            && crypto::verify(
                issuer,
                DomainTag::Certificate as u8,
                &self.canonical_tbs_bytes(),
                &self.issuer_signature,
            )
    }

    pub fn check_invariants(&self) -> Result<(), CertError> {
        if self.tbs.not_before >= self.tbs.not_after {
            return Err(CertError::InvalidValidity);
        }
        if self.tbs.revocation_public_key.is_some() != self.tbs.is_ca {
            return Err(CertError::RevocationKeyPresence);
        }
        Ok(())
    }

    pub fn valid_at(&self, now: u64) -> bool {
        self.tbs.not_before <= now && now <= self.tbs.not_after
    }
}

/// Ordered root→leaf certificate chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CertChain {
    pub certs: Vec<Certificate>,
}

impl CertChain {
    pub fn new(certs: Vec<Certificate>) -> Self {
        CertChain { certs }
    }

    pub fn len(&self) -> usize {
        self.certs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.certs.is_empty()
    }

    pub fn root(&self) -> Option<&Certificate> {
        self.certs.first()
    }

    pub fn leaf(&self) -> Option<&Certificate> {
        self.certs.last()
    }

    pub fn prefix(&self, len: usize) -> CertChain {
        CertChain::new(self.certs[..len].to_vec())
    }

    pub fn position_of(&self, cert_hash: &Digest) -> Option<usize> {
        self.certs.iter().position(|c| &c.cert_hash() == cert_hash)
    }

    /// Structural checks: self-signed CA root, every link signed by its
    /// parent, every certificate but the last is a CA. The terminal
    /// certificate may itself be a CA so CA certificates can be registered
    /// on their own.
    pub fn verify_structure(&self) -> Result<(), ChainError> {
        let root = self.root().ok_or(ChainError::Empty)?;
        for (index, c) in self.certs.iter().enumerate() {
            c.check_invariants()
                .map_err(|source| ChainError::BadCertificate { index, source })?;
        }
        if !root.is_ca() || !root.is_self_signed() {
            return Err(ChainError::RootNotSelfSigned);
        }
        for (i, pair) in self.certs.windows(2).enumerate() {
            let (parent, child) = (&pair[0], &pair[1]);
            if !parent.is_ca() {
                return Err(ChainError::IntermediateNotCa(i));
            }
            if !child.signed_by(&parent.tbs.subject_public_key) {
                return Err(ChainError::BadLinkSignature(i + 1));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RevocationKind {
    /// `Sig_k(H(C_x), revoke)` for leaf certificates.
    LeafRevoke,
    /// `Sig_k(H(C_x), revoke from rev_timestamp)` for CA certificates.
    CaRevokeFrom,
}

impl RevocationKind {
    fn tag(self) -> DomainTag {
        match self {
            RevocationKind::LeafRevoke => DomainTag::LeafRevocation,
            RevocationKind::CaRevokeFrom => DomainTag::CaRevocation,
        }
    }
}

/// Who signed a revocation. `ParentCa(d)` names the ancestor `d` levels
/// above the target (1 = direct issuer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignerRole {
    OwnKey,
    ParentCa(u8),
    RevocationKey,
    Vendor,
}

impl SignerRole {
    fn encode(self, enc: &mut Encoder) {
        let (code, depth) = match self {
            SignerRole::OwnKey => (0, 0),
            SignerRole::ParentCa(d) => (1, d),
            SignerRole::RevocationKey => (2, 0),
            SignerRole::Vendor => (3, 0),
        };
        enc.u8(code).u8(depth);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let code = dec.u8()?;
        let depth = dec.u8()?;
        Ok(match (code, depth) {
            (0, 0) => SignerRole::OwnKey,
            (1, d) if d > 0 => SignerRole::ParentCa(d),
            (2, 0) => SignerRole::RevocationKey,
            (3, 0) => SignerRole::Vendor,
            _ => {
                return Err(DecodeError::InvalidValue {
                    field: "signer_role",
                })
            }
        })
    }
}

/// The revocation policy matrix: which signer roles may issue which kind.
pub fn policy_allows(kind: RevocationKind, role: SignerRole) -> bool {
    match (kind, role) {
        (_, SignerRole::ParentCa(0)) => false,
        (RevocationKind::LeafRevoke, SignerRole::OwnKey | SignerRole::ParentCa(_) | SignerRole::Vendor) => true,
        (
            RevocationKind::CaRevokeFrom,
            SignerRole::RevocationKey | SignerRole::ParentCa(_) | SignerRole::Vendor,
        ) => true,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RevocationMessage {
    pub kind: RevocationKind,
    pub target_cert_hash: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rev_timestamp: Option<u64>,
    pub signer_role: SignerRole,
    pub signature: Signature,
}

impl RevocationMessage {
    pub fn signer_key_id(&self) -> Digest {
        self.signature.signer_key_id
    }

    /// Bytes covered by the signature, without the domain tag.
    pub fn signed_payload(kind: RevocationKind, target: &Digest, rev_ts: Option<u64>) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.digest(target);
        if kind == RevocationKind::CaRevokeFrom {
            enc.u64(rev_ts.unwrap_or_default());
        }
        enc.finish()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(self.kind.tag() as u8).digest(&self.target_cert_hash);
        if self.kind == RevocationKind::CaRevokeFrom {
            enc.u64(self.rev_timestamp.unwrap_or_default());
        }
        self.signer_role.encode(&mut enc);
        self.signature.encode(&mut enc);
        enc.finish()
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let kind = match dec.u8()? {
            0x01 => RevocationKind::LeafRevoke,
            0x02 => RevocationKind::CaRevokeFrom,
            _ => return Err(DecodeError::InvalidValue { field: "kind" }),
        };
        let target_cert_hash = dec.digest()?;
        let rev_timestamp = match kind {
            RevocationKind::CaRevokeFrom => Some(dec.u64()?),
            RevocationKind::LeafRevoke => None,
        };
        let signer_role = SignerRole::decode(&mut dec)?;
        let signature = Signature::decode(&mut dec)?;
        dec.finish()?;
        Ok(RevocationMessage {
            kind,
            target_cert_hash,
            rev_timestamp,
            signer_role,
            signature,
        })
    }

    pub fn rev_hash(&self) -> Digest {
        hash_leaf(&self.canonical_bytes())
    }
}

fn expected_key_role(role: SignerRole) -> KeyRole {
    match role {
        SignerRole::OwnKey => KeyRole::StandardLeaf,
        SignerRole::ParentCa(_) => KeyRole::StandardCa,
        SignerRole::RevocationKey => KeyRole::RevocationKey,
        SignerRole::Vendor => KeyRole::VendorKey,
    }
}

/// Builds and signs a revocation of `target`.
pub fn make_revocation(
    kind: RevocationKind,
    target: &Certificate,
    rev_timestamp: Option<u64>,
    signer: &KeyPair,
    signer_role: SignerRole,
) -> Result<RevocationMessage, CertError> {
    let kind_matches_target = match kind {
        RevocationKind::LeafRevoke => !target.is_ca(),
        RevocationKind::CaRevokeFrom => target.is_ca(),
    };
    if !kind_matches_target || !policy_allows(kind, signer_role) {
        return Err(CertError::PolicyViolation);
    }
    if signer.role() != expected_key_role(signer_role) {
        return Err(CertError::KeyMismatch);
    }
    match signer_role {
        SignerRole::OwnKey if signer.public() != target.tbs.subject_public_key => {
            return Err(CertError::KeyMismatch)
        }
        SignerRole::RevocationKey if Some(signer.public()) != target.tbs.revocation_public_key => {
            return Err(CertError::KeyMismatch)
        }
        _ => {}
    }
    match (kind, rev_timestamp) {
        (RevocationKind::CaRevokeFrom, None) => return Err(CertError::MissingRevTimestamp),
        (RevocationKind::CaRevokeFrom, Some(ts)) if ts >= target.tbs.not_after => {
            return Err(CertError::TimestampAfterExpiry)
        }
        (RevocationKind::LeafRevoke, Some(_)) => return Err(CertError::UnexpectedRevTimestamp),
        _ => {}
    }
    let target_cert_hash = target.cert_hash();
    let payload = RevocationMessage::signed_payload(kind, &target_cert_hash, rev_timestamp);
    Ok(RevocationMessage {
        kind,
        target_cert_hash,
        rev_timestamp,
        signer_role,
        signature: signer.sign_tagged(kind.tag(), &payload),
    })
}

/// Resolves the public key a revocation claims to be signed with.
pub fn signer_public_key(
    rev: &RevocationMessage,
    target: &Certificate,
    chain: &CertChain,
    vendor_pub: &PublicKey,
) -> Option<PublicKey> {
    let idx = chain.position_of(&rev.target_cert_hash)?;
    match rev.signer_role {
        SignerRole::OwnKey => Some(target.tbs.subject_public_key),
        SignerRole::ParentCa(d) => {
            let d = d as usize;
            (d >= 1 && d <= idx).then(|| chain.certs[idx - d].tbs.subject_public_key)
        }
        SignerRole::RevocationKey => target.tbs.revocation_public_key,
        SignerRole::Vendor => Some(*vendor_pub),
    }
}

/// Checks that `rev` legitimately revokes `target` under the policy
/// matrix. Never consults the clock.
pub fn verify_revocation(
    rev: &RevocationMessage,
    target: &Certificate,
    chain: &CertChain,
    vendor_pub: &PublicKey,
) -> bool {
    if rev.target_cert_hash != target.cert_hash() {
        return false;
    }
    let kind_matches_target = match rev.kind {
        RevocationKind::LeafRevoke => !target.is_ca() && rev.rev_timestamp.is_none(),
        RevocationKind::CaRevokeFrom => {
            target.is_ca()
                && matches!(rev.rev_timestamp, Some(ts) if ts < target.tbs.not_after)
        }
    };
    if !kind_matches_target || !policy_allows(rev.kind, rev.signer_role) {
        return false;
    }
    let Some(key) = signer_public_key(rev, target, chain, vendor_pub) else {
        return false;
    };
    let payload = RevocationMessage::signed_payload(rev.kind, &rev.target_cert_hash, rev.rev_timestamp);
    crypto::verify(&key, rev.kind.tag() as u8, &payload, &rev.signature)
}

/// Exact, ASCII case-insensitive name match.
pub fn name_matches(cert: &Certificate, name: &str) -> bool {
    cert.tbs.subject_name.eq_ignore_ascii_case(name)
}

/// The conventional part of validation: name, chain signatures, trust
/// anchor and validity windows.
pub fn pre_validate(chain: &CertChain, name: &str, trust_roots: &TrustRoots, now: u64) -> bool {
    if chain.verify_structure().is_err() {
        return false;
    }
    let (Some(root), Some(leaf)) = (chain.root(), chain.leaf()) else {
        return false;
    };
    !leaf.is_ca()
        && name_matches(leaf, name)
        && trust_roots.contains(&root.cert_hash())
        && chain.certs.iter().all(|c| c.valid_at(now))
}
