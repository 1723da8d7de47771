//! Hashing and signing primitives.
//!
//! SHA-256 with Merkle domain separation (`0x00` leaves, `0x01` interior
//! nodes) and Ed25519 signatures over a one-byte domain tag followed by the
//! canonical payload.

use std::fmt;
use std::str::FromStr;

use ring::digest::{Context, SHA256};
use ring::signature::{Ed25519KeyPair, KeyPair as _, UnparsedPublicKey, ED25519};
use serde::{Deserialize, Serialize};

use crate::encoding::{DecodeError, Decoder, Encoder};

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

/// A 32-byte SHA-256 output. Ordering is unsigned big-endian byte order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = hex::FromHexError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Plain SHA-256, used for key identifiers.
pub fn sha256(data: &[u8]) -> Digest {
    let out = ring::digest::digest(&SHA256, data);
    Digest(out.as_ref().try_into().unwrap())
}

pub fn hash_leaf(entry_bytes: &[u8]) -> Digest {
    let mut ctx = Context::new(&SHA256);
    ctx.update(&[LEAF_PREFIX]);
    ctx.update(entry_bytes);
    Digest(ctx.finish().as_ref().try_into().unwrap())
}

pub fn hash_node(left: &Digest, right: &Digest) -> Digest {
    let mut ctx = Context::new(&SHA256);
    ctx.update(&[NODE_PREFIX]);
    ctx.update(&left.0);
    ctx.update(&right.0);
    Digest(ctx.finish().as_ref().try_into().unwrap())
}

/// Registered signature domain tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DomainTag {
    LeafRevocation = 0x01,
    CaRevocation = 0x02,
    ChainCommitment = 0x03,
    SignedRoot = 0x04,
    RevocationCommitment = 0x05,
    TcrlCommitment = 0x06,
    Certificate = 0x07,
    TcrlVendor = 0x08,
    TcrlDelta = 0x09,
}

impl TryFrom<u8> for DomainTag {
    type Error = CryptoError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        use DomainTag::*;
        Ok(match v {
            0x01 => LeafRevocation,
            0x02 => CaRevocation,
            0x03 => ChainCommitment,
            0x04 => SignedRoot,
            0x05 => RevocationCommitment,
            0x06 => TcrlCommitment,
            0x07 => Certificate,
            0x08 => TcrlVendor,
            0x09 => TcrlDelta,
            other => return Err(CryptoError::UnregisteredTag(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("domain tag {0:#04x} is not registered")]
    UnregisteredTag(u8),
    #[error("invalid key material")]
    InvalidKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyRole {
    StandardCa,
    StandardLeaf,
    RevocationKey,
    VendorKey,
    LogKey,
}

impl FromStr for KeyRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "standard-ca" | "ca" => KeyRole::StandardCa,
            "standard-leaf" | "leaf" => KeyRole::StandardLeaf,
            "revocation-key" | "rk" => KeyRole::RevocationKey,
            "vendor-key" | "vendor" => KeyRole::VendorKey,
            "log-key" | "log" => KeyRole::LogKey,
            other => return Err(format!("unknown key role `{other}`")),
        })
    }
}

/// Raw Ed25519 public key bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn key_id(&self) -> Digest {
        sha256(&self.0)
    }

    pub fn from_slice(b: &[u8]) -> Result<Self, CryptoError> {
        b.try_into().map(PublicKey).map_err(|_| CryptoError::InvalidKey)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.0)[..16])
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        crate::serde_b64::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v: Vec<u8> = crate::serde_b64::deserialize(d)?;
        PublicKey::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer_key_id: Digest,
    pub payload_tag: u8,
    #[serde(with = "crate::serde_b64")]
    pub bytes: Vec<u8>,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Signature")
            .field("signer", &self.signer_key_id)
            .field("tag", &self.payload_tag)
            .finish_non_exhaustive()
    }
}

impl Signature {
    pub fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.signer_key_id)
            .u8(self.payload_tag)
            .bytes(&self.bytes);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Signature {
            signer_key_id: dec.digest()?,
            payload_tag: dec.u8()?,
            bytes: dec.bytes()?.to_vec(),
        })
    }
}

/// An Ed25519 signing key bound to the role it plays.
pub struct KeyPair {
    role: KeyRole,
    seed: [u8; 32],
    inner: Ed25519KeyPair,
    public: PublicKey,
}

impl KeyPair {
    pub fn from_seed(role: KeyRole, seed: [u8; 32]) -> Self {
        let inner = Ed25519KeyPair::from_seed_unchecked(&seed).expect("32-byte seed");
        let public = PublicKey(inner.public_key().as_ref().try_into().unwrap());
        KeyPair {
            role,
            seed,
            inner,
            public,
        }
    }

    pub fn generate(role: KeyRole) -> Self {
        use ring::rand::{SecureRandom, SystemRandom};
        let mut seed = [0u8; 32];
        SystemRandom::new()
            .fill(&mut seed)
            .expect("system randomness");
        Self::from_seed(role, seed)
    }

    /// Deterministic key derived from a label. Used by scenarios and tests
    /// so replays produce identical bytes.
    pub fn derive(role: KeyRole, label: &str) -> Self {
        let mut enc = Encoder::new();
        enc.raw(b"pkisn-derived-key").bytes(label.as_bytes());
        Self::from_seed(role, sha256(&enc.finish()).0)
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn key_id(&self) -> Digest {
        self.public.key_id()
    }

    pub fn seed(&self) -> &[u8; 32] {
        &self.seed
    }

    /// Signs `tag || payload`. Rejects tags outside the registered set.
    pub fn sign(&self, tag: u8, payload: &[u8]) -> Result<Signature, CryptoError> {
        let tag = DomainTag::try_from(tag)?;
        Ok(self.sign_tagged(tag, payload))
    }

    pub fn sign_tagged(&self, tag: DomainTag, payload: &[u8]) -> Signature {
        let mut msg = Vec::with_capacity(payload.len() + 1);
        msg.push(tag as u8);
        msg.extend_from_slice(payload);
        Signature {
            signer_key_id: self.key_id(),
            payload_tag: tag as u8,
            bytes: self.inner.sign(&msg).as_ref().to_vec(),
        }
    }
}

impl Clone for KeyPair {
    fn clone(&self) -> Self {
        Self::from_seed(self.role, self.seed)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("role", &self.role)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// True iff `sig` was produced by the holder of `public` over `tag || payload`.
pub fn verify(public: &PublicKey, tag: u8, payload: &[u8], sig: &Signature) -> bool {
    if sig.payload_tag != tag || sig.signer_key_id != public.key_id() {
        return false;
    }
    let mut msg = Vec::with_capacity(payload.len() + 1);
    msg.push(tag);
    msg.extend_from_slice(payload);
    UnparsedPublicKey::new(&ED25519, &public.0)
        .verify(&msg, &sig.bytes)
        .is_ok()
}

/// On-disk key file. The secret seed is hex, the public key base64.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyFile {
    pub role: KeyRole,
    pub seed: String,
    pub public: PublicKey,
}

impl From<&KeyPair> for KeyFile {
    fn from(k: &KeyPair) -> Self {
        KeyFile {
            role: k.role,
            seed: hex::encode(k.seed),
            public: k.public,
        }
    }
}

impl TryFrom<&KeyFile> for KeyPair {
    type Error = CryptoError;
    fn try_from(f: &KeyFile) -> Result<Self, Self::Error> {
        let mut seed = [0u8; 32];
        hex::decode_to_slice(&f.seed, &mut seed).map_err(|_| CryptoError::InvalidKey)?;
        let k = KeyPair::from_seed(f.role, seed);
        if k.public != f.public {
            return Err(CryptoError::InvalidKey);
        }
        Ok(k)
    }
}
