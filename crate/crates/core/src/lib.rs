//! Certificate and revocation transparency log.
//!
//! A log keeps two authenticated structures: a chronological [`TimeTree`]
//! over every accepted object and a [`RevTree`] forest that mirrors the CA
//! hierarchy and carries each certificate's revocations. Clients combine a
//! chain commitment, a presence proof and a signed root to compute
//! legitimacy periods and decide whether a chain is valid.

pub mod cert;
pub mod crypto;
pub mod encoding;
pub mod fixtures;
pub mod log;
pub mod merkle;
pub mod monitor;
pub mod rev_tree;
pub mod serde_b64;
pub mod tcrl;
pub mod time_tree;
pub mod validator;

pub use cert::{CertChain, Certificate, RevocationKind, RevocationMessage, SignerRole, TbsCertificate, TrustRoots};
pub use crypto::{hash_leaf, hash_node, Digest, KeyPair, KeyRole, PublicKey, Signature};
pub use time_tree::{ConsistencyProof, EntryKind, InclusionProof, TimeTree, TimeTreeEntry};
