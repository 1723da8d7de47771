//! JSON bodies of the HTTP API. Hashes are lowercase hex, byte blobs
//! base64.

use pkisn_core::log::{ChainCommitment, LogCommitment, RevocationCommitment, SignedRoot};
use pkisn_core::monitor::DeltaUpdate;
use pkisn_core::tcrl::Tcrl;
use pkisn_core::{CertChain, ConsistencyProof, Digest, RevocationMessage, TimeTreeEntry};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitChainRequest {
    pub chain: CertChain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitChainResponse {
    pub cc: ChainCommitment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRevocationRequest {
    pub chain: CertChain,
    pub revocation: RevocationMessage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRevocationResponse {
    pub commitment: RevocationCommitment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProofRequest {
    /// Root first.
    pub id_hashes: Vec<Digest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RootResponse {
    pub signed_root: Option<SignedRoot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyQuery {
    pub old: u64,
    pub new: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyResponse {
    pub proof: ConsistencyProof,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaQuery {
    pub from: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaResponse {
    pub delta: Option<DeltaUpdate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TcrlRequest {
    pub tcrl: Tcrl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TcrlResponse {
    pub commitment: LogCommitment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntriesQuery {
    pub from: u64,
    pub to: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntriesResponse {
    pub entries: Vec<TimeTreeEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
