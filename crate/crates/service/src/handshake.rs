//! Server-driven deployment as a message exchange: the server keeps a
//! fresh proof for its chain and staples it into every handshake.

use pkisn_core::log::{ChainCommitment, ChainPresenceProof, Log, LogError, PendingRevocation, ProofResponse, SignedRoot};
use pkisn_core::validator::{is_valid, Reason, ValidationInput, Verdict};
use pkisn_core::{CertChain, Digest, PublicKey, TrustRoots};
use serde::{Deserialize, Serialize};

/// Everything the client receives in one message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerHello {
    pub chain: CertChain,
    pub cc: ChainCommitment,
    pub proof: Option<ChainPresenceProof>,
    pub signed_root: Option<SignedRoot>,
    pub pending: Vec<PendingRevocation>,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub chain: CertChain,
    pub cc: ChainCommitment,
    cached: Option<ProofResponse>,
    refreshed_at: Option<u64>,
}

impl ServerState {
    pub fn new(chain: CertChain, cc: ChainCommitment) -> Self {
        ServerState {
            chain,
            cc,
            cached: None,
            refreshed_at: None,
        }
    }

    /// `H(C_x || t_x)` for the chain, root first.
    pub fn id_hashes(&self) -> Vec<Digest> {
        self.chain
            .certs
            .iter()
            .zip(self.cc.timestamps_root_first())
            .map(|(c, t)| c.id_hash(t))
            .collect()
    }

    /// Fetches a fresh proof and signed root, as done once per period.
    pub fn refresh(&mut self, log: &Log, now: u64) -> Result<(), LogError> {
        self.cached = Some(log.get_proof(&self.id_hashes())?);
        self.refreshed_at = Some(now);
        Ok(())
    }

    pub fn install(&mut self, response: ProofResponse, now: u64) {
        self.cached = Some(response);
        self.refreshed_at = Some(now);
    }

    pub fn refreshed_at(&self) -> Option<u64> {
        self.refreshed_at
    }

    pub fn hello(&self) -> ServerHello {
        ServerHello {
            chain: self.chain.clone(),
            cc: self.cc.clone(),
            proof: self.cached.as_ref().map(|r| r.proof.clone()),
            signed_root: self.cached.as_ref().map(|r| r.signed_root.clone()),
            pending: self.cached.as_ref().map(|r| r.pending.clone()).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientValidator {
    pub trust_roots: TrustRoots,
    pub log_pub: PublicKey,
    pub vendor_pub: PublicKey,
    pub max_root_age: u64,
}

impl ClientValidator {
    pub fn verify(&self, hello: &ServerHello, name: &str, now: u64) -> Verdict {
        let (Some(proof), Some(signed_root)) = (&hello.proof, &hello.signed_root) else {
            return Verdict::fail(Reason::StaleRoot);
        };
        is_valid(&ValidationInput {
            chain: &hello.chain,
            cc: &hello.cc,
            proof,
            signed_root,
            pending: &hello.pending,
            name,
            now,
            trust_roots: &self.trust_roots,
            log_pub: &self.log_pub,
            vendor_pub: &self.vendor_pub,
            max_root_age: self.max_root_age,
        })
    }
}

/// One simulated handshake: the server sends its stapled state and the
/// client validates it at `now`.
pub fn handshake_sim(server: &ServerState, client: &ClientValidator, name: &str, now: u64) -> Verdict {
    client.verify(&server.hello(), name, now)
}
