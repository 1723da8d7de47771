//! Blocking HTTP client for a running log service. Do not call it from
//! inside an async runtime.

use anyhow::{bail, Result};
use pkisn_core::log::{ChainCommitment, LogCommitment, ProofResponse, RevocationCommitment, SignedRoot};
use pkisn_core::monitor::{DeltaUpdate, LogSource};
use pkisn_core::tcrl::Tcrl;
use pkisn_core::{CertChain, ConsistencyProof, Digest, RevocationMessage, TimeTreeEntry};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::wire::*;

pub struct LogClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl LogClient {
    /// `base` is like `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Self {
        let base = if base.starts_with("http") { base.to_string() } else { format!("http://{base}") };
        LogClient {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::new(),
        }
    }

    fn finish<T: DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T> {
        let status = resp.status();
        if !status.is_success() {
            let msg = resp
                .json::<ErrorBody>()
                .map(|b| b.error)
                .unwrap_or_else(|_| status.to_string());
            bail!("log returned {status}: {msg}");
        }
        Ok(resp.json()?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::finish(self.http.post(format!("{}{path}", self.base)).json(body).send()?)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::finish(self.http.get(format!("{}{path}", self.base)).send()?)
    }

    pub fn submit_chain(&self, chain: &CertChain) -> Result<ChainCommitment> {
        let r: SubmitChainResponse = self.post("/v1/submit-chain", &SubmitChainRequest { chain: chain.clone() })?;
        Ok(r.cc)
    }

    pub fn submit_revocation(&self, chain: &CertChain, revocation: &RevocationMessage) -> Result<RevocationCommitment> {
        let r: SubmitRevocationResponse = self.post(
            "/v1/submit-revocation",
            &SubmitRevocationRequest {
                chain: chain.clone(),
                revocation: revocation.clone(),
            },
        )?;
        Ok(r.commitment)
    }

    pub fn proof(&self, id_hashes: &[Digest]) -> Result<ProofResponse> {
        self.post("/v1/proof", &ProofRequest { id_hashes: id_hashes.to_vec() })
    }

    pub fn root(&self) -> Result<Option<SignedRoot>> {
        Ok(self.get::<RootResponse>("/v1/root")?.signed_root)
    }

    pub fn consistency(&self, old: u64, new: u64) -> Result<ConsistencyProof> {
        Ok(self.get::<ConsistencyResponse>(&format!("/v1/consistency?old={old}&new={new}"))?.proof)
    }

    pub fn delta(&self, from: u64) -> Result<Option<DeltaUpdate>> {
        Ok(self.get::<DeltaResponse>(&format!("/v1/delta?from={from}"))?.delta)
    }

    pub fn submit_tcrl(&self, tcrl: &Tcrl) -> Result<LogCommitment> {
        let r: TcrlResponse = self.post("/v1/tcrl", &TcrlRequest { tcrl: tcrl.clone() })?;
        Ok(r.commitment)
    }

    /// Entries `[from, to)`, fetched in pages.
    pub fn entries(&self, from: u64, to: u64) -> Result<Vec<TimeTreeEntry>> {
        let mut out = Vec::new();
        let mut at = from;
        while at < to {
            let page: EntriesResponse = self.get(&format!("/v1/entries?from={at}&to={to}"))?;
            if page.entries.is_empty() {
                bail!("log served no entries at {at} (wanted up to {to})");
            }
            at += page.entries.len() as u64;
            out.extend(page.entries);
        }
        Ok(out)
    }
}

impl LogSource for LogClient {
    fn latest_root(&self) -> Result<Option<SignedRoot>, String> {
        self.root().map_err(|e| format!("{e:#}"))
    }

    fn entries(&self, from: u64, to: u64) -> Result<Vec<TimeTreeEntry>, String> {
        LogClient::entries(self, from, to).map_err(|e| format!("{e:#}"))
    }
}
