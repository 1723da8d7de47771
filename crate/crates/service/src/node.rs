//! A log bound to a data directory and a clock. All mutations go through
//! `&mut self`; the HTTP layer serializes them behind one mutex.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use pkisn_core::log::{
    ChainCommitment, Log, LogCommitment, LogConfig, LogError, LogState, ProofResponse, RevocationCommitment, SignedRoot,
};
use pkisn_core::monitor::{build_delta, DeltaUpdate};
use pkisn_core::tcrl::{commit_tcrl, Tcrl, TcrlError};
use pkisn_core::{CertChain, ConsistencyProof, Digest, KeyPair, PublicKey, RevocationMessage, TimeTreeEntry, TrustRoots};

use crate::clock::Clock;
use crate::store::{Meta, PendingRecord, Store};

#[derive(Debug, Clone)]
pub struct NodeParams {
    pub data_dir: std::path::PathBuf,
    pub scheduling_period: u64,
    pub genesis: Option<u64>,
    pub trust_roots: TrustRoots,
    pub vendor_public_key: PublicKey,
    pub max_pending: Option<usize>,
}

impl NodeParams {
    pub fn from_config(cfg: &crate::config::ServiceConfig) -> Result<(Self, KeyPair)> {
        cfg.validate()?;
        Ok((
            NodeParams {
                data_dir: cfg.data_dir.clone(),
                scheduling_period: cfg.scheduling_period,
                genesis: cfg.genesis,
                trust_roots: cfg.trust_roots()?.0,
                vendor_public_key: cfg.vendor_public()?,
                max_pending: cfg.max_pending,
            },
            cfg.log_key()?,
        ))
    }
}

/// What recovery found in the data directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Recovery {
    pub entries: u64,
    pub roots: usize,
    pub replayed_pending: usize,
    pub rejected_pending: usize,
    pub dropped_partial_entries: usize,
    pub truncated_bytes: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Tcrl(#[from] TcrlError),
    #[error("persistence failed: {0:#}")]
    Storage(anyhow::Error),
}

pub struct Node {
    log: Log,
    store: Store,
    clock: Arc<dyn Clock>,
}

impl Node {
    /// Opens or initializes the data directory and rebuilds the log from
    /// it. Missed updates are not run here; see [`Node::tick`].
    pub fn open(params: &NodeParams, key: KeyPair, clock: Arc<dyn Clock>) -> Result<(Node, Recovery)> {
        let (mut store, rec) = Store::open(&params.data_dir)?;
        let meta = match rec.meta {
            Some(m) => {
                if m.scheduling_period != params.scheduling_period {
                    bail!(
                        "data directory was created with scheduling period {} but config says {}",
                        m.scheduling_period,
                        params.scheduling_period
                    );
                }
                if m.log_public_key != key.public() {
                    bail!("data directory belongs to a different log key");
                }
                m
            }
            None => {
                if !rec.entries.is_empty() {
                    bail!("data directory has entries but no metadata");
                }
                let m = Meta {
                    genesis: params.genesis.unwrap_or_else(|| clock.now()),
                    scheduling_period: params.scheduling_period,
                    log_public_key: key.public(),
                };
                store.write_meta(&m)?;
                m
            }
        };
        let mut config = LogConfig::new(params.trust_roots.clone(), params.vendor_public_key, meta.genesis);
        config.scheduling_period = meta.scheduling_period;
        if let Some(n) = params.max_pending {
            config.max_pending = n;
        }

        let complete = rec.entries.len() - LogState::split_batches(&rec.entries).1.len();
        let mut report = Recovery {
            truncated_bytes: rec.truncated_bytes,
            dropped_partial_entries: rec.entries.len() - complete,
            ..Recovery::default()
        };
        if complete < rec.entries.len() {
            store.rewrite_journal(&rec.entries[..complete])?;
        }
        let mut log = Log::restore(config, key, &rec.entries[..complete]).map_err(|e| anyhow::anyhow!("replaying journal: {} at entry {}", e.reason, e.index))?;
        let rebuilt = log.signed_roots();
        if rec.roots.len() > rebuilt.len() || rebuilt[..rec.roots.len()] != rec.roots[..] {
            bail!("root index disagrees with the entry journal");
        }
        if rec.roots.len() < rebuilt.len() {
            store.append_roots(&rebuilt[rec.roots.len()..])?;
        }
        for p in &rec.pending {
            let ok = match p {
                PendingRecord::Chain { chain } => log.submit_chain(chain).is_ok(),
                PendingRecord::Revocation { chain, revocation } => log.submit_revocation(chain, revocation).is_ok(),
                PendingRecord::Tcrl { hash } => log.submit_tcrl_hash(*hash).is_ok(),
            };
            if ok {
                report.replayed_pending += 1;
            } else {
                report.rejected_pending += 1;
                tracing::warn!(?p, "pending submission rejected on replay");
            }
        }
        report.entries = log.state().time_tree().size();
        report.roots = log.signed_roots().len();
        Ok((Node { log, store, clock }, report))
    }

    pub fn log(&self) -> &Log {
        &self.log
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn genesis(&self) -> u64 {
        self.log.config().genesis
    }

    fn persist_if_queued(&mut self, before: usize, record: impl FnOnce() -> PendingRecord) -> Result<(), NodeError> {
        if self.log.queue_len() != before {
            self.store.append_pending(&record()).map_err(NodeError::Storage)?;
        }
        Ok(())
    }

    pub fn submit_chain(&mut self, chain: &CertChain) -> Result<ChainCommitment, NodeError> {
        let before = self.log.queue_len();
        let cc = self.log.submit_chain(chain)?;
        self.persist_if_queued(before, || PendingRecord::Chain { chain: chain.clone() })?;
        Ok(cc)
    }

    pub fn submit_revocation(&mut self, chain: &CertChain, revocation: &RevocationMessage) -> Result<RevocationCommitment, NodeError> {
        let before = self.log.queue_len();
        let c = self.log.submit_revocation(chain, revocation)?;
        self.persist_if_queued(before, || PendingRecord::Revocation {
            chain: chain.clone(),
            revocation: revocation.clone(),
        })?;
        Ok(c)
    }

    pub fn submit_tcrl(&mut self, tcrl: &Tcrl) -> Result<LogCommitment, NodeError> {
        let before = self.log.queue_len();
        let c = commit_tcrl(&mut self.log, tcrl)?;
        self.persist_if_queued(before, || PendingRecord::Tcrl { hash: tcrl.hash() })?;
        Ok(c)
    }

    /// Runs every update due by the clock and persists the result.
    pub fn tick(&mut self) -> Result<Vec<SignedRoot>, NodeError> {
        let now = self.clock.now();
        self.update_at(now)
    }

    pub fn update_at(&mut self, now: u64) -> Result<Vec<SignedRoot>, NodeError> {
        let from = self.log.state().time_tree().size();
        let roots = self.log.catch_up(now);
        if !roots.is_empty() {
            let to = self.log.state().time_tree().size();
            let entries = self.log.entries(from, to).to_vec();
            self.store
                .commit_updates(&entries, &roots)
                .context("writing update")
                .map_err(NodeError::Storage)?;
        }
        Ok(roots)
    }

    pub fn proof(&self, id_hashes: &[Digest]) -> Result<ProofResponse, NodeError> {
        Ok(self.log.get_proof(id_hashes)?)
    }

    pub fn latest_root(&self) -> Option<&SignedRoot> {
        self.log.latest_root()
    }

    pub fn consistency(&self, old: u64, new: u64) -> Result<ConsistencyProof, NodeError> {
        Ok(self.log.get_consistency(old, new)?)
    }

    pub fn entries(&self, from: u64, to: u64) -> Vec<TimeTreeEntry> {
        self.log.entries(from, to).to_vec()
    }

    /// Delta for a lightweight monitor holding the first `from` entries,
    /// pruning with one scheduling period of grace.
    pub fn delta(&self, from: u64) -> Option<DeltaUpdate> {
        let sr = self.log.latest_root()?;
        Some(build_delta(
            self.log.state(),
            sr,
            from.min(sr.tree_size),
            self.clock.now(),
            self.log.config().scheduling_period,
        ))
    }
}
