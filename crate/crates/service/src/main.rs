use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pkisn_core::cert::{make_revocation, SignerRole};
use pkisn_core::log::{ChainCommitment, SignedRoot};
use pkisn_core::monitor::{policy, DeltaUpdate, FullMonitor, LightMonitor, MonitorError, RootCheck};
use pkisn_core::tcrl::{build_tcrl, verify_tcrl, LogBinding, Tcrl};
use pkisn_core::validator::{is_valid, ValidationInput};
use pkisn_core::{CertChain, Certificate, KeyPair, KeyRole, RevocationKind, TbsCertificate};
use pkisn_service::client::LogClient;
use pkisn_service::clock::{Clock, SystemClock};
use pkisn_service::config::{read_json, read_keypair, read_public, write_json, write_keypair, ServiceConfig, CONFIG_ENV};
use pkisn_service::node::{Node, NodeParams};
use pkisn_service::{api, bench, scenario};

#[derive(Parser)]
#[command(name = "pkisn", version, about = "Certificate and revocation transparency log")]
struct Cli {
    /// Service config file (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Log URL; defaults to the config's listen address.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the log service.
    Serve,
    /// Generate a key file.
    Keygen {
        #[arg(long)]
        role: KeyRole,
        #[arg(long)]
        out: PathBuf,
        /// Derive the key from this label instead of randomly (tests only).
        #[arg(long)]
        derive: Option<String>,
    },
    #[command(subcommand)]
    Ca(CaCmd),
    /// Submit a chain and print its commitment.
    Submit {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sign a revocation and submit it.
    Revoke {
        /// Chain ending in the certificate to revoke.
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        kind: KindArg,
        /// Cutoff for CA revocations (Unix seconds).
        #[arg(long)]
        rev_timestamp: Option<u64>,
        #[arg(long)]
        key: PathBuf,
        /// own, parent:N, rk or vendor.
        #[arg(long)]
        role: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fetch a presence proof for a committed chain.
    Proof {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        cc: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fetch a proof and validate a chain as a client would.
    Validate {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        cc: PathBuf,
        /// Server name; defaults to the leaf's subject.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        now: Option<u64>,
    },
    /// Run due updates directly on the data directory (service stopped).
    Update {
        #[arg(long)]
        now: Option<u64>,
    },
    #[command(subcommand)]
    Monitor(MonitorCmd),
    #[command(subcommand)]
    Tcrl(TcrlCmd),
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Measure registration, update and validation speed.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        chains: usize,
        #[arg(long, default_value_t = 1_000)]
        validations: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Leaf,
    CaFrom,
}

#[derive(Subcommand)]
enum CaCmd {
    /// Create a self-signed root CA in a directory.
    Init {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 3650)]
        days: u64,
    },
    /// Issue a certificate from the CA in `--ca` into `--dir`.
    Issue {
        #[arg(long)]
        ca: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        name: String,
        /// Issue an intermediate CA instead of a leaf.
        #[arg(long)]
        intermediate: bool,
        #[arg(long, default_value_t = 365)]
        days: u64,
    },
}

#[derive(Subcommand)]
enum MonitorCmd {
    /// Replay every entry and compare roots.
    Sync,
    /// Compare a signed root seen by a client with the monitor's.
    CheckRoot {
        #[arg(long)]
        root: PathBuf,
    },
    /// Keep syncing every `monitor_poll_interval` seconds; exits 2 on
    /// misbehaviour.
    Watch {
        /// Stop after this many polls.
        #[arg(long)]
        polls: Option<u64>,
    },
    /// Fetch and apply a delta to a lightweight monitor state file.
    DeltaApply {
        #[arg(long)]
        state: PathBuf,
    },
}

#[derive(Subcommand)]
enum TcrlCmd {
    /// Build a TCRL from the log's entries and commit it.
    Build {
        #[arg(long)]
        vendor_key: PathBuf,
        #[arg(long, default_value_t = 1)]
        version: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Verify {
        #[arg(long)]
        tcrl: PathBuf,
        #[arg(long)]
        require_inclusion: bool,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Run a script file or a bundled scenario by name.
    Run {
        script: String,
        #[arg(long)]
        json: bool,
    },
    List,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn config(cli: &Cli) -> Result<ServiceConfig> {
    ServiceConfig::discover(cli.config.as_deref())
}

fn client(cli: &Cli) -> Result<LogClient> {
    match &cli.server {
        Some(s) => Ok(LogClient::new(s)),
        None => Ok(LogClient::new(&config(cli)?.listen_address)),
    }
}

fn print_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn read_chain(path: &Path) -> Result<CertChain> {
    let certs: Vec<Certificate> = read_json(path)?;
    Ok(CertChain::new(certs))
}

fn now_or(now: Option<u64>) -> u64 {
    now.unwrap_or_else(|| SystemClock.now())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.cmd {
        Cmd::Serve => serve(&config(&cli)?)?,
        Cmd::Keygen { role, out, derive } => {
            let key = match derive {
                Some(label) => KeyPair::derive(*role, label),
                None => KeyPair::generate(*role),
            };
            write_keypair(out, &key)?;
            println!("{}", key.key_id().to_hex());
        }
        Cmd::Ca(cmd) => ca(cmd)?,
        Cmd::Submit { chain, out } => {
            let cc = client(&cli)?.submit_chain(&read_chain(chain)?)?;
            print_json(&cc, out.as_deref())?;
        }
        Cmd::Revoke {
            chain,
            kind,
            rev_timestamp,
            key,
            role,
            out,
        } => {
            let chain = read_chain(chain)?;
            let target = chain.leaf().context("empty chain")?;
            let role = match role.as_str() {
                "own" => SignerRole::OwnKey,
                "rk" => SignerRole::RevocationKey,
                "vendor" => SignerRole::Vendor,
                r => SignerRole::ParentCa(
                    r.strip_prefix("parent:")
                        .and_then(|d| d.parse().ok())
                        .with_context(|| format!("bad role `{r}`"))?,
                ),
            };
            let kind = match kind {
                KindArg::Leaf => RevocationKind::LeafRevoke,
                KindArg::CaFrom => RevocationKind::CaRevokeFrom,
            };
            let rev = make_revocation(kind, target, *rev_timestamp, &read_keypair(key)?, role)?;
            let commitment = client(&cli)?.submit_revocation(&chain, &rev)?;
            print_json(&serde_json::json!({ "revocation": rev, "commitment": commitment }), out.as_deref())?;
        }
        Cmd::Proof { chain, cc, out } => {
            let chain = read_chain(chain)?;
            let cc: ChainCommitment = read_json(cc)?;
            let resp = client(&cli)?.proof(&id_hashes(&chain, &cc))?;
            print_json(&resp, out.as_deref())?;
        }
        Cmd::Validate { chain, cc, name, now } => {
            let cfg = config(&cli)?;
            let chain = read_chain(chain)?;
            let cc: ChainCommitment = read_json(cc)?;
            let resp = client(&cli)?.proof(&id_hashes(&chain, &cc))?;
            let (trust_roots, _) = cfg.trust_roots()?;
            let (_, log_pub) = read_public(&cfg.log_key_path)?;
            let name = name.clone().unwrap_or_else(|| chain.leaf().map(|l| l.tbs.subject_name.clone()).unwrap_or_default());
            let verdict = is_valid(&ValidationInput {
                chain: &chain,
                cc: &cc,
                proof: &resp.proof,
                signed_root: &resp.signed_root,
                pending: &resp.pending,
                name: &name,
                now: now_or(*now),
                trust_roots: &trust_roots,
                log_pub: &log_pub,
                vendor_pub: &cfg.vendor_public()?,
                max_root_age: cfg.max_root_age,
            });
            print_json(&verdict, None)?;
            if !verdict.is_success() {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Update { now } => {
            let cfg = config(&cli)?;
            let (params, key) = NodeParams::from_config(&cfg)?;
            let (mut node, _) = Node::open(&params, key, Arc::new(SystemClock))?;
            let roots = node.update_at(now_or(*now))?;
            print_json(&roots, None)?;
        }
        Cmd::Monitor(cmd) => return monitor(&cli, cmd),
        Cmd::Tcrl(cmd) => return tcrl(&cli, cmd),
        Cmd::Scenario(ScenarioCmd::List) => {
            for n in scenario::bundled_names() {
                println!("{n}");
            }
        }
        Cmd::Scenario(ScenarioCmd::Run { script, json }) => {
            let text = match scenario::bundled(script) {
                Some(t) => t.to_string(),
                None => std::fs::read_to_string(script).with_context(|| format!("reading {script}"))?,
            };
            let report = scenario::run_scenario(&text)?;
            if *json {
                print_json(&report, None)?;
            } else {
                for e in &report.expectations {
                    println!("{} event {}: {}", if e.passed { "PASS" } else { "FAIL" }, e.event, e.detail);
                }
                println!("{}: {}", report.name, if report.passed { "passed" } else { "FAILED" });
            }
            if !report.passed {
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Bench { chains, validations } => {
            let report = bench::run(&bench::BenchConfig {
                chains: *chains,
                validations: *validations,
                ..Default::default()
            });
            print_json(&report, None)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn id_hashes(chain: &CertChain, cc: &ChainCommitment) -> Vec<pkisn_core::Digest> {
    chain
        .certs
        .iter()
        .zip(cc.timestamps_root_first())
        .map(|(c, t)| c.id_hash(t))
        .collect()
}

fn serve(cfg: &ServiceConfig) -> Result<()> {
    let (params, key) = NodeParams::from_config(cfg)?;
    let (node, recovery) = Node::open(&params, key, Arc::new(SystemClock))?;
    tracing::info!(?recovery, "data directory opened");
    let node = Arc::new(Mutex::new(node));
    let poll = Duration::from_secs(cfg.scheduling_period.clamp(1, 60)).min(Duration::from_secs(1));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let (listener, addr) = api::bind(&cfg.listen_address).await?;
        tracing::info!(%addr, "listening");
        println!("listening on {addr}");
        api::serve(node, listener, poll, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

const DAY: u64 = 86_400;

fn ca(cmd: &CaCmd) -> Result<()> {
    let now = SystemClock.now();
    match cmd {
        CaCmd::Init { dir, name, days } => {
            let key = KeyPair::generate(KeyRole::StandardCa);
            let rk = KeyPair::generate(KeyRole::RevocationKey);
            let cert = TbsCertificate {
                serial: 1,
                subject_name: name.clone(),
                issuer_key_id: key.key_id(),
                subject_public_key: key.public(),
                is_ca: true,
                not_before: now - DAY,
                not_after: now + days * DAY,
                revocation_public_key: Some(rk.public()),
            }
            .sign(&key);
            write_keypair(&dir.join("key.json"), &key)?;
            write_keypair(&dir.join("rk.json"), &rk)?;
            write_json(&dir.join("cert.json"), &cert)?;
            write_json(&dir.join("chain.json"), &vec![cert.clone()])?;
            println!("{}", cert.cert_hash().to_hex());
        }
        CaCmd::Issue {
            ca,
            dir,
            name,
            intermediate,
            days,
        } => {
            let issuer = read_keypair(&ca.join("key.json"))?;
            let mut chain: Vec<Certificate> = read_json(&ca.join("chain.json"))?;
            ensure!(
                chain.last().map(|c| c.tbs.subject_public_key) == Some(issuer.public()),
                "{} does not hold the key of its chain's last certificate",
                ca.display()
            );
            let (key, rk) = if *intermediate {
                (KeyPair::generate(KeyRole::StandardCa), Some(KeyPair::generate(KeyRole::RevocationKey)))
            } else {
                (KeyPair::generate(KeyRole::StandardLeaf), None)
            };
            let serial = u64::from_be_bytes(key.key_id().0[..8].try_into().unwrap());
            let cert = TbsCertificate {
                serial,
                subject_name: name.clone(),
                issuer_key_id: issuer.key_id(),
                subject_public_key: key.public(),
                is_ca: *intermediate,
                not_before: now - DAY,
                not_after: now + days * DAY,
                revocation_public_key: rk.as_ref().map(|k| k.public()),
            }
            .sign(&issuer);
            write_keypair(&dir.join("key.json"), &key)?;
            if let Some(rk) = &rk {
                write_keypair(&dir.join("rk.json"), rk)?;
            }
            write_json(&dir.join("cert.json"), &cert)?;
            chain.push(cert.clone());
            write_json(&dir.join("chain.json"), &chain)?;
            println!("{}", cert.cert_hash().to_hex());
        }
    }
    Ok(())
}

fn full_monitor(cli: &Cli) -> Result<(FullMonitor, LogClient)> {
    let cfg = config(cli)?;
    let (trust_roots, _) = cfg.trust_roots()?;
    let (_, log_pub) = read_public(&cfg.log_key_path)?;
    let client = client(cli)?;
    let mut mon = FullMonitor::new(policy(trust_roots, cfg.vendor_public()?), log_pub);
    mon.full_sync(&client)?;
    Ok((mon, client))
}

fn monitor(cli: &Cli, cmd: &MonitorCmd) -> Result<ExitCode> {
    match cmd {
        MonitorCmd::Sync => {
            let (mon, _) = full_monitor(cli)?;
            let root = mon.roots().last().cloned();
            println!(
                "synced {} entries; root {}",
                mon.tree_size(),
                root.map(|r| r.root.to_hex()).unwrap_or_else(|| "none".into())
            );
        }
        MonitorCmd::Watch { polls } => {
            let cfg = config(cli)?;
            let (_, log_pub) = read_public(&cfg.log_key_path)?;
            let client = client(cli)?;
            let mut mon = FullMonitor::new(policy(cfg.trust_roots()?.0, cfg.vendor_public()?), log_pub);
            let interval = Duration::from_secs(cfg.monitor_poll_interval());
            let mut n = 0;
            while polls.is_none_or(|p| n < p) {
                if n > 0 {
                    std::thread::sleep(interval);
                }
                n += 1;
                match mon.full_sync(&client) {
                    Ok(r) if r.new_entries > 0 => println!("size {}; {} new entries", r.tree_size, r.new_entries),
                    Ok(_) => {}
                    Err(MonitorError::Source(e)) => tracing::warn!("log unreachable: {e}"),
                    Err(e) => {
                        println!("misbehaviour: {e}");
                        let report = match &e {
                            MonitorError::RootMismatch(r) | MonitorError::InvalidEntry { report: r, .. } => r.as_deref(),
                            _ => None,
                        };
                        if let Some(r) = report {
                            print_json(r, None)?;
                        }
                        return Ok(ExitCode::from(2));
                    }
                }
            }
        }
        MonitorCmd::CheckRoot { root } => {
            let (mon, _) = full_monitor(cli)?;
            let client_root: SignedRoot = read_json(root)?;
            match mon.check_root(&client_root)? {
                RootCheck::Consistent => println!("consistent"),
                RootCheck::Fork(report) => {
                    print_json(&report, None)?;
                    return Ok(ExitCode::from(2));
                }
            }
        }
        MonitorCmd::DeltaApply { state } => {
            let cfg = config(cli)?;
            let (_, log_pub) = read_public(&cfg.log_key_path)?;
            // The state file keeps the applied deltas; replaying them
            // rebuilds the minimized tree.
            let mut deltas: Vec<DeltaUpdate> = if state.exists() { read_json(state)? } else { Vec::new() };
            let mut light = LightMonitor::new(log_pub);
            for d in &deltas {
                light.apply_delta(d)?;
            }
            let Some(delta) = client(cli)?.delta(light.size())? else {
                bail!("log has no signed root yet");
            };
            if delta.to_size > light.size() || !delta.compactions.is_empty() {
                light.apply_delta(&delta)?;
                deltas.push(delta);
                write_json(state, &deltas)?;
            }
            println!(
                "size {}; {} nodes; {} bytes",
                light.size(),
                light.node_count(),
                light.storage_bytes()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn tcrl(cli: &Cli, cmd: &TcrlCmd) -> Result<ExitCode> {
    match cmd {
        TcrlCmd::Build { vendor_key, version, out } => {
            let vendor = read_keypair(vendor_key)?;
            let (mon, client) = full_monitor(cli)?;
            let mut t = build_tcrl(mon.state(), &vendor, *version, SystemClock.now());
            let commitment = client.submit_tcrl(&t)?;
            t.log_commitment = Some(LogBinding::Commitment(commitment));
            write_json(out, &t)?;
            println!("{} entries, {} bytes", t.entries.len(), t.encoded_len());
        }
        TcrlCmd::Verify { tcrl, require_inclusion } => {
            let cfg = config(cli)?;
            let t: Tcrl = read_json(tcrl)?;
            let (_, log_pub) = read_public(&cfg.log_key_path)?;
            let ok = verify_tcrl(&t, &cfg.vendor_public()?, &log_pub, *require_inclusion);
            println!("{}", if ok { "valid" } else { "INVALID" });
            if !ok {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
