//! Scripted timelines replayed against an in-memory log on a virtual
//! clock. Scripts are JSON; see `scenarios/` for the bundled ones.
//!
//! Times are seconds after `start`, written as a number or a string such
//! as `"3d"`, `"12h"`, `"2y"`, or `"compromise:<key>"` for the recorded
//! compromise time of a key.

use std::collections::BTreeMap;

use pkisn_core::cert::{make_revocation, RevocationKind, SignerRole, TbsCertificate};
use pkisn_core::log::{ChainCommitment, Log, LogConfig};
use pkisn_core::tcrl::{build_tcrl, commit_tcrl, verify_tcrl, LogBinding, Tcrl, TcrlDelta};
use pkisn_core::validator::{validate_with_tcrl, Decision, Reason};
use pkisn_core::{CertChain, Certificate, KeyPair, KeyRole};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::{Clock, VirtualClock};
use crate::handshake::{handshake_sim, ClientValidator, ServerState};

const BUNDLED: [(&str, &str); 3] = [
    ("root-compromise", include_str!("../scenarios/root_compromise.json")),
    ("too-big", include_str!("../scenarios/too_big.json")),
    ("revocation-burst", include_str!("../scenarios/revocation_burst.json")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeRef {
    Secs(u64),
    Text(String),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub start: u64,
    pub scheduling_period: u64,
    pub max_root_age: u64,
    /// Run due log updates whenever time advances.
    #[serde(default = "default_true")]
    pub auto_update: bool,
    /// Raw events; `repeat` bodies are expanded at run time.
    pub events: Vec<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    AdvanceTime {
        #[serde(default)]
        by: Option<TimeRef>,
        #[serde(default)]
        to: Option<TimeRef>,
    },
    Keygen {
        name: String,
        role: String,
    },
    Issue {
        name: String,
        key: String,
        #[serde(default)]
        issuer: Option<String>,
        #[serde(default)]
        rk: Option<String>,
        #[serde(default)]
        subject: Option<String>,
        #[serde(default)]
        not_before: Option<TimeRef>,
        not_after: TimeRef,
    },
    SubmitChain {
        chain: Vec<String>,
    },
    Revoke {
        chain: Vec<String>,
        signer: String,
        role: String,
        #[serde(default)]
        rev_ts: Option<TimeRef>,
    },
    RunUpdate {},
    Validate {
        label: String,
        chain: Vec<String>,
        #[serde(default)]
        name: Option<String>,
    },
    /// Marks adversarial use of a key from `at` (default: now).
    Compromise {
        key: String,
        #[serde(default)]
        at: Option<TimeRef>,
    },
    PublishTcrl {
        label: String,
    },
    Expect(Expectation),
    Repeat {
        #[serde(default)]
        var: Option<String>,
        #[serde(default)]
        from: i64,
        count: u64,
        body: Vec<Value>,
    },
}

/// An assertion. `label` selects validations; a trailing `*` makes it a
/// prefix. With `count`, exactly that many selected validations must
/// have `decision` (and `reason`); without it, all of them must.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub decision: Option<Decision>,
    #[serde(default)]
    pub reason: Option<Reason>,
    #[serde(default)]
    pub count: Option<usize>,
    /// Every selected validation agreed with the TCRL-based check.
    #[serde(default)]
    pub tcrl_consistent: Option<bool>,
    /// The TCRL delta published under this label is larger than the
    /// deltas just before and after it.
    #[serde(default)]
    pub tcrl_peak: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub label: String,
    pub at: u64,
    pub decision: Decision,
    pub reason: Option<Reason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcrl_decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcrl_reason: Option<Reason>,
}

impl ValidationRecord {
    pub fn tcrl_agrees(&self) -> Option<bool> {
        self.tcrl_decision
            .map(|d| d == self.decision && self.tcrl_reason == self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcrlRecord {
    pub label: String,
    pub at: u64,
    pub version: u64,
    pub entries: usize,
    pub bytes: usize,
    /// Size of the delta from the previous TCRL; the full size for the
    /// first one.
    pub delta_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub event: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub leaf: String,
    pub reg_ts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub final_time: u64,
    pub updates: usize,
    pub validations: Vec<ValidationRecord>,
    pub expectations: Vec<ExpectationResult>,
    pub tcrls: Vec<TcrlRecord>,
    /// Events that used a key after its compromise time.
    pub adversarial_events: Vec<String>,
    /// Registration time of each submitted chain's leaf, in submission
    /// order.
    pub registrations: Vec<Registration>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event {index}: {message}")]
pub struct ScenarioError {
    pub index: String,
    pub message: String,
}

pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    serde_json::from_str(text).map_err(|e| ScenarioError {
        index: "-".into(),
        message: format!("malformed script: {e}"),
    })
}

/// Parses and runs a script.
pub fn run_scenario(text: &str) -> Result<Report, ScenarioError> {
    run(&parse(text)?)
}

pub fn run(sc: &Scenario) -> Result<Report, ScenarioError> {
    if sc.scheduling_period == 0 {
        return Err(ScenarioError {
            index: "-".into(),
            message: "scheduling_period must be positive".into(),
        });
    }
    let mut r = Runner::new(sc);
    r.run_events(&sc.events, "")?;
    let log_updates = r.log.as_ref().map_or(0, |l| l.signed_roots().len());
    let passed = r.report.expectations.iter().all(|e| e.passed);
    Ok(Report {
        final_time: r.clock.now() - sc.start,
        updates: log_updates,
        passed,
        ..r.report
    })
}

fn parse_duration(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, unit) = s.split_at(s.find(|c: char| !c.is_ascii_digit())?);
    let n: u64 = num.parse().ok()?;
    let mult = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        "w" => 7 * 86_400,
        "y" => 365 * 86_400,
        _ => return None,
    };
    n.checked_mul(mult)
}

fn parse_role(s: &str) -> Option<KeyRole> {
    s.parse().ok()
}

fn parse_signer_role(s: &str) -> Option<SignerRole> {
    Some(match s {
        "own" => SignerRole::OwnKey,
        "rk" => SignerRole::RevocationKey,
        "vendor" => SignerRole::Vendor,
        _ => SignerRole::ParentCa(s.strip_prefix("parent:")?.parse().ok()?),
    })
}

/// Evaluates `{var}`, `{var+N}`, `{var-N}`, `{var*N}` and `{var*N+M}`.
fn substitute(s: &str, var: &str, value: i64) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..].find('}').ok_or_else(|| format!("unclosed brace in `{s}`"))? + open;
        let expr = &rest[open + 1..close];
        match expr.strip_prefix(var) {
            Some(tail) => {
                let (mul, tail) = match tail.strip_prefix('*') {
                    Some(t) => {
                        let end = t.find(['+', '-']).unwrap_or(t.len());
                        (t[..end].parse::<i64>().map_err(|_| format!("bad multiplier in `{expr}`"))?, &t[end..])
                    }
                    None => (1, tail),
                };
                let add = if tail.is_empty() {
                    0
                } else {
                    tail.trim_start_matches('+')
                        .parse::<i64>()
                        .map_err(|_| format!("bad offset in `{expr}`"))?
                };
                out.push_str(&(value * mul + add).to_string());
            }
            None => {
                out.push('{');
                out.push_str(expr);
                out.push('}');
            }
        }
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn substitute_value(v: &Value, var: &str, value: i64) -> Result<Value, String> {
    Ok(match v {
        Value::String(s) => {
            let t = substitute(s, var, value)?;
            // A string that became a plain number stands for that number.
            if s.starts_with('{') && s.ends_with('}') {
                if let Ok(n) = t.parse::<i64>() {
                    return Ok(Value::from(n));
                }
            }
            Value::String(t)
        }
        Value::Array(a) => Value::Array(a.iter().map(|x| substitute_value(x, var, value)).collect::<Result<_, _>>()?),
        Value::Object(o) => Value::Object(
            o.iter()
                .map(|(k, x)| Ok((k.clone(), substitute_value(x, var, value)?)))
                .collect::<Result<_, String>>()?,
        ),
        other => other.clone(),
    })
}

fn matches_label(pattern: &str, label: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => label.starts_with(prefix),
        None => pattern == label,
    }
}

struct Runner<'a> {
    sc: &'a Scenario,
    clock: VirtualClock,
    keys: BTreeMap<String, KeyPair>,
    certs: BTreeMap<String, Certificate>,
    /// Which key signed each certificate.
    cert_keys: BTreeMap<String, String>,
    ccs: BTreeMap<String, ChainCommitment>,
    compromised: BTreeMap<String, u64>,
    log: Option<Log>,
    tcrl: Option<Tcrl>,
    serial: u64,
    report: Report,
}

type Step = Result<(), String>;

impl<'a> Runner<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let mut keys = BTreeMap::new();
        keys.insert("vendor".to_string(), KeyPair::derive(KeyRole::VendorKey, &format!("{}/vendor", sc.name)));
        Runner {
            sc,
            clock: VirtualClock::new(sc.start),
            keys,
            certs: BTreeMap::new(),
            cert_keys: BTreeMap::new(),
            ccs: BTreeMap::new(),
            compromised: BTreeMap::new(),
            log: None,
            tcrl: None,
            serial: 0,
            report: Report {
                name: sc.name.clone(),
                final_time: 0,
                updates: 0,
                validations: Vec::new(),
                expectations: Vec::new(),
                tcrls: Vec::new(),
                adversarial_events: Vec::new(),
                registrations: Vec::new(),
                passed: false,
            },
        }
    }

    fn run_events(&mut self, events: &[Value], prefix: &str) -> Result<(), ScenarioError> {
        for (i, raw) in events.iter().enumerate() {
            let index = format!("{prefix}{i}");
            let fail = |message: String| ScenarioError {
                index: index.clone(),
                message,
            };
            let event: Event = serde_json::from_value(raw.clone()).map_err(|e| fail(e.to_string()))?;
            if let Event::Repeat { var, from, count, body } = event {
                let var = var.unwrap_or_else(|| "i".into());
                for k in 0..count as i64 {
                    let expanded: Vec<Value> = body
                        .iter()
                        .map(|v| substitute_value(v, &var, from + k))
                        .collect::<Result<_, _>>()
                        .map_err(fail)?;
                    self.run_events(&expanded, &format!("{index}[{}].", from + k))?;
                }
                continue;
            }
            self.apply(event, &index).map_err(fail)?;
        }
        Ok(())
    }

    fn time(&self, t: &TimeRef) -> Result<u64, String> {
        let rel = match t {
            TimeRef::Secs(s) => *s,
            TimeRef::Text(s) => match s.strip_prefix("compromise:") {
                Some(key) => {
                    return self
                        .compromised
                        .get(key)
                        .copied()
                        .ok_or_else(|| format!("key `{key}` was never compromised"))
                }
                None => parse_duration(s).ok_or_else(|| format!("bad time `{s}`"))?,
            },
        };
        Ok(self.sc.start + rel)
    }

    fn key(&self, name: &str) -> Result<&KeyPair, String> {
        self.keys.get(name).ok_or_else(|| format!("unknown key `{name}`"))
    }

    fn chain(&self, names: &[String]) -> Result<CertChain, String> {
        names
            .iter()
            .map(|n| self.certs.get(n).cloned().ok_or_else(|| format!("unknown certificate `{n}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(CertChain::new)
    }

    fn note_key_use(&mut self, key: &str, index: &str) {
        if self.compromised.get(key).is_some_and(|&t| t <= self.clock.now()) {
            self.report.adversarial_events.push(index.to_string());
        }
    }

    /// The log is created on first use, trusting every self-signed
    /// certificate issued so far.
    fn log(&mut self) -> &mut Log {
        let sc = self.sc;
        let (certs, keys) = (&self.certs, &self.keys);
        self.log.get_or_insert_with(|| {
            let roots = certs.values().filter(|c| c.is_self_signed()).map(Certificate::cert_hash).collect();
            let mut cfg = LogConfig::new(roots, keys["vendor"].public(), sc.start);
            cfg.scheduling_period = sc.scheduling_period;
            Log::new(cfg, KeyPair::derive(KeyRole::LogKey, &format!("{}/log", sc.name)))
        })
    }

    fn catch_up(&mut self) {
        let now = self.clock.now();
        if let Some(log) = self.log.as_mut() {
            log.catch_up(now);
        }
    }

    fn apply(&mut self, event: Event, index: &str) -> Step {
        match event {
            Event::AdvanceTime { by, to } => {
                let target = match (by, to) {
                    (Some(by), None) => self.clock.now() + (self.time(&by)? - self.sc.start),
                    (None, Some(to)) => self.time(&to)?,
                    _ => return Err("advance_time needs exactly one of `by` and `to`".into()),
                };
                if target < self.clock.now() {
                    return Err("time cannot go backwards".into());
                }
                if self.sc.auto_update {
                    // Run each update at its own time, as the service would.
                    while let Some(next) = self.log.as_ref().map(Log::next_update).filter(|&n| n <= target) {
                        self.clock.set(next);
                        self.catch_up();
                    }
                }
                self.clock.set(target);
            }
            Event::Keygen { name, role } => {
                let role = parse_role(&role).ok_or_else(|| format!("unknown role `{role}`"))?;
                let key = KeyPair::derive(role, &format!("{}/{name}", self.sc.name));
                if self.keys.insert(name.clone(), key).is_some() {
                    return Err(format!("key `{name}` already exists"));
                }
            }
            Event::Issue {
                name,
                key,
                issuer,
                rk,
                subject,
                not_before,
                not_after,
            } => {
                let subject_key = self.key(&key)?.clone();
                let is_ca = subject_key.role() == KeyRole::StandardCa;
                let signer_name = issuer.clone().unwrap_or_else(|| key.clone());
                let signer = self.key(&signer_name)?.clone();
                let revocation_public_key = match rk {
                    Some(rk) => Some(self.key(&rk)?.public()),
                    None => None,
                };
                self.serial += 1;
                let tbs = TbsCertificate {
                    serial: self.serial,
                    subject_name: subject.unwrap_or_else(|| if is_ca { format!("{name} CA") } else { format!("{name}.example") }),
                    issuer_key_id: signer.key_id(),
                    subject_public_key: subject_key.public(),
                    is_ca,
                    not_before: match not_before {
                        Some(t) => self.time(&t)?,
                        None => self.sc.start,
                    },
                    not_after: self.time(&not_after)?,
                    revocation_public_key,
                };
                let cert = tbs.sign(&signer);
                cert.check_invariants().map_err(|e| format!("certificate `{name}`: {e}"))?;
                self.note_key_use(&signer_name, index);
                self.cert_keys.insert(name.clone(), key);
                if self.certs.insert(name.clone(), cert).is_some() {
                    return Err(format!("certificate `{name}` already exists"));
                }
            }
            Event::SubmitChain { chain: names } => {
                let chain = self.chain(&names)?;
                let cc = self.log().submit_chain(&chain).map_err(|e| format!("submit rejected: {e}"))?;
                let leaf = names.last().ok_or("empty chain")?.clone();
                self.report.registrations.push(Registration {
                    leaf: leaf.clone(),
                    reg_ts: cc.timestamps[0],
                });
                self.ccs.insert(leaf, cc);
            }
            Event::Revoke {
                chain: names,
                signer,
                role,
                rev_ts,
            } => {
                let chain = self.chain(&names)?;
                let target = chain.leaf().ok_or("empty chain")?.clone();
                let role = parse_signer_role(&role).ok_or_else(|| format!("unknown signer role `{role}`"))?;
                let kind = if target.is_ca() { RevocationKind::CaRevokeFrom } else { RevocationKind::LeafRevoke };
                let rev_ts = match rev_ts {
                    Some(t) => Some(self.time(&t)?),
                    None if target.is_ca() => Some(self.clock.now()),
                    None => None,
                };
                let rev = make_revocation(kind, &target, rev_ts, self.key(&signer)?, role).map_err(|e| format!("revocation: {e}"))?;
                self.note_key_use(&signer, index);
                self.log()
                    .submit_revocation(&chain, &rev)
                    .map_err(|e| format!("revocation rejected: {e}"))?;
            }
            Event::RunUpdate {} => {
                self.log();
                self.catch_up();
            }
            Event::Validate { label, chain: names, name } => self.validate(label, &names, name)?,
            Event::Compromise { key, at } => {
                self.key(&key)?;
                let t = match at {
                    Some(t) => self.time(&t)?,
                    None => self.clock.now(),
                };
                self.compromised.insert(key, t);
            }
            Event::PublishTcrl { label } => self.publish_tcrl(label)?,
            Event::Expect(exp) => {
                let (passed, detail) = self.check(&exp)?;
                self.report.expectations.push(ExpectationResult {
                    event: index.to_string(),
                    passed,
                    detail,
                });
            }
            Event::Repeat { .. } => unreachable!("expanded by run_events"),
        }
        Ok(())
    }

    fn validate(&mut self, label: String, names: &[String], name: Option<String>) -> Step {
        let chain = self.chain(names)?;
        let leaf_name = names.last().ok_or("empty chain")?;
        let cc = self
            .ccs
            .get(leaf_name)
            .cloned()
            .ok_or_else(|| format!("no commitment for `{leaf_name}`; submit its chain first"))?;
        let now = self.clock.now();
        let log = self.log.as_ref().ok_or("no log yet")?;
        let client = ClientValidator {
            trust_roots: log.config().trust_roots.clone(),
            log_pub: log.public_key(),
            vendor_pub: self.keys["vendor"].public(),
            max_root_age: self.sc.max_root_age,
        };
        let mut server = ServerState::new(chain.clone(), cc.clone());
        // A chain still waiting for its first update has nothing to staple.
        let _ = server.refresh(log, now);
        let name = name.unwrap_or_else(|| chain.leaf().unwrap().tbs.subject_name.clone());
        let verdict = handshake_sim(&server, &client, &name, now);
        let tcrl_verdict = self.tcrl.as_ref().map(|t| {
            validate_with_tcrl(&chain, &cc, t, &name, now, &client.trust_roots, &client.log_pub, &client.vendor_pub)
        });
        self.report.validations.push(ValidationRecord {
            label,
            at: now - self.sc.start,
            decision: verdict.decision,
            reason: verdict.reason,
            tcrl_decision: tcrl_verdict.as_ref().map(|v| v.decision),
            tcrl_reason: tcrl_verdict.and_then(|v| v.reason),
        });
        Ok(())
    }

    fn publish_tcrl(&mut self, label: String) -> Step {
        let now = self.clock.now();
        let vendor = self.keys["vendor"].clone();
        let version = self.tcrl.as_ref().map_or(1, |t| t.version + 1);
        let log = self.log();
        let mut tcrl = build_tcrl(log.state(), &vendor, version, now);
        let commitment = commit_tcrl(log, &tcrl).map_err(|e| format!("TCRL commit: {e}"))?;
        tcrl.log_commitment = Some(LogBinding::Commitment(commitment));
        if !verify_tcrl(&tcrl, &vendor.public(), &log.public_key(), false) {
            return Err("published TCRL does not verify".into());
        }
        let delta_bytes = match &self.tcrl {
            Some(old) => TcrlDelta::between(old, &tcrl, &vendor).encoded_len(),
            None => tcrl.encoded_len(),
        };
        self.report.tcrls.push(TcrlRecord {
            label,
            at: now - self.sc.start,
            version,
            entries: tcrl.entries.len(),
            bytes: tcrl.encoded_len(),
            delta_bytes,
        });
        self.tcrl = Some(tcrl);
        Ok(())
    }

    fn check(&self, exp: &Expectation) -> Result<(bool, String), String> {
        if let Some(peak) = &exp.tcrl_peak {
            let t = &self.report.tcrls;
            let i = t
                .iter()
                .position(|r| &r.label == peak)
                .ok_or_else(|| format!("no TCRL published as `{peak}`"))?;
            if i == 0 || i + 1 >= t.len() {
                return Err(format!("TCRL `{peak}` needs a neighbour on both sides"));
            }
            let (before, at, after) = (t[i - 1].delta_bytes, t[i].delta_bytes, t[i + 1].delta_bytes);
            return Ok((
                at > before && at > after,
                format!("TCRL delta bytes {before} -> {at} -> {after}"),
            ));
        }
        let pattern = exp.label.as_deref().ok_or("expect needs `label` or `tcrl_peak`")?;
        let selected: Vec<&ValidationRecord> = self
            .report
            .validations
            .iter()
            .filter(|v| matches_label(pattern, &v.label))
            .collect();
        if selected.is_empty() {
            return Err(format!("no validation matches `{pattern}`"));
        }
        if let Some(want) = exp.tcrl_consistent {
            let agree = selected.iter().filter(|v| v.tcrl_agrees() == Some(true)).count();
            let ok = (agree == selected.len()) == want;
            return Ok((ok, format!("{agree} of {} validations of `{pattern}` agree with the TCRL", selected.len())));
        }
        let hits = |v: &&&ValidationRecord| {
            exp.decision.is_none_or(|d| v.decision == d) && exp.reason.is_none_or(|r| v.reason == Some(r))
        };
        let n = selected.iter().filter(hits).count();
        let want = exp.count.unwrap_or(selected.len());
        let what = match (exp.decision, exp.reason) {
            (Some(d), Some(r)) => format!("{d:?}({r:?})"),
            (Some(d), None) => format!("{d:?}"),
            (None, Some(r)) => format!("{r:?}"),
            (None, None) => "any".into(),
        };
        let mut detail = format!("{n} of {} validations of `{pattern}` are {what}, expected {want}", selected.len());
        if selected.len() == 1 {
            let v = selected[0];
            detail.push_str(&format!(" (got {:?}{})", v.decision, v.reason.map(|r| format!(" {r:?}")).unwrap_or_default()));
        }
        Ok((n == want, detail))
    }
}
