//! Service configuration (TOML) and the key and trust-root files it names.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pkisn_core::crypto::KeyFile;
use pkisn_core::{Certificate, KeyPair, KeyRole, PublicKey, TrustRoots};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "PKISN_CONFIG";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_address: String,
    pub data_dir: PathBuf,
    /// Seconds between log updates.
    pub scheduling_period: u64,
    pub log_key_path: PathBuf,
    /// A full key file in test deployments, otherwise a public key file.
    pub vendor_key_path: PathBuf,
    /// JSON array of self-signed root certificates.
    pub trust_roots_path: PathBuf,
    pub max_root_age: u64,
    /// First update happens one period after this. Defaults to the time
    /// the data directory is initialized.
    #[serde(default)]
    pub genesis: Option<u64>,
    #[serde(default)]
    pub max_pending: Option<usize>,
    /// How often clients check roots with a monitor; one period if unset.
    #[serde(default)]
    pub monitor_poll_interval: Option<u64>,
}

/// Public half of a key, for parties that must not hold the secret.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PublicKeyFile {
    pub role: KeyRole,
    pub public: PublicKey,
}

impl ServiceConfig {
    /// Reads a config file; relative paths are taken relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ServiceConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data_dir,
            &mut cfg.log_key_path,
            &mut cfg.vendor_key_path,
            &mut cfg.trust_roots_path,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Loads the file named by `PKISN_CONFIG`, or `explicit` if given.
    pub fn discover(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => {
                let p = std::env::var_os(CONFIG_ENV).with_context(|| format!("no --config given and {CONFIG_ENV} is unset"))?;
                Self::load(Path::new(&p))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.scheduling_period > 0, "scheduling_period must be positive");
        for (what, p) in [
            ("log key", &self.log_key_path),
            ("vendor key", &self.vendor_key_path),
            ("trust roots", &self.trust_roots_path),
        ] {
            ensure!(p.exists(), "{what} file {} does not exist", p.display());
        }
        Ok(())
    }

    pub fn monitor_poll_interval(&self) -> u64 {
        self.monitor_poll_interval.unwrap_or(self.scheduling_period)
    }

    pub fn log_key(&self) -> Result<KeyPair> {
        let key = read_keypair(&self.log_key_path)?;
        ensure!(key.role() == KeyRole::LogKey, "{} is not a log key", self.log_key_path.display());
        Ok(key)
    }

    pub fn vendor_public(&self) -> Result<PublicKey> {
        let (role, public) = read_public(&self.vendor_key_path)?;
        ensure!(role == KeyRole::VendorKey, "{} is not a vendor key", self.vendor_key_path.display());
        Ok(public)
    }

    pub fn trust_roots(&self) -> Result<(TrustRoots, Vec<Certificate>)> {
        read_trust_roots(&self.trust_roots_path)
    }
}

pub fn read_keypair(path: &Path) -> Result<KeyPair> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading key {}", path.display()))?;
    let file: KeyFile = serde_json::from_str(&text).with_context(|| format!("parsing key {}", path.display()))?;
    KeyPair::try_from(&file).map_err(|e| anyhow::anyhow!("key {}: {e}", path.display()))
}

/// Public key from either a full key file or a public key file.
pub fn read_public(path: &Path) -> Result<(KeyRole, PublicKey)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading key {}", path.display()))?;
    if let Ok(file) = serde_json::from_str::<KeyFile>(&text) {
        let key = KeyPair::try_from(&file).map_err(|e| anyhow::anyhow!("key {}: {e}", path.display()))?;
        return Ok((key.role(), key.public()));
    }
    let file: PublicKeyFile = serde_json::from_str(&text).with_context(|| format!("parsing key {}", path.display()))?;
    Ok((file.role, file.public))
}

pub fn write_keypair(path: &Path, key: &KeyPair) -> Result<()> {
    write_json(path, &KeyFile::from(key))
}

pub fn read_trust_roots(path: &Path) -> Result<(TrustRoots, Vec<Certificate>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading trust roots {}", path.display()))?;
    let certs: Vec<Certificate> = serde_json::from_str(&text).with_context(|| format!("parsing trust roots {}", path.display()))?;
    for c in &certs {
        if !c.is_self_signed() {
            bail!("trust root {} is not self-signed", c.tbs.subject_name);
        }
    }
    Ok((certs.iter().map(Certificate::cert_hash).collect(), certs))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
