//! Server settings read from the environment.

use std::path::PathBuf;
use std::sync::Arc;

use autopilot_core::kernel::{Kernel, KernelConfig};
use autopilot_core::policy::{PolicyHandle, RemoteConfig, RemotePolicy, ScriptedPolicy};
use autopilot_core::web::{SimWeb, WebEnvironment};
use thiserror::Error;

use crate::app::{GatewayConfig, DEFAULT_MAX_UPLOAD};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("no policy configured: set AUTOPILOT_POLICY_URL or AUTOPILOT_POLICY_SCRIPT")]
    NoPolicy,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub addr: String,
    pub db: PathBuf,
    pub policy_url: Option<String>,
    /// A `{"entries": [...]}` file replayed by a scripted policy.
    pub policy_script: Option<PathBuf>,
    pub simweb_dir: Option<PathBuf>,
    pub devtools_url: Option<String>,
    pub start_url: String,
    pub max_upload_bytes: usize,
    pub max_steps: Option<u32>,
    pub max_depth: Option<u32>,
}

fn var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn parsed<T: std::str::FromStr>(name: &str) -> Result<Option<T>, ConfigError> {
    var(name)
        .map(|v| v.parse().map_err(|_| ConfigError::Invalid(format!("{name}: cannot parse {v:?}"))))
        .transpose()
}

impl Settings {
    pub fn from_env() -> Result<Self, ConfigError> {
        Ok(Self {
            addr: var("AUTOPILOT_ADDR").unwrap_or_else(|| "127.0.0.1:8080".into()),
            db: var("AUTOPILOT_DB").unwrap_or_else(|| "autopilot.db".into()).into(),
            policy_url: var("AUTOPILOT_POLICY_URL"),
            policy_script: var("AUTOPILOT_POLICY_SCRIPT").map(Into::into),
            simweb_dir: var("AUTOPILOT_SIMWEB_DIR").map(Into::into),
            devtools_url: var("AUTOPILOT_DEVTOOLS_URL"),
            start_url: var("AUTOPILOT_START_URL").unwrap_or_else(|| "about:blank".into()),
            max_upload_bytes: parsed("AUTOPILOT_MAX_UPLOAD_BYTES")?.unwrap_or(DEFAULT_MAX_UPLOAD),
            max_steps: parsed("AUTOPILOT_MAX_STEPS")?,
            max_depth: parsed("AUTOPILOT_MAX_DEPTH")?,
        })
    }

    pub fn policy(&self) -> Result<PolicyHandle, ConfigError> {
        if let Some(path) = &self.policy_script {
            let p = ScriptedPolicy::from_file(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            return Ok(Arc::new(p));
        }
        let mut remote = RemoteConfig::from_env().ok_or(ConfigError::NoPolicy)?;
        if let Some(url) = &self.policy_url {
            remote.endpoint = url.clone();
        }
        Ok(Arc::new(RemotePolicy::new(remote)))
    }

    pub fn web(&self) -> Result<Option<Arc<dyn WebEnvironment>>, ConfigError> {
        #[cfg(feature = "devtools")]
        if let Some(endpoint) = &self.devtools_url {
            return Ok(Some(Arc::new(autopilot_core::web::DevtoolsEnvironment {
                endpoint: endpoint.clone(),
                default_url: self.start_url.clone(),
                settle: std::time::Duration::from_millis(200),
            })));
        }
        #[cfg(not(feature = "devtools"))]
        if self.devtools_url.is_some() {
            return Err(ConfigError::Invalid("AUTOPILOT_DEVTOOLS_URL needs the `devtools` feature".into()));
        }
        match &self.simweb_dir {
            Some(dir) => {
                let web = SimWeb::from_dir(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(Some(Arc::new(web)))
            }
            None => Ok(None),
        }
    }

    pub fn kernel_config(&self) -> KernelConfig {
        let mut c = KernelConfig::default();
        if let Some(s) = self.max_steps {
            c.limits.max_steps = s;
        }
        if let Some(d) = self.max_depth {
            c.limits.max_depth = d;
        }
        c
    }

    pub fn kernel(&self) -> Result<Kernel, ConfigError> {
        let mut b = Kernel::builder(self.policy()?).config(self.kernel_config());
        if let Some(web) = self.web()? {
            b = b.web(web);
        }
        Ok(b.build())
    }

    pub fn gateway(&self) -> GatewayConfig {
        GatewayConfig { max_upload_bytes: self.max_upload_bytes, ..GatewayConfig::default() }
    }
}
