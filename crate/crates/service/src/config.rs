// SPDX-License-Identifier: Apache-2.0

//! Service configuration from the environment.

use std::time::Duration;

use thiserror::Error;

use crate::apply::RetryPolicy;
use crate::dedup::DEFAULT_CAPACITY;

pub const DEFAULT_API_BASE: &str = "https://api.github.com";
pub const ENV_SECRET: &str = "TRIAGE_WEBHOOK_SECRET";
pub const ENV_TOKEN: &str = "TRIAGE_GH_TOKEN";
pub const ENV_API_BASE: &str = "TRIAGE_API_BASE";
pub const ENV_DRY_RUN: &str = "TRIAGE_DRY_RUN";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{ENV_SECRET} is not set or empty")]
    MissingSecret,
    #[error("invalid value {value:?} for {name}")]
    Invalid { name: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub webhook_secret: Vec<u8>,
    pub api_base_url: String,
    pub auth_token: Option<String>,
    pub dry_run: bool,
    pub dedup_capacity: usize,
    pub retry: RetryPolicy,
    /// Time allowed for processing one delivery, side effects included.
    pub budget: Duration,
}

impl ServiceConfig {
    pub fn new(webhook_secret: impl Into<Vec<u8>>) -> Self {
        Self {
            webhook_secret: webhook_secret.into(),
            api_base_url: DEFAULT_API_BASE.into(),
            auth_token: None,
            dry_run: false,
            dedup_capacity: DEFAULT_CAPACITY,
            retry: RetryPolicy::default(),
            budget: Duration::from_secs(10),
        }
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Reads the `TRIAGE_*` variables through `get`.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let secret = get(ENV_SECRET)
            .filter(|s| !s.is_empty())
            .ok_or(ConfigError::MissingSecret)?;
        let mut cfg = Self::new(secret);
        if let Some(base) = get(ENV_API_BASE).filter(|s| !s.is_empty()) {
            cfg.api_base_url = base;
        }
        cfg.auth_token = get(ENV_TOKEN).filter(|s| !s.is_empty());
        if let Some(v) = get(ENV_DRY_RUN) {
            cfg.dry_run = match v.trim().to_ascii_lowercase().as_str() {
                "" | "0" | "false" | "no" | "off" => false,
                "1" | "true" | "yes" | "on" => true,
                _ => {
                    return Err(ConfigError::Invalid {
                        name: ENV_DRY_RUN,
                        value: v,
                    })
                }
            };
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.webhook_secret.is_empty() {
            return Err(ConfigError::MissingSecret);
        }
        if self.dedup_capacity == 0 {
            return Err(ConfigError::Invalid {
                name: "dedup_capacity",
                value: "0".into(),
            });
        }
        Ok(())
    }
}
