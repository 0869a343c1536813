//! Accounts, credential checks and signed session tokens.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use jsonwebtoken::{Algorithm, DecodingKey, EncodingKey, Header, Validation};
use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Administrator,
    SupervisingPhysician,
    Trainee,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Administrator, Role::SupervisingPhysician, Role::Trainee];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Administrator => "administrator",
            Role::SupervisingPhysician => "supervising_physician",
            Role::Trainee => "trainee",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("authentication failed")]
    AuthFailed,
    #[error("account {0} is locked")]
    AccountLocked(String),
    #[error("token expired")]
    TokenExpired,
    #[error("token invalid")]
    TokenInvalid,
    #[error("login {0} already exists")]
    DuplicateLogin(String),
    #[error("invalid account: {0}")]
    InvalidAccount(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub id: String,
    pub login: String,
    pub role: Role,
    pub salt: String,
    /// Hex SHA-256 of `salt:credential`.
    pub credential_hash: String,
}

pub fn hash_credential(salt: &str, credential: &str) -> String {
    hex::encode(Sha256::digest(format!("{salt}:{credential}").as_bytes()))
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl UserAccount {
    pub fn new(id: impl Into<String>, login: impl Into<String>, credential: &str, role: Role) -> Self {
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        let salt = hex::encode(salt);
        Self {
            id: id.into(),
            login: login.into(),
            role,
            credential_hash: hash_credential(&salt, credential),
            salt,
        }
    }

    pub fn check(&self, credential: &str) -> bool {
        constant_time_eq(
            hash_credential(&self.salt, credential).as_bytes(),
            self.credential_hash.as_bytes(),
        )
    }
}

/// Hook for a second authentication factor.
pub trait SecondFactor: Send + Sync {
    fn verify(&self, account: &UserAccount, code: Option<&str>) -> bool;
}

/// Accepts every attempt. Deployments plug in a real factor here.
#[derive(Debug, Default)]
pub struct NoSecondFactor;

impl SecondFactor for NoSecondFactor {
    fn verify(&self, _account: &UserAccount, _code: Option<&str>) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub sub: String,
    pub login: String,
    pub role: Role,
    pub iat: u64,
    pub exp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthToken {
    pub token: String,
    pub user_id: String,
    pub role: Role,
    pub expires_at: u64,
}

pub struct AuthService {
    users: RwLock<BTreeMap<String, UserAccount>>,
    failures: Mutex<HashMap<String, u32>>,
    encoding: EncodingKey,
    decoding: DecodingKey,
    ttl_secs: u64,
    lockout_threshold: u32,
    clock: Arc<dyn Clock>,
    second_factor: Box<dyn SecondFactor>,
}

impl AuthService {
    pub fn new(secret: &[u8], ttl_secs: u64, lockout_threshold: u32, clock: Arc<dyn Clock>) -> Self {
        Self {
            users: RwLock::default(),
            failures: Mutex::default(),
            encoding: EncodingKey::from_secret(secret),
            decoding: DecodingKey::from_secret(secret),
            ttl_secs,
            lockout_threshold,
            clock,
            second_factor: Box::new(NoSecondFactor),
        }
    }

    pub fn with_second_factor(mut self, factor: Box<dyn SecondFactor>) -> Self {
        self.second_factor = factor;
        self
    }

    pub fn add_user(&self, account: UserAccount) -> Result<(), AuthError> {
        if account.login.trim().is_empty() || account.id.trim().is_empty() {
            return Err(AuthError::InvalidAccount("id and login are required".into()));
        }
        let mut users = self.users.write();
        if users.contains_key(&account.login) {
            return Err(AuthError::DuplicateLogin(account.login));
        }
        users.insert(account.login.clone(), account);
        Ok(())
    }

    pub fn user(&self, login: &str) -> Option<UserAccount> {
        self.users.read().get(login).cloned()
    }

    pub fn user_by_id(&self, id: &str) -> Option<UserAccount> {
        self.users.read().values().find(|u| u.id == id).cloned()
    }

    pub fn users(&self) -> Vec<UserAccount> {
        self.users.read().values().cloned().collect()
    }

    pub fn is_locked(&self, login: &str) -> bool {
        self.failures.lock().get(login).is_some_and(|n| *n >= self.lockout_threshold)
    }

    pub fn unlock(&self, login: &str) {
        self.failures.lock().remove(login);
    }

    /// Checks the credential and issues a token. The attempt that reaches
    /// the failure threshold, and every attempt after it, reports
    /// `AccountLocked`.
    pub fn authenticate(&self, login: &str, credential: &str, code: Option<&str>) -> Result<AuthToken, AuthError> {
        let account = self.user(login).ok_or(AuthError::AuthFailed)?;
        let mut failures = self.failures.lock();
        let count = failures.entry(login.to_string()).or_insert(0);
        if *count >= self.lockout_threshold {
            return Err(AuthError::AccountLocked(login.into()));
        }
        if !account.check(credential) || !self.second_factor.verify(&account, code) {
            *count += 1;
            return Err(if *count >= self.lockout_threshold {
                AuthError::AccountLocked(login.into())
            } else {
                AuthError::AuthFailed
            });
        }
        *count = 0;
        drop(failures);
        self.issue(&account)
    }

    pub fn issue(&self, account: &UserAccount) -> Result<AuthToken, AuthError> {
        let iat = self.clock.now_secs();
        let claims = Claims {
            sub: account.id.clone(),
            login: account.login.clone(),
            role: account.role,
            iat,
            exp: iat + self.ttl_secs,
        };
        let token = jsonwebtoken::encode(&Header::new(Algorithm::HS256), &claims, &self.encoding)
            .map_err(|_| AuthError::TokenInvalid)?;
        Ok(AuthToken {
            token,
            user_id: claims.sub,
            role: claims.role,
            expires_at: claims.exp,
        })
    }

    /// Validates signature and expiry. Expiry is measured on the injected
    /// clock.
    pub fn verify(&self, token: &str) -> Result<Claims, AuthError> {
        let mut validation = Validation::new(Algorithm::HS256);
        validation.validate_exp = false;
        validation.required_spec_claims.clear();
        let data = jsonwebtoken::decode::<Claims>(token, &self.decoding, &validation)
            .map_err(|_| AuthError::TokenInvalid)?;
        if self.clock.now_secs() >= data.claims.exp {
            return Err(AuthError::TokenExpired);
        }
        let account = self.user_by_id(&data.claims.sub).ok_or(AuthError::TokenInvalid)?;
        if account.role != data.claims.role {
            return Err(AuthError::TokenInvalid);
        }
        Ok(data.claims)
    }
}
