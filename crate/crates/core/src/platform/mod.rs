//! Application and data layers: configuration, authentication, access
//! control, audit, cache, anonymization, persistence and the HTTP API.

pub mod anonymize;
pub mod api;
pub mod audit;
pub mod auth;
pub mod cache;
pub mod config;
pub mod rbac;
pub mod service;
pub mod store;
pub mod walkthrough;

pub use anonymize::{anonymize, anonymize_with, Roster};
pub use audit::{verify_chain, AuditAction, AuditError, AuditLog, AuditRecord};
pub use auth::{AuthError, AuthService, AuthToken, Claims, NoSecondFactor, Role, SecondFactor, UserAccount};
pub use cache::{CacheEntry, VersionConflict, VersionedCache};
pub use config::{ConfigError, PlatformConfig, ProviderKind};
pub use rbac::{Decision, Endpoint, PermissionMatrix, ENDPOINTS};
pub use store::{DataStore, ExportBundle, Family, RecordKind, StoreError};
pub use service::{PlatformService, ServiceError, ServiceParts};
