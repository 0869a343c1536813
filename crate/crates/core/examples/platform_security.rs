//! Login lockout, role checks, the audit hash chain, transcript
//! anonymization and optimistic cache versions, exercised in-process.

use psysim::platform::rbac::{self, ENDPOINTS};
use psysim::platform::service::LoginRequest;
use psysim::platform::{anonymize, AuditAction, PlatformService, Role, VersionedCache};

fn login(service: &PlatformService, user: &str, credential: &str) -> Result<String, String> {
    service
        .login(&LoginRequest {
            login: user.into(),
            credential: credential.into(),
            second_factor: None,
        })
        .map(|t| t.token)
        .map_err(|e| format!("{} {}", e.status, e.code))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let service = PlatformService::scripted(42);
    service.bootstrap_user("dr-admin", "admin-pass", Role::Administrator)?;
    service.bootstrap_user("resident", "resident-pass", Role::Trainee)?;

    for attempt in 1..=6 {
        println!("wrong credential, attempt {attempt}: {:?}", login(&service, "resident", "guess"));
    }
    println!("right credential while locked: {:?}", login(&service, "resident", "resident-pass"));

    let admin = login(&service, "dr-admin", "admin-pass")?;
    println!("\nadministrator grants:");
    for e in ENDPOINTS.iter().filter(|e| **e != rbac::LOGIN) {
        let verdict = match service.authorize(&admin, e) {
            Ok(_) => "allow".to_string(),
            Err(err) => err.code,
        };
        println!("  {:<32} {verdict}", e.key());
    }
    service.bootstrap_user("resident-2", "second-pass", Role::Trainee)?;
    let trainee = login(&service, "resident-2", "second-pass")?;
    let denied = service.authorize(&trainee, &rbac::ADMIN_AUDIT).unwrap_err();
    println!("trainee on {}: {} {}", rbac::ADMIN_AUDIT.key(), denied.status, denied.code);

    let log = service.audit_log();
    println!("\naudit: {} records, chain ok: {}", log.len(), log.verify().is_ok());
    for action in AuditAction::CRITICAL {
        println!("  {action:?}: {}", log.count(action));
    }
    if let Some(last) = log.records().last() {
        println!("  last: {} {:?} {} -> {}", last.id, last.action, last.target, last.outcome);
    }

    let transcript = "Patient: I'm Li Wei, call me on 138 1234 5678. I live at 88 Zhongshan Road, ID 110101199003074518.";
    println!("\nraw:        {transcript}");
    println!("anonymized: {}", anonymize(transcript, &["Li Wei"]));

    let cache: VersionedCache<String> = VersionedCache::new();
    let v1 = cache.put("case-1", "draft".into(), 0).expect("fresh key");
    let stale = cache.put("case-1", "other editor".into(), 0);
    let v2 = cache.put("case-1", "approved".into(), v1).expect("current version");
    println!("\ncache versions: {v1} then {v2}; stale write rejected: {:?}", stale.err());
    Ok(())
}
