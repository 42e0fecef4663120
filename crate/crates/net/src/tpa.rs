//! The third-party auditor. It keeps only registered version roots and
//! judges the server from the proof messages it receives.

use std::io;
use std::net::ToSocketAddrs;
use std::sync::Mutex;
use std::time::Duration;

use emf_core::{AuditError, AuditResult, Challenge, Registry, VersionMetadata};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::client::{ClientError, Connection, DEFAULT_TIMEOUT};
use crate::message::{Request, Response};
use crate::service::{self, Handler, ServiceHandle};

#[derive(Debug)]
pub struct Auditor {
    registry: Mutex<Registry>,
    rng: Mutex<StdRng>,
    timeout: Duration,
}

impl Auditor {
    pub fn new(seed: Option<u64>) -> Self {
        Auditor {
            registry: Mutex::new(Registry::new()),
            rng: Mutex::new(seed.map_or_else(StdRng::from_entropy, StdRng::seed_from_u64)),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn spawn(self, endpoint: impl ToSocketAddrs) -> io::Result<ServiceHandle> {
        service::spawn(endpoint, self)
    }

    pub fn register(&self, meta: VersionMetadata) -> Result<(), AuditError> {
        self.registry.lock().unwrap().register(meta)?;
        log::info!(
            "registered version {} ({} blocks, root {})",
            meta.version,
            meta.leaf_count,
            meta.root_digest
        );
        Ok(())
    }

    pub fn registry(&self) -> Registry {
        self.registry.lock().unwrap().clone()
    }

    /// Challenges `server` `count` times at random, or once per registered
    /// block when `exhaustive`.
    pub fn run_audit(&self, server: &str, count: usize, exhaustive: bool) -> Result<Vec<AuditResult>, AuditError> {
        let registry = self.registry();
        let challenges = if exhaustive {
            if registry.is_empty() {
                return Err(AuditError::NoVersionsRegistered);
            }
            registry.all_challenges()
        } else {
            registry.make_challenges(&mut *self.rng.lock().unwrap(), count)?
        };
        let results = audit_round(&registry, server, &challenges, self.timeout);
        let failed = results.iter().filter(|r| !r.passed()).count();
        log::info!("audit of {server}: {} challenges, {failed} failed", results.len());
        Ok(results)
    }
}

/// Sends each challenge to `server` as a `get_proof` request and verifies
/// the answer. Unreachable servers, timeouts and error responses all count
/// as failures; the round never aborts early.
pub fn audit_round(registry: &Registry, server: &str, challenges: &[Challenge], timeout: Duration) -> Vec<AuditResult> {
    let mut conn: Option<Connection> = None;
    challenges
        .iter()
        .map(|&challenge| {
            let response = ask(&mut conn, server, challenge, timeout);
            if response.is_err() {
                conn = None;
            }
            registry.verify_response(challenge, response)
        })
        .collect()
}

fn ask(
    conn: &mut Option<Connection>,
    server: &str,
    challenge: Challenge,
    timeout: Duration,
) -> Result<emf_core::ProofMessage, ClientError> {
    let c = match conn {
        Some(c) => c,
        None => conn.insert(Connection::connect(server, timeout)?),
    };
    match c.call(&Request::get_proof(challenge))? {
        Response::GetProof {
            challenge,
            leaf_digest,
            path,
        } => Ok(emf_core::ProofMessage {
            challenge,
            leaf_digest,
            path,
        }),
        _ => Err(ClientError::Unexpected("get_proof")),
    }
}

impl Handler for Auditor {
    fn handle(&self, request: Request) -> Response {
        match request {
            Request::RegisterMetadata {
                version,
                root_digest,
                leaf_count,
                ..
            } => match self.register(VersionMetadata {
                version,
                root_digest,
                leaf_count,
            }) {
                Ok(()) => Response::RegisterMetadata { version },
                Err(e) => Response::error(e.code(), &e),
            },
            Request::RunAudit {
                server,
                count,
                exhaustive,
            } => match self.run_audit(&server, count, exhaustive) {
                Ok(results) => Response::ChallengeResult { results },
                Err(e) => Response::error(e.code(), &e),
            },
            _ => Response::error("UnsupportedMessageType", "the auditor does not accept this message"),
        }
    }
}
