//! Networked storage server, client and third-party auditor speaking
//! length-prefixed JSON frames over TCP.
//!
//! ```no_run
//! use emf_net::{Auditor, Client, StorageServer};
//! use emf_store::StoredForest;
//!
//! let server = StorageServer::new(StoredForest::open("store")?).spawn("127.0.0.1:0")?;
//! let tpa = Auditor::new(None).spawn("127.0.0.1:0")?;
//! let client = Client::new(server.local_addr().to_string(), Some(tpa.local_addr().to_string()));
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod client;
pub mod frame;
pub mod message;
pub mod server;
pub mod service;
pub mod tpa;

pub use client::{Client, ClientError, Connection, RetrievedFile, VersionSummary};
pub use message::{Request, Response, WireBlock};
pub use server::{StorageServer, LISTEN_ENV};
pub use service::ServiceHandle;
pub use tpa::{audit_round, Auditor};
