//! The storage server role: owns the on-disk forest and answers uploads,
//! updates, retrievals and proof requests.

use std::io;
use std::net::ToSocketAddrs;
use std::sync::RwLock;

use emf_core::{prove, EncryptedBlock, ForestError};
use emf_store::{StoreError, StoredForest};

use crate::message::{Request, Response, WireBlock};
use crate::service::{self, Handler, ServiceHandle};

/// Overrides the server bind address when set.
pub const LISTEN_ENV: &str = "MF_LISTEN";

/// Uploads and updates take the write lock; everything else reads
/// concurrently.
#[derive(Debug)]
pub struct StorageServer {
    forest: RwLock<StoredForest>,
}

impl StorageServer {
    pub fn new(forest: StoredForest) -> Self {
        StorageServer {
            forest: RwLock::new(forest),
        }
    }

    pub fn spawn(self, endpoint: impl ToSocketAddrs) -> io::Result<ServiceHandle> {
        service::spawn(endpoint, self)
    }

    fn upload(&self, blocks: Vec<WireBlock>, file_length: u64) -> Result<Response, StoreError> {
        let blocks: Vec<EncryptedBlock> = blocks.into_iter().map(Into::into).collect();
        let rec = self.forest.write().unwrap().upload(blocks, file_length)?;
        log::info!("version 0 stored: {} blocks, root {}", rec.leaf_count, rec.root);
        Ok(Response::UploadFile {
            version: rec.version,
            root_digest: rec.root,
            leaf_count: rec.leaf_count,
        })
    }

    fn update(&self, base: Option<usize>, index: usize, block: WireBlock) -> Result<Response, StoreError> {
        if block.index != index {
            return Err(ForestError::BlockIndexMismatch {
                position: index,
                found: block.index,
            }
            .into());
        }
        let mut forest = self.forest.write().unwrap();
        let base = match base {
            Some(b) => b,
            None => latest(&forest)?,
        };
        let rec = forest.update(base, index, block.into())?;
        log::info!(
            "version {} stored: block {index} replaced in version {base}",
            rec.version
        );
        Ok(Response::UpdateBlock {
            version: rec.version,
            parent_version: base,
            root_digest: rec.root,
            leaf_count: rec.leaf_count,
        })
    }

    fn retrieve(&self, version: Option<usize>) -> Result<Response, StoreError> {
        let forest = self.forest.read().unwrap();
        let version = match version {
            Some(v) => v,
            None => latest(&forest)?,
        };
        let blocks = forest.forest().retrieve_version(version)?;
        let file_length = forest.records()[version].file_length;
        Ok(Response::RetrieveVersion {
            version,
            file_length,
            blocks: blocks.into_iter().map(Into::into).collect(),
        })
    }
}

fn latest(forest: &StoredForest) -> Result<usize, StoreError> {
    forest
        .records()
        .len()
        .checked_sub(1)
        .ok_or(StoreError::Forest(ForestError::VersionNotFound(0)))
}

fn store_error(e: StoreError) -> Response {
    Response::error(e.code(), &e)
}

impl Handler for StorageServer {
    fn handle(&self, request: Request) -> Response {
        let result = match request {
            Request::UploadFile { blocks, file_length } => self.upload(blocks, file_length),
            Request::UpdateBlock {
                base_version,
                index,
                block,
            } => self.update(base_version, index, block),
            Request::RetrieveVersion { version } => self.retrieve(version),
            Request::GetProof {
                version, block_index, ..
            } => {
                let forest = self.forest.read().unwrap();
                let challenge = emf_core::Challenge { version, block_index };
                return match prove(forest.forest(), challenge) {
                    Ok(p) => Response::proof(p),
                    Err(e) => {
                        log::warn!("cannot prove {version}/{block_index}: {e}");
                        Response::error(e.code(), &e)
                    }
                };
            }
            Request::RegisterMetadata { .. } | Request::RunAudit { .. } => {
                return Response::error(
                    "UnsupportedMessageType",
                    "the storage server does not accept this message",
                );
            }
        };
        result.unwrap_or_else(store_error)
    }
}
