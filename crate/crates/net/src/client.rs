//! The client role. The file key stays here: only ciphertext and digests
//! ever leave the process.

use std::io::{self, BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use emf_core::codec::{self, CodecError, FileKey};
use emf_core::{
    fold_path, hash_leaf, AuditResult, Challenge, Digest, EncryptedBlock, Forest, ForestError, MemStore,
    VersionMetadata,
};
use rand::{CryptoRng, RngCore};

use crate::frame::{read_frame, write_frame, FrameError};
use crate::message::{decode_response, encode, DecodeError, Request, Response};

/// How long to wait for any single response.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach {endpoint}: {source}")]
    Unreachable { endpoint: String, source: io::Error },
    #[error("transport error: {0}")]
    Transport(#[from] FrameError),
    #[error("peer closed the connection")]
    Closed,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    /// An error response, passed through verbatim.
    #[error("{code}: {message}")]
    Remote { code: String, message: String },
    #[error("unexpected response type {0}")]
    Unexpected(&'static str),
    #[error("server root {server} does not match locally computed root {local}")]
    RootMismatch { server: Digest, local: Digest },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    /// The server stored the version but the auditor did not record it.
    #[error("version {} stored with root {} but not registered with the auditor: {reason}", .summary.version, .summary.root_digest)]
    Unregistered { summary: VersionSummary, reason: String },
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Unreachable { .. } => "Unreachable",
            ClientError::Transport(_) | ClientError::Closed => "Transport",
            ClientError::Decode(e) => e.code(),
            ClientError::Remote { code, .. } => code,
            ClientError::Unexpected(_) => "UnexpectedResponse",
            ClientError::RootMismatch { .. } => "RootMismatch",
            ClientError::Codec(_) => "Codec",
            ClientError::Forest(e) => e.code(),
            ClientError::Unregistered { .. } => "PartialFailure",
        }
    }
}

/// One open request/response connection.
#[derive(Debug)]
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Connection {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, ClientError> {
        let unreachable = |source| ClientError::Unreachable {
            endpoint: endpoint.to_string(),
            source,
        };
        let addrs: Vec<_> = endpoint.to_socket_addrs().map_err(unreachable)?.collect();
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no addresses");
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout)).map_err(unreachable)?;
                    stream.set_nodelay(true).map_err(unreachable)?;
                    let reader = BufReader::new(stream.try_clone().map_err(unreachable)?);
                    return Ok(Connection {
                        reader,
                        writer: BufWriter::new(stream),
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(unreachable(last))
    }

    /// Sends `request` and waits for the answer. Error responses become
    /// [`ClientError::Remote`].
    pub fn call(&mut self, request: &Request) -> Result<Response, ClientError> {
        self.send_raw(&encode(request))
    }

    pub fn send_raw(&mut self, payload: &[u8]) -> Result<Response, ClientError> {
        write_frame(&mut self.writer, payload)?;
        let bytes = read_frame(&mut self.reader)?.ok_or(ClientError::Closed)?;
        match decode_response(&bytes)? {
            Response::Error { code, message } => Err(ClientError::Remote { code, message }),
            r => Ok(r),
        }
    }
}

/// What the client learns about a version it created.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VersionSummary {
    pub version: usize,
    pub parent_version: Option<usize>,
    pub root_digest: Digest,
    pub leaf_count: usize,
}

impl VersionSummary {
    pub fn metadata(&self) -> VersionMetadata {
        VersionMetadata {
            version: self.version,
            root_digest: self.root_digest,
            leaf_count: self.leaf_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievedFile {
    pub version: usize,
    pub data: Vec<u8>,
}

/// Talks to a storage server and, optionally, an auditor.
#[derive(Debug, Clone)]
pub struct Client {
    pub server: String,
    pub tpa: Option<String>,
    pub timeout: Duration,
}

impl Client {
    pub fn new(server: impl Into<String>, tpa: Option<String>) -> Self {
        Client {
            server: server.into(),
            tpa,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    fn server(&self) -> Result<Connection, ClientError> {
        Connection::connect(&self.server, self.timeout)
    }

    /// Encrypts and uploads `data` as version 0, checks the server's root
    /// against a locally built tree, then registers it with the auditor.
    pub fn upload<R: RngCore + CryptoRng>(
        &self,
        data: &[u8],
        key: &FileKey,
        rng: &mut R,
    ) -> Result<VersionSummary, ClientError> {
        let blocks = codec::encrypt_file(data, key, rng)?;
        let mut local = Forest::new(MemStore::new());
        let local_root = local.build_initial_tree(blocks.clone())?.root.0;

        let request = Request::UploadFile {
            blocks: blocks.into_iter().map(Into::into).collect(),
            file_length: data.len() as u64,
        };
        let summary = match self.server()?.call(&request)? {
            Response::UploadFile {
                version,
                root_digest,
                leaf_count,
            } => VersionSummary {
                version,
                parent_version: None,
                root_digest,
                leaf_count,
            },
            _ => return Err(ClientError::Unexpected("upload_file")),
        };
        if summary.root_digest != local_root {
            return Err(ClientError::RootMismatch {
                server: summary.root_digest,
                local: local_root,
            });
        }
        self.register_after_write(summary)
    }

    /// Re-encrypts block `index` with `plaintext` on top of `base` (latest
    /// when `None`) and registers the new version.
    ///
    /// The new root is checked by folding the new leaf through the base
    /// version's sibling path, which an update leaves unchanged.
    pub fn update<R: RngCore + CryptoRng>(
        &self,
        base: Option<usize>,
        index: usize,
        plaintext: &[u8],
        key: &FileKey,
        rng: &mut R,
    ) -> Result<VersionSummary, ClientError> {
        let plain = codec::PlainBlock {
            index,
            data: plaintext.to_vec(),
            is_last: false,
        };
        let block = codec::encrypt_block(&plain, key, rng);
        let leaf = hash_leaf(&block);

        let mut conn = self.server()?;
        let request = Request::UpdateBlock {
            base_version: base,
            index,
            block: block.into(),
        };
        let summary = match conn.call(&request)? {
            Response::UpdateBlock {
                version,
                parent_version,
                root_digest,
                leaf_count,
            } => VersionSummary {
                version,
                parent_version: Some(parent_version),
                root_digest,
                leaf_count,
            },
            _ => return Err(ClientError::Unexpected("update_block")),
        };

        let parent = summary.parent_version.expect("updates have a parent");
        let path = match conn.call(&Request::get_proof(Challenge {
            version: parent,
            block_index: index,
        }))? {
            Response::GetProof { path, .. } => path,
            _ => return Err(ClientError::Unexpected("get_proof")),
        };
        let local = fold_path(&leaf, &path);
        if local != summary.root_digest {
            return Err(ClientError::RootMismatch {
                server: summary.root_digest,
                local,
            });
        }
        self.register_after_write(summary)
    }

    fn register_after_write(&self, summary: VersionSummary) -> Result<VersionSummary, ClientError> {
        if self.tpa.is_some() {
            if let Err(e) = self.register(summary.metadata()) {
                return Err(ClientError::Unregistered {
                    summary,
                    reason: e.to_string(),
                });
            }
        }
        Ok(summary)
    }

    /// Sends version metadata to the auditor. Also usable to retry after
    /// [`ClientError::Unregistered`].
    pub fn register(&self, meta: VersionMetadata) -> Result<(), ClientError> {
        let tpa = self
            .tpa
            .as_deref()
            .ok_or(ClientError::Unexpected("no auditor configured"))?;
        match Connection::connect(tpa, self.timeout)?.call(&Request::register(meta))? {
            Response::RegisterMetadata { .. } => Ok(()),
            _ => Err(ClientError::Unexpected("register_metadata")),
        }
    }

    /// Downloads and decrypts `version` (latest when `None`).
    pub fn retrieve(&self, version: Option<usize>, key: &FileKey) -> Result<RetrievedFile, ClientError> {
        let (version, blocks, file_length) = self.retrieve_encrypted(version)?;
        let data = codec::decrypt_file(&blocks, key, file_length as usize);
        Ok(RetrievedFile { version, data })
    }

    /// Downloads the ciphertext blocks of `version` without decrypting.
    pub fn retrieve_encrypted(&self, version: Option<usize>) -> Result<(usize, Vec<EncryptedBlock>, u64), ClientError> {
        match self.server()?.call(&Request::RetrieveVersion { version })? {
            Response::RetrieveVersion {
                version,
                file_length,
                blocks,
            } => Ok((version, blocks.into_iter().map(Into::into).collect(), file_length)),
            _ => Err(ClientError::Unexpected("retrieve_version")),
        }
    }

    /// Asks the auditor to challenge the server `count` times, or every
    /// registered block when `exhaustive`.
    pub fn audit(&self, count: usize, exhaustive: bool) -> Result<Vec<AuditResult>, ClientError> {
        let tpa = self
            .tpa
            .as_deref()
            .ok_or(ClientError::Unexpected("no auditor configured"))?;
        let request = Request::RunAudit {
            server: self.server.clone(),
            count,
            exhaustive,
        };
        match Connection::connect(tpa, self.timeout)?.call(&request)? {
            Response::ChallengeResult { results } => Ok(results),
            _ => Err(ClientError::Unexpected("challenge_result")),
        }
    }
}
