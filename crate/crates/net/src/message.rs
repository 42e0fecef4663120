//! JSON message bodies. Every message is an object with a `"type"` field.
//! Digests travel as lowercase hex, nonces as hex, block payloads as base64.
//!
//! A response carries the type of the request it answers, except for
//! `challenge_result` (the answer to `run_audit`) and `error`.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use emf_core::codec::NONCE_LEN;
use emf_core::{AuditResult, Challenge, Digest, EncryptedBlock, PathElement, ProofMessage, VersionMetadata};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireBlock {
    pub index: usize,
    #[serde(with = "hex_nonce")]
    pub nonce: [u8; NONCE_LEN],
    #[serde(with = "base64_bytes")]
    pub ciphertext: Vec<u8>,
}

impl From<EncryptedBlock> for WireBlock {
    fn from(b: EncryptedBlock) -> Self {
        WireBlock {
            index: b.index,
            nonce: b.nonce,
            ciphertext: b.ciphertext,
        }
    }
}

impl From<WireBlock> for EncryptedBlock {
    fn from(b: WireBlock) -> Self {
        EncryptedBlock {
            index: b.index,
            nonce: b.nonce,
            ciphertext: b.ciphertext,
        }
    }
}

mod hex_nonce {
    use super::NONCE_LEN;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(nonce: &[u8; NONCE_LEN], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(nonce))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; NONCE_LEN], D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        let bytes = hex::decode(&*s).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom(format!("nonce must be {NONCE_LEN} bytes")))
    }
}

mod base64_bytes {
    use super::{Engine, B64};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        B64.decode(&*s).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    UploadFile {
        blocks: Vec<WireBlock>,
        file_length: u64,
    },
    UpdateBlock {
        /// Latest version when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_version: Option<usize>,
        index: usize,
        block: WireBlock,
    },
    RetrieveVersion {
        /// Latest version when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version: Option<usize>,
    },
    GetProof {
        version: usize,
        block_index: usize,
        /// Reserved for replay protection; currently ignored.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nonce: Option<String>,
    },
    RegisterMetadata {
        version: usize,
        root_digest: Digest,
        leaf_count: usize,
        /// Accepted for compatibility and ignored: roots suffice to verify.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block_digests: Option<Vec<Digest>>,
    },
    /// Asks the auditor to challenge `server`.
    RunAudit {
        server: String,
        count: usize,
        /// Challenge every registered (version, block) instead of sampling.
        #[serde(default)]
        exhaustive: bool,
    },
}

impl Request {
    pub const TYPES: &'static [&'static str] = &[
        "upload_file",
        "update_block",
        "retrieve_version",
        "get_proof",
        "register_metadata",
        "run_audit",
    ];

    pub fn get_proof(challenge: Challenge) -> Self {
        Request::GetProof {
            version: challenge.version,
            block_index: challenge.block_index,
            nonce: None,
        }
    }

    pub fn register(meta: VersionMetadata) -> Self {
        Request::RegisterMetadata {
            version: meta.version,
            root_digest: meta.root_digest,
            leaf_count: meta.leaf_count,
            block_digests: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    UploadFile {
        version: usize,
        root_digest: Digest,
        leaf_count: usize,
    },
    UpdateBlock {
        version: usize,
        parent_version: usize,
        root_digest: Digest,
        leaf_count: usize,
    },
    RetrieveVersion {
        version: usize,
        file_length: u64,
        blocks: Vec<WireBlock>,
    },
    GetProof {
        challenge: Challenge,
        leaf_digest: Digest,
        path: Vec<PathElement>,
    },
    RegisterMetadata {
        version: usize,
    },
    ChallengeResult {
        results: Vec<AuditResult>,
    },
    Error {
        code: String,
        message: String,
    },
}

impl Response {
    pub fn error(code: impl Into<String>, message: impl ToString) -> Self {
        Response::Error {
            code: code.into(),
            message: message.to_string(),
        }
    }

    pub fn proof(p: ProofMessage) -> Self {
        Response::GetProof {
            challenge: p.challenge,
            leaf_digest: p.leaf_digest,
            path: p.path,
        }
    }
}

/// Why a payload could not be decoded.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    /// Well-formed JSON object with a `type` this side does not know.
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("malformed message: {0}")]
    Malformed(String),
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::UnknownType(_) => "UnknownMessageType",
            DecodeError::Malformed(_) => "MalformedFrame",
        }
    }
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    serde_json::to_vec(msg).expect("messages always serialize")
}

/// Decodes a request, telling unknown types apart from garbage.
pub fn decode_request(payload: &[u8]) -> Result<Request, DecodeError> {
    let value: serde_json::Value =
        serde_json::from_slice(payload).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let ty = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| DecodeError::Malformed("missing \"type\" field".into()))?;
    if !Request::TYPES.contains(&ty) {
        return Err(DecodeError::UnknownType(ty.to_string()));
    }
    serde_json::from_value(value).map_err(|e| DecodeError::Malformed(e.to_string()))
}

pub fn decode_response(payload: &[u8]) -> Result<Response, DecodeError> {
    serde_json::from_slice(payload).map_err(|e| DecodeError::Malformed(e.to_string()))
}
