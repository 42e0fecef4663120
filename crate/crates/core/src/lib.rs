//! Versioned, auditable encrypted block storage built on an entangled Merkle
//! forest: persistent Merkle trees whose versions share unchanged subtrees.
//!
//! - [`codec`]: 16 KiB chunking and AES-256-CTR block encryption.
//! - [`hash`]: SHA-256 leaf and internal hashing with domain separation.
//! - [`forest`]: build, update, retrieve and sibling paths over shared nodes.
//! - [`audit`]: challenge / proof / verify between auditor and server.

pub mod audit;
pub mod codec;
pub mod forest;
pub mod hash;
pub mod node;
pub mod path;

pub use audit::{
    batch_audit, prove, AuditError, AuditResult, Challenge, ProofMessage, Registry, Verdict, VersionMetadata,
};
pub use codec::{
    chunk_file, decrypt_block, decrypt_file, encrypt_block, encrypt_file, CodecError, EncryptedBlock, FileKey,
    PlainBlock, BLOCK_SIZE,
};
pub use forest::{Forest, ForestError, NodeStats, VersionRoot};
pub use hash::{hash_internal, hash_leaf, Digest};
pub use node::{MemStore, Node, NodeId, NodeStore, NodeStoreError};
pub use path::{fold_path, path_shape, tree_height, PathElement, Side};
