//! Binary node records.
//!
//! ```text
//! leaf:     0x00 | index u32 BE | nonce [16] | len u32 BE | ciphertext [len]
//! internal: 0x01 | left [32] | has_right u8 (0|1) | right [32]?
//! ```
//!
//! Digests are not stored; they are recomputed from the decoded content.

use emf_core::codec::{BLOCK_SIZE, NONCE_LEN};
use emf_core::hash::DIGEST_LEN;
use emf_core::{Digest, EncryptedBlock, Node, NodeId};

pub const LEAF_TAG: u8 = 0x00;
pub const INTERNAL_TAG: u8 = 0x01;

/// Encoded size of a leaf record, excluding the ciphertext.
pub const LEAF_HEADER_LEN: usize = 1 + 4 + NONCE_LEN + 4;
/// Encoded size of an internal record with both children.
pub const INTERNAL_RECORD_LEN: usize = 1 + DIGEST_LEN + 1 + DIGEST_LEN;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("record is truncated")]
    Truncated,
    #[error("unknown record tag {0:#04x}")]
    UnknownTag(u8),
    #[error("invalid right-child flag {0:#04x}")]
    BadFlag(u8),
    #[error("ciphertext length {0} outside 1..={BLOCK_SIZE}")]
    BadLength(usize),
    #[error("{0} trailing bytes after record")]
    Trailing(usize),
    #[error("block index {0} does not fit in 32 bits")]
    IndexOverflow(usize),
}

pub fn encode(node: &Node) -> Result<Vec<u8>, RecordError> {
    match node {
        Node::Leaf { block, .. } => {
            let index = u32::try_from(block.index).map_err(|_| RecordError::IndexOverflow(block.index))?;
            let len = block.ciphertext.len();
            if len == 0 || len > BLOCK_SIZE {
                return Err(RecordError::BadLength(len));
            }
            let mut out = Vec::with_capacity(LEAF_HEADER_LEN + len);
            out.push(LEAF_TAG);
            out.extend_from_slice(&index.to_be_bytes());
            out.extend_from_slice(&block.nonce);
            out.extend_from_slice(&(len as u32).to_be_bytes());
            out.extend_from_slice(&block.ciphertext);
            Ok(out)
        }
        Node::Internal { left, right, .. } => {
            let mut out = Vec::with_capacity(INTERNAL_RECORD_LEN);
            out.push(INTERNAL_TAG);
            out.extend_from_slice(left.0.as_bytes());
            match right {
                Some(r) => {
                    out.push(1);
                    out.extend_from_slice(r.0.as_bytes());
                }
                None => out.push(0),
            }
            Ok(out)
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RecordError> {
        if self.buf.len() < n {
            return Err(RecordError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, RecordError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, RecordError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn digest(&mut self) -> Result<Digest, RecordError> {
        Ok(Digest::from_slice(self.take(DIGEST_LEN)?).unwrap())
    }
}

/// Decodes a record and recomputes its digest.
pub fn decode(bytes: &[u8]) -> Result<Node, RecordError> {
    let mut r = Reader { buf: bytes };
    let node = match r.u8()? {
        LEAF_TAG => {
            let index = r.u32()? as usize;
            let nonce: [u8; NONCE_LEN] = r.take(NONCE_LEN)?.try_into().unwrap();
            let len = r.u32()? as usize;
            if len == 0 || len > BLOCK_SIZE {
                return Err(RecordError::BadLength(len));
            }
            let ciphertext = r.take(len)?.to_vec();
            Node::leaf(EncryptedBlock {
                index,
                nonce,
                ciphertext,
            })
        }
        INTERNAL_TAG => {
            let left = NodeId(r.digest()?);
            match r.u8()? {
                0 => Node::Internal {
                    left,
                    right: None,
                    digest: left.0,
                },
                1 => Node::internal(left, NodeId(r.digest()?)),
                flag => return Err(RecordError::BadFlag(flag)),
            }
        }
        tag => return Err(RecordError::UnknownTag(tag)),
    };
    if !r.buf.is_empty() {
        return Err(RecordError::Trailing(r.buf.len()));
    }
    Ok(node)
}
