//! Immutable, content-addressed tree nodes and the storage trait behind them.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::EncryptedBlock;
use crate::hash::{hash_internal, hash_leaf, Digest};

/// Identifies a node by its digest. Equal digests mean the same node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub Digest);

impl NodeId {
    pub fn digest(&self) -> &Digest {
        &self.0
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", &self.0.to_hex()[..16])
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl From<Digest> for NodeId {
    fn from(d: Digest) -> Self {
        NodeId(d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Leaf {
        block: EncryptedBlock,
        digest: Digest,
    },
    /// `right` is absent only for a promoted lone child. The forest never
    /// creates such nodes (promotion reuses the child itself) but the record
    /// format can carry them.
    Internal {
        left: NodeId,
        right: Option<NodeId>,
        digest: Digest,
    },
}

impl Node {
    pub fn leaf(block: EncryptedBlock) -> Node {
        let digest = hash_leaf(&block);
        Node::Leaf { block, digest }
    }

    pub fn internal(left: NodeId, right: NodeId) -> Node {
        Node::Internal {
            left,
            right: Some(right),
            digest: hash_internal(&left.0, &right.0),
        }
    }

    pub fn id(&self) -> NodeId {
        NodeId(*self.digest())
    }

    pub fn digest(&self) -> &Digest {
        match self {
            Node::Leaf { digest, .. } | Node::Internal { digest, .. } => digest,
        }
    }

    /// Recomputes the digest from content, ignoring the cached field.
    pub fn content_digest(&self) -> Digest {
        match self {
            Node::Leaf { block, .. } => hash_leaf(block),
            Node::Internal {
                left,
                right: Some(right),
                ..
            } => hash_internal(&left.0, &right.0),
            Node::Internal { left, right: None, .. } => left.0,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }

    /// Child ids, left first. Empty for leaves.
    pub fn children(&self) -> impl Iterator<Item = NodeId> {
        let (l, r) = match self {
            Node::Leaf { .. } => (None, None),
            Node::Internal { left, right, .. } => (Some(*left), *right),
        };
        l.into_iter().chain(r)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NodeStoreError {
    #[error("node {0} is missing")]
    Missing(NodeId),
    #[error("node {id} is corrupt: {reason}")]
    Corrupt { id: NodeId, reason: String },
    #[error("storage I/O error: {0}")]
    Io(#[from] io::Error),
}

/// Append-only, content-addressed node storage.
pub trait NodeStore {
    fn get_node(&self, id: &NodeId) -> Result<Arc<Node>, NodeStoreError>;

    /// Stores `node` under its digest. Storing an existing id is a no-op.
    /// Returns whether a new record was written.
    fn put_node(&mut self, node: Node) -> Result<bool, NodeStoreError>;

    fn contains(&self, id: &NodeId) -> bool;
}

/// Hash-map backed [`NodeStore`] that remembers insertion order.
#[derive(Debug, Default, Clone)]
pub struct MemStore {
    nodes: HashMap<NodeId, Arc<Node>>,
    order: Vec<NodeId>,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Ids in the order they were first stored.
    pub fn ids(&self) -> &[NodeId] {
        &self.order
    }

    /// Replaces a stored node in place, keeping its id. For fault-injection
    /// tests only.
    #[cfg(feature = "testing")]
    pub fn tamper(&mut self, id: &NodeId, f: impl FnOnce(&mut Node)) {
        let node = self.nodes.get_mut(id).expect("tampered node must exist");
        f(Arc::make_mut(node));
    }
}

impl NodeStore for MemStore {
    fn get_node(&self, id: &NodeId) -> Result<Arc<Node>, NodeStoreError> {
        self.nodes.get(id).cloned().ok_or(NodeStoreError::Missing(*id))
    }

    fn put_node(&mut self, node: Node) -> Result<bool, NodeStoreError> {
        let id = node.id();
        if self.nodes.contains_key(&id) {
            return Ok(false);
        }
        self.nodes.insert(id, Arc::new(node));
        self.order.push(id);
        Ok(true)
    }

    fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }
}

impl<S: NodeStore + ?Sized> NodeStore for &mut S {
    fn get_node(&self, id: &NodeId) -> Result<Arc<Node>, NodeStoreError> {
        (**self).get_node(id)
    }

    fn put_node(&mut self, node: Node) -> Result<bool, NodeStoreError> {
        (**self).put_node(node)
    }

    fn contains(&self, id: &NodeId) -> bool {
        (**self).contains(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(byte: u8) -> EncryptedBlock {
        EncryptedBlock {
            index: 0,
            nonce: [byte; 16],
            ciphertext: vec![byte; 8],
        }
    }

    #[test]
    fn put_is_idempotent() {
        let mut store = MemStore::new();
        assert!(store.put_node(Node::leaf(block(1))).unwrap());
        assert!(!store.put_node(Node::leaf(block(1))).unwrap());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn missing_node() {
        let store = MemStore::new();
        let id = NodeId(Digest::new([4; 32]));
        assert!(matches!(
            store.get_node(&id),
            Err(NodeStoreError::Missing(got)) if got == id
        ));
    }

    #[test]
    fn digests_match_content() {
        let a = Node::leaf(block(1));
        let b = Node::leaf(block(2));
        let parent = Node::internal(a.id(), b.id());
        assert_eq!(parent.content_digest(), *parent.digest());
        assert_eq!(parent.children().collect::<Vec<_>>(), vec![a.id(), b.id()]);
        let lone = Node::Internal {
            left: a.id(),
            right: None,
            digest: *a.digest(),
        };
        assert_eq!(lone.content_digest(), *a.digest());
    }
}
