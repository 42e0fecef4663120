//! The entangled Merkle forest.
//!
//! Each file version is a Merkle tree root. Block updates copy only the
//! root-to-leaf path of the changed block; every other subtree is shared by
//! id with the base version. Nodes are never modified or removed, so all
//! earlier versions stay readable and keep their root digests.

use std::collections::HashSet;
use std::sync::Arc;

use crate::codec::EncryptedBlock;
use crate::node::{MemStore, Node, NodeId, NodeStore, NodeStoreError};
use crate::path::{level_widths, PathElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VersionRoot {
    pub version: usize,
    pub root: NodeId,
    pub leaf_count: usize,
    pub parent_version: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ForestError {
    #[error("file is empty")]
    EmptyFile,
    #[error("forest already holds version 0")]
    AlreadyInitialized,
    #[error("block index {index} out of range for {leaf_count} blocks")]
    BlockIndexOutOfRange { index: usize, leaf_count: usize },
    #[error("version {0} not found")]
    VersionNotFound(usize),
    #[error("block at position {position} carries index {found}")]
    BlockIndexMismatch { position: usize, found: usize },
    #[error("version {found} does not follow version {expected}")]
    VersionGap { expected: usize, found: usize },
    #[error("versions disagree on leaf count: {expected} vs {found}")]
    LeafCountMismatch { expected: usize, found: usize },
    #[error("leaf for position {position} duplicates an existing leaf at another position")]
    LeafCollision { position: usize },
    #[error("tree structure is corrupt at {id}: {reason}")]
    Corrupt { id: NodeId, reason: String },
    #[error(transparent)]
    Store(#[from] NodeStoreError),
}

impl ForestError {
    /// Stable error code for wire messages and CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            ForestError::EmptyFile => "EmptyFile",
            ForestError::AlreadyInitialized => "AlreadyInitialized",
            ForestError::BlockIndexOutOfRange { .. } => "BlockIndexOutOfRange",
            ForestError::VersionNotFound(_) => "VersionNotFound",
            ForestError::BlockIndexMismatch { .. } => "BlockIndexMismatch",
            ForestError::VersionGap { .. } => "VersionGap",
            ForestError::LeafCountMismatch { .. } => "LeafCountMismatch",
            ForestError::LeafCollision { .. } => "LeafCollision",
            ForestError::Corrupt { .. } => "NodeCorrupt",
            ForestError::Store(NodeStoreError::Missing(_)) => "NodeMissing",
            ForestError::Store(NodeStoreError::Corrupt { .. }) => "NodeCorrupt",
            ForestError::Store(NodeStoreError::Io(_)) => "Io",
        }
    }
}

pub type Result<T, E = ForestError> = std::result::Result<T, E>;

/// Reachability-based node accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeStats {
    /// Distinct nodes reachable from any version root.
    pub total_nodes: usize,
    /// Distinct nodes reachable from each version root, by version.
    pub nodes_per_version: Vec<usize>,
}

/// A step taken while descending from a root towards a leaf.
enum Descent {
    /// Went into the left child; the right child is the sibling.
    Left(Arc<Node>),
    /// Went into the right child; the left child is the sibling.
    Right(Arc<Node>),
    Promoted,
}

/// Versioned Merkle trees over one file, sharing nodes in `S`.
///
/// Reads take `&self`. Mutations take `&mut self`, which gives the single
/// writer the forest requires.
#[derive(Debug)]
pub struct Forest<S = MemStore> {
    store: S,
    versions: Vec<VersionRoot>,
}

impl Default for Forest<MemStore> {
    fn default() -> Self {
        Forest::new(MemStore::new())
    }
}

impl<S: NodeStore> Forest<S> {
    pub fn new(store: S) -> Self {
        Forest {
            store,
            versions: Vec::new(),
        }
    }

    /// Reassembles a forest from a store and its persisted version list.
    pub fn from_parts(store: S, versions: Vec<VersionRoot>) -> Result<Self> {
        for (expected, v) in versions.iter().enumerate() {
            if v.version != expected {
                return Err(ForestError::VersionGap {
                    expected,
                    found: v.version,
                });
            }
            if v.leaf_count != versions[0].leaf_count {
                return Err(ForestError::LeafCountMismatch {
                    expected: versions[0].leaf_count,
                    found: v.leaf_count,
                });
            }
        }
        Ok(Forest { store, versions })
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    /// Node stores are append-only; this cannot rewrite existing nodes.
    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn into_store(self) -> S {
        self.store
    }

    pub fn versions(&self) -> &[VersionRoot] {
        &self.versions
    }

    pub fn version(&self, version: usize) -> Result<&VersionRoot> {
        self.versions.get(version).ok_or(ForestError::VersionNotFound(version))
    }

    pub fn latest(&self) -> Option<&VersionRoot> {
        self.versions.last()
    }

    pub fn leaf_count(&self) -> Option<usize> {
        self.versions.first().map(|v| v.leaf_count)
    }

    /// Builds version 0 from the file's encrypted blocks.
    ///
    /// Leaves are paired level by level; a lone last node is promoted as is.
    pub fn build_initial_tree(&mut self, blocks: Vec<EncryptedBlock>) -> Result<VersionRoot> {
        if !self.versions.is_empty() {
            return Err(ForestError::AlreadyInitialized);
        }
        if blocks.is_empty() {
            return Err(ForestError::EmptyFile);
        }
        if let Some((position, b)) = blocks.iter().enumerate().find(|(i, b)| b.index != *i) {
            return Err(ForestError::BlockIndexMismatch {
                position,
                found: b.index,
            });
        }

        // The block index is not part of the leaf hash, so two byte-identical
        // blocks would collapse into one node. Fresh nonces make this
        // unreachable for honest clients.
        let leaf_count = blocks.len();
        let mut level = Vec::with_capacity(leaf_count);
        for (position, block) in blocks.into_iter().enumerate() {
            let leaf = Node::leaf(block);
            let id = leaf.id();
            if !self.store.put_node(leaf)? && level.contains(&id) {
                return Err(ForestError::LeafCollision { position });
            }
            level.push(id);
        }
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            for pair in level.chunks(2) {
                match *pair {
                    [left, right] => {
                        let node = Node::internal(left, right);
                        next.push(node.id());
                        self.store.put_node(node)?;
                    }
                    [lone] => next.push(lone),
                    _ => unreachable!(),
                }
            }
            level = next;
        }

        let root = VersionRoot {
            version: 0,
            root: level[0],
            leaf_count,
            parent_version: None,
        };
        self.versions.push(root);
        Ok(root)
    }

    /// Replaces block `index` of version `base`, appending a new version.
    ///
    /// Only the nodes on the path from the new leaf to the new root are
    /// created. `base` may be any existing version, not just the latest.
    pub fn update_block(&mut self, base: usize, index: usize, block: EncryptedBlock) -> Result<VersionRoot> {
        let base_root = *self.version(base)?;
        self.check_index(&base_root, index)?;
        if block.index != index {
            return Err(ForestError::BlockIndexMismatch {
                position: index,
                found: block.index,
            });
        }

        let (descent, _) = self.descend(&base_root, index)?;
        let leaf = Node::leaf(block);
        let mut current = leaf.id();
        if !self.store.put_node(leaf)? {
            match &*self.store.get_node(&current)? {
                Node::Leaf { block, .. } if block.index == index => {}
                _ => return Err(ForestError::LeafCollision { position: index }),
            }
        }
        for step in descent.iter().rev() {
            let node = match step {
                Descent::Promoted => continue,
                Descent::Left(parent) => Node::internal(current, right_child(parent)?),
                Descent::Right(parent) => Node::internal(left_child(parent), current),
            };
            current = node.id();
            self.store.put_node(node)?;
        }

        let root = VersionRoot {
            version: self.versions.len(),
            root: current,
            leaf_count: base_root.leaf_count,
            parent_version: Some(base),
        };
        self.versions.push(root);
        Ok(root)
    }

    /// All blocks of `version` in leaf order.
    pub fn retrieve_version(&self, version: usize) -> Result<Vec<EncryptedBlock>> {
        let root = *self.version(version)?;
        let mut blocks = Vec::with_capacity(root.leaf_count);
        let mut stack = vec![root.root];
        while let Some(id) = stack.pop() {
            let node = self.store.get_node(&id)?;
            match &*node {
                Node::Leaf { block, .. } => {
                    if block.index != blocks.len() {
                        return Err(ForestError::Corrupt {
                            id,
                            reason: format!("leaf at position {} carries index {}", blocks.len(), block.index),
                        });
                    }
                    blocks.push(block.clone());
                }
                Node::Internal { left, right, .. } => {
                    stack.extend(*right);
                    stack.push(*left);
                }
            }
        }
        if blocks.len() != root.leaf_count {
            return Err(ForestError::Corrupt {
                id: root.root,
                reason: format!(
                    "version {version} has {} leaves, expected {}",
                    blocks.len(),
                    root.leaf_count
                ),
            });
        }
        Ok(blocks)
    }

    /// The leaf node holding block `index` of `version`.
    pub fn leaf(&self, version: usize, index: usize) -> Result<Arc<Node>> {
        let root = *self.version(version)?;
        self.check_index(&root, index)?;
        Ok(self.descend(&root, index)?.1)
    }

    /// Sibling digests from the leaf up to the root of `version`.
    pub fn sibling_path(&self, version: usize, index: usize) -> Result<Vec<PathElement>> {
        let root = *self.version(version)?;
        self.check_index(&root, index)?;
        let (descent, _) = self.descend(&root, index)?;
        descent
            .iter()
            .rev()
            .map(|step| {
                Ok(match step {
                    Descent::Promoted => PathElement::Promoted,
                    Descent::Left(parent) => PathElement::Right(right_child(parent)?.0),
                    Descent::Right(parent) => PathElement::Left(left_child(parent).0),
                })
            })
            .collect()
    }

    /// Node ids on the path from the root of `version` down to leaf `index`,
    /// root first. Promotions add no entries.
    pub fn path_nodes(&self, version: usize, index: usize) -> Result<Vec<NodeId>> {
        let root = *self.version(version)?;
        self.check_index(&root, index)?;
        let (descent, leaf) = self.descend(&root, index)?;
        let mut ids: Vec<NodeId> = descent
            .iter()
            .filter_map(|step| match step {
                Descent::Left(n) | Descent::Right(n) => Some(n.id()),
                Descent::Promoted => None,
            })
            .collect();
        ids.push(leaf.id());
        Ok(ids)
    }

    /// Every node id reachable from the root of `version`.
    pub fn reachable(&self, version: usize) -> Result<HashSet<NodeId>> {
        let root = self.version(version)?.root;
        let mut seen = HashSet::new();
        self.collect_reachable(root, &mut seen)?;
        Ok(seen)
    }

    fn collect_reachable(&self, root: NodeId, seen: &mut HashSet<NodeId>) -> Result<()> {
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            let node = self.store.get_node(&id)?;
            stack.extend(node.children().filter(|c| !seen.contains(c)));
        }
        Ok(())
    }

    pub fn node_stats(&self) -> Result<NodeStats> {
        let mut all = HashSet::new();
        let mut nodes_per_version = Vec::with_capacity(self.versions.len());
        for v in &self.versions {
            nodes_per_version.push(self.reachable(v.version)?.len());
            self.collect_reachable(v.root, &mut all)?;
        }
        Ok(NodeStats {
            total_nodes: all.len(),
            nodes_per_version,
        })
    }

    /// Nodes reachable from both versions.
    pub fn shared_nodes(&self, a: usize, b: usize) -> Result<HashSet<NodeId>> {
        let ra = self.reachable(a)?;
        let rb = self.reachable(b)?;
        Ok(ra.intersection(&rb).copied().collect())
    }

    pub fn shared_node_count(&self, a: usize, b: usize) -> Result<usize> {
        Ok(self.shared_nodes(a, b)?.len())
    }

    /// Roots of the maximal subtrees shared by two versions: shared nodes
    /// whose parent in `b` is not shared.
    pub fn shared_roots(&self, a: usize, b: usize) -> Result<HashSet<NodeId>> {
        let shared = self.shared_nodes(a, b)?;
        let root_b = self.version(b)?.root;
        let mut out = HashSet::new();
        let mut stack = vec![root_b];
        let mut seen = HashSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if shared.contains(&id) {
                out.insert(id);
                continue;
            }
            stack.extend(self.store.get_node(&id)?.children());
        }
        Ok(out)
    }

    fn check_index(&self, root: &VersionRoot, index: usize) -> Result<()> {
        if index >= root.leaf_count {
            return Err(ForestError::BlockIndexOutOfRange {
                index,
                leaf_count: root.leaf_count,
            });
        }
        Ok(())
    }

    /// Walks from the root to leaf `index`, top-down. The layout is fixed by
    /// the leaf count, so promotions are known without reading nodes.
    fn descend(&self, root: &VersionRoot, index: usize) -> Result<(Vec<Descent>, Arc<Node>)> {
        let widths = level_widths(root.leaf_count);
        let mut steps = Vec::with_capacity(widths.len() - 1);
        let mut current = root.root;
        for level in (1..widths.len()).rev() {
            let child_pos = index >> (level - 1);
            if child_pos.is_multiple_of(2) && child_pos + 1 == widths[level - 1] {
                steps.push(Descent::Promoted);
                continue;
            }
            let node = self.store.get_node(&current)?;
            let (left, right) = match &*node {
                Node::Internal {
                    left,
                    right: Some(right),
                    ..
                } => (*left, *right),
                _ => {
                    return Err(ForestError::Corrupt {
                        id: current,
                        reason: "expected an internal node with two children".into(),
                    })
                }
            };
            if child_pos.is_multiple_of(2) {
                current = left;
                steps.push(Descent::Left(node));
            } else {
                current = right;
                steps.push(Descent::Right(node));
            }
        }
        let leaf = self.store.get_node(&current)?;
        match &*leaf {
            Node::Leaf { block, .. } if block.index == index => Ok((steps, leaf)),
            Node::Leaf { block, .. } => Err(ForestError::Corrupt {
                id: current,
                reason: format!("leaf at position {index} carries index {}", block.index),
            }),
            Node::Internal { .. } => Err(ForestError::Corrupt {
                id: current,
                reason: "expected a leaf".into(),
            }),
        }
    }
}

fn left_child(node: &Node) -> NodeId {
    match node {
        Node::Internal { left, .. } => *left,
        Node::Leaf { .. } => unreachable!("descent only records internal nodes"),
    }
}

fn right_child(node: &Node) -> Result<NodeId> {
    match node {
        Node::Internal { right: Some(right), .. } => Ok(*right),
        _ => Err(ForestError::Corrupt {
            id: node.id(),
            reason: "missing right child".into(),
        }),
    }
}
