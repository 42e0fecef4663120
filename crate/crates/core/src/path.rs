//! Tree layout and sibling paths.
//!
//! Leaves are paired left to right, level by level. When a level has an odd
//! number of nodes the last one is promoted to the next level unchanged, so
//! it is the *same* node one level up. The shape of a tree therefore depends
//! only on its leaf count, and every leaf has a path of exactly
//! `tree_height(n)` steps, some of which may be promotions.

use serde::{Deserialize, Serialize};

use crate::hash::{hash_internal, Digest};

/// Which way a path step combines with the running digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// The sibling sits to the left: `parent = H(sibling, current)`.
    Left,
    /// The sibling sits to the right: `parent = H(current, sibling)`.
    Right,
    /// No sibling at this level; the node moves up unchanged.
    Promoted,
}

/// One step of a sibling path, ordered leaf-adjacent first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "side", content = "digest", rename_all = "lowercase")]
pub enum PathElement {
    Left(Digest),
    Right(Digest),
    Promoted,
}

impl PathElement {
    pub fn side(&self) -> Side {
        match self {
            PathElement::Left(_) => Side::Left,
            PathElement::Right(_) => Side::Right,
            PathElement::Promoted => Side::Promoted,
        }
    }

    pub fn digest(&self) -> Option<&Digest> {
        match self {
            PathElement::Left(d) | PathElement::Right(d) => Some(d),
            PathElement::Promoted => None,
        }
    }

    /// Combines `current` with this step.
    pub fn apply(&self, current: &Digest) -> Digest {
        match self {
            PathElement::Left(sibling) => hash_internal(sibling, current),
            PathElement::Right(sibling) => hash_internal(current, sibling),
            PathElement::Promoted => *current,
        }
    }
}

/// Folds a leaf digest up through `path`, yielding the implied root.
pub fn fold_path(leaf: &Digest, path: &[PathElement]) -> Digest {
    path.iter().fold(*leaf, |acc, step| step.apply(&acc))
}

/// Node counts per level, leaves first, ending with the single root.
///
/// `leaf_count` must be at least 1.
pub fn level_widths(leaf_count: usize) -> Vec<usize> {
    assert!(leaf_count > 0, "tree needs at least one leaf");
    let mut widths = vec![leaf_count];
    let mut w = leaf_count;
    while w > 1 {
        w = w.div_ceil(2);
        widths.push(w);
    }
    widths
}

/// Levels above the leaves: `ceil(log2 n)`, and 0 for a single leaf.
pub fn tree_height(leaf_count: usize) -> usize {
    assert!(leaf_count > 0, "tree needs at least one leaf");
    (usize::BITS - (leaf_count - 1).leading_zeros()) as usize
}

/// The side sequence every honest path for `index` must have.
pub fn path_shape(leaf_count: usize, index: usize) -> Vec<Side> {
    let widths = level_widths(leaf_count);
    widths[..widths.len() - 1]
        .iter()
        .enumerate()
        .map(|(level, &width)| {
            let pos = index >> level;
            if pos % 2 == 1 {
                Side::Left
            } else if pos + 1 == width {
                Side::Promoted
            } else {
                Side::Right
            }
        })
        .collect()
}
