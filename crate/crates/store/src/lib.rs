//! On-disk, append-only, content-addressed storage for an entangled Merkle
//! forest.
//!
//! ```text
//! <root>/
//!   HEADER          format version and hash algorithm
//!   LOCK            advisory writer lock
//!   manifest        one text record per version, append-only
//!   nodes/<hex>     one binary record per node, named by its digest
//! ```
//!
//! Node records are written under a temporary name and renamed into place.
//! Manifest appends are synced before they are acknowledged.

pub mod manifest;
pub mod record;

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use emf_core::codec::BLOCK_SIZE;
use emf_core::path::level_widths;
use emf_core::{EncryptedBlock, Forest, ForestError, Node, NodeId, NodeStore, NodeStoreError, VersionRoot};

pub use manifest::{ManifestRecord, TornTail};

pub const FORMAT_VERSION: u32 = 1;
pub const HASH_ALGORITHM: &str = "sha-256";

const HEADER_FILE: &str = "HEADER";
const LOCK_FILE: &str = "LOCK";
const MANIFEST_FILE: &str = "manifest";
const NODES_DIR: &str = "nodes";
const TMP_PREFIX: &str = ".tmp-";
const HEADER_MAGIC: &str = "emf-store";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store is corrupt: {0}")]
    StoreCorrupt(String),
    #[error("unsupported store format: {0}")]
    FormatMismatch(String),
    #[error("store is locked by another writer")]
    Locked,
    #[error("store was opened read-only")]
    ReadOnly,
    #[error("version {found} does not follow version {expected}")]
    VersionGap { expected: usize, found: usize },
    #[error("block {index} must be {expected} bytes, got {found}")]
    InvalidBlockLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("file length implies {expected} blocks, got {found}")]
    BlockCountMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Node(#[from] NodeStoreError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::StoreCorrupt(_) => "StoreCorrupt",
            StoreError::FormatMismatch(_) => "FormatMismatch",
            StoreError::Locked => "StoreLocked",
            StoreError::ReadOnly => "ReadOnly",
            StoreError::VersionGap { .. } => "VersionGap",
            StoreError::InvalidBlockLength { .. } => "InvalidBlockLength",
            StoreError::BlockCountMismatch { .. } => "BlockCountMismatch",
            StoreError::Node(NodeStoreError::Missing(_)) => "NodeMissing",
            StoreError::Node(NodeStoreError::Corrupt { .. }) => "NodeCorrupt",
            StoreError::Node(NodeStoreError::Io(_)) | StoreError::Io(_) => "Io",
            StoreError::Forest(e) => e.code(),
        }
    }
}

/// Result of [`Store::verify_store`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreReport {
    /// Reachable ids with no record on disk.
    pub missing: BTreeSet<NodeId>,
    /// Reachable records that fail to decode, hash to a different id, or sit
    /// at the wrong place in their tree.
    pub corrupt: BTreeSet<NodeId>,
    /// Records on disk that no version reaches. Harmless.
    pub unreachable: BTreeSet<NodeId>,
    /// Files under `nodes/` whose names are not digests.
    pub stray_files: BTreeSet<String>,
    /// Versions whose tree touches a missing or corrupt node.
    pub affected_versions: BTreeSet<usize>,
    pub torn_tail: Option<TornTail>,
}

impl StoreReport {
    /// No missing or corrupt nodes and no torn manifest tail.
    pub fn is_clean(&self) -> bool {
        self.missing.is_empty() && self.corrupt.is_empty() && self.torn_tail.is_none()
    }
}

/// Handle to an on-disk store.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    records: Vec<ManifestRecord>,
    torn_tail: Option<TornTail>,
    // Held for the lifetime of a writable handle.
    lock: Option<File>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Store {
    /// Opens (or initializes, if empty or absent) a store for writing.
    ///
    /// A torn manifest tail is reported through [`Store::torn_tail`] and cut
    /// off so that later appends stay line-aligned.
    pub fn open(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let root = path.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(root.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }

        if !root.join(HEADER_FILE).exists() {
            let foreign = fs::read_dir(&root)?
                .filter_map(|e| e.ok())
                .any(|e| e.file_name() != LOCK_FILE);
            if foreign {
                return Err(StoreError::StoreCorrupt(
                    "directory is not empty and has no header".into(),
                ));
            }
            fs::create_dir_all(root.join(NODES_DIR))?;
            File::create(root.join(MANIFEST_FILE))?.sync_all()?;
            write_atomic(&root.join(HEADER_FILE), header_text().as_bytes())?;
        }

        let mut store = Store::load(root)?;
        if let Some(torn) = &store.torn_tail {
            log::warn!("manifest has a torn record at byte {}; truncating", torn.offset);
            let file = OpenOptions::new().write(true).open(store.root.join(MANIFEST_FILE))?;
            file.set_len(torn.offset)?;
            file.sync_all()?;
        }
        store.lock = Some(lock);
        Ok(store)
    }

    /// Opens an existing store without taking the writer lock. Never
    /// modifies anything on disk.
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Store, StoreError> {
        let root = path.as_ref().to_path_buf();
        if !root.join(HEADER_FILE).exists() {
            return Err(StoreError::StoreCorrupt("missing header".into()));
        }
        Store::load(root)
    }

    fn load(root: PathBuf) -> Result<Store, StoreError> {
        check_header(&fs::read(root.join(HEADER_FILE))?)?;
        if !root.join(NODES_DIR).is_dir() {
            return Err(StoreError::StoreCorrupt("missing nodes directory".into()));
        }
        let bytes = match fs::read(root.join(MANIFEST_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::StoreCorrupt("missing manifest".into()))
            }
            Err(e) => return Err(e.into()),
        };
        let parsed = manifest::parse(&bytes).map_err(|e| StoreError::StoreCorrupt(e.to_string()))?;
        Ok(Store {
            root,
            records: parsed.records,
            torn_tail: parsed.torn_tail,
            lock: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_writable(&self) -> bool {
        self.lock.is_some()
    }

    /// Complete manifest records, in version order.
    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    /// The torn manifest tail found when this handle was opened, if any.
    pub fn torn_tail(&self) -> Option<&TornTail> {
        self.torn_tail.as_ref()
    }

    pub fn version_roots(&self) -> Vec<VersionRoot> {
        self.records.iter().map(ManifestRecord::version_root).collect()
    }

    /// Where the record for `id` lives (whether or not it exists).
    pub fn node_path(&self, id: &NodeId) -> PathBuf {
        self.root.join(NODES_DIR).join(id.0.to_hex())
    }

    /// Appends one manifest record. The record must be for the next version.
    pub fn append_version(&mut self, record: ManifestRecord) -> Result<(), StoreError> {
        if !self.is_writable() {
            return Err(StoreError::ReadOnly);
        }
        let expected = self.records.len();
        if record.version != expected {
            return Err(StoreError::VersionGap {
                expected,
                found: record.version,
            });
        }
        let mut file = OpenOptions::new().append(true).open(self.root.join(MANIFEST_FILE))?;
        file.write_all(record.to_line().as_bytes())?;
        file.sync_data()?;
        self.records.push(record);
        Ok(())
    }

    /// Ids of every record under `nodes/`, plus names that are not digests.
    fn scan_nodes(&self) -> io::Result<(BTreeSet<NodeId>, BTreeSet<String>)> {
        let mut ids = BTreeSet::new();
        let mut strays = BTreeSet::new();
        for entry in fs::read_dir(self.root.join(NODES_DIR))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.starts_with(TMP_PREFIX) {
                continue;
            }
            match emf_core::Digest::from_hex(&name) {
                Ok(d) if name == d.to_hex() => {
                    ids.insert(NodeId(d));
                }
                _ => {
                    strays.insert(name);
                }
            }
        }
        Ok((ids, strays))
    }

    /// Number of node records on disk.
    pub fn node_record_count(&self) -> io::Result<usize> {
        Ok(self.scan_nodes()?.0.len())
    }

    /// Total bytes of the header, manifest, and all node records.
    pub fn disk_usage(&self) -> io::Result<u64> {
        let mut total =
            fs::metadata(self.root.join(HEADER_FILE))?.len() + fs::metadata(self.root.join(MANIFEST_FILE))?.len();
        for entry in fs::read_dir(self.root.join(NODES_DIR))? {
            total += entry?.metadata()?.len();
        }
        Ok(total)
    }

    /// Walks every version's tree and classifies each reachable id.
    pub fn verify_store(&self) -> Result<StoreReport, StoreError> {
        let mut report = StoreReport {
            torn_tail: self.torn_tail.clone(),
            ..Default::default()
        };
        // Subtree health by id, so shared subtrees are read once.
        let mut healthy: HashMap<NodeId, bool> = HashMap::new();
        for rec in &self.records {
            let widths = level_widths(rec.leaf_count);
            let top = widths.len() - 1;
            let ok = self.check_subtree(NodeId(rec.root), top, 0, &widths, &mut healthy, &mut report)?;
            if !ok {
                report.affected_versions.insert(rec.version);
            }
        }
        let (on_disk, strays) = self.scan_nodes()?;
        report.unreachable = on_disk.into_iter().filter(|id| !healthy.contains_key(id)).collect();
        report.stray_files = strays;
        Ok(report)
    }

    /// Checks the node at `(level, pos)` of the layout and everything below it.
    fn check_subtree(
        &self,
        id: NodeId,
        level: usize,
        pos: usize,
        widths: &[usize],
        healthy: &mut HashMap<NodeId, bool>,
        report: &mut StoreReport,
    ) -> Result<bool, StoreError> {
        if let Some(&ok) = healthy.get(&id) {
            return Ok(ok);
        }
        // A promoted node is its own left child one level down.
        if level > 0 && 2 * pos + 1 == widths[level - 1] {
            return self.check_subtree(id, level - 1, 2 * pos, widths, healthy, report);
        }
        let node = match self.get_node(&id) {
            Ok(node) => node,
            Err(NodeStoreError::Missing(_)) => {
                report.missing.insert(id);
                healthy.insert(id, false);
                return Ok(false);
            }
            Err(NodeStoreError::Corrupt { .. }) => {
                report.corrupt.insert(id);
                healthy.insert(id, false);
                return Ok(false);
            }
            Err(NodeStoreError::Io(e)) => return Err(e.into()),
        };
        let ok = match (&*node, level) {
            (Node::Leaf { block, .. }, 0) if block.index == pos => true,
            (
                Node::Internal {
                    left,
                    right: Some(right),
                    ..
                },
                l,
            ) if l > 0 => {
                let (left, right) = (*left, *right);
                let left_ok = self.check_subtree(left, l - 1, 2 * pos, widths, healthy, report)?;
                let right_ok = self.check_subtree(right, l - 1, 2 * pos + 1, widths, healthy, report)?;
                healthy.insert(id, left_ok && right_ok);
                return Ok(left_ok && right_ok);
            }
            _ => {
                report.corrupt.insert(id);
                false
            }
        };
        healthy.insert(id, ok);
        Ok(ok)
    }
}

impl NodeStore for Store {
    fn get_node(&self, id: &NodeId) -> Result<Arc<Node>, NodeStoreError> {
        let bytes = match fs::read(self.node_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(NodeStoreError::Missing(*id)),
            Err(e) => return Err(e.into()),
        };
        let node = record::decode(&bytes).map_err(|e| NodeStoreError::Corrupt {
            id: *id,
            reason: e.to_string(),
        })?;
        if node.id() != *id {
            return Err(NodeStoreError::Corrupt {
                id: *id,
                reason: format!("record hashes to {}", node.id()),
            });
        }
        Ok(Arc::new(node))
    }

    fn put_node(&mut self, node: Node) -> Result<bool, NodeStoreError> {
        if !self.is_writable() {
            return Err(NodeStoreError::Io(io::Error::new(
                io::ErrorKind::PermissionDenied,
                "store was opened read-only",
            )));
        }
        let id = node.id();
        let path = self.node_path(&id);
        if path.exists() {
            return Ok(false);
        }
        let bytes = record::encode(&node).map_err(|e| NodeStoreError::Corrupt {
            id,
            reason: e.to_string(),
        })?;
        write_atomic(&path, &bytes)?;
        Ok(true)
    }

    fn contains(&self, id: &NodeId) -> bool {
        self.node_path(id).exists()
    }
}

/// Length of block `index` in a file of `file_length` bytes split into
/// `leaf_count` blocks.
fn block_len(file_length: u64, leaf_count: usize, index: usize) -> usize {
    if index + 1 < leaf_count {
        BLOCK_SIZE
    } else {
        file_length as usize - (leaf_count - 1) * BLOCK_SIZE
    }
}

fn header_text() -> String {
    format!("{HEADER_MAGIC}\nformat {FORMAT_VERSION}\nhash {HASH_ALGORITHM}\n")
}

fn check_header(bytes: &[u8]) -> Result<(), StoreError> {
    let corrupt = || StoreError::StoreCorrupt("unreadable header".into());
    let text = std::str::from_utf8(bytes).map_err(|_| corrupt())?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER_MAGIC) {
        return Err(corrupt());
    }
    let format = lines
        .next()
        .and_then(|l| l.strip_prefix("format "))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(corrupt)?;
    if format != FORMAT_VERSION {
        return Err(StoreError::FormatMismatch(format!("format version {format}")));
    }
    let hash = lines.next().and_then(|l| l.strip_prefix("hash ")).ok_or_else(corrupt)?;
    if hash != HASH_ALGORITHM {
        return Err(StoreError::FormatMismatch(format!("hash algorithm {hash}")));
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("record paths have a parent");
    let name = path.file_name().expect("record paths have a name").to_string_lossy();
    let tmp = dir.join(format!(
        "{TMP_PREFIX}{name}-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut file = File::create(&tmp)?;
    file.write_all(bytes)?;
    drop(file);
    fs::rename(&tmp, path)
}

/// A forest persisted in a [`Store`]. Every new version is recorded in the
/// manifest together with the plaintext file length.
#[derive(Debug)]
pub struct StoredForest {
    forest: Forest<Store>,
}

impl StoredForest {
    /// Opens the store at `path` for writing and rebuilds the version list
    /// from its manifest.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_store(Store::open(path)?)
    }

    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_store(Store::open_read_only(path)?)
    }

    pub fn from_store(store: Store) -> Result<Self, StoreError> {
        let versions = store.version_roots();
        Ok(StoredForest {
            forest: Forest::from_parts(store, versions)?,
        })
    }

    pub fn forest(&self) -> &Forest<Store> {
        &self.forest
    }

    pub fn store(&self) -> &Store {
        self.forest.store()
    }

    pub fn records(&self) -> &[ManifestRecord] {
        self.store().records()
    }

    /// Builds and records version 0. Block lengths must match a 16 KiB
    /// chunking of a `file_length`-byte file.
    pub fn upload(&mut self, blocks: Vec<EncryptedBlock>, file_length: u64) -> Result<ManifestRecord, StoreError> {
        if !self.store().is_writable() {
            return Err(StoreError::ReadOnly);
        }
        let expected_count = emf_core::codec::block_count(file_length as usize);
        if blocks.len() != expected_count {
            return Err(StoreError::BlockCountMismatch {
                expected: expected_count,
                found: blocks.len(),
            });
        }
        for b in &blocks {
            let expected = block_len(file_length, blocks.len(), b.index);
            if b.ciphertext.len() != expected {
                return Err(StoreError::InvalidBlockLength {
                    index: b.index,
                    expected,
                    found: b.ciphertext.len(),
                });
            }
        }
        let root = self.forest.build_initial_tree(blocks)?;
        self.record(root, file_length)
    }

    /// Replaces one block of `base` and records the new version. The file
    /// length carries over from the base, so the new block must be exactly
    /// as long as the one it replaces.
    pub fn update(&mut self, base: usize, index: usize, block: EncryptedBlock) -> Result<ManifestRecord, StoreError> {
        if !self.store().is_writable() {
            return Err(StoreError::ReadOnly);
        }
        let base_rec = *self.records().get(base).ok_or(ForestError::VersionNotFound(base))?;
        if index >= base_rec.leaf_count {
            return Err(ForestError::BlockIndexOutOfRange {
                index,
                leaf_count: base_rec.leaf_count,
            }
            .into());
        }
        let expected = block_len(base_rec.file_length, base_rec.leaf_count, index);
        if block.ciphertext.len() != expected {
            return Err(StoreError::InvalidBlockLength {
                index,
                expected,
                found: block.ciphertext.len(),
            });
        }
        let file_length = base_rec.file_length;
        let root = self.forest.update_block(base, index, block)?;
        self.record(root, file_length)
    }

    fn record(&mut self, root: VersionRoot, file_length: u64) -> Result<ManifestRecord, StoreError> {
        let rec = ManifestRecord::from_root(&root, file_length);
        self.forest.store_mut().append_version(rec)?;
        Ok(rec)
    }
}
