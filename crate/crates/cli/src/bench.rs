//! Benchmark harness. Each benchmark sweeps one parameter and yields one
//! [`BenchRecord`] per value, written as CSV:
//!
//! ```text
//! metric,param,value,reps,stddev
//! tree_creation,8,0.041234,3,0.000812
//! ```
//!
//! Timings are medians over `reps` runs after one discarded warm-up run,
//! in seconds. Byte counts are exact and measured once.

use std::io::{self, Write};
use std::time::{Duration, Instant};

use emf_core::codec::{self, FileKey, BLOCK_SIZE};
use emf_core::{batch_audit, EncryptedBlock, Forest, MemStore, Registry, VersionMetadata};
use emf_store::{StoreError, StoredForest};
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CSV_HEADER: &str = "metric,param,value,reps,stddev";
pub const MIN_REPS: usize = 3;
const MIB: usize = 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub metric: &'static str,
    pub param: u64,
    pub value: f64,
    pub reps: usize,
    pub stddev: f64,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{},{:.6}",
            self.metric, self.param, self.value, self.reps, self.stddev
        )
    }
}

pub fn write_csv<W: Write>(mut w: W, records: &[BenchRecord]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: MIN_REPS,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("parameters must be positive and strictly ascending")]
    BadParameters,
    #[error("timing benchmarks need at least {MIN_REPS} repetitions")]
    TooFewReps,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn check_params(params: &[u64]) -> Result<(), BenchError> {
    if params.is_empty() || params[0] == 0 || params.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::BadParameters);
    }
    Ok(())
}

fn check(params: &[u64], cfg: &BenchConfig) -> Result<(), BenchError> {
    if cfg.reps < MIN_REPS {
        return Err(BenchError::TooFewReps);
    }
    check_params(params)
}

/// Median and sample standard deviation, in seconds.
fn summarize(samples: &[Duration]) -> (f64, f64) {
    let mut secs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
    secs.sort_by(f64::total_cmp);
    let n = secs.len();
    let median = if n % 2 == 1 {
        secs[n / 2]
    } else {
        (secs[n / 2 - 1] + secs[n / 2]) / 2.0
    };
    let mean = secs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        secs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (median, var.sqrt())
}

/// Runs `run` once to warm up, then `reps` times. `run` returns the time
/// of the part it wants measured.
fn time<F: FnMut() -> Duration>(metric: &'static str, param: u64, reps: usize, mut run: F) -> BenchRecord {
    run();
    let samples: Vec<Duration> = (0..reps).map(|_| run()).collect();
    let (value, stddev) = summarize(&samples);
    log::info!("{metric} {param}: {value:.6}s");
    BenchRecord {
        metric,
        param,
        value,
        reps,
        stddev,
    }
}

fn rng_for(cfg: &BenchConfig, param: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed ^ param.rotate_left(32))
}

fn synthetic_blocks(rng: &mut ChaCha8Rng, len: usize) -> (FileKey, Vec<EncryptedBlock>) {
    let mut data = vec![0u8; len];
    rng.fill_bytes(&mut data);
    let key = FileKey::generate(rng);
    let blocks = codec::encrypt_file(&data, &key, rng).expect("benchmark files are non-empty");
    (key, blocks)
}

fn fresh_block(rng: &mut ChaCha8Rng, key: &FileKey, index: usize) -> EncryptedBlock {
    let mut data = vec![0u8; BLOCK_SIZE];
    rng.fill_bytes(&mut data);
    let plain = codec::PlainBlock {
        index,
        data,
        is_last: false,
    };
    codec::encrypt_block(&plain, key, rng)
}

fn build(blocks: Vec<EncryptedBlock>) -> Forest {
    let mut forest = Forest::new(MemStore::new());
    forest.build_initial_tree(blocks).expect("synthetic blocks are valid");
    forest
}

/// Time to build version 0 from already-encrypted blocks, per file size in
/// MiB.
pub fn tree_creation(sizes_mib: &[u64], cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    check(sizes_mib, cfg)?;
    Ok(sizes_mib
        .iter()
        .map(|&mib| {
            let (_, blocks) = synthetic_blocks(&mut rng_for(cfg, mib), mib as usize * MIB);
            time("tree_creation", mib, cfg.reps, || {
                let input = blocks.clone();
                let start = Instant::now();
                let forest = build(input);
                let elapsed = start.elapsed();
                drop(forest);
                elapsed
            })
        })
        .collect())
}

/// Time to fetch every block of a version and decrypt the file.
pub fn retrieval(sizes_mib: &[u64], cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    check(sizes_mib, cfg)?;
    Ok(sizes_mib
        .iter()
        .map(|&mib| {
            let len = mib as usize * MIB;
            let (key, blocks) = synthetic_blocks(&mut rng_for(cfg, mib), len);
            let forest = build(blocks);
            time("retrieval", mib, cfg.reps, || {
                let start = Instant::now();
                let blocks = forest.retrieve_version(0).expect("version 0 exists");
                let data = codec::decrypt_file(&blocks, &key, len);
                let elapsed = start.elapsed();
                assert_eq!(data.len(), len);
                elapsed
            })
        })
        .collect())
}

/// Number of blocks in one update batch: 1% of the file, at least one.
pub fn batch_size(blocks: usize) -> usize {
    (blocks / 100).max(1)
}

/// Per-block update time. Each run updates a batch of 1% of the blocks at
/// distinct, uniformly drawn indices, one new version per block, and
/// reports the batch time divided by the batch size.
pub fn block_update(sizes_mib: &[u64], cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    check(sizes_mib, cfg)?;
    Ok(sizes_mib
        .iter()
        .map(|&mib| {
            let mut rng = rng_for(cfg, mib);
            let (key, blocks) = synthetic_blocks(&mut rng, mib as usize * MIB);
            let n = blocks.len();
            let mut forest = build(blocks);
            let batch = batch_size(n);
            time("block_update_1pct_distinct", mib, cfg.reps, || {
                let updates: Vec<EncryptedBlock> = index::sample(&mut rng, n, batch)
                    .into_iter()
                    .map(|i| fresh_block(&mut rng, &key, i))
                    .collect();
                let start = Instant::now();
                for block in updates {
                    let base = forest.versions().len() - 1;
                    forest.update_block(base, block.index, block).expect("valid update");
                }
                start.elapsed() / batch as u32
            })
        })
        .collect())
}

/// Challenges `count` random blocks of a file of `file_blocks` blocks and
/// times proving plus verifying the whole set.
pub fn audit(counts: &[u64], file_blocks: usize, cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    check(counts, cfg)?;
    let mut rng = rng_for(cfg, file_blocks as u64);
    let (_, blocks) = synthetic_blocks(&mut rng, file_blocks * BLOCK_SIZE);
    let forest = build(blocks);
    let mut registry = Registry::new();
    let root = forest.versions()[0];
    registry
        .register(VersionMetadata {
            version: 0,
            root_digest: root.root.0,
            leaf_count: root.leaf_count,
        })
        .expect("first registration");
    Ok(counts
        .iter()
        .map(|&count| {
            time("audit", count, cfg.reps, || {
                let challenges = registry
                    .make_challenges(&mut rng, count as usize)
                    .expect("registry is not empty");
                let start = Instant::now();
                let results = batch_audit(&registry, &forest, &challenges);
                let elapsed = start.elapsed();
                assert!(results.iter().all(|r| r.passed()));
                elapsed
            })
        })
        .collect())
}

/// On-disk bytes added by updates, for each cumulative version count, on a
/// `file_mib` file in a fresh on-disk store. With `exclude_payload` the
/// new ciphertext bytes are subtracted, leaving pure tree overhead.
pub fn storage_overhead(
    version_counts: &[u64],
    file_mib: u64,
    exclude_payload: bool,
    cfg: &BenchConfig,
) -> Result<Vec<BenchRecord>, BenchError> {
    check_params(version_counts)?;
    let dir = tempfile::tempdir()?;
    let mut rng = rng_for(cfg, file_mib);
    let len = file_mib as usize * MIB;
    let (key, blocks) = synthetic_blocks(&mut rng, len);
    let n = blocks.len();
    let mut forest = StoredForest::open(dir.path())?;
    forest.upload(blocks, len as u64)?;
    let base = forest.store().disk_usage()?;

    let metric = if exclude_payload {
        "storage_overhead_excl_payload_bytes"
    } else {
        "storage_overhead_bytes"
    };
    let mut payload = 0u64;
    let mut done = 0u64;
    let mut records = Vec::with_capacity(version_counts.len());
    for &count in version_counts {
        while done < count {
            let index = rng.gen_range(0..n);
            let block = fresh_block(&mut rng, &key, index);
            payload += block.ciphertext.len() as u64;
            let latest = forest.records().len() - 1;
            forest.update(latest, block.index, block)?;
            done += 1;
        }
        let grown = forest.store().disk_usage()? - base;
        let value = if exclude_payload { grown - payload } else { grown };
        records.push(BenchRecord {
            metric,
            param: count,
            value: value as f64,
            reps: 1,
            stddev: 0.0,
        });
    }
    Ok(records)
}

/// Byte accounting for a single update of an on-disk store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateFootprint {
    pub total: u64,
    pub payload: u64,
    pub new_records: usize,
}

impl UpdateFootprint {
    pub fn excluding_payload(&self) -> u64 {
        self.total - self.payload
    }
}

/// Uploads a `blocks`-block file to a fresh on-disk store in `dir`,
/// applies one update at `index` and reports how much the store grew.
pub fn single_update_footprint(
    dir: &std::path::Path,
    blocks: usize,
    index: usize,
    seed: u64,
) -> Result<UpdateFootprint, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (key, file) = synthetic_blocks(&mut rng, blocks * BLOCK_SIZE);
    let mut forest = StoredForest::open(dir)?;
    forest.upload(file, (blocks * BLOCK_SIZE) as u64)?;
    let before = forest.store().disk_usage()?;
    let records_before = forest.store().node_record_count()?;
    let block = fresh_block(&mut rng, &key, index);
    let payload = block.ciphertext.len() as u64;
    forest.update(0, index, block)?;
    Ok(UpdateFootprint {
        total: forest.store().disk_usage()? - before,
        payload,
        new_records: forest.store().node_record_count()? - records_before,
    })
}
