//! Argument parsing and dispatch for `mf`.
//!
//! Results go to stdout as one JSON object per line. Failures print one
//! `{"error":{"code":..,"message":..}}` line on stderr and exit with 1, or
//! 2 for usage errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use emf_core::codec::FileKey;
use emf_net::{Auditor, Client, ClientError, StorageServer, LISTEN_ENV};
use emf_store::{Store, StoreError, StoredForest};
use rand::rngs::OsRng;
use serde_json::json;

use crate::bench::{self, BenchConfig, BenchError, BenchRecord};

pub const DEFAULT_SERVER: &str = "127.0.0.1:7700";
pub const DEFAULT_TPA: &str = "127.0.0.1:7701";

#[derive(Debug, Parser)]
#[command(name = "mf", version, about = "Versioned, auditable encrypted block store")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the storage server.
    Serve {
        #[arg(long)]
        store: PathBuf,
        /// Bind address; MF_LISTEN takes precedence when set.
        #[arg(long, default_value = DEFAULT_SERVER)]
        listen: String,
    },
    /// Run the third-party auditor.
    Tpa {
        #[arg(long, default_value = DEFAULT_TPA)]
        listen: String,
        /// Seed for challenge sampling (random when absent).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encrypt, upload and register a file as version 0.
    Upload {
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        #[command(flatten)]
        endpoints: Endpoints,
    },
    /// Replace one block, creating a new version.
    Update {
        #[arg(long)]
        index: usize,
        /// Plaintext of the new block; must match the old block's length.
        #[arg(long)]
        data_file: PathBuf,
        /// Version to update (latest when absent).
        #[arg(long)]
        base: Option<usize>,
        #[command(flatten)]
        key: KeyArg,
        #[command(flatten)]
        endpoints: Endpoints,
    },
    /// Download and decrypt a version.
    Get {
        /// Latest when absent.
        #[arg(long)]
        version: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        #[arg(long, default_value = DEFAULT_SERVER)]
        server: String,
    },
    /// Have the auditor challenge the server.
    Audit {
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Challenge every registered block instead of sampling.
        #[arg(long)]
        exhaustive: bool,
        #[command(flatten)]
        endpoints: Endpoints,
    },
    /// Check a store for missing, corrupt or stray records.
    Fsck {
        #[arg(long)]
        store: PathBuf,
    },
    /// Write a new random 32-byte key file.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark and print CSV.
    Bench {
        #[command(subcommand)]
        kind: BenchKind,
    },
}

#[derive(Debug, Args)]
pub struct KeyArg {
    /// 32 raw bytes or 64 hex characters.
    #[arg(long)]
    pub key_file: PathBuf,
}

#[derive(Debug, Args)]
pub struct Endpoints {
    #[arg(long, default_value = DEFAULT_SERVER)]
    pub server: String,
    #[arg(long, default_value = DEFAULT_TPA)]
    pub tpa: String,
}

#[derive(Debug, Args)]
pub struct BenchOpts {
    #[arg(long, default_value_t = bench::MIN_REPS)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchKind {
    TreeCreation {
        /// File sizes in MiB, ascending.
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<u64>,
        #[command(flatten)]
        opts: BenchOpts,
    },
    Retrieval {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<u64>,
        #[command(flatten)]
        opts: BenchOpts,
    },
    BlockUpdate {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
        sizes: Vec<u64>,
        #[command(flatten)]
        opts: BenchOpts,
    },
    StorageOverhead {
        /// Cumulative numbers of single-block updates, ascending.
        #[arg(long, value_delimiter = ',', default_value = "1,10,50,100")]
        versions: Vec<u64>,
        #[arg(long, default_value_t = 64)]
        file_mib: u64,
        /// Subtract the replaced ciphertext, leaving tree overhead only.
        #[arg(long)]
        exclude_payload: bool,
        #[command(flatten)]
        opts: BenchOpts,
    },
    Audit {
        /// Challenged-block counts, ascending.
        #[arg(long, value_delimiter = ',', default_value = "400,600,800,1000")]
        counts: Vec<u64>,
        #[arg(long, default_value_t = 1024)]
        file_blocks: usize,
        #[command(flatten)]
        opts: BenchOpts,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error("{0}")]
    BadKey(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("store has problems: {0}")]
    Unhealthy(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn code(&self) -> &str {
        match self {
            CliError::File { .. } => "FileError",
            CliError::BadKey(_) => "BadKey",
            CliError::Client(e) => e.code(),
            CliError::Store(e) => e.code(),
            CliError::Bench(_) => "BenchError",
            CliError::Unhealthy(_) => "StoreCorrupt",
            CliError::Io(_) => "Io",
        }
    }

    pub fn to_json_line(&self) -> String {
        let mut v = json!({"error": {"code": self.code(), "message": self.to_string()}});
        if let CliError::Client(ClientError::Unregistered { summary, .. }) = self {
            v["error"]["version"] = json!(summary.version);
            v["error"]["root_digest"] = json!(summary.root_digest);
            v["error"]["leaf_count"] = json!(summary.leaf_count);
        }
        v.to_string()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a key file holding either 32 raw bytes or 64 hex digits
/// (surrounding whitespace allowed).
pub fn parse_key(bytes: &[u8]) -> Result<FileKey, CliError> {
    if bytes.len() == 32 {
        return Ok(FileKey::from_slice(bytes).expect("length checked"));
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| CliError::BadKey("key file must hold 32 raw bytes or 64 hex digits".into()))?
        .trim();
    let raw = hex::decode(text).map_err(|e| CliError::BadKey(format!("key file is not valid hex: {e}")))?;
    FileKey::from_slice(&raw).map_err(|_| CliError::BadKey(format!("key must be 32 bytes, got {}", raw.len())))
}

fn load_key(arg: &KeyArg) -> Result<FileKey, CliError> {
    parse_key(&read(&arg.key_file)?)
}

fn emit(out: &mut impl Write, value: serde_json::Value) -> Result<(), CliError> {
    writeln!(out, "{value}")?;
    Ok(())
}

fn summary_json(s: &emf_net::VersionSummary) -> serde_json::Value {
    json!({
        "version": s.version,
        "parent_version": s.parent_version,
        "root_digest": s.root_digest,
        "leaf_count": s.leaf_count,
    })
}

fn write_bench(records: &[BenchRecord], opts: &BenchOpts, out: &mut impl Write) -> Result<(), CliError> {
    match &opts.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?;
            bench::write_csv(io::BufWriter::new(file), records)?;
        }
        None => bench::write_csv(out, records)?,
    }
    Ok(())
}

/// Executes a parsed command, writing results to `out`.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<(), CliError> {
    match cli.command {
        Command::Serve { store, listen } => {
            let listen = std::env::var(LISTEN_ENV).unwrap_or(listen);
            let forest = StoredForest::open(&store)?;
            let versions = forest.records().len();
            let handle = StorageServer::new(forest).spawn(&listen)?;
            emit(
                out,
                json!({"listening": handle.local_addr().to_string(), "store": store, "versions": versions}),
            )?;
            out.flush()?;
            handle.join();
        }
        Command::Tpa { listen, seed } => {
            let handle = Auditor::new(seed).spawn(&listen)?;
            emit(out, json!({"listening": handle.local_addr().to_string()}))?;
            out.flush()?;
            handle.join();
        }
        Command::Upload { file, key, endpoints } => {
            let key = load_key(&key)?;
            let data = read(&file)?;
            let client = Client::new(endpoints.server, Some(endpoints.tpa));
            let summary = client.upload(&data, &key, &mut OsRng)?;
            emit(out, summary_json(&summary))?;
        }
        Command::Update {
            index,
            data_file,
            base,
            key,
            endpoints,
        } => {
            let key = load_key(&key)?;
            let data = read(&data_file)?;
            let client = Client::new(endpoints.server, Some(endpoints.tpa));
            let summary = client.update(base, index, &data, &key, &mut OsRng)?;
            emit(out, summary_json(&summary))?;
        }
        Command::Get {
            version,
            out: path,
            key,
            server,
        } => {
            let key = load_key(&key)?;
            let file = Client::new(server, None).retrieve(version, &key)?;
            fs::write(&path, &file.data).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?;
            emit(
                out,
                json!({"version": file.version, "bytes": file.data.len(), "out": path}),
            )?;
        }
        Command::Audit {
            count,
            exhaustive,
            endpoints,
        } => {
            let results = Client::new(endpoints.server, Some(endpoints.tpa)).audit(count, exhaustive)?;
            for r in results.iter().filter(|r| !r.passed()) {
                emit(out, serde_json::to_value(r).expect("results serialize"))?;
            }
            let pass = results.iter().filter(|r| r.passed()).count();
            emit(
                out,
                json!({"challenges": results.len(), "pass": pass, "fail": results.len() - pass}),
            )?;
        }
        Command::Fsck { store } => {
            let store = Store::open_read_only(&store)?;
            let report = store.verify_store()?;
            let ids =
                |v: &std::collections::BTreeSet<emf_core::NodeId>| v.iter().map(|id| id.0.to_hex()).collect::<Vec<_>>();
            let summary = json!({
                "clean": report.is_clean(),
                "versions": store.records().len(),
                "missing": ids(&report.missing),
                "corrupt": ids(&report.corrupt),
                "unreachable": ids(&report.unreachable),
                "stray_files": report.stray_files,
                "affected_versions": report.affected_versions,
                "torn_tail_offset": report.torn_tail.as_ref().map(|t| t.offset),
            });
            emit(out, summary)?;
            if !report.is_clean() {
                return Err(CliError::Unhealthy(format!(
                    "{} missing and {} corrupt records, torn manifest tail: {}",
                    report.missing.len(),
                    report.corrupt.len(),
                    report.torn_tail.is_some()
                )));
            }
        }
        Command::Keygen { out: path } => {
            let key = FileKey::generate(&mut OsRng);
            fs::write(&path, key.as_bytes()).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?;
            emit(out, json!({"key_file": path}))?;
        }
        Command::Bench { kind } => {
            let (records, opts) = match kind {
                BenchKind::TreeCreation { sizes, opts } => (bench::tree_creation(&sizes, &cfg(&opts))?, opts),
                BenchKind::Retrieval { sizes, opts } => (bench::retrieval(&sizes, &cfg(&opts))?, opts),
                BenchKind::BlockUpdate { sizes, opts } => (bench::block_update(&sizes, &cfg(&opts))?, opts),
                BenchKind::StorageOverhead {
                    versions,
                    file_mib,
                    exclude_payload,
                    opts,
                } => (
                    bench::storage_overhead(&versions, file_mib, exclude_payload, &cfg(&opts))?,
                    opts,
                ),
                BenchKind::Audit {
                    counts,
                    file_blocks,
                    opts,
                } => (bench::audit(&counts, file_blocks, &cfg(&opts))?, opts),
            };
            write_bench(&records, &opts, out)?;
        }
    }
    Ok(())
}

fn cfg(opts: &BenchOpts) -> BenchConfig {
    BenchConfig {
        reps: opts.reps,
        seed: opts.seed,
    }
}
