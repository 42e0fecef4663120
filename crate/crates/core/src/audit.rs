//! Challenge, proof and verification between the auditor and the server.
//!
//! The auditor (TPA) keeps a [`Registry`] of per-version root digests that
//! the client reported. It samples a `(version, block index)` [`Challenge`],
//! the server answers with a [`ProofMessage`] built by [`prove`], and
//! [`Registry::verify`] folds the proof back to a root using only the
//! registry and the message itself.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::forest::{Forest, ForestError};
use crate::hash::{hash_leaf, Digest};
use crate::node::{Node, NodeStore};
use crate::path::{fold_path, path_shape, PathElement, Side};

/// What the client tells the auditor about one version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionMetadata {
    pub version: usize,
    pub root_digest: Digest,
    pub leaf_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Challenge {
    pub version: usize,
    pub block_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofMessage {
    pub challenge: Challenge,
    pub leaf_digest: Digest,
    pub path: Vec<PathElement>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResult {
    pub challenge: Challenge,
    pub verdict: Verdict,
    /// Absent when no proof could be folded (e.g. the server failed).
    pub reconstructed_root: Option<Digest>,
    /// Absent when the challenged version is not registered.
    pub expected_root: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl AuditResult {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// A failure with no reconstructed root.
    pub fn failure(challenge: Challenge, expected_root: Option<Digest>, reason: impl Into<String>) -> Self {
        AuditResult {
            challenge,
            verdict: Verdict::Fail,
            reconstructed_root: None,
            expected_root,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("version {0} is already registered")]
    DuplicateRegistration(usize),
    #[error("version {found} registered before version {expected}")]
    VersionGap { expected: usize, found: usize },
    #[error("leaf count must be at least 1")]
    EmptyVersion,
    #[error("no versions registered")]
    NoVersionsRegistered,
    #[error("version {0} is not registered")]
    UnknownVersion(usize),
}

impl AuditError {
    pub fn code(&self) -> &'static str {
        match self {
            AuditError::DuplicateRegistration(_) => "DuplicateRegistration",
            AuditError::VersionGap { .. } => "VersionGap",
            AuditError::EmptyVersion => "EmptyVersion",
            AuditError::NoVersionsRegistered => "NoVersionsRegistered",
            AuditError::UnknownVersion(_) => "UnknownVersion",
        }
    }
}

/// The auditor's view of a file: one metadata record per version.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    versions: Vec<VersionMetadata>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a version. Versions must arrive in order, each exactly once.
    pub fn register(&mut self, meta: VersionMetadata) -> Result<(), AuditError> {
        let next = self.versions.len();
        if meta.version < next {
            return Err(AuditError::DuplicateRegistration(meta.version));
        }
        if meta.version > next {
            return Err(AuditError::VersionGap {
                expected: next,
                found: meta.version,
            });
        }
        if meta.leaf_count == 0 {
            return Err(AuditError::EmptyVersion);
        }
        self.versions.push(meta);
        Ok(())
    }

    pub fn get(&self, version: usize) -> Option<&VersionMetadata> {
        self.versions.get(version)
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn versions(&self) -> &[VersionMetadata] {
        &self.versions
    }

    /// Picks a registered version uniformly, then a block uniformly within it.
    pub fn make_challenge<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Challenge, AuditError> {
        if self.versions.is_empty() {
            return Err(AuditError::NoVersionsRegistered);
        }
        let meta = &self.versions[rng.gen_range(0..self.versions.len())];
        Ok(Challenge {
            version: meta.version,
            block_index: rng.gen_range(0..meta.leaf_count),
        })
    }

    pub fn make_challenges<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<Challenge>, AuditError> {
        (0..count).map(|_| self.make_challenge(rng)).collect()
    }

    /// Every valid `(version, block)` pair, version-major.
    pub fn all_challenges(&self) -> Vec<Challenge> {
        self.versions
            .iter()
            .flat_map(|m| {
                (0..m.leaf_count).map(move |block_index| Challenge {
                    version: m.version,
                    block_index,
                })
            })
            .collect()
    }

    /// Checks a proof against the registered root for its version.
    ///
    /// Passes only if the folded root matches and the path has exactly the
    /// side sequence the challenged position implies.
    pub fn verify(&self, proof: &ProofMessage) -> Result<AuditResult, AuditError> {
        let challenge = proof.challenge;
        let meta = self
            .get(challenge.version)
            .ok_or(AuditError::UnknownVersion(challenge.version))?;
        let expected_root = Some(meta.root_digest);
        if challenge.block_index >= meta.leaf_count {
            return Ok(AuditResult::failure(
                challenge,
                expected_root,
                "block index out of range",
            ));
        }

        let reconstructed = fold_path(&proof.leaf_digest, &proof.path);
        let sides: Vec<Side> = proof.path.iter().map(PathElement::side).collect();
        let reason = if sides != path_shape(meta.leaf_count, challenge.block_index) {
            Some("path shape mismatch".to_string())
        } else if reconstructed != meta.root_digest {
            Some("root mismatch".to_string())
        } else {
            None
        };
        Ok(AuditResult {
            challenge,
            verdict: if reason.is_none() { Verdict::Pass } else { Verdict::Fail },
            reconstructed_root: Some(reconstructed),
            expected_root,
            reason,
        })
    }

    /// Verifies the server's answer to `sent`. Any error, or a proof for a
    /// different challenge, is a failure.
    pub fn verify_response<E: std::fmt::Display>(
        &self,
        sent: Challenge,
        response: Result<ProofMessage, E>,
    ) -> AuditResult {
        let expected_root = self.get(sent.version).map(|m| m.root_digest);
        match response {
            Err(e) => AuditResult::failure(sent, expected_root, format!("server error: {e}")),
            Ok(proof) if proof.challenge != sent => {
                AuditResult::failure(sent, expected_root, "proof answers a different challenge")
            }
            Ok(proof) => self
                .verify(&proof)
                .unwrap_or_else(|e| AuditResult::failure(sent, expected_root, e.to_string())),
        }
    }
}

/// Server side: the leaf digest and sibling path for `challenge`.
///
/// The leaf digest is recomputed from the stored ciphertext, so a damaged
/// payload produces a proof that fails verification.
pub fn prove<S: NodeStore>(forest: &Forest<S>, challenge: Challenge) -> Result<ProofMessage, ForestError> {
    let leaf = forest.leaf(challenge.version, challenge.block_index)?;
    let leaf_digest = match &*leaf {
        Node::Leaf { block, .. } => hash_leaf(block),
        Node::Internal { .. } => unreachable!("Forest::leaf returns leaves"),
    };
    let path = forest.sibling_path(challenge.version, challenge.block_index)?;
    Ok(ProofMessage {
        challenge,
        leaf_digest,
        path,
    })
}

/// Proves and verifies each challenge in turn. Never stops early; results
/// line up with `challenges`.
pub fn batch_audit<S: NodeStore>(
    registry: &Registry,
    forest: &Forest<S>,
    challenges: &[Challenge],
) -> Vec<AuditResult> {
    challenges
        .iter()
        .map(|&c| {
            let response = prove(forest, c).map_err(|e| e.code());
            registry.verify_response(c, response)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::EncryptedBlock;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn meta(version: usize, leaf_count: usize) -> VersionMetadata {
        VersionMetadata {
            version,
            root_digest: Digest::new([version as u8; 32]),
            leaf_count,
        }
    }

    fn block(index: usize, tag: u8) -> EncryptedBlock {
        EncryptedBlock {
            index,
            nonce: [tag; 16],
            ciphertext: vec![tag, index as u8],
        }
    }

    fn registered(forest: &Forest) -> Registry {
        let mut reg = Registry::new();
        for v in forest.versions() {
            reg.register(VersionMetadata {
                version: v.version,
                root_digest: v.root.0,
                leaf_count: v.leaf_count,
            })
            .unwrap();
        }
        reg
    }

    #[test]
    fn registration_rules() {
        let mut reg = Registry::new();
        reg.register(meta(0, 4)).unwrap();
        reg.register(meta(1, 4)).unwrap();
        assert_eq!(reg.get(1), Some(&meta(1, 4)));
        assert_eq!(reg.register(meta(0, 4)), Err(AuditError::DuplicateRegistration(0)));
        assert_eq!(
            reg.register(meta(3, 4)),
            Err(AuditError::VersionGap { expected: 2, found: 3 })
        );
        assert_eq!(reg.len(), 2);
    }

    #[test]
    fn gap_from_first_version() {
        let mut reg = Registry::new();
        reg.register(meta(0, 1)).unwrap();
        assert!(matches!(reg.register(meta(2, 1)), Err(AuditError::VersionGap { .. })));
    }

    #[test]
    fn challenge_needs_registrations() {
        let reg = Registry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(reg.make_challenge(&mut rng), Err(AuditError::NoVersionsRegistered));
    }

    #[test]
    fn forced_challenge() {
        let mut reg = Registry::new();
        reg.register(meta(0, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(
                reg.make_challenge(&mut rng).unwrap(),
                Challenge {
                    version: 0,
                    block_index: 0
                }
            );
        }
    }

    #[test]
    fn challenges_are_uniform() {
        let mut reg = Registry::new();
        reg.register(meta(0, 4)).unwrap();
        reg.register(meta(1, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [[0u32; 4]; 2];
        for _ in 0..10_000 {
            let c = reg.make_challenge(&mut rng).unwrap();
            counts[c.version][c.block_index] += 1;
        }
        // Each cell is Binomial(10000, 1/8): mean 1250, sd ≈ 33.1, so ±200
        // is about six standard deviations.
        let sd = (10_000f64 * 0.125 * 0.875).sqrt();
        assert!(200.0 / sd > 6.0);
        for cell in counts.iter().flatten() {
            assert!((1050..=1450).contains(cell), "{counts:?}");
        }
        let chi2: f64 = counts
            .iter()
            .flatten()
            .map(|&c| (c as f64 - 1250.0).powi(2) / 1250.0)
            .sum();
        // 99.9th percentile of chi-square with 7 degrees of freedom.
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }

    #[test]
    fn seeded_challenges_repeat() {
        let mut reg = Registry::new();
        reg.register(meta(0, 100)).unwrap();
        reg.register(meta(1, 100)).unwrap();
        let a = reg.make_challenges(&mut ChaCha8Rng::seed_from_u64(9), 20).unwrap();
        let b = reg.make_challenges(&mut ChaCha8Rng::seed_from_u64(9), 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_block_proof() {
        let mut forest = Forest::default();
        forest.build_initial_tree(vec![block(0, 5)]).unwrap();
        let reg = registered(&forest);
        let c = Challenge {
            version: 0,
            block_index: 0,
        };
        let proof = prove(&forest, c).unwrap();
        assert!(proof.path.is_empty());
        assert_eq!(proof.leaf_digest, reg.get(0).unwrap().root_digest);
        assert!(reg.verify(&proof).unwrap().passed());
    }

    #[test]
    fn verify_rejects_tampering() {
        let mut forest = Forest::default();
        forest
            .build_initial_tree((0..8).map(|i| block(i, 1)).collect())
            .unwrap();
        let reg = registered(&forest);
        let c = Challenge {
            version: 0,
            block_index: 3,
        };
        let proof = prove(&forest, c).unwrap();
        assert!(reg.verify(&proof).unwrap().passed());

        let mut bad = proof.clone();
        let mut bytes = *bad.leaf_digest.as_bytes();
        bytes[0] ^= 1;
        bad.leaf_digest = Digest::new(bytes);
        let res = reg.verify(&bad).unwrap();
        assert_eq!(res.verdict, Verdict::Fail);
        assert_eq!(res.reason.as_deref(), Some("root mismatch"));
        assert_ne!(res.reconstructed_root, res.expected_root);

        // Swap the side markers of the first two steps.
        let mut swapped = proof.clone();
        swapped.path[0] = match proof.path[0] {
            PathElement::Left(d) => PathElement::Right(d),
            PathElement::Right(d) => PathElement::Left(d),
            PathElement::Promoted => unreachable!(),
        };
        assert_eq!(reg.verify(&swapped).unwrap().verdict, Verdict::Fail);

        let mut out_of_range = proof.clone();
        out_of_range.challenge.block_index = 8;
        assert_eq!(reg.verify(&out_of_range).unwrap().verdict, Verdict::Fail);

        let mut unknown = proof;
        unknown.challenge.version = 4;
        assert_eq!(reg.verify(&unknown), Err(AuditError::UnknownVersion(4)));
    }

    #[test]
    fn mismatched_echo_fails() {
        let mut forest = Forest::default();
        forest
            .build_initial_tree((0..4).map(|i| block(i, 1)).collect())
            .unwrap();
        let reg = registered(&forest);
        let proof = prove(
            &forest,
            Challenge {
                version: 0,
                block_index: 1,
            },
        )
        .unwrap();
        let sent = Challenge {
            version: 0,
            block_index: 2,
        };
        let res = reg.verify_response::<String>(sent, Ok(proof));
        assert_eq!(res.verdict, Verdict::Fail);
        assert_eq!(res.challenge, sent);
    }

    #[test]
    fn batch_records_errors_without_aborting() {
        let mut forest = Forest::default();
        forest
            .build_initial_tree((0..4).map(|i| block(i, 1)).collect())
            .unwrap();
        let reg = registered(&forest);
        assert!(batch_audit(&reg, &forest, &[]).is_empty());
        let challenges = [
            Challenge {
                version: 0,
                block_index: 0,
            },
            Challenge {
                version: 5,
                block_index: 0,
            },
            Challenge {
                version: 0,
                block_index: 3,
            },
        ];
        let results = batch_audit(&reg, &forest, &challenges);
        let verdicts: Vec<_> = results.iter().map(|r| r.verdict).collect();
        assert_eq!(verdicts, vec![Verdict::Pass, Verdict::Fail, Verdict::Pass]);
        assert!(results[1].reason.as_deref().unwrap().contains("VersionNotFound"));
        assert_eq!(results[1].challenge, challenges[1]);
    }
}
