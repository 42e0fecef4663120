use emf_core::{
    hash_leaf, prove, Challenge, Digest, EncryptedBlock, Forest, MemStore, Node, PathElement, ProofMessage, Registry,
    Verdict, VersionMetadata,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn block(rng: &mut ChaCha8Rng, index: usize) -> EncryptedBlock {
    let mut nonce = [0u8; 16];
    rng.fill(&mut nonce);
    let mut ciphertext = vec![0u8; 48];
    rng.fill(&mut ciphertext[..]);
    EncryptedBlock {
        index,
        nonce,
        ciphertext,
    }
}

/// A file of `n` blocks with `q` random updates, each on a random earlier
/// version, and a registry holding every version.
fn history(rng: &mut ChaCha8Rng, n: usize, q: usize) -> (Forest, Registry) {
    let mut forest = Forest::new(MemStore::new());
    forest
        .build_initial_tree((0..n).map(|i| block(rng, i)).collect())
        .unwrap();
    for _ in 0..q {
        let base = rng.gen_range(0..forest.versions().len());
        let i = rng.gen_range(0..n);
        let b = block(rng, i);
        forest.update_block(base, i, b).unwrap();
    }
    let mut registry = Registry::new();
    for v in forest.versions() {
        registry
            .register(VersionMetadata {
                version: v.version,
                root_digest: v.root.0,
                leaf_count: v.leaf_count,
            })
            .unwrap();
    }
    (forest, registry)
}

/// The verifier only ever sees the serialized message.
fn over_the_wire(proof: &ProofMessage) -> ProofMessage {
    serde_json::from_str(&serde_json::to_string(proof).unwrap()).unwrap()
}

#[test]
fn every_valid_challenge_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for n in 1..=32 {
        let (forest, registry) = history(&mut rng, n, 15);
        for c in registry.all_challenges() {
            let proof = over_the_wire(&prove(&forest, c).unwrap());
            let result = registry.verify(&proof).unwrap();
            assert_eq!(result.verdict, Verdict::Pass, "n={n} {c:?}: {:?}", result.reason);
            assert_eq!(result.reconstructed_root, result.expected_root);
            checked += 1;
        }
    }
    assert_eq!(checked, (1..=32).sum::<usize>() * 16);
}

#[derive(Debug, Clone, Copy)]
enum Mutation {
    FlipCiphertextBit,
    SubstituteDigest,
    SwapSide,
    WrongVersion,
}

/// Applies `m` to a fresh proof of `c`. Returns `None` when the mutation
/// does not apply (an empty path, or a single-version history).
fn mutated_proof(forest: &mut Forest, c: Challenge, m: Mutation, rng: &mut ChaCha8Rng) -> Option<ProofMessage> {
    match m {
        Mutation::FlipCiphertextBit => {
            let id = forest.leaf(c.version, c.block_index).unwrap().id();
            let flip = |rng: &mut ChaCha8Rng| (rng.gen_range(0..48), 1u8 << rng.gen_range(0..8));
            let (byte, bit) = flip(rng);
            let toggle = move |node: &mut Node| {
                if let Node::Leaf { block, .. } = node {
                    block.ciphertext[byte] ^= bit;
                }
            };
            forest.store_mut().tamper(&id, toggle);
            let proof = prove(forest, c).unwrap();
            forest.store_mut().tamper(&id, toggle);
            Some(proof)
        }
        Mutation::SubstituteDigest => {
            let mut proof = prove(forest, c).unwrap();
            let slots: Vec<usize> = (0..proof.path.len())
                .filter(|&k| proof.path[k].digest().is_some())
                .collect();
            if slots.is_empty() {
                // Nothing to substitute on the path: replace the leaf digest.
                proof.leaf_digest = Digest::new(rng.gen());
                return Some(proof);
            }
            let k = slots[rng.gen_range(0..slots.len())];
            let fake = Digest::new(rng.gen());
            proof.path[k] = match proof.path[k] {
                PathElement::Left(_) => PathElement::Left(fake),
                PathElement::Right(_) => PathElement::Right(fake),
                PathElement::Promoted => unreachable!(),
            };
            Some(proof)
        }
        Mutation::SwapSide => {
            let mut proof = prove(forest, c).unwrap();
            if proof.path.is_empty() {
                return None;
            }
            let k = rng.gen_range(0..proof.path.len());
            let filler = Digest::new(rng.gen());
            proof.path[k] = match (proof.path[k], rng.gen_bool(0.5)) {
                (PathElement::Left(d), true) => PathElement::Right(d),
                (PathElement::Right(d), true) => PathElement::Left(d),
                (PathElement::Left(_) | PathElement::Right(_), false) => PathElement::Promoted,
                (PathElement::Promoted, true) => PathElement::Left(filler),
                (PathElement::Promoted, false) => PathElement::Right(filler),
            };
            Some(proof)
        }
        Mutation::WrongVersion => {
            let versions = forest.versions().len();
            if versions < 2 {
                return None;
            }
            let mut proof = prove(forest, c).unwrap();
            let other = (c.version + rng.gen_range(1..versions)) % versions;
            proof.challenge.version = other;
            Some(proof)
        }
    }
}

#[test]
fn every_single_mutation_fails() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let kinds = [
        Mutation::FlipCiphertextBit,
        Mutation::SubstituteDigest,
        Mutation::SwapSide,
        Mutation::WrongVersion,
    ];
    let mut counts = [0usize; 4];
    while counts.iter().sum::<usize>() < 12_000 {
        let n = rng.gen_range(1..=40);
        let q = rng.gen_range(1..8);
        let (mut forest, registry) = history(&mut rng, n, q);
        for _ in 0..50 {
            let c = registry.make_challenge(&mut rng).unwrap();
            let k = rng.gen_range(0..kinds.len());
            let Some(proof) = mutated_proof(&mut forest, c, kinds[k], &mut rng) else {
                continue;
            };
            let result = registry.verify(&over_the_wire(&proof)).unwrap();
            assert_eq!(result.verdict, Verdict::Fail, "{:?} on {c:?} (n={n}) passed", kinds[k]);
            counts[k] += 1;
        }
    }
    assert!(counts.iter().all(|&c| c >= 2_000), "{counts:?}");
}

#[test]
fn verification_needs_only_the_registry_and_the_message() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (forest, registry) = history(&mut rng, 9, 3);
    let c = Challenge {
        version: 2,
        block_index: 8,
    };
    let json = serde_json::to_string(&prove(&forest, c).unwrap()).unwrap();
    drop(forest);
    let proof: ProofMessage = serde_json::from_str(&json).unwrap();
    assert!(registry.verify(&proof).unwrap().passed());
}

#[test]
fn leaf_digest_commits_to_nonce_and_ciphertext() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = block(&mut rng, 0);
    let mut other = b.clone();
    other.nonce[0] ^= 1;
    assert_ne!(hash_leaf(&b), hash_leaf(&other));
    let mut moved = b.clone();
    moved.index = 5;
    assert_eq!(hash_leaf(&b), hash_leaf(&moved));
}
