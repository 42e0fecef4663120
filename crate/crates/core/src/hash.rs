//! SHA-256 digests with leaf/internal domain separation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::codec::EncryptedBlock;

/// Prefix byte for leaf hashes.
pub const LEAF_PREFIX: u8 = 0x00;
/// Prefix byte for internal-node hashes.
pub const INTERNAL_PREFIX: u8 = 0x01;

pub const DIGEST_LEN: usize = 32;

/// A 32-byte SHA-256 output. Identifies every node and every root.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub const fn new(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, DigestParseError> {
        let arr: [u8; DIGEST_LEN] = bytes.try_into().map_err(|_| DigestParseError::Length(bytes.len()))?;
        Ok(Digest(arr))
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    /// Lowercase hex, 64 characters.
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, DigestParseError> {
        let bytes = hex::decode(s).map_err(|_| DigestParseError::Hex)?;
        Self::from_slice(&bytes)
    }
}

impl From<[u8; DIGEST_LEN]> for Digest {
    fn from(bytes: [u8; DIGEST_LEN]) -> Self {
        Digest(bytes)
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl FromStr for Digest {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <std::borrow::Cow<'de, str>>::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DigestParseError {
    #[error("digest must be {DIGEST_LEN} bytes, got {0}")]
    Length(usize),
    #[error("digest is not valid hex")]
    Hex,
}

/// `SHA-256(0x00 ‖ nonce ‖ ciphertext)`.
pub fn hash_leaf(block: &EncryptedBlock) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update([LEAF_PREFIX]);
    hasher.update(block.nonce);
    hasher.update(&block.ciphertext);
    Digest(hasher.finalize().into())
}

/// `SHA-256(0x01 ‖ left ‖ right)`. Order-sensitive.
pub fn hash_internal(left: &Digest, right: &Digest) -> Digest {
    let mut hasher = Sha256::new();
    hasher.update([INTERNAL_PREFIX]);
    hasher.update(left.0);
    hasher.update(right.0);
    Digest(hasher.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::NONCE_LEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(nonce: [u8; NONCE_LEN], ciphertext: Vec<u8>) -> EncryptedBlock {
        EncryptedBlock {
            index: 0,
            nonce,
            ciphertext,
        }
    }

    #[test]
    fn internal_known_answer() {
        // SHA-256 of 0x01 followed by 64 zero bytes, computed independently
        // with Python's hashlib.
        let expected = Digest::from_hex("ae0798d0ecaed2b778eddebf18f071a561c53658c05e76cedecc27cafbdbc577").unwrap();
        assert_eq!(hash_internal(&Digest::ZERO, &Digest::ZERO), expected);

        let mut msg = vec![0x01u8];
        msg.extend_from_slice(&[0u8; 64]);
        assert_eq!(Digest(Sha256::digest(&msg).into()), expected);
    }

    #[test]
    fn leaf_known_answer() {
        // SHA-256(0x00 ‖ 16×0x00 ‖ "abc")
        let mut msg = vec![0x00u8];
        msg.extend_from_slice(&[0u8; 16]);
        msg.extend_from_slice(b"abc");
        let expected = Digest(Sha256::digest(&msg).into());
        assert_eq!(hash_leaf(&block([0u8; 16], b"abc".to_vec())), expected);
    }

    #[test]
    fn internal_is_order_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = Digest(rng.gen());
            let b = Digest(rng.gen());
            assert_ne!(hash_internal(&a, &b), hash_internal(&b, &a));
            assert_eq!(hash_internal(&a, &b), hash_internal(&a, &b));
        }
    }

    #[test]
    fn leaf_detects_every_sampled_bit_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ct = vec![0u8; 16384];
        rng.fill(&mut ct[..]);
        let original = block(rng.gen(), ct);
        let base = hash_leaf(&original);
        assert_eq!(base, hash_leaf(&original));
        for _ in 0..100 {
            let bit = rng.gen_range(0..original.ciphertext.len() * 8);
            let mut flipped = original.clone();
            flipped.ciphertext[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(hash_leaf(&flipped), base, "bit {bit}");
        }
    }

    #[test]
    fn leaf_and_internal_domains_are_disjoint() {
        // A leaf whose nonce ‖ ciphertext spells out two child digests still
        // hashes differently from the internal node over those children.
        let left = Digest([3u8; 32]);
        let right = Digest([9u8; 32]);
        let mut bytes = left.0.to_vec();
        bytes.extend_from_slice(&right.0);
        let nonce: [u8; 16] = bytes[..16].try_into().unwrap();
        let crafted = block(nonce, bytes[16..].to_vec());
        assert_ne!(hash_leaf(&crafted), hash_internal(&left, &right));
        assert_ne!(LEAF_PREFIX, INTERNAL_PREFIX);
    }

    #[test]
    fn hex_round_trip_and_errors() {
        let d = Digest([0xab; 32]);
        assert_eq!(d.to_hex(), "ab".repeat(32));
        assert_eq!(d.to_hex().parse::<Digest>().unwrap(), d);
        assert_eq!(Digest::from_hex("zz"), Err(DigestParseError::Hex));
        assert_eq!(Digest::from_hex("abab"), Err(DigestParseError::Length(2)));
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
    }
}
