//! File chunking and client-side block encryption.
//!
//! Blocks are encrypted with AES-256 in counter mode. Each encryption draws a
//! fresh 16-byte nonce that seeds the counter block and is stored beside the
//! ciphertext, so ciphertexts are exactly as long as their plaintexts. There
//! is no authentication tag: tampering is caught by the Merkle structure.

use std::fmt;

use aes::cipher::{KeyIvInit, StreamCipher};
use rand::RngCore;

/// Fixed block size: 16 KiB.
pub const BLOCK_SIZE: usize = 16 * 1024;
pub const NONCE_LEN: usize = 16;
pub const KEY_LEN: usize = 32;

type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("file is empty")]
    EmptyFile,
    #[error("key must be {KEY_LEN} bytes, got {0}")]
    InvalidKeyLength(usize),
    #[error("block {index} has length {len}, expected 1..={BLOCK_SIZE}")]
    InvalidBlockLength { index: usize, len: usize },
}

/// One plaintext chunk of a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainBlock {
    pub index: usize,
    pub data: Vec<u8>,
    pub is_last: bool,
}

/// A block after client-side encryption. This is what the server stores at
/// a leaf.
#[derive(Clone, PartialEq, Eq)]
pub struct EncryptedBlock {
    pub index: usize,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl fmt::Debug for EncryptedBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptedBlock")
            .field("index", &self.index)
            .field("nonce", &hex::encode(self.nonce))
            .field("len", &self.ciphertext.len())
            .finish()
    }
}

/// A 32-byte AES-256 key. Never leaves the client.
#[derive(Clone, PartialEq, Eq)]
pub struct FileKey([u8; KEY_LEN]);

impl FileKey {
    pub fn new(bytes: [u8; KEY_LEN]) -> Self {
        FileKey(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CodecError> {
        let arr: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CodecError::InvalidKeyLength(bytes.len()))?;
        Ok(FileKey(arr))
    }

    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        FileKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for FileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FileKey(..)")
    }
}

/// Number of blocks `len` bytes split into.
pub fn block_count(len: usize) -> usize {
    len.div_ceil(BLOCK_SIZE)
}

/// Splits `content` into 16 KiB blocks. Only the final block may be short.
pub fn chunk_file(content: &[u8]) -> Result<Vec<PlainBlock>, CodecError> {
    if content.is_empty() {
        return Err(CodecError::EmptyFile);
    }
    let count = block_count(content.len());
    Ok(content
        .chunks(BLOCK_SIZE)
        .enumerate()
        .map(|(index, data)| PlainBlock {
            index,
            data: data.to_vec(),
            is_last: index + 1 == count,
        })
        .collect())
}

/// Concatenates block data in index order. Blocks must already be sorted.
pub fn reassemble(blocks: &[PlainBlock]) -> Vec<u8> {
    let mut out = Vec::with_capacity(blocks.iter().map(|b| b.data.len()).sum());
    for b in blocks {
        out.extend_from_slice(&b.data);
    }
    out
}

fn apply_keystream(key: &FileKey, nonce: &[u8; NONCE_LEN], buf: &mut [u8]) {
    let mut cipher = Aes256Ctr::new(key.0.as_ref().into(), nonce.into());
    cipher.apply_keystream(buf);
}

pub fn encrypt_block<R: RngCore + ?Sized>(block: &PlainBlock, key: &FileKey, rng: &mut R) -> EncryptedBlock {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let mut ciphertext = block.data.clone();
    apply_keystream(key, &nonce, &mut ciphertext);
    EncryptedBlock {
        index: block.index,
        nonce,
        ciphertext,
    }
}

/// Inverts [`encrypt_block`]. A wrong key yields garbage, not an error.
///
/// The ciphertext does not record whether it was the final block of its
/// file, so `is_last` is set for short blocks only.
pub fn decrypt_block(block: &EncryptedBlock, key: &FileKey) -> PlainBlock {
    let mut data = block.ciphertext.clone();
    apply_keystream(key, &block.nonce, &mut data);
    PlainBlock {
        index: block.index,
        is_last: data.len() < BLOCK_SIZE,
        data,
    }
}

/// Chunks and encrypts a whole file.
pub fn encrypt_file<R: RngCore + ?Sized>(
    content: &[u8],
    key: &FileKey,
    rng: &mut R,
) -> Result<Vec<EncryptedBlock>, CodecError> {
    Ok(chunk_file(content)?
        .iter()
        .map(|b| encrypt_block(b, key, rng))
        .collect())
}

/// Decrypts blocks in index order and truncates to the recorded file length.
pub fn decrypt_file(blocks: &[EncryptedBlock], key: &FileKey, file_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(file_len);
    for b in blocks {
        out.extend_from_slice(&decrypt_block(b, key).data);
    }
    out.truncate(file_len);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0x5eed)
    }

    #[test]
    fn exact_block_boundary() {
        let blocks = chunk_file(&[0xAA; BLOCK_SIZE]).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].data.len(), BLOCK_SIZE);
        assert!(blocks[0].is_last);
    }

    #[test]
    fn one_past_boundary() {
        let blocks = chunk_file(&vec![1u8; BLOCK_SIZE + 1]).unwrap();
        let lens: Vec<_> = blocks.iter().map(|b| b.data.len()).collect();
        assert_eq!(lens, vec![BLOCK_SIZE, 1]);
        assert!(!blocks[0].is_last);
        assert!(blocks[1].is_last);
    }

    #[test]
    fn empty_file_rejected() {
        assert_eq!(chunk_file(&[]), Err(CodecError::EmptyFile));
    }

    #[test]
    fn one_gib_block_count() {
        let len = 1usize << 30;
        assert_eq!(block_count(len), 65536);
        // Cross-check by summing chunk lengths without allocating the file.
        let mut remaining = len;
        let mut blocks = 0;
        while remaining > 0 {
            remaining -= remaining.min(BLOCK_SIZE);
            blocks += 1;
        }
        assert_eq!(blocks, 65536);
    }

    #[test]
    fn key_length_enforced() {
        assert_eq!(FileKey::from_slice(&[0u8; 31]), Err(CodecError::InvalidKeyLength(31)));
        assert!(FileKey::from_slice(&[0u8; 32]).is_ok());
        assert_eq!(format!("{:?}", FileKey::new([7; 32])), "FileKey(..)");
    }

    #[test]
    fn zero_block_round_trip() {
        let mut rng = rng();
        let key = FileKey::generate(&mut rng);
        let block = PlainBlock {
            index: 3,
            data: vec![0u8; BLOCK_SIZE],
            is_last: false,
        };
        let enc = encrypt_block(&block, &key, &mut rng);
        assert_eq!(enc.ciphertext.len(), BLOCK_SIZE);
        assert_ne!(enc.ciphertext, block.data);
        assert_eq!(decrypt_block(&enc, &key), block);
    }

    #[test]
    fn one_byte_last_block_round_trip() {
        let mut rng = rng();
        let key = FileKey::generate(&mut rng);
        let block = PlainBlock {
            index: 1,
            data: vec![0x42],
            is_last: true,
        };
        let enc = encrypt_block(&block, &key, &mut rng);
        assert_eq!(enc.ciphertext.len(), 1);
        assert_eq!(decrypt_block(&enc, &key), block);
    }

    #[test]
    fn repeated_encryption_uses_fresh_nonces() {
        let mut rng = rng();
        let key = FileKey::generate(&mut rng);
        let block = PlainBlock {
            index: 0,
            data: vec![9u8; 4096],
            is_last: true,
        };
        let a = encrypt_block(&block, &key, &mut rng);
        let b = encrypt_block(&block, &key, &mut rng);
        assert_ne!(a.nonce, b.nonce);
        assert_ne!(a.ciphertext, b.ciphertext);
    }

    #[test]
    fn wrong_key_yields_different_plaintext() {
        let mut rng = rng();
        let key = FileKey::generate(&mut rng);
        let other = FileKey::generate(&mut rng);
        let mut data = vec![0u8; 2048];
        rng.fill(&mut data[..]);
        let block = PlainBlock {
            index: 5,
            data,
            is_last: true,
        };
        let enc = encrypt_block(&block, &key, &mut rng);
        let garbage = decrypt_block(&enc, &other);
        assert_eq!(garbage.index, 5);
        assert_ne!(garbage.data, block.data);
    }

    #[test]
    fn file_round_trip_truncates_to_length() {
        let mut rng = rng();
        let key = FileKey::generate(&mut rng);
        let mut content = vec![0u8; 3 * BLOCK_SIZE + 17];
        rng.fill(&mut content[..]);
        let enc = encrypt_file(&content, &key, &mut rng).unwrap();
        assert_eq!(enc.len(), 4);
        assert_eq!(decrypt_file(&enc, &key, content.len()), content);
    }

    proptest! {
        #[test]
        fn chunk_reassemble_round_trip(len in 1usize..200_000, seed: u64) {
            let mut content = vec![0u8; len];
            ChaCha8Rng::seed_from_u64(seed).fill(&mut content[..]);
            let blocks = chunk_file(&content).unwrap();
            prop_assert_eq!(reassemble(&blocks), content);
            for (i, b) in blocks.iter().enumerate() {
                prop_assert_eq!(b.index, i);
                prop_assert_eq!(b.is_last, i + 1 == blocks.len());
                if !b.is_last {
                    prop_assert_eq!(b.data.len(), BLOCK_SIZE);
                } else {
                    prop_assert!(!b.data.is_empty());
                }
            }
        }

        #[test]
        fn encrypt_decrypt_round_trip(len in 1usize..=BLOCK_SIZE, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let key = FileKey::generate(&mut rng);
            let mut data = vec![0u8; len];
            rng.fill(&mut data[..]);
            let block = PlainBlock { index: 0, data, is_last: true };
            let enc = encrypt_block(&block, &key, &mut rng);
            prop_assert_eq!(enc.ciphertext.len(), len);
            prop_assert_eq!(decrypt_block(&enc, &key).data, block.data);
        }
    }
}
