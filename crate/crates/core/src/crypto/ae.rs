//! Authenticated encryption shim: ChaCha20 keystream XOR plus a SHA-256
//! encrypt-then-MAC tag over key, nonce, addressing metadata, and body.
//! Any wrong key or flipped bit fails authentication detectably.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{CryptoError, SharedSecret};

/// An encrypted payload addressed from `sender` to `receiver`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub sender: u64,
    pub receiver: u64,
    pub nonce: [u8; 16],
    pub body: Vec<u8>,
    pub tag: [u8; 32],
}

fn keystream(key: &SharedSecret, nonce: &[u8; 16], len: usize) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"ae-stream");
    h.update(key.as_bytes());
    h.update(nonce);
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
    let mut out = vec![0u8; len];
    rng.fill_bytes(&mut out);
    out
}

fn mac(key: &SharedSecret, nonce: &[u8; 16], sender: u64, receiver: u64, body: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"ae-mac");
    h.update(key.as_bytes());
    h.update(nonce);
    h.update(sender.to_le_bytes());
    h.update(receiver.to_le_bytes());
    h.update((body.len() as u64).to_le_bytes());
    h.update(body);
    h.finalize().into()
}

/// Encrypts `plaintext` under `key` with a fresh nonce from `rng`.
pub fn ae_encrypt<R: Rng>(
    key: &SharedSecret,
    sender: u64,
    receiver: u64,
    plaintext: &[u8],
    rng: &mut R,
) -> Ciphertext {
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);
    let stream = keystream(key, &nonce, plaintext.len());
    let body: Vec<u8> = plaintext.iter().zip(stream).map(|(p, s)| p ^ s).collect();
    let tag = mac(key, &nonce, sender, receiver, &body);
    Ciphertext {
        sender,
        receiver,
        nonce,
        body,
        tag,
    }
}

/// Decrypts and authenticates; fails on a wrong key, tampered body, or
/// altered addressing metadata.
pub fn ae_decrypt(key: &SharedSecret, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    let expected = mac(key, &ct.nonce, ct.sender, ct.receiver, &ct.body);
    if expected != ct.tag {
        return Err(CryptoError::AuthFailure {
            sender: ct.sender,
            receiver: ct.receiver,
        });
    }
    let stream = keystream(key, &ct.nonce, ct.body.len());
    Ok(ct.body.iter().zip(stream).map(|(c, s)| c ^ s).collect())
}
