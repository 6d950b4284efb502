//! Key agreement, authenticated encryption, and signatures.
//!
//! Pairwise secrets come from ECDH on NIST P-256 hashed with SHA-256; payload
//! protection is AES-128-GCM with the binding context as associated data;
//! signatures are deterministic ECDSA/P-256. All key generation draws from a
//! caller-provided seeded stream, so a fixed seed reproduces identical keys.

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes128Gcm, Key, KeyInit, Nonce};
use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use p256::elliptic_curve::sec1::ToEncodedPoint;
use p256::{PublicKey, SecretKey};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unsupported security level {0}, only 128 is available")]
    UnsupportedLevel(u16),
    #[error("malformed key material")]
    BadKey,
    #[error("ciphertext failed authentication")]
    Auth,
}

/// Published suite parameters. Only the 128-bit level is instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublicParams {
    pub security_bits: u16,
    pub curve: &'static str,
    pub aead: &'static str,
    pub hash: &'static str,
}

pub fn key_setup(security_bits: u16) -> Result<PublicParams, CryptoError> {
    if security_bits != 128 {
        return Err(CryptoError::UnsupportedLevel(security_bits));
    }
    Ok(PublicParams {
        security_bits,
        curve: "NIST P-256",
        aead: "AES-128-GCM",
        hash: "SHA-256",
    })
}

/// Compressed SEC1 encoding of a P-256 point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgreementPublicKey(pub [u8; 33]);

impl AgreementPublicKey {
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.0);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

// Points travel on the wire as lowercase hex strings.
fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn point_from_hex(s: &str) -> Option<[u8; 33]> {
    if s.len() != 66 || !s.is_char_boundary(66) {
        return None;
    }
    let mut out = [0u8; 33];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

macro_rules! hex_serde_for_point {
    ($ty:ident) => {
        impl serde::Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
                ser.serialize_str(&hex_of(&self.0))
            }
        }

        impl<'de> serde::Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
                let s = <String as serde::Deserialize>::deserialize(de)?;
                point_from_hex(&s)
                    .map($ty)
                    .ok_or_else(|| serde::de::Error::custom("expected 66 hex digits"))
            }
        }
    };
}

hex_serde_for_point!(AgreementPublicKey);
hex_serde_for_point!(SignaturePublicKey);

/// ECDH keypair used both for pairwise masks and for encryption keys.
#[derive(Clone)]
pub struct AgreementKeyPair {
    secret: SecretKey,
    public: AgreementPublicKey,
}

impl AgreementKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = SecretKey::random(rng);
        let public = encode_public(&secret.public_key());
        AgreementKeyPair { secret, public }
    }

    pub fn public(&self) -> AgreementPublicKey {
        self.public
    }

    /// Scalar bytes, the form in which the private key is threshold-shared.
    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.to_bytes().into()
    }

    /// Rebuild a keypair from reconstructed scalar bytes.
    pub fn from_secret_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let secret = SecretKey::from_slice(bytes).map_err(|_| CryptoError::BadKey)?;
        let public = encode_public(&secret.public_key());
        Ok(AgreementKeyPair { secret, public })
    }
}

fn encode_public(pk: &PublicKey) -> AgreementPublicKey {
    let point = pk.to_encoded_point(true);
    let mut buf = [0u8; 33];
    buf.copy_from_slice(point.as_bytes());
    AgreementPublicKey(buf)
}

/// Symmetric pairwise secret; both directions of `key_agree` derive it.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SharedKey(pub [u8; 32]);

impl std::fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SharedKey(..)")
    }
}

pub fn key_agree(
    mine: &AgreementKeyPair,
    theirs: &AgreementPublicKey,
) -> Result<SharedKey, CryptoError> {
    let their_pk = PublicKey::from_sec1_bytes(&theirs.0).map_err(|_| CryptoError::BadKey)?;
    let shared =
        p256::ecdh::diffie_hellman(mine.secret.to_nonzero_scalar(), their_pk.as_affine());
    // Order the public keys so both sides hash identical input.
    let (lo, hi) = if mine.public.0 <= theirs.0 {
        (mine.public.0, theirs.0)
    } else {
        (theirs.0, mine.public.0)
    };
    let mut h = Sha256::new();
    h.update(b"fedxgb/key-agree/v1");
    h.update(lo);
    h.update(hi);
    h.update(shared.raw_secret_bytes());
    Ok(SharedKey(h.finalize().into()))
}

/// Message binding: who is talking to whom, in which round, about what.
/// `seq` must be unique per (key, context) pair; envelope sequence numbers
/// provide it, keeping GCM nonces unique under a shared key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BindingContext {
    pub sender: u64,
    pub receiver: u64,
    pub round: u32,
    pub kind: u16,
    pub seq: u64,
}

impl BindingContext {
    fn to_bytes(self) -> [u8; 30] {
        let mut buf = [0u8; 30];
        buf[..8].copy_from_slice(&self.sender.to_le_bytes());
        buf[8..16].copy_from_slice(&self.receiver.to_le_bytes());
        buf[16..20].copy_from_slice(&self.round.to_le_bytes());
        buf[20..22].copy_from_slice(&self.kind.to_le_bytes());
        buf[22..30].copy_from_slice(&self.seq.to_le_bytes());
        buf
    }
}

fn derive_nonce(key: &SharedKey, ctx: &BindingContext) -> [u8; 12] {
    let mut h = Sha256::new();
    h.update(b"fedxgb/nonce/v1");
    h.update(key.0);
    h.update(ctx.to_bytes());
    let digest = h.finalize();
    let mut nonce = [0u8; 12];
    nonce.copy_from_slice(&digest[..12]);
    nonce
}

fn cipher_for(key: &SharedKey) -> Aes128Gcm {
    let bytes: [u8; 16] = key.0[..16].try_into().unwrap();
    Aes128Gcm::new(&Key::<Aes128Gcm>::from(bytes))
}

pub fn encrypt(key: &SharedKey, ctx: &BindingContext, plaintext: &[u8]) -> Vec<u8> {
    let nonce = Nonce::from(derive_nonce(key, ctx));
    let aad = ctx.to_bytes();
    cipher_for(key)
        .encrypt(
            &nonce,
            Payload {
                msg: plaintext,
                aad: &aad,
            },
        )
        .expect("AES-GCM encryption is infallible for in-memory buffers")
}

pub fn decrypt(
    key: &SharedKey,
    ctx: &BindingContext,
    ciphertext: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let nonce = Nonce::from(derive_nonce(key, ctx));
    let aad = ctx.to_bytes();
    cipher_for(key)
        .decrypt(
            &nonce,
            Payload {
                msg: ciphertext,
                aad: &aad,
            },
        )
        .map_err(|_| CryptoError::Auth)
}

/// SEC1-compressed ECDSA verifying key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignaturePublicKey(pub [u8; 33]);

/// Deterministic ECDSA signing identity, issued by the setup fixture.
#[derive(Clone)]
pub struct SigningIdentity {
    key: SigningKey,
    public: SignaturePublicKey,
}

impl SigningIdentity {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let key = SigningKey::random(rng);
        let point = key.verifying_key().to_encoded_point(true);
        let mut buf = [0u8; 33];
        buf.copy_from_slice(point.as_bytes());
        SigningIdentity {
            key,
            public: SignaturePublicKey(buf),
        }
    }

    pub fn public(&self) -> SignaturePublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        let sig: Signature = self.key.sign(message);
        sig.to_bytes().to_vec()
    }
}

/// Verification never panics: malformed keys or signatures simply fail.
pub fn verify(public: &SignaturePublicKey, message: &[u8], signature: &[u8]) -> bool {
    let Ok(vk) = VerifyingKey::from_sec1_bytes(&public.0) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(signature) else {
        return false;
    };
    vk.verify(message, &sig).is_ok()
}
