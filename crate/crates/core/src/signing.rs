//! Project code signing.
//!
//! Application files are signed by the project key: the signature covers the
//! SHA-256 digest of the file bytes and uses Ed25519. Servers and workers
//! only need the public half.

use std::fs;
use std::io;
use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::model::Digest;

/// Identifier of the project-wide signature scheme.
pub const SCHEME: &str = "ed25519-sha256";

#[derive(Debug, thiserror::Error)]
pub enum KeyError {
    #[error("key file io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed key file: {0}")]
    Malformed(String),
    #[error("unsupported signature scheme {0:?}")]
    Scheme(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFile {
    scheme: String,
    public: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    secret: Option<String>,
}

/// The project's public verification key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PublicKey(VerifyingKey);

impl PublicKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0.as_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut bytes)
            .map_err(|e| KeyError::Malformed(e.to_string()))?;
        VerifyingKey::from_bytes(&bytes)
            .map(PublicKey)
            .map_err(|e| KeyError::Malformed(e.to_string()))
    }

    /// Loads either a public-key file or a full keypair file.
    pub fn load(path: &Path) -> Result<Self, KeyError> {
        let kf = read_key_file(path)?;
        Self::from_hex(&kf.public)
    }

    pub fn save(&self, path: &Path) -> Result<(), KeyError> {
        write_key_file(
            path,
            &KeyFile {
                scheme: SCHEME.to_owned(),
                public: self.to_hex(),
                secret: None,
            },
        )
    }
}

/// Signing key held by whoever publishes applications.
pub struct Keypair(SigningKey);

impl Keypair {
    pub fn generate() -> Self {
        Keypair(SigningKey::generate(&mut rand::rngs::OsRng))
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        Keypair(SigningKey::from_bytes(&seed))
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.0.verifying_key())
    }

    pub fn sign(&self, file_bytes: &[u8]) -> Vec<u8> {
        self.sign_digest(&Digest::of(file_bytes))
    }

    pub fn sign_digest(&self, digest: &Digest) -> Vec<u8> {
        self.0.sign(&digest.0).to_bytes().to_vec()
    }

    pub fn load(path: &Path) -> Result<Self, KeyError> {
        let kf = read_key_file(path)?;
        let secret = kf
            .secret
            .ok_or_else(|| KeyError::Malformed("no secret key in file".into()))?;
        let mut seed = [0u8; 32];
        hex::decode_to_slice(secret.trim(), &mut seed)
            .map_err(|e| KeyError::Malformed(e.to_string()))?;
        let kp = Keypair::from_seed(seed);
        if kp.public().to_hex() != kf.public {
            return Err(KeyError::Malformed(
                "public key does not match secret".into(),
            ));
        }
        Ok(kp)
    }

    pub fn save(&self, path: &Path) -> Result<(), KeyError> {
        write_key_file(
            path,
            &KeyFile {
                scheme: SCHEME.to_owned(),
                public: self.public().to_hex(),
                secret: Some(hex::encode(self.0.to_bytes())),
            },
        )
    }
}

fn read_key_file(path: &Path) -> Result<KeyFile, KeyError> {
    let text = fs::read_to_string(path)?;
    let kf: KeyFile =
        serde_json::from_str(&text).map_err(|e| KeyError::Malformed(e.to_string()))?;
    if kf.scheme != SCHEME {
        return Err(KeyError::Scheme(kf.scheme));
    }
    Ok(kf)
}

fn write_key_file(path: &Path, kf: &KeyFile) -> Result<(), KeyError> {
    let mut text = serde_json::to_string_pretty(kf).expect("key file serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// True iff `signature` is a valid signature of the digest of `file_bytes`.
/// Any malformed input yields `false`.
pub fn verify_signature(file_bytes: &[u8], signature: &[u8], key: &PublicKey) -> bool {
    verify_digest(&Digest::of(file_bytes), signature, key)
}

pub fn verify_digest(digest: &Digest, signature: &[u8], key: &PublicKey) -> bool {
    let Ok(bytes) = <[u8; 64]>::try_from(signature) else {
        return false;
    };
    let sig = Signature::from_bytes(&bytes);
    key.0.verify(&digest.0, &sig).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_then_verify() {
        let kp = Keypair::from_seed([7; 32]);
        let sig = kp.sign(b"payload");
        assert!(verify_signature(b"payload", &sig, &kp.public()));
    }

    #[test]
    fn altered_payload_fails() {
        let kp = Keypair::from_seed([7; 32]);
        let sig = kp.sign(b"payload");
        assert!(!verify_signature(b"payloae", &sig, &kp.public()));
    }

    #[test]
    fn empty_or_short_signature_fails() {
        let kp = Keypair::from_seed([7; 32]);
        assert!(!verify_signature(b"payload", &[], &kp.public()));
        assert!(!verify_signature(b"payload", &[0u8; 63], &kp.public()));
        assert!(!verify_signature(b"payload", &[0u8; 64], &kp.public()));
    }

    #[test]
    fn wrong_key_fails() {
        let kp = Keypair::from_seed([7; 32]);
        let other = Keypair::from_seed([8; 32]);
        let sig = other.sign(b"payload");
        assert!(!verify_signature(b"payload", &sig, &kp.public()));
    }

    #[test]
    fn key_files_round_trip() {
        let dir = std::env::temp_dir().join(format!("locflow-key-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let kp = Keypair::from_seed([3; 32]);
        kp.save(&dir.join("project.key")).unwrap();
        kp.public().save(&dir.join("project.pub")).unwrap();
        let loaded = Keypair::load(&dir.join("project.key")).unwrap();
        assert_eq!(loaded.public(), kp.public());
        assert_eq!(
            PublicKey::load(&dir.join("project.pub")).unwrap(),
            kp.public()
        );
        assert_eq!(
            PublicKey::load(&dir.join("project.key")).unwrap(),
            kp.public()
        );
        assert!(Keypair::load(&dir.join("project.pub")).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
