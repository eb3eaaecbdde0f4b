//! Integrity-checked checkpoint container.
//!
//! Layout: `PHI4CKPT`, u32 length + version string, 32-byte config digest,
//! u64 payload length, payload, then the SHA-256 of everything before it.

use anyhow::{bail, Result};
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 8] = b"PHI4CKPT";

#[derive(Debug)]
pub struct Checkpoint {
    pub version: String,
    pub config_digest: [u8; 32],
    pub payload: Vec<u8>,
}

pub fn config_digest(fingerprint: &str) -> [u8; 32] {
    Sha256::digest(fingerprint.as_bytes()).into()
}

pub fn encode(version: &str, config_digest: &[u8; 32], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 96);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(version.len() as u32).to_le_bytes());
    out.extend_from_slice(version.as_bytes());
    out.extend_from_slice(config_digest);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Verifies the checksum first, then the container structure.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 32 + 8 + 32 || &bytes[..8] != MAGIC {
        bail!("not a phi4 checkpoint");
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        bail!("checkpoint integrity error: checksum mismatch");
    }
    let mut pos = 8;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            bail!("checkpoint integrity error: truncated");
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let vlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into()?) as usize;
    let version = String::from_utf8(take(&mut pos, vlen)?.to_vec())?;
    let config_digest: [u8; 32] = take(&mut pos, 32)?.try_into()?;
    let plen = u64::from_le_bytes(take(&mut pos, 8)?.try_into()?) as usize;
    let payload = take(&mut pos, plen)?.to_vec();
    if pos != body.len() {
        bail!("checkpoint integrity error: trailing bytes");
    }
    Ok(Checkpoint { version, config_digest, payload })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let d = config_digest("{}");
        let bytes = encode("1.2.3", &d, b"payload");
        let c = decode(&bytes).unwrap();
        assert_eq!(c.version, "1.2.3");
        assert_eq!(c.config_digest, d);
        assert_eq!(c.payload, b"payload");
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = encode("1", &config_digest("x"), &[7u8; 100]);
        bytes[60] ^= 1;
        assert!(decode(&bytes).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode("1", &config_digest("x"), &[7u8; 100]);
        assert!(decode(&bytes[..bytes.len() - 5]).is_err());
    }
}
