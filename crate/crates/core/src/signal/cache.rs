//! Binary token cache.
//!
//! Layout, all little-endian:
//!
//! | offset | type     | field                                   |
//! |-------:|----------|-----------------------------------------|
//! | 0      | [u8; 8]  | magic `SPDTOK1\0`                       |
//! | 8      | u32      | version                                 |
//! | 12     | u32      | n (signals)                             |
//! | 16     | u32      | k (features per signal)                 |
//! | 20     | u32      | m (matrix dimension, `n + k`)           |
//! | 24     | u32      | p flag (0: raw `d(m)` tokens)           |
//! | 28     | u32      | C (channels)                            |
//! | 32     | u32      | S (segments per epoch)                  |
//! | 36     | u32      | epoch count                             |
//! | 40     | u32      | strategy tag (DAW 0, MAW 1, WPA 2, GLOBAL_COV 3) |
//! | 44     | f64      | α                                       |
//! | 52     | f32 × …  | tokens, `((epoch·C + channel)·S + segment)·d(m)` |

use std::fs;
use std::io::Write;
use std::path::Path;

use super::SignalError;
use crate::enrichment::Strategy;
use crate::tokenization::triangular_dim;

pub const CACHE_MAGIC: [u8; 8] = *b"SPDTOK1\0";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheHeader {
    pub n: u32,
    pub k: u32,
    pub m: u32,
    pub p_flag: u32,
    pub channels: u32,
    pub segments: u32,
    pub epochs: u32,
    pub strategy: Strategy,
    pub alpha: f64,
}

impl CacheHeader {
    pub fn token_dim(&self) -> usize {
        triangular_dim(self.m as usize)
    }

    pub fn tokens_per_epoch(&self) -> usize {
        (self.channels * self.segments) as usize
    }

    /// Number of `f32` values in the payload.
    pub fn payload_len(&self) -> usize {
        self.epochs as usize * self.tokens_per_epoch() * self.token_dim()
    }

    fn check(&self) -> Result<(), SignalError> {
        if self.m != self.n + self.k {
            return Err(SignalError::CorruptCache(format!(
                "m = {} but n + k = {}",
                self.m,
                self.n + self.k
            )));
        }
        if self.p_flag != 0 {
            return Err(SignalError::CorruptCache(format!("unsupported p flag {}", self.p_flag)));
        }
        if self.n == 0 || self.channels == 0 || self.segments == 0 {
            return Err(SignalError::CorruptCache("zero-sized dimension".into()));
        }
        Ok(())
    }

    fn to_bytes(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(&CACHE_MAGIC);
        for v in [
            CACHE_VERSION,
            self.n,
            self.k,
            self.m,
            self.p_flag,
            self.channels,
            self.segments,
            self.epochs,
            self.strategy.tag(),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self, SignalError> {
        if bytes.len() < HEADER_LEN {
            return Err(SignalError::CorruptCache(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
        }
        if bytes[..8] != CACHE_MAGIC {
            return Err(SignalError::CorruptCache("bad magic".into()));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        let version = u(0);
        if version != CACHE_VERSION {
            return Err(SignalError::VersionMismatch {
                expected: CACHE_VERSION,
                found: version,
            });
        }
        let strategy = Strategy::from_tag(u(8))
            .ok_or_else(|| SignalError::CorruptCache(format!("unknown strategy tag {}", u(8))))?;
        let alpha = f64::from_le_bytes(bytes[44..52].try_into().expect("8 bytes"));
        let header = CacheHeader {
            n: u(1),
            k: u(2),
            m: u(3),
            p_flag: u(4),
            channels: u(5),
            segments: u(6),
            epochs: u(7),
            strategy,
            alpha,
        };
        header.check()?;
        Ok(header)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCache {
    pub header: CacheHeader,
    tokens: Vec<f32>,
}

impl TokenCache {
    pub fn new(header: CacheHeader, tokens: Vec<f32>) -> Result<Self, SignalError> {
        header.check()?;
        if tokens.len() != header.payload_len() {
            return Err(SignalError::CorruptCache(format!(
                "{} token values, header implies {}",
                tokens.len(),
                header.payload_len()
            )));
        }
        Ok(TokenCache { header, tokens })
    }

    pub fn tokens(&self) -> &[f32] {
        &self.tokens
    }

    /// The `C·S` tokens of epoch `e`, channel-major, flattened.
    pub fn epoch(&self, e: usize) -> &[f32] {
        let len = self.header.tokens_per_epoch() * self.header.token_dim();
        &self.tokens[e * len..(e + 1) * len]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes();
        out.reserve(self.tokens.len() * 4);
        for v in &self.tokens {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SignalError> {
        let header = CacheHeader::from_bytes(bytes)?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != header.payload_len() * 4 {
            return Err(SignalError::CorruptCache(format!(
                "payload has {} bytes, header implies {}",
                payload.len(),
                header.payload_len() * 4
            )));
        }
        let tokens = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(TokenCache { header, tokens })
    }
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn cache_write(path: &Path, cache: &TokenCache) -> Result<(), SignalError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| SignalError::InvalidRecording(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&cache.to_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn cache_read(path: &Path) -> Result<TokenCache, SignalError> {
    TokenCache::from_bytes(&fs::read(path)?)
}
