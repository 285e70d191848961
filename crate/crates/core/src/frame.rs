//! Binary density frame streamed to viewers.
//!
//! Layout (little endian): `"ARCD"`, version `u8 = 1`, 3 reserved zero bytes,
//! `iter: u32`, `nx, ny, nz: u32`, then one byte per element in x-fastest
//! order holding `round(255·x_phys)` (0 for passive voids).

use thiserror::Error;

use crate::mesh::MeshTopology;

pub const MAGIC: [u8; 4] = *b"ARCD";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FrameError {
    #[error("frame shorter than its {HEADER_LEN}-byte header")]
    Truncated,
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("payload has {got} bytes, header declares {expected}")]
    PayloadLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityFrame {
    pub iter: u32,
    pub nx: u32,
    pub ny: u32,
    pub nz: u32,
    pub payload: Vec<u8>,
}

#[inline]
pub fn quantize(x: f64) -> u8 {
    (255.0 * x).round().clamp(0.0, 255.0) as u8
}

impl DensityFrame {
    pub fn from_field(iter: u32, mesh: &MeshTopology, x_phys: &[f64], passive: &[bool]) -> Self {
        let payload = x_phys.iter().zip(passive).map(|(&x, &p)| if p { 0 } else { quantize(x) }).collect();
        Self { iter, nx: mesh.nx as u32, ny: mesh.ny as u32, nz: mesh.nz as u32, payload }
    }

    pub fn element_count(&self) -> usize {
        self.nx as usize * self.ny as usize * self.nz as usize
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&[0; 3]);
        for v in [self.iter, self.nx, self.ny, self.nz] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        if bytes[4] != VERSION {
            return Err(FrameError::BadVersion(bytes[4]));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
        let frame = Self { iter: word(0), nx: word(1), ny: word(2), nz: word(3), payload: bytes[HEADER_LEN..].to_vec() };
        if frame.payload.len() != frame.element_count() {
            return Err(FrameError::PayloadLength { expected: frame.element_count(), got: frame.payload.len() });
        }
        Ok(frame)
    }
}
