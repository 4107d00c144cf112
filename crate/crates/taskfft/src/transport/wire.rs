//! TCP wire format: little-endian header followed by the raw payload.

use crate::error::{Error, Result};

pub const MAGIC: u32 = 0x4646_5431; // "FFT1"
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub src: u32,
    pub dst: u32,
    pub tag: u64,
    pub byte_len: u64,
}

pub fn encode_header(h: &Header) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..4].copy_from_slice(&MAGIC.to_le_bytes());
    out[4..8].copy_from_slice(&h.src.to_le_bytes());
    out[8..12].copy_from_slice(&h.dst.to_le_bytes());
    out[12..20].copy_from_slice(&h.tag.to_le_bytes());
    out[20..28].copy_from_slice(&h.byte_len.to_le_bytes());
    out
}

pub fn decode_header(bytes: &[u8; HEADER_LEN]) -> Result<Header> {
    let magic = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(Error::InvalidConfig(format!("bad wire magic {magic:#010x}")));
    }
    Ok(Header {
        src: u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        dst: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
        tag: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
        byte_len: u64::from_le_bytes(bytes[20..28].try_into().unwrap()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_roundtrip() {
        let h = Header { src: 3, dst: 1, tag: (7u64 << 32) | 9, byte_len: 1024 };
        let enc = encode_header(&h);
        assert_eq!(&enc[0..4], &[0x31, 0x54, 0x46, 0x46]); // "1TFF" little-endian
        assert_eq!(decode_header(&enc).unwrap(), h);
    }

    #[test]
    fn bad_magic_rejected() {
        let h = Header { src: 0, dst: 0, tag: 0, byte_len: 0 };
        let mut enc = encode_header(&h);
        enc[0] ^= 0xff;
        assert!(decode_header(&enc).is_err());
    }
}
