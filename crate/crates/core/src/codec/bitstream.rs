//! Self-describing byte layout: a 30-byte big-endian header followed by the
//! side-information payload and the feature payload, zero-padded to a byte.

use super::bits::BitBuf;

pub const MAGIC: [u8; 4] = *b"D2JS";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 30;
pub const HEADER_BITS: usize = HEADER_BYTES * 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HeaderError {
    #[error("stream is {0} bytes, shorter than the header")]
    Truncated(usize),
    #[error("bad magic {0:02x?}")]
    Magic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("payload lengths {b_z} + {b_y} bits do not fit a {bytes}-byte stream")]
    Length { b_z: u32, b_y: u32, bytes: usize },
}

/// Encoded sample: header fields plus the packed payload (z̃ bits then ỹ bits).
#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub k: u32,
    pub d: u32,
    pub delta: f64,
    pub b_z: u32,
    pub b_y: u32,
    payload: Vec<u8>,
}

impl Bitstream {
    pub fn new(k: u32, d: u32, delta: f64, z_bits: &BitBuf, y_bits: &BitBuf) -> Self {
        let mut all = z_bits.clone();
        all.extend(y_bits);
        Self { k, d, delta, b_z: z_bits.len() as u32, b_y: y_bits.len() as u32, payload: all.into_bytes() }
    }

    /// Packed payload bytes (z̃ bits then ỹ bits, zero padded).
    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Total bits B = header + B_z + B_y, without byte padding.
    pub fn total_bits(&self) -> usize {
        HEADER_BITS + self.b_z as usize + self.b_y as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_be_bytes());
        out.extend_from_slice(&self.k.to_be_bytes());
        out.extend_from_slice(&self.d.to_be_bytes());
        out.extend_from_slice(&self.delta.to_bits().to_be_bytes());
        out.extend_from_slice(&self.b_z.to_be_bytes());
        out.extend_from_slice(&self.b_y.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses a stream, checking magic, version and that the declared payload
    /// lengths agree with the number of bytes received.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeaderError> {
        if bytes.len() < HEADER_BYTES {
            return Err(HeaderError::Truncated(bytes.len()));
        }
        let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(HeaderError::Magic(magic));
        }
        let version = u16::from_be_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(HeaderError::Version(version));
        }
        let k = u32_at(6);
        let d = u32_at(10);
        let delta = f64::from_bits(u64::from_be_bytes(bytes[14..22].try_into().expect("8 bytes")));
        let b_z = u32_at(22);
        let b_y = u32_at(26);
        let payload_bits = b_z as u64 + b_y as u64;
        if payload_bits.div_ceil(8) != (bytes.len() - HEADER_BYTES) as u64 {
            return Err(HeaderError::Length { b_z, b_y, bytes: bytes.len() });
        }
        Ok(Self { k, d, delta, b_z, b_y, payload: bytes[HEADER_BYTES..].to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        let mut z = BitBuf::new();
        for b in [true, false, true] {
            z.push(b);
        }
        let mut y = BitBuf::new();
        for i in 0..13 {
            y.push(i % 3 == 0);
        }
        Bitstream::new(4096, 64, 0.37, &z, &y)
    }

    #[test]
    fn header_layout_is_big_endian() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[0..4], b"D2JS");
        assert_eq!(&bytes[4..6], &[0, 1]);
        assert_eq!(&bytes[6..10], &4096u32.to_be_bytes());
        assert_eq!(&bytes[14..22], &0.37f64.to_bits().to_be_bytes());
        assert_eq!(bytes.len(), HEADER_BYTES + 2);
    }

    #[test]
    fn roundtrip_is_exact() {
        let s = sample();
        let back = Bitstream::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.total_bits(), 240 + 16);
    }

    #[test]
    fn corrupted_headers_are_rejected() {
        let bytes = sample().to_bytes();
        let mut m = bytes.clone();
        m[0] ^= 1;
        assert!(matches!(Bitstream::from_bytes(&m), Err(HeaderError::Magic(_))));
        let mut v = bytes.clone();
        v[5] = 2;
        assert_eq!(Bitstream::from_bytes(&v), Err(HeaderError::Version(2)));
        let mut l = bytes.clone();
        l[29] = 0xff;
        assert!(matches!(Bitstream::from_bytes(&l), Err(HeaderError::Length { .. })));
        assert_eq!(Bitstream::from_bytes(&bytes[..10]), Err(HeaderError::Truncated(10)));
    }
}
