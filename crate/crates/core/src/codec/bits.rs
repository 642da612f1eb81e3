//! Packed bit buffers (MSB first) used by the range coder and the bitstream.

/// Growable bit string, most significant bit of each byte first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitBuf {
    bytes: Vec<u8>,
    len: usize,
}

impl BitBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    fn set(&mut self, i: usize, bit: bool) {
        let mask = 0x80 >> (i % 8);
        if bit {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    /// Adds one at the last bit position, rippling the carry towards the front.
    /// Returns false if the carry ran off the front (the buffer was all ones).
    pub fn increment(&mut self) -> bool {
        let mut i = self.len;
        while i > 0 {
            i -= 1;
            if self.get(i) {
                self.set(i, false);
            } else {
                self.set(i, true);
                return true;
            }
        }
        false
    }

    pub fn extend(&mut self, other: &BitBuf) {
        if self.len.is_multiple_of(8) {
            self.bytes.extend_from_slice(&other.bytes);
            self.len += other.len;
        } else {
            for i in 0..other.len {
                self.push(other.get(i));
            }
        }
    }

    /// Packed bytes; unused low bits of the last byte are zero.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// True if the `len` bits of `bytes` starting at bit `start` equal this buffer.
    pub fn matches(&self, bytes: &[u8], start: usize, len: usize) -> bool {
        if len != self.len {
            return false;
        }
        let reader = BitReader::new(bytes, start, len);
        (0..len).all(|i| reader.bit(i) == self.get(i))
    }
}

/// Read-only view of `len` bits starting at bit `start`; positions past the end read as zero.
#[derive(Debug, Clone, Copy)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    start: usize,
    len: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], start: usize, len: usize) -> Self {
        Self { bytes, start, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        if i >= self.len {
            return false;
        }
        let j = self.start + i;
        match self.bytes.get(j / 8) {
            Some(b) => b & (0x80 >> (j % 8)) != 0,
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_get_roundtrip() {
        let pattern = [true, false, true, true, false, false, true, false, true, true];
        let mut b = BitBuf::new();
        for &p in &pattern {
            b.push(p);
        }
        assert_eq!(b.len(), 10);
        for (i, &p) in pattern.iter().enumerate() {
            assert_eq!(b.get(i), p);
        }
        assert_eq!(b.as_bytes(), &[0b1011_0010, 0b1100_0000]);
    }

    #[test]
    fn increment_ripples_carry() {
        let mut b = BitBuf::new();
        for bit in [false, true, true] {
            b.push(bit);
        }
        assert!(b.increment());
        assert_eq!((b.get(0), b.get(1), b.get(2)), (true, false, false));
        let mut ones = BitBuf::new();
        ones.push(true);
        assert!(!ones.increment());
    }

    #[test]
    fn reader_pads_with_zeros() {
        let bytes = [0xFF];
        let r = BitReader::new(&bytes, 4, 2);
        assert!(r.bit(0) && r.bit(1));
        assert!(!r.bit(2));
        assert!(!BitReader::new(&bytes, 8, 4).bit(0));
    }

    #[test]
    fn extend_unaligned() {
        let mut a = BitBuf::new();
        a.push(true);
        let mut b = BitBuf::new();
        for bit in [false, true, true, true, true, true, true, true, true] {
            b.push(bit);
        }
        a.extend(&b);
        assert_eq!(a.len(), 10);
        assert!(a.get(0) && !a.get(1) && a.get(9));
        assert!(a.matches(a.as_bytes(), 0, 10));
    }
}
