//! Small shared utilities: checksums and little-endian binary readers/writers
//! used by the dataset and checkpoint containers.

use crate::error::{Result, TgError};

/// CRC-32 (IEEE 802.3 polynomial, reflected). Table-driven, byte at a time.
pub fn crc32(data: &[u8]) -> u32 {
    const POLY: u32 = 0xEDB8_8320;
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, entry) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { POLY ^ (c >> 1) } else { c >> 1 };
            }
            *entry = c;
        }
        t
    });
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

/// FNV-1a 64-bit hash; used for config digests and seed derivation.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Append-only little-endian byte buffer.
#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64_slice(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
    pub fn u32_slice(&mut self, vs: &[u32]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.u32(v);
        }
    }
    pub fn str(&mut self, s: &str) {
        let bytes = s.as_bytes();
        self.u64(bytes.len() as u64);
        self.buf.extend_from_slice(bytes);
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf
    }

    /// Append a CRC-32 of everything written so far and return the buffer.
    pub fn finish_with_crc(mut self) -> Vec<u8> {
        let crc = crc32(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

/// Cursor over a little-endian byte buffer with truncation checking.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], what: &'a str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TgError::Format(format!(
                "{}: truncated at byte {} (needed {} more)",
                self.what, self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    pub fn u32_vec(&mut self) -> Result<Vec<u32>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.u32()?);
        }
        Ok(out)
    }
    pub fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| TgError::Format(format!("{}: invalid utf-8 string", self.what)))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Verify a trailing CRC-32 and return the payload (everything before it).
pub fn check_crc_trailer<'a>(buf: &'a [u8], what: &str) -> Result<&'a [u8]> {
    if buf.len() < 4 {
        return Err(TgError::Format(format!("{what}: too short for checksum")));
    }
    let (payload, trailer) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let actual = crc32(payload);
    if stored != actual {
        return Err(TgError::Checksum(format!(
            "{what}: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_known_vector() {
        // Standard check value for "123456789".
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn crc_trailer_roundtrip_and_corruption() {
        let mut w = ByteWriter::new();
        w.str("hello");
        w.f64_slice(&[1.0, -2.5]);
        let bytes = w.finish_with_crc();

        let payload = check_crc_trailer(&bytes, "test").unwrap();
        let mut r = ByteReader::new(payload, "test");
        assert_eq!(r.str().unwrap(), "hello");
        assert_eq!(r.f64_vec().unwrap(), vec![1.0, -2.5]);
        assert_eq!(r.remaining(), 0);

        let mut corrupt = bytes.clone();
        corrupt[3] ^= 0x01;
        assert!(matches!(
            check_crc_trailer(&corrupt, "test"),
            Err(TgError::Checksum(_))
        ));
    }

    #[test]
    fn reader_reports_truncation() {
        let mut w = ByteWriter::new();
        w.u64(100);
        let bytes = w.as_bytes().to_vec();
        let mut r = ByteReader::new(&bytes, "trunc");
        // Claims 100 f64s but buffer ends immediately.
        assert!(matches!(r.f64_vec(), Err(TgError::Format(_))));
    }

    #[test]
    fn fnv_is_stable() {
        // Pinned so config digests stay comparable across builds.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
