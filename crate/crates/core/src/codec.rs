//! Little-endian byte cursor shared by the binary file formats.

use crate::error::FormatError;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(FormatError::Truncated {
                what,
                needed: n - left,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().expect("4 bytes");
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32s(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| too_big(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    pub(crate) fn f64s(&mut self, count: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| too_big(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::Malformed {
                what: "trailer",
                detail: format!("{} unexpected trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn too_big(what: &'static str) -> FormatError {
    FormatError::Malformed {
        what,
        detail: "size overflows".into(),
    }
}
