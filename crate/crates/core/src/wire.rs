//! TLV framing shared by every protocol message and token encoding:
//! 1-byte type, 2-byte big-endian length, value.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated input")]
    Truncated,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("expected field type {expected:#04x}, found {found:#04x}")]
    UnexpectedType { expected: u8, found: u8 },
    #[error("invalid field value: {0}")]
    Invalid(&'static str),
}

pub const MAX_FIELD: usize = u16::MAX as usize;

#[derive(Default)]
pub struct TlvWriter {
    buf: Vec<u8>,
}

impl TlvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on values over 65535 bytes; every caller bounds its fields.
    pub fn bytes(&mut self, typ: u8, value: &[u8]) -> &mut Self {
        assert!(value.len() <= MAX_FIELD, "TLV field of {} bytes", value.len());
        self.buf.push(typ);
        self.buf.extend_from_slice(&(value.len() as u16).to_be_bytes());
        self.buf.extend_from_slice(value);
        self
    }

    pub fn u8(&mut self, typ: u8, v: u8) -> &mut Self {
        self.bytes(typ, &[v])
    }

    pub fn u32(&mut self, typ: u8, v: u32) -> &mut Self {
        self.bytes(typ, &v.to_be_bytes())
    }

    pub fn u64(&mut self, typ: u8, v: u64) -> &mut Self {
        self.bytes(typ, &v.to_be_bytes())
    }

    pub fn i64(&mut self, typ: u8, v: i64) -> &mut Self {
        self.bytes(typ, &v.to_be_bytes())
    }

    pub fn str(&mut self, typ: u8, v: &str) -> &mut Self {
        self.bytes(typ, v.as_bytes())
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.buf)
    }
}

/// Wrap a field sequence in an outer TLV whose type names the message.
pub fn envelope(typ: u8, body: &[u8]) -> Vec<u8> {
    TlvWriter::new().bytes(typ, body).finish()
}

/// Inverse of [`envelope`]; the input must be exactly one TLV.
pub fn open_envelope(bytes: &[u8]) -> Result<(u8, &[u8]), WireError> {
    let mut reader = TlvReader::new(bytes);
    let (typ, body) = reader.read_field()?;
    reader.finish()?;
    Ok((typ, body))
}

pub struct TlvReader<'a> {
    buf: &'a [u8],
}

impl<'a> TlvReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        TlvReader { buf }
    }

    pub fn peek_type(&self) -> Option<u8> {
        self.buf.first().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn read_field(&mut self) -> Result<(u8, &'a [u8]), WireError> {
        if self.buf.len() < 3 {
            return Err(WireError::Truncated);
        }
        let typ = self.buf[0];
        let len = u16::from_be_bytes([self.buf[1], self.buf[2]]) as usize;
        if self.buf.len() < 3 + len {
            return Err(WireError::Truncated);
        }
        let value = &self.buf[3..3 + len];
        self.buf = &self.buf[3 + len..];
        Ok((typ, value))
    }

    pub fn expect(&mut self, typ: u8) -> Result<&'a [u8], WireError> {
        let (found, value) = self.read_field()?;
        if found != typ {
            return Err(WireError::UnexpectedType { expected: typ, found });
        }
        Ok(value)
    }

    /// Consume the field only if it has type `typ`.
    pub fn optional(&mut self, typ: u8) -> Result<Option<&'a [u8]>, WireError> {
        if self.peek_type() == Some(typ) {
            self.expect(typ).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn array<const N: usize>(&mut self, typ: u8) -> Result<[u8; N], WireError> {
        self.expect(typ)?
            .try_into()
            .map_err(|_| WireError::Invalid("fixed-width field has wrong length"))
    }

    pub fn u8(&mut self, typ: u8) -> Result<u8, WireError> {
        Ok(self.array::<1>(typ)?[0])
    }

    pub fn u32(&mut self, typ: u8) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array(typ)?))
    }

    pub fn u64(&mut self, typ: u8) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array(typ)?))
    }

    pub fn i64(&mut self, typ: u8) -> Result<i64, WireError> {
        Ok(i64::from_be_bytes(self.array(typ)?))
    }

    pub fn str(&mut self, typ: u8) -> Result<&'a str, WireError> {
        std::str::from_utf8(self.expect(typ)?).map_err(|_| WireError::Invalid("string is not UTF-8"))
    }

    pub fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.buf.len()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn envelope_round_trip_and_strictness() {
        let body = TlvWriter::new().bytes(1, &[7; 16]).u32(2, 9).i64(3, -5).finish();
        let msg = envelope(0x10, &body);
        assert_eq!(&msg[..3], &[0x10, 0, body.len() as u8]);
        let (typ, inner) = open_envelope(&msg).unwrap();
        assert_eq!(typ, 0x10);
        let mut r = TlvReader::new(inner);
        assert_eq!(r.array::<16>(1).unwrap(), [7; 16]);
        assert_eq!(r.u32(2).unwrap(), 9);
        assert_eq!(r.i64(3).unwrap(), -5);
        r.finish().unwrap();

        let mut trailing = msg.clone();
        trailing.push(0);
        assert_eq!(open_envelope(&trailing), Err(WireError::Trailing(1)));
        assert_eq!(open_envelope(&msg[..msg.len() - 1]), Err(WireError::Truncated));
    }

    #[test]
    fn wrong_type_and_width_rejected() {
        let body = TlvWriter::new().u64(4, 1).finish();
        assert_eq!(
            TlvReader::new(&body).u64(5),
            Err(WireError::UnexpectedType { expected: 5, found: 4 })
        );
        assert!(TlvReader::new(&body).u32(4).is_err());
    }

    proptest! {
        #[test]
        fn any_truncation_fails(fields in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 1..5), cut in 1usize..20) {
            let mut w = TlvWriter::new();
            for (i, f) in fields.iter().enumerate() {
                w.bytes(i as u8, f);
            }
            let msg = envelope(0x20, &w.finish());
            let cut = cut.min(msg.len());
            prop_assert!(open_envelope(&msg[..msg.len() - cut]).is_err());
        }
    }
}
