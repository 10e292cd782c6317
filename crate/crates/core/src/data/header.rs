use crate::error::{Error, Result};

/// Byte cursor for header tokens.
pub(crate) struct Header<'a> {
    bytes: &'a [u8],
    pub pos: usize,
    comments: bool,
}

impl<'a> Header<'a> {
    pub fn new(bytes: &'a [u8], comments: bool) -> Self {
        Header { bytes, pos: 0, comments }
    }

    fn skip_space(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.comments && self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    /// Next whitespace-delimited token; consumes exactly one trailing
    /// whitespace byte.
    pub fn token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("missing {what}")));
        }
        let bytes: &'a [u8] = self.bytes;
        let tok = std::str::from_utf8(&bytes[start..self.pos])
            .map_err(|_| Error::parse(start, format!("{what} is not ASCII")))?;
        if self.pos >= self.bytes.len() {
            return Err(Error::parse(self.pos, format!("header ends after {what}")));
        }
        self.pos += 1;
        Ok((start, tok))
    }

    pub fn number<V: std::str::FromStr>(&mut self, what: &str) -> Result<(usize, V)> {
        let (at, tok) = self.token(what)?;
        let v = tok.parse().map_err(|_| Error::parse(at, format!("bad {what} {tok:?}")))?;
        Ok((at, v))
    }
}
