//! Per-frame bitstream container.
//!
//! ```text
//! "MVRC"  u16 version = 1  u32 width  u32 height  u8 q  u8 flags
//! u32 len_z, len_z bytes   (hyper latent payload)
//! u32 len_y, len_y bytes   (latent payload)
//! u32 CRC-32 of the z payload followed by the y payload
//! ```
//!
//! All integers are little-endian. Width and height are the true frame size
//! before padding.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MVRC";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1 + 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub width: u32,
    pub height: u32,
    pub quality: u8,
    pub flags: u8,
    pub z_payload: Vec<u8>,
    pub y_payload: Vec<u8>,
}

fn checksum(z: &[u8], y: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(z);
    h.update(y);
    h.finalize()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, container has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 12 + self.z_payload.len() + self.y_payload.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.quality);
        out.push(self.flags);
        out.extend_from_slice(&(self.z_payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.z_payload);
        out.extend_from_slice(&(self.y_payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.y_payload);
        out.extend_from_slice(&checksum(&self.z_payload, &self.y_payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion { expected: VERSION as u32, found: version as u32 });
        }
        let width = r.u32("width")?;
        let height = r.u32("height")?;
        let quality = r.take(1, "quality")?[0];
        let flags = r.take(1, "flags")?[0];
        let len_z = r.u32("z length")? as usize;
        let z_payload = r.take(len_z, "z payload")?.to_vec();
        let len_y = r.u32("y length")? as usize;
        let y_payload = r.take(len_y, "y payload")?.to_vec();
        let expected = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after container", bytes.len() - r.pos)));
        }
        let actual = checksum(&z_payload, &y_payload);
        if expected != actual {
            return Err(Error::Checksum { expected, actual });
        }
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::Format(format!("invalid frame size {width}x{height} in header")));
        }
        Ok(Self { width, height, quality, flags, z_payload, y_payload })
    }
}
