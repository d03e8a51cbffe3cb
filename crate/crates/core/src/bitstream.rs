//! On-disk container: a fixed header followed by one record per frame.
//!
//! ```text
//! "LSTC" | version u8 | width u16 | height u16 | display_width u16
//!        | display_height u16 | frame_count u16 | lambda_index u8
//! per frame: type u8 (0 = I, 1 = P)
//!   I: u32 length | raw RGB24 of the padded frame
//!   P: 4 x (u32 length | rANS bytes)   motion hyper, motion, context hyper, context
//! ```
//! All integers little-endian.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"LSTC";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 16;
const TYPE_INTRA: u8 = 0;
const TYPE_INTER: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub width: u16,
    pub height: u16,
    pub display_width: u16,
    pub display_height: u16,
    pub frame_count: u16,
    pub lambda_index: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameRecord {
    Intra(Vec<u8>),
    /// Motion hyper, motion, context hyper, context.
    Inter([Vec<u8>; 4]),
}

impl FrameRecord {
    /// Serialized size including the type byte and length prefixes.
    pub fn byte_len(&self) -> usize {
        1 + match self {
            FrameRecord::Intra(b) => 4 + b.len(),
            FrameRecord::Inter(s) => s.iter().map(|b| 4 + b.len()).sum(),
        }
    }

    pub fn is_intra(&self) -> bool {
        matches!(self, FrameRecord::Intra(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub records: Vec<FrameRecord>,
}

impl Bitstream {
    pub fn byte_len(&self) -> usize {
        HEADER_BYTES + self.records.iter().map(FrameRecord::byte_len).sum::<usize>()
    }
}

fn push_segment(out: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| Error::Format("segment longer than 4 GiB".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(bytes);
    Ok(())
}

pub fn write_sequence(stream: &Bitstream) -> Result<Vec<u8>> {
    let h = &stream.header;
    if stream.records.len() != h.frame_count as usize {
        return Err(Error::Format(format!(
            "header declares {} frames but {} records are present",
            h.frame_count,
            stream.records.len()
        )));
    }
    let mut out = Vec::with_capacity(stream.byte_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    for v in [h.width, h.height, h.display_width, h.display_height, h.frame_count] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(h.lambda_index);
    for r in &stream.records {
        match r {
            FrameRecord::Intra(b) => {
                out.push(TYPE_INTRA);
                push_segment(&mut out, b)?;
            }
            FrameRecord::Inter(segs) => {
                out.push(TYPE_INTER);
                for s in segs {
                    push_segment(&mut out, s)?;
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    frame: Option<usize>,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::corrupt(
                self.frame,
                format!("need {n} bytes at offset {}, only {} remain", self.pos, self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn segment(&mut self) -> Result<Vec<u8>> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        Ok(self.take(len)?.to_vec())
    }
}

pub fn read_sequence(bytes: &[u8]) -> Result<Bitstream> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, not an LSTC stream".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let mut r = Reader { bytes, pos: 5, frame: None };
    let header = Header {
        width: r.u16()?,
        height: r.u16()?,
        display_width: r.u16()?,
        display_height: r.u16()?,
        frame_count: r.u16()?,
        lambda_index: r.u8()?,
    };
    let mut records = Vec::with_capacity(header.frame_count as usize);
    for i in 0..header.frame_count as usize {
        r.frame = Some(i);
        let rec = match r.u8()? {
            TYPE_INTRA => FrameRecord::Intra(r.segment()?),
            TYPE_INTER => FrameRecord::Inter([r.segment()?, r.segment()?, r.segment()?, r.segment()?]),
            t => return Err(Error::corrupt(Some(i), format!("unknown frame type {t}"))),
        };
        records.push(rec);
    }
    if r.pos != bytes.len() {
        return Err(Error::corrupt(
            None,
            format!("{} trailing bytes after the last frame", bytes.len() - r.pos),
        ));
    }
    Ok(Bitstream { header, records })
}

/// Container bits per display pixel per frame.
pub fn bpp_of(stream: &Bitstream) -> f64 {
    let h = &stream.header;
    let pixels = h.display_width as f64 * h.display_height as f64 * h.frame_count.max(1) as f64;
    stream.byte_len() as f64 * 8.0 / pixels
}
