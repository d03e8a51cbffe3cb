//! Byte-wise rANS over 16-bit frequency tables.
//!
//! Stream layout: symbol count (u32 LE), final encoder state (u32 LE), then
//! the renormalisation bytes in the order the decoder consumes them.

use crate::error::{Error, Result};

use super::cdf::{CdfTable, PRECISION, TOTAL};

/// Lower bound of the normalised state interval.
pub const STATE_LOWER: u32 = 1 << 16;
/// Bytes before the renormalisation payload.
pub const HEADER_BYTES: usize = 8;

/// Encodes `symbols[i]` with `tables[contexts[i]]`.
pub fn encode(symbols: &[i32], contexts: &[usize], tables: &[CdfTable]) -> Result<Vec<u8>> {
    if symbols.len() != contexts.len() {
        return Err(Error::Encoding(format!(
            "{} symbols but {} context indices",
            symbols.len(),
            contexts.len()
        )));
    }
    let count = u32::try_from(symbols.len()).map_err(|_| Error::Encoding("stream longer than 2^32 symbols".into()))?;
    let mut x = STATE_LOWER;
    let mut out = Vec::with_capacity(symbols.len() / 2 + HEADER_BYTES);
    for (i, (&s, &ctx)) in symbols.iter().zip(contexts).enumerate().rev() {
        let table = tables
            .get(ctx)
            .ok_or_else(|| Error::Encoding(format!("symbol {i}: context {ctx} has no table")))?;
        let idx = table
            .index_of(s)
            .ok_or_else(|| Error::Encoding(format!("symbol {i} = {s} outside the table support")))?;
        let start = table.cdf()[idx];
        let freq = table.cdf()[idx + 1] - start;
        if freq == 0 {
            return Err(Error::Encoding(format!("symbol {i} = {s} has zero frequency")));
        }
        let x_max = ((STATE_LOWER >> PRECISION) << 8) * freq;
        while x >= x_max {
            out.push((x & 0xff) as u8);
            x >>= 8;
        }
        x = ((x / freq) << PRECISION) + (x % freq) + start;
    }
    out.reverse();
    let mut stream = Vec::with_capacity(out.len() + HEADER_BYTES);
    stream.extend_from_slice(&count.to_le_bytes());
    stream.extend_from_slice(&x.to_le_bytes());
    stream.extend_from_slice(&out);
    Ok(stream)
}

/// Number of symbols announced by a stream header.
pub fn symbol_count(bytes: &[u8]) -> Result<usize> {
    let head = bytes.get(..4).ok_or_else(|| Error::Decoding {
        offset: bytes.len(),
        message: "stream shorter than its header".into(),
    })?;
    Ok(u32::from_le_bytes(head.try_into().expect("4 bytes")) as usize)
}

/// Decodes a stream; `contexts` gives the table for each position and its
/// length must equal the announced count.
pub fn decode(bytes: &[u8], contexts: &[usize], tables: &[CdfTable]) -> Result<Vec<i32>> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Decoding {
            offset: bytes.len(),
            message: "stream shorter than its header".into(),
        });
    }
    let count = symbol_count(bytes)?;
    if count != contexts.len() {
        return Err(Error::Decoding {
            offset: 0,
            message: format!("stream holds {count} symbols, {} expected", contexts.len()),
        });
    }
    let mut x = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if x < STATE_LOWER {
        return Err(Error::Decoding {
            offset: 4,
            message: "initial state below the normalisation bound".into(),
        });
    }
    let mut pos = HEADER_BYTES;
    let mut out = Vec::with_capacity(count);
    for (i, &ctx) in contexts.iter().enumerate() {
        let table = tables.get(ctx).ok_or_else(|| Error::Decoding {
            offset: pos,
            message: format!("symbol {i}: context {ctx} has no table"),
        })?;
        let slot = x & (TOTAL - 1);
        let idx = table.slot_to_index(slot);
        let start = table.cdf()[idx];
        let freq = table.cdf()[idx + 1] - start;
        x = freq * (x >> PRECISION) + slot - start;
        while x < STATE_LOWER {
            let b = *bytes.get(pos).ok_or_else(|| Error::Decoding {
                offset: pos,
                message: format!("stream truncated while decoding symbol {i}"),
            })?;
            x = (x << 8) | b as u32;
            pos += 1;
        }
        out.push(table.symbol_at(idx));
    }
    if x != STATE_LOWER {
        return Err(Error::Decoding {
            offset: pos,
            message: "final state mismatch".into(),
        });
    }
    if pos != bytes.len() {
        return Err(Error::Decoding {
            offset: pos,
            message: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    Ok(out)
}

/// Flat-buffer entry point: `tables` holds `tables.len() / row_len` rows of
/// cumulative frequencies, each covering symbols
/// `min_symbol..min_symbol + row_len - 1`.
pub fn encode_flat(
    symbols: &[i32],
    contexts: &[u32],
    tables: &[u32],
    row_len: usize,
    min_symbol: i32,
) -> Result<Vec<u8>> {
    let rows = flat_rows(tables, row_len, min_symbol).map_err(Error::Encoding)?;
    let ctx: Vec<usize> = contexts.iter().map(|&c| c as usize).collect();
    encode(symbols, &ctx, &rows)
}

/// Inverse of [`encode_flat`].
pub fn decode_flat(
    bytes: &[u8],
    contexts: &[u32],
    tables: &[u32],
    row_len: usize,
    min_symbol: i32,
) -> Result<Vec<i32>> {
    let rows = flat_rows(tables, row_len, min_symbol).map_err(|message| Error::Decoding { offset: 0, message })?;
    let ctx: Vec<usize> = contexts.iter().map(|&c| c as usize).collect();
    decode(bytes, &ctx, &rows)
}

fn flat_rows(tables: &[u32], row_len: usize, min_symbol: i32) -> std::result::Result<Vec<CdfTable>, String> {
    if row_len < 2 || tables.len() % row_len != 0 {
        return Err(format!("{} table entries do not form rows of {row_len}", tables.len()));
    }
    tables
        .chunks_exact(row_len)
        .map(|row| CdfTable::from_cdf(min_symbol, row.to_vec()).map_err(|e| e.to_string()))
        .collect()
}

/// Flattens tables of equal support into one buffer.
pub fn flatten(tables: &[CdfTable]) -> Vec<u32> {
    tables.iter().flat_map(|t| t.cdf().iter().copied()).collect()
}
