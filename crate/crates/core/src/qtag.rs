//! Binary time-tag file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header, 22 bytes: magic "QTAG" | u16 version | u64 period_fs | u64 count
//! record, 24 bytes: u8 node | u8 channel | u8 kind | 5 zero bytes
//!                   | u64 slot | i64 offset_fs
//! ```
//!
//! Records carry 8-byte-aligned slot and offset fields, so each record pads
//! its 3 meaning-carrying header bytes to 8: readers of future versions can
//! claim the reserved bytes without reflowing the layout.

use crate::detector::TagKind;
use crate::error::{Error, Result};
use crate::timebase::{DurationFs, Timestamp};
use std::io::{Read, Write};

pub const MAGIC: [u8; 4] = *b"QTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;
pub const RECORD_LEN: usize = 24;

/// One recorded detection event with its provenance labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TagRecord {
    pub node_id: u8,
    pub channel_id: u8,
    pub kind: TagKind,
    pub tag: Timestamp,
}

/// Serialize a tag stream. The slot period is recorded in the header so a
/// reader can reconstruct absolute times without the generating config.
pub fn write_tags(w: &mut impl Write, period: DurationFs, records: &[TagRecord]) -> Result<()> {
    if period.value() <= 0 {
        return Err(Error::Config("tag file period must be positive".into()));
    }
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..14].copy_from_slice(&(period.value() as u64).to_le_bytes());
    header[14..22].copy_from_slice(&(records.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    for r in records {
        let mut rec = [0u8; RECORD_LEN];
        rec[0] = r.node_id;
        rec[1] = r.channel_id;
        rec[2] = r.kind as u8;
        rec[8..16].copy_from_slice(&r.tag.slot.to_le_bytes());
        rec[16..24].copy_from_slice(&r.tag.offset_fs.to_le_bytes());
        w.write_all(&rec)?;
    }
    Ok(())
}

/// Deserialize a tag stream written by [`write_tags`].
pub fn read_tags(r: &mut impl Read) -> Result<(DurationFs, Vec<TagRecord>)> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("tag file shorter than its 22-byte header".into()))?;
    if header[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected \"QTAG\"",
            &header[..4]
        )));
    }
    let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported tag file version {version}, expected {VERSION}"
        )));
    }
    let period_raw = u64::from_le_bytes(header[6..14].try_into().unwrap());
    if period_raw == 0 || period_raw > i64::MAX as u64 {
        return Err(Error::Format(format!(
            "invalid period {period_raw} fs in header"
        )));
    }
    let count = u64::from_le_bytes(header[14..22].try_into().unwrap());
    let mut records = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; RECORD_LEN];
    for i in 0..count {
        r.read_exact(&mut rec)
            .map_err(|_| Error::Format(format!("tag file truncated at record {i} of {count}")))?;
        let kind = TagKind::from_u8(rec[2])
            .ok_or_else(|| Error::Format(format!("unknown tag kind {} at record {i}", rec[2])))?;
        records.push(TagRecord {
            node_id: rec[0],
            channel_id: rec[1],
            kind,
            tag: Timestamp::new(
                u64::from_le_bytes(rec[8..16].try_into().unwrap()),
                i64::from_le_bytes(rec[16..24].try_into().unwrap()),
            ),
        });
    }
    // A well-formed stream ends exactly at the declared count.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format(format!(
            "trailing bytes after the {count} declared records"
        )));
    }
    Ok((DurationFs::fs(period_raw as i64), records))
}

pub fn write_tags_file(
    path: &std::path::Path,
    period: DurationFs,
    records: &[TagRecord],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tags(&mut f, period, records)?;
    use std::io::Write as _;
    f.flush()?;
    Ok(())
}

pub fn read_tags_file(path: &std::path::Path) -> Result<(DurationFs, Vec<TagRecord>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tags(&mut f)
}
