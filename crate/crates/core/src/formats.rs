//! Little-endian binary containers: IMGF frames and STMP stamp sets.
//!
//! Both start with a 4-byte magic and a `u32` version. Parse failures carry
//! the byte offset where decoding stopped.

use std::fs;
use std::path::Path;

use crate::error::{ParseError, Result, Section};
use crate::stamps::{FrameKind, ImageFrame, Label, Stamp, StampOrigin, STAMP_PIXELS};

pub const FRAME_MAGIC: [u8; 4] = *b"IMGF";
pub const FRAME_VERSION: u32 = 1;
pub const STAMPS_MAGIC: [u8; 4] = *b"STMP";
pub const STAMPS_VERSION: u32 = 1;

/// Bytes per STMP record: pixels, magnitude, x, y, frame id, label.
pub const STAMP_RECORD_BYTES: usize = STAMP_PIXELS * 4 + 4 * 4 + 1;

/// Cursor over a byte slice that reports failures with their offset.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, section: Section) -> Result<&'a [u8], ParseError> {
        if self.remaining() < n {
            return Err(ParseError::Truncated {
                section,
                offset: self.offset(),
                expected: n as u64,
                actual: self.remaining() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<(), ParseError> {
        let avail = self.remaining().min(4);
        let found = &self.buf[self.pos..self.pos + avail];
        if found != expected {
            return Err(ParseError::BadMagic {
                offset: self.offset(),
                expected,
                found: found.to_vec(),
            });
        }
        self.pos += 4;
        Ok(())
    }

    pub fn version(&mut self, supported: u32) -> Result<u32, ParseError> {
        let offset = self.offset();
        let v = self.u32(Section::Version)?;
        if v != supported {
            return Err(ParseError::UnsupportedVersion {
                offset,
                found: v,
                supported,
            });
        }
        Ok(v)
    }

    pub fn u8(&mut self, section: Section) -> Result<u8, ParseError> {
        Ok(self.take(1, section)?[0])
    }

    pub fn u32(&mut self, section: Section) -> Result<u32, ParseError> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, section: Section) -> Result<u64, ParseError> {
        let b = self.take(8, section)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self, section: Section) -> Result<f32, ParseError> {
        let b = self.take(4, section)?;
        Ok(f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn f32_vec(&mut self, count: usize, section: Section) -> Result<Vec<f32>, ParseError> {
        let bytes = count
            .checked_mul(4)
            .filter(|&n| n <= self.remaining())
            .ok_or(ParseError::Truncated {
                section,
                offset: self.offset(),
                expected: (count as u64).saturating_mul(4),
                actual: self.remaining() as u64,
            })?;
        let raw = self.take(bytes, section)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    /// u64 element count followed by that many f32 values.
    pub fn counted_f32(&mut self, section: Section) -> Result<Vec<f32>, ParseError> {
        let count = self.u64(section)?;
        let count = usize::try_from(count).map_err(|_| ParseError::Invalid {
            section,
            offset: self.offset() - 8,
            reason: format!("element count {count} does not fit in memory"),
        })?;
        self.f32_vec(count, section)
    }

    pub fn invalid(&self, section: Section, offset: u64, reason: impl Into<String>) -> ParseError {
        ParseError::Invalid {
            section,
            offset,
            reason: reason.into(),
        }
    }

    pub fn finish(self) -> Result<(), ParseError> {
        if self.remaining() > 0 {
            return Err(ParseError::TrailingBytes {
                offset: self.offset(),
                extra: self.remaining() as u64,
            });
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_counted_f32(out: &mut Vec<u8>, values: &[f32]) {
    put_u64(out, values.len() as u64);
    put_f32s(out, values);
}

pub fn encode_frame(frame: &ImageFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(25 + frame.pixels().len() * 4);
    out.extend_from_slice(&FRAME_MAGIC);
    put_u32(&mut out, FRAME_VERSION);
    put_u32(&mut out, frame.width() as u32);
    put_u32(&mut out, frame.height() as u32);
    out.extend_from_slice(&frame.pixel_scale.to_le_bytes());
    out.extend_from_slice(&frame.zero_point.to_le_bytes());
    out.push(frame.kind.code());
    put_f32s(&mut out, frame.pixels());
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<ImageFrame> {
    let mut r = Reader::new(bytes);
    r.magic(FRAME_MAGIC)?;
    r.version(FRAME_VERSION)?;
    let header_at = r.offset();
    let width = r.u32(Section::Header)? as usize;
    let height = r.u32(Section::Header)? as usize;
    let pixel_scale = r.f32(Section::Header)?;
    let zero_point = r.f32(Section::Header)?;
    let kind_at = r.offset();
    let kind = r.u8(Section::Header)?;
    let kind = FrameKind::from_code(kind)
        .ok_or_else(|| r.invalid(Section::Header, kind_at, format!("unknown frame kind {kind}")))?;
    if width == 0 || height == 0 {
        return Err(r.invalid(Section::Header, header_at, format!("empty {width}x{height} frame")).into());
    }
    if !(pixel_scale > 0.0) || !pixel_scale.is_finite() || !zero_point.is_finite() {
        return Err(r
            .invalid(
                Section::Header,
                header_at + 8,
                format!("bad calibration: pixel scale {pixel_scale}, zero point {zero_point}"),
            )
            .into());
    }
    let pixels = r.f32_vec(width.saturating_mul(height), Section::Pixels)?;
    r.finish()?;
    ImageFrame::with_calibration(width, height, pixels, kind, pixel_scale, zero_point)
}

pub fn encode_stamps(stamps: &[Stamp]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + stamps.len() * STAMP_RECORD_BYTES);
    out.extend_from_slice(&STAMPS_MAGIC);
    put_u32(&mut out, STAMPS_VERSION);
    put_u64(&mut out, stamps.len() as u64);
    for s in stamps {
        put_f32s(&mut out, s.pixels());
        let o = &s.origin;
        put_f32s(&mut out, &[o.magnitude, o.x, o.y]);
        put_u32(&mut out, o.frame_id);
        out.push(s.label.code());
    }
    out
}

pub fn decode_stamps(bytes: &[u8]) -> Result<Vec<Stamp>> {
    let mut r = Reader::new(bytes);
    r.magic(STAMPS_MAGIC)?;
    r.version(STAMPS_VERSION)?;
    let count = r.u64(Section::Header)?;
    let needed = count.saturating_mul(STAMP_RECORD_BYTES as u64);
    if needed > r.remaining() as u64 {
        return Err(ParseError::Truncated {
            section: Section::Record,
            offset: r.offset(),
            expected: needed,
            actual: r.remaining() as u64,
        }
        .into());
    }
    let mut stamps = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = r.offset();
        let pixels = r.f32_vec(STAMP_PIXELS, Section::Record)?;
        let magnitude = r.f32(Section::Record)?;
        let x = r.f32(Section::Record)?;
        let y = r.f32(Section::Record)?;
        let frame_id = r.u32(Section::Record)?;
        let label_at = r.offset();
        let code = r.u8(Section::Record)?;
        let label = Label::from_code(code)
            .ok_or_else(|| r.invalid(Section::Record, label_at, format!("unknown label code {code}")))?;
        let origin = StampOrigin {
            x,
            y,
            magnitude,
            frame_id,
        };
        let stamp = Stamp::new(pixels, origin, label)
            .map_err(|e| r.invalid(Section::Record, at, e.to_string()))?;
        stamps.push(stamp);
    }
    r.finish()?;
    Ok(stamps)
}

pub fn save_frame(path: impl AsRef<Path>, frame: &ImageFrame) -> Result<()> {
    fs::write(path, encode_frame(frame))?;
    Ok(())
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<ImageFrame> {
    decode_frame(&fs::read(path)?)
}

pub fn save_stamps(path: impl AsRef<Path>, stamps: &[Stamp]) -> Result<()> {
    fs::write(path, encode_stamps(stamps))?;
    Ok(())
}

pub fn load_stamps(path: impl AsRef<Path>) -> Result<Vec<Stamp>> {
    decode_stamps(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn stamp(v: f32, label: Label) -> Stamp {
        let origin = StampOrigin {
            x: 60.5,
            y: 70.25,
            magnitude: 17.0,
            frame_id: 3,
        };
        Stamp::new(vec![v; STAMP_PIXELS], origin, label).unwrap()
    }

    #[test]
    fn frame_header_layout() {
        let f = ImageFrame::zeros(3, 2, FrameKind::Reference);
        let b = encode_frame(&f);
        assert_eq!(&b[..4], b"IMGF");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &3u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.2f32.to_le_bytes());
        assert_eq!(&b[20..24], &25.0f32.to_le_bytes());
        assert_eq!(b[24], 1);
        assert_eq!(b.len(), 25 + 6 * 4);
        assert_eq!(decode_frame(&b).unwrap(), f);
    }

    #[test]
    fn stamp_record_layout() {
        let b = encode_stamps(&[stamp(0.25, Label::Real)]);
        assert_eq!(b.len(), 16 + STAMP_RECORD_BYTES);
        assert_eq!(&b[8..16], &1u64.to_le_bytes());
        let tail = &b[16 + 4096..];
        assert_eq!(&tail[..4], &17.0f32.to_le_bytes());
        assert_eq!(&tail[4..8], &60.5f32.to_le_bytes());
        assert_eq!(&tail[8..12], &70.25f32.to_le_bytes());
        assert_eq!(&tail[12..16], &3u32.to_le_bytes());
        assert_eq!(tail[16], 1);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut b = encode_stamps(&[stamp(0.5, Label::Bogus)]);
        b[0] = b'X';
        match decode_stamps(&b) {
            Err(Error::Parse(p @ ParseError::BadMagic { .. })) => assert_eq!(p.offset(), 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_names_lengths() {
        let b = encode_stamps(&[stamp(0.5, Label::Bogus), stamp(0.1, Label::Unlabeled)]);
        let cut = &b[..b.len() - 10];
        match decode_stamps(cut) {
            Err(Error::Parse(ParseError::Truncated { expected, actual, .. })) => {
                assert_eq!(expected, 2 * STAMP_RECORD_BYTES as u64);
                assert_eq!(actual, 2 * STAMP_RECORD_BYTES as u64 - 10);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_label_and_trailing_bytes() {
        let mut b = encode_stamps(&[stamp(0.5, Label::Real)]);
        let last = b.len() - 1;
        b[last] = 7;
        assert!(matches!(
            decode_stamps(&b),
            Err(Error::Parse(ParseError::Invalid { section: Section::Record, .. }))
        ));
        let mut b = encode_stamps(&[]);
        b.push(0);
        assert!(matches!(
            decode_stamps(&b),
            Err(Error::Parse(ParseError::TrailingBytes { offset: 16, extra: 1 }))
        ));
    }

    #[test]
    fn unnormalized_pixels_rejected() {
        let mut b = encode_stamps(&[stamp(0.5, Label::Real)]);
        b[16..20].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_stamps(&b), Err(Error::Parse(ParseError::Invalid { offset: 16, .. }))));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut b = encode_frame(&ImageFrame::zeros(1, 1, FrameKind::Science));
        b[4] = 9;
        assert!(matches!(
            decode_frame(&b),
            Err(Error::Parse(ParseError::UnsupportedVersion { offset: 4, found: 9, .. }))
        ));
    }
}
