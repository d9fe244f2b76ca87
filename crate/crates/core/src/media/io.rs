//! Byte-exact containers.
//!
//! | container | layout |
//! |-----------|--------|
//! | `.flo`    | `f32` 202021.25, `i32` width, `i32` height, row-major `(u, v)` `f32` pairs |
//! | SVLM      | `"SVLM"`, `u32` width/height/frames, row-major `u32` labels per frame |
//! | GCM1      | `"GCM1"`, `u32` width/height/frames, `u8` channel count, `f32` channels interleaved per voxel |
//! | PPM       | binary `P6`, maxval 255 |
//! | PBM       | binary `P4`, rows padded to whole bytes, 1 = set |
//!
//! All integers and floats are little-endian.  Every decoder validates the
//! header and the exact payload length before building any output.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::media::{
    BinaryMap, FlowDirection, FlowField, FrameSequence, GeometricContext, LabelVideo,
    ProbabilityVideo, RgbImage, GEOM_CLASSES,
};

pub const FLO_MAGIC: f32 = 202021.25;
pub const SVLM_MAGIC: &[u8; 4] = b"SVLM";
pub const GCM1_MAGIC: &[u8; 4] = b"GCM1";

/// Simplex tolerance applied when reading confidence containers.
pub const SIMPLEX_READ_TOL: f64 = 1e-4;

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Length {
                expected: self.pos + n,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Fails unless exactly `n` payload bytes remain.
    fn expect_remaining(&self, n: usize) -> Result<()> {
        let found = self.bytes.len();
        if found - self.pos != n {
            return Err(Error::Length {
                expected: self.pos + n,
                found,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- .flo

pub fn encode_flo(field: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + field.data.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width as i32).to_le_bytes());
    out.extend_from_slice(&(field.height as i32).to_le_bytes());
    for [u, v] in &field.data {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8], direction: FlowDirection) -> Result<FlowField> {
    let mut r = Reader::new(bytes);
    let magic = r.f32()?;
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!("bad .flo magic {magic}")));
    }
    let w = r.i32()?;
    let h = r.i32()?;
    if w <= 0 || h <= 0 {
        return Err(Error::Format(format!("bad .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    r.expect_remaining(w * h * 8)?;
    let mut data = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let u = r.f32()?;
        let v = r.f32()?;
        data.push([u, v]);
    }
    Ok(FlowField {
        width: w,
        height: h,
        direction,
        data,
    })
}

pub fn write_flo(field: &FlowField, path: &Path) -> Result<()> {
    write_bytes(path, &encode_flo(field))
}

pub fn read_flo(path: &Path, direction: FlowDirection) -> Result<FlowField> {
    decode_flo(&read_bytes(path)?, direction)
}

// ---------------------------------------------------------------- SVLM

pub fn encode_label_video(video: &LabelVideo) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + video.labels.len() * 4);
    out.extend_from_slice(SVLM_MAGIC);
    out.extend_from_slice(&(video.width as u32).to_le_bytes());
    out.extend_from_slice(&(video.height as u32).to_le_bytes());
    out.extend_from_slice(&(video.frames as u32).to_le_bytes());
    for l in &video.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_label_video(bytes: &[u8]) -> Result<LabelVideo> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != SVLM_MAGIC {
        return Err(Error::Format("bad SVLM magic".into()));
    }
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let f = r.u32()? as usize;
    if w == 0 || h == 0 || f == 0 {
        return Err(Error::Format(format!("bad SVLM dimensions {w}x{h}x{f}")));
    }
    let n = w * h * f;
    r.expect_remaining(n * 4)?;
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    LabelVideo::new(w, h, f, labels)
}

pub fn write_label_video(video: &LabelVideo, path: &Path) -> Result<()> {
    write_bytes(path, &encode_label_video(video))
}

pub fn read_label_video(path: &Path) -> Result<LabelVideo> {
    decode_label_video(&read_bytes(path)?)
}

// ---------------------------------------------------------------- GCM1

fn encode_gcm1(w: usize, h: usize, f: usize, channels: u8, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + values.len() * 4);
    out.extend_from_slice(GCM1_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.push(channels);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_gcm1(bytes: &[u8], channels: u8) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != GCM1_MAGIC {
        return Err(Error::Format("bad GCM1 magic".into()));
    }
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let f = r.u32()? as usize;
    let c = r.take(1)?[0];
    if w == 0 || h == 0 || f == 0 {
        return Err(Error::Format(format!("bad GCM1 dimensions {w}x{h}x{f}")));
    }
    if c != channels {
        return Err(Error::Format(format!(
            "GCM1 carries {c} channels, expected {channels}"
        )));
    }
    let n = w * h * f * c as usize;
    r.expect_remaining(n * 4)?;
    let values = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    Ok((w, h, f, values))
}

pub fn encode_confidence_video(geom: &GeometricContext) -> Vec<u8> {
    let flat: Vec<f32> = geom.data.iter().flatten().copied().collect();
    encode_gcm1(geom.width, geom.height, geom.frames, GEOM_CLASSES as u8, &flat)
}

pub fn decode_confidence_video(bytes: &[u8]) -> Result<GeometricContext> {
    let (width, height, frames, values) = decode_gcm1(bytes, GEOM_CLASSES as u8)?;
    let data = values
        .chunks_exact(GEOM_CLASSES)
        .map(|c| c.try_into().unwrap())
        .collect();
    let geom = GeometricContext {
        width,
        height,
        frames,
        data,
    };
    geom.validate(SIMPLEX_READ_TOL)?;
    Ok(geom)
}

pub fn write_confidence_video(geom: &GeometricContext, path: &Path) -> Result<()> {
    write_bytes(path, &encode_confidence_video(geom))
}

pub fn read_confidence_video(path: &Path) -> Result<GeometricContext> {
    decode_confidence_video(&read_bytes(path)?)
}

pub fn encode_probability_video(p: &ProbabilityVideo) -> Vec<u8> {
    encode_gcm1(p.width, p.height, p.frames, 1, &p.data)
}

pub fn decode_probability_video(bytes: &[u8]) -> Result<ProbabilityVideo> {
    let (width, height, frames, data) = decode_gcm1(bytes, 1)?;
    if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Validation(format!(
            "probability at voxel {i} outside [0,1]"
        )));
    }
    Ok(ProbabilityVideo {
        width,
        height,
        frames,
        data,
    })
}

pub fn write_probability_video(p: &ProbabilityVideo, path: &Path) -> Result<()> {
    write_bytes(path, &encode_probability_video(p))
}

pub fn read_probability_video(path: &Path) -> Result<ProbabilityVideo> {
    decode_probability_video(&read_bytes(path)?)
}

// ---------------------------------------------------------------- PNM

/// Parses a binary PNM header, returning `(width, height, maxval, data offset)`.
fn parse_pnm_header(bytes: &[u8], magic: &[u8; 2], has_maxval: bool) -> Result<(usize, usize, u32, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Format(format!(
            "expected {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let wanted = if has_maxval { 3 } else { 2 };
    let mut fields = Vec::with_capacity(wanted);
    while fields.len() < wanted {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PNM header".into()));
        }
        let v: u32 = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format("PNM header value out of range".into()))?;
        fields.push(v);
    }
    // exactly one whitespace byte before the raster
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing PNM raster separator".into())),
    }
    let (w, h) = (fields[0] as usize, fields[1] as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format(format!("bad PNM dimensions {w}x{h}")));
    }
    let maxval = if has_maxval { fields[2] } else { 1 };
    Ok((w, h, maxval, pos))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (w, h, maxval, off) = parse_pnm_header(bytes, b"P6", true)?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    let n = w * h * 3;
    if bytes.len() - off != n {
        return Err(Error::Length {
            expected: off + n,
            found: bytes.len(),
        });
    }
    RgbImage::from_raw(w, h, bytes[off..].to_vec())
}

pub fn encode_pbm(map: &BinaryMap) -> Vec<u8> {
    let mut out = format!("P4\n{} {}\n", map.width, map.height).into_bytes();
    let row_bytes = map.width.div_ceil(8);
    for y in 0..map.height {
        let mut row = vec![0u8; row_bytes];
        for x in 0..map.width {
            if map.get(x, y) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

pub fn decode_pbm(bytes: &[u8]) -> Result<BinaryMap> {
    let (w, h, _, off) = parse_pnm_header(bytes, b"P4", false)?;
    let row_bytes = w.div_ceil(8);
    if bytes.len() - off != row_bytes * h {
        return Err(Error::Length {
            expected: off + row_bytes * h,
            found: bytes.len(),
        });
    }
    let mut map = BinaryMap::new(w, h);
    for y in 0..h {
        let row = &bytes[off + y * row_bytes..off + (y + 1) * row_bytes];
        for x in 0..w {
            map.set(x, y, row[x / 8] & (0x80 >> (x % 8)) != 0);
        }
    }
    Ok(map)
}

pub fn indexed_name(index: usize, ext: &str) -> String {
    format!("frame_{index:05}.{ext}")
}

/// Writes `frame_00000.ppm`, `frame_00001.ppm`, ... into `dir`.
pub fn write_frames(frames: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.frames.iter().enumerate() {
        write_bytes(&dir.join(indexed_name(i, "ppm")), &encode_ppm(f))?;
    }
    Ok(())
}

/// Collects `frame_%05d.<ext>` files in `dir`, which must be numbered
/// contiguously from zero.
pub(crate) fn indexed_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(dir.display().to_string()));
    }
    let mut files = Vec::new();
    loop {
        let p = dir.join(indexed_name(files.len(), ext));
        if !p.is_file() {
            break;
        }
        files.push(p);
    }
    Ok(files)
}

pub fn read_frames(dir: &Path) -> Result<FrameSequence> {
    let files = indexed_files(dir, "ppm")?;
    let frames = files
        .iter()
        .map(|p| decode_ppm(&read_bytes(p)?))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

pub fn write_flow_dir(fields: &[FlowField], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in fields.iter().enumerate() {
        write_flo(f, &dir.join(indexed_name(i, "flo")))?;
    }
    Ok(())
}

pub fn read_flow_dir(dir: &Path, direction: FlowDirection) -> Result<Vec<FlowField>> {
    indexed_files(dir, "flo")?
        .iter()
        .map(|p| read_flo(p, direction))
        .collect()
}

pub fn write_pbm_dir(maps: &[BinaryMap], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, m) in maps.iter().enumerate() {
        write_bytes(&dir.join(indexed_name(i, "pbm")), &encode_pbm(m))?;
    }
    Ok(())
}
