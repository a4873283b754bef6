//! Raw image format for images too large for portable formats.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `GSRAWIMG`                        |
//! | 8      | 4    | version (1)                             |
//! | 12     | 4    | channels                                |
//! | 16     | 4    | height                                  |
//! | 20     | 4    | width                                   |
//! | 24     | 1    | element kind: 0 = u8, 1 = f32           |
//! | 25     | 3    | reserved, zero                          |
//! | 28     | ...  | payload, rows top to bottom, channels interleaved |

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pipeline::{Raster, RowSink, RowSource};
use crate::tensor::{Shape, Tensor};

pub const RAW_MAGIC: [u8; 8] = *b"GSRAWIMG";
pub const RAW_VERSION: u32 = 1;
pub const RAW_HEADER_LEN: u64 = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    U8,
    F32,
}

impl ElementKind {
    pub fn width(self) -> usize {
        match self {
            ElementKind::U8 => 1,
            ElementKind::F32 => 4,
        }
    }

    fn code(self) -> u8 {
        match self {
            ElementKind::U8 => 0,
            ElementKind::F32 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawImageHeader {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
    pub kind: ElementKind,
}

impl RawImageHeader {
    pub fn row_bytes(&self) -> u64 {
        self.channels as u64 * self.width as u64 * self.kind.width() as u64
    }

    pub fn payload_bytes(&self) -> u64 {
        self.row_bytes() * self.height as u64
    }

    pub fn encode(&self) -> [u8; RAW_HEADER_LEN as usize] {
        let mut out = [0u8; RAW_HEADER_LEN as usize];
        out[..8].copy_from_slice(&RAW_MAGIC);
        out[8..12].copy_from_slice(&RAW_VERSION.to_le_bytes());
        out[12..16].copy_from_slice(&self.channels.to_le_bytes());
        out[16..20].copy_from_slice(&self.height.to_le_bytes());
        out[20..24].copy_from_slice(&self.width.to_le_bytes());
        out[24] = self.kind.code();
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RAW_HEADER_LEN as usize {
            return Err(Error::Truncated {
                path: path.into(),
                expected: RAW_HEADER_LEN,
                actual: bytes.len() as u64,
            });
        }
        if bytes[..8] != RAW_MAGIC {
            return Err(Error::format(path, "not a raw image (bad magic)"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = u32_at(8);
        if version != RAW_VERSION {
            return Err(Error::format(path, format!("unsupported raw image version {version}")));
        }
        let kind = match bytes[24] {
            0 => ElementKind::U8,
            1 => ElementKind::F32,
            k => return Err(Error::format(path, format!("unknown element kind {k}"))),
        };
        let header = RawImageHeader {
            channels: u32_at(12),
            height: u32_at(16),
            width: u32_at(20),
            kind,
        };
        if header.channels == 0 || header.height == 0 || header.width == 0 {
            return Err(Error::format(path, "zero dimension in header"));
        }
        header.checked_payload(path)?;
        Ok(header)
    }

    /// Payload size, failing when it cannot be addressed on this machine.
    fn checked_payload(&self, path: &Path) -> Result<usize> {
        (self.channels as usize)
            .checked_mul(self.height as usize)
            .and_then(|v| v.checked_mul(self.width as usize))
            .and_then(|v| v.checked_mul(self.kind.width()))
            .ok_or_else(|| Error::format(path, "dimensions overflow the address space"))
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Streaming reader: checks the header against the file size on open and
/// then serves any band of rows.
#[derive(Debug)]
pub struct RawReader {
    path: PathBuf,
    file: File,
    header: RawImageHeader,
}

impl RawReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = open(path)?;
        let mut head = Vec::with_capacity(RAW_HEADER_LEN as usize);
        (&mut file)
            .take(RAW_HEADER_LEN)
            .read_to_end(&mut head)
            .map_err(|e| Error::io(path, e))?;
        let header = RawImageHeader::decode(path, &head)?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let expected = RAW_HEADER_LEN + header.payload_bytes();
        if len != expected {
            return Err(Error::Truncated {
                path: path.into(),
                expected,
                actual: len,
            });
        }
        Ok(RawReader {
            path: path.into(),
            file,
            header,
        })
    }

    pub fn header(&self) -> RawImageHeader {
        self.header
    }

    /// Reads rows `y0 .. y0 + rows` as raw payload bytes.
    pub fn read_row_bytes(&mut self, y0: usize, rows: usize, buf: &mut Vec<u8>) -> Result<()> {
        if y0 + rows > self.header.height as usize {
            return Err(Error::format(
                &self.path,
                format!("rows {y0}..{} out of range (height {})", y0 + rows, self.header.height),
            ));
        }
        let rb = self.header.row_bytes();
        buf.resize(rows * rb as usize, 0);
        self.file
            .seek(SeekFrom::Start(RAW_HEADER_LEN + y0 as u64 * rb))
            .map_err(|e| Error::io(&self.path, e))?;
        self.file.read_exact(buf).map_err(|e| Error::io(&self.path, e))
    }

    /// The whole image as an 8-bit raster.
    pub fn read_raster(&mut self) -> Result<Raster> {
        self.expect_kind(ElementKind::U8)?;
        let h = &self.header;
        let (c, rows, w) = (h.channels as usize, h.height as usize, h.width as usize);
        let mut data = Vec::new();
        self.read_row_bytes(0, rows, &mut data)?;
        Raster::from_vec(c, rows, w, data)
    }

    /// The whole image as a `1xCxHxW` tensor.
    pub fn read_tensor(&mut self) -> Result<Tensor<f32>> {
        self.expect_kind(ElementKind::F32)?;
        let h = self.header;
        let (c, rows, w) = (h.channels as usize, h.height as usize, h.width as usize);
        let mut bytes = Vec::new();
        self.read_row_bytes(0, rows, &mut bytes)?;
        let shape = Shape::new(1, c, rows, w)?;
        let mut t = Tensor::<f32>::zeros(shape);
        let out = t.data_mut();
        let plane = rows * w;
        for (i, v) in bytes.chunks_exact(4).enumerate() {
            let (pix, ch) = (i / c, i % c);
            out[ch * plane + pix] = f32::from_le_bytes(v.try_into().expect("4 bytes"));
        }
        Ok(t)
    }

    fn expect_kind(&self, kind: ElementKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::format(
                &self.path,
                format!("holds {:?} elements, expected {kind:?}", self.header.kind),
            ));
        }
        Ok(())
    }
}

impl RowSource for RawReader {
    fn channels(&self) -> usize {
        self.header.channels as usize
    }
    fn height(&self) -> usize {
        self.header.height as usize
    }
    fn width(&self) -> usize {
        self.header.width as usize
    }
    fn read_rows(&mut self, y0: usize, rows: usize, buf: &mut Vec<u8>) -> Result<()> {
        self.expect_kind(ElementKind::U8)?;
        self.read_row_bytes(y0, rows, buf)
    }
}

/// Streaming writer; [`RawWriter::finish`] checks that every row arrived.
#[derive(Debug)]
pub struct RawWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: RawImageHeader,
    written: u64,
}

impl RawWriter {
    pub fn create(path: impl AsRef<Path>, header: RawImageHeader) -> Result<Self> {
        let path = path.as_ref();
        header.checked_payload(path)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        out.write_all(&header.encode()).map_err(|e| Error::io(path, e))?;
        Ok(RawWriter {
            path: path.into(),
            out,
            header,
            written: 0,
        })
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        if self.written + bytes.len() as u64 > self.header.payload_bytes() {
            return Err(Error::format(&self.path, "more payload than the header declares"));
        }
        self.out.write_all(bytes).map_err(|e| Error::io(&self.path, e))?;
        self.written += bytes.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.payload_bytes() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                expected: self.header.payload_bytes(),
                actual: self.written,
            });
        }
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl RowSink for RawWriter {
    fn write_rows(&mut self, rows: &[u8]) -> Result<()> {
        self.write_bytes(rows)
    }
}

fn dim(path: &Path, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(path, format!("dimension {v} exceeds the format limit")))
}

pub fn write_raw_raster(path: impl AsRef<Path>, img: &Raster) -> Result<()> {
    let path = path.as_ref();
    let header = RawImageHeader {
        channels: dim(path, img.channels)?,
        height: dim(path, img.height)?,
        width: dim(path, img.width)?,
        kind: ElementKind::U8,
    };
    let mut w = RawWriter::create(path, header)?;
    w.write_bytes(&img.data)?;
    w.finish()
}

pub fn read_raw_raster(path: impl AsRef<Path>) -> Result<Raster> {
    RawReader::open(path)?.read_raster()
}

/// Writes batch 0 of `t` as an f32 raw image.
pub fn write_raw_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let s = t.shape();
    let header = RawImageHeader {
        channels: dim(path, s.channels)?,
        height: dim(path, s.height)?,
        width: dim(path, s.width)?,
        kind: ElementKind::F32,
    };
    let mut w = RawWriter::create(path, header)?;
    let mut row = Vec::with_capacity(s.width * s.channels * 4);
    for y in 0..s.height {
        row.clear();
        for x in 0..s.width {
            for c in 0..s.channels {
                row.extend_from_slice(&t.get(0, c, y, x).to_le_bytes());
            }
        }
        w.write_bytes(&row)?;
    }
    w.finish()
}

pub fn read_raw_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    RawReader::open(path)?.read_tensor()
}
