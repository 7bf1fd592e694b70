//! 16-bit single-channel depth frames and their PNG encoding.

use std::io::Cursor;
use std::path::Path;

use crate::error::{DataError, Error, Result};

/// Depth in millimetres, row-major; 0 marks masked background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<u16>,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, depth: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || depth.len() != width * height {
            return Err(Error::shape(format!(
                "depth frame {width}x{height} with {} pixels",
                depth.len()
            )));
        }
        Ok(DepthFrame { width, height, depth })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        DepthFrame {
            width,
            height,
            depth: vec![0; width * height],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.depth[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u16) {
        self.depth[row * self.width + col] = value;
    }
}

/// Decodes a 16-bit grayscale PNG without any sample conversion.
pub fn decode_frame(bytes: &[u8]) -> Result<DepthFrame, DataError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| DataError::Malformed(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(DataError::ColorType(format!("{:?}", info.color_type)));
    }
    if info.bit_depth != png::BitDepth::Sixteen {
        return Err(DataError::BitDepth {
            found: info.bit_depth as u8,
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DataError::Malformed("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| DataError::Malformed(e.to_string()))?;
    let (width, height) = (out.width as usize, out.height as usize);
    let depth: Vec<u16> = buf[..out.buffer_size()]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    if depth.len() != width * height {
        return Err(DataError::Malformed(format!(
            "{} samples for a {width}x{height} image",
            depth.len()
        )));
    }
    Ok(DepthFrame { width, height, depth })
}

pub fn encode_frame(frame: &DepthFrame) -> Vec<u8> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, frame.width as u32, frame.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let bytes: Vec<u8> = frame.depth.iter().flat_map(|v| v.to_be_bytes()).collect();
    let mut writer = encoder.write_header().expect("in-memory header write");
    writer.write_image_data(&bytes).expect("in-memory image write");
    writer.finish().expect("in-memory finish");
    out
}

pub fn read_frame(path: &Path) -> Result<DepthFrame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frame(&bytes).map_err(|e| match e {
        DataError::Malformed(msg) => DataError::Malformed(format!("{}: {msg}", path.display())).into(),
        other => other.into(),
    })
}

pub fn write_frame(path: &Path, frame: &DepthFrame) -> Result<()> {
    std::fs::write(path, encode_frame(frame)).map_err(|e| Error::io(path, e))
}
