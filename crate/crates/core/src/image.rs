//! 8-bit image files to and from the float pipeline representation.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::{ops, Tensor};

/// Side length of the fixed-resolution proxy the grid network consumes.
pub const PROXY_SIZE: usize = 256;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("input not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("malformed image {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("unsupported bit depth {bits} in {path} (8-bit only)")]
    UnsupportedBitDepth { path: PathBuf, bits: u32 },
    #[error("grayscale image {0} is not supported (RGB required)")]
    Grayscale(PathBuf),
    #[error("unrecognized image format in {0} (expected PNG or binary PPM)")]
    UnknownFormat(PathBuf),
    #[error("image {height}x{width} is smaller than the 8x8 minimum")]
    TooSmall { height: usize, width: usize },
    #[error("invalid image tensor: {0}")]
    Invalid(String),
}

/// `3×H×W` float image with every value in `[0, 1]` and `H, W ≥ 8`.
#[derive(Clone, PartialEq, Debug)]
pub struct ImageRGB {
    pixels: Tensor<f32>,
}

impl ImageRGB {
    pub const MIN_SIDE: usize = 8;

    pub fn new(pixels: Tensor<f32>) -> Result<Self, ImageError> {
        let (c, h, w) = pixels.dims3("image").map_err(|e| ImageError::Invalid(e.to_string()))?;
        if c != 3 {
            return Err(ImageError::Invalid(format!("expected 3 channels, got {c}")));
        }
        if h < Self::MIN_SIDE || w < Self::MIN_SIDE {
            return Err(ImageError::TooSmall { height: h, width: w });
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Invalid(format!("value {v} outside [0, 1]")));
        }
        Ok(ImageRGB { pixels })
    }

    /// Clamp an arbitrary `3×H×W` tensor into `[0, 1]` (NaN maps to 0).
    pub fn from_tensor_clamped(t: &Tensor<f32>) -> Result<Self, ImageError> {
        Self::new(t.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self, ImageError> {
        let t = Tensor::from_fn(&[3, height, width], |i| {
            let (c, y, x) = (i / (height * width), (i / width) % height, i % width);
            f(c, y, x)
        })
        .map_err(|e| ImageError::Invalid(e.to_string()))?;
        Self::new(t)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self, ImageError> {
        Self::from_fn(height, width, |c, _, _| rgb[c])
    }

    /// Interleaved 8-bit RGB → float image, `v ↦ v / 255`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self, ImageError> {
        if rgb.len() != width * height * 3 {
            return Err(ImageError::Invalid(format!(
                "buffer of {} bytes does not hold {width}x{height} RGB pixels",
                rgb.len()
            )));
        }
        let hw = width * height;
        let mut data = vec![0.0f32; 3 * hw];
        for (p, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * hw + p] = f32::from(px[c]) / 255.0;
            }
        }
        let t = Tensor::new(&[3, height, width], data).map_err(|e| ImageError::Invalid(e.to_string()))?;
        Self::new(t)
    }

    /// Interleaved 8-bit RGB with round-half-up quantization.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let hw = self.height() * self.width();
        let d = self.pixels.data();
        let mut out = Vec::with_capacity(3 * hw);
        for p in 0..hw {
            for c in 0..3 {
                out.push(quantize(d[c * hw + p]));
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels.at3(c, y, x)
    }
}

/// Clamp to `[0, 1]` and map to `round(v·255)`, halves rounding up.
pub fn quantize(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Load an 8-bit RGB PNG or binary PPM (P6).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRGB, ImageError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ImageError::NotFound(path.to_path_buf()));
    }
    let read_err = |source| ImageError::Read {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(read_err)?;
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        Err(ImageError::Grayscale(path.to_path_buf()))
    } else {
        Err(ImageError::UnknownFormat(path.to_path_buf()))
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<ImageRGB, ImageError> {
    let decode_err = |e: png::DecodingError| ImageError::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let info = reader.info();
    match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
            return Err(ImageError::Grayscale(path.to_path_buf()))
        }
        png::ColorType::Rgb | png::ColorType::Rgba if info.bit_depth != png::BitDepth::Eight => {
            return Err(ImageError::UnsupportedBitDepth {
                path: path.to_path_buf(),
                bits: info.bit_depth as u32,
            })
        }
        _ => {}
    }
    let size = reader.output_buffer_size().ok_or_else(|| ImageError::Decode {
        path: path.to_path_buf(),
        msg: "image dimensions overflow".into(),
    })?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let channels = match frame.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(ImageError::Decode {
                path: path.to_path_buf(),
                msg: format!("unexpected decoded color type {other:?}"),
            })
        }
    };
    let rgb: Vec<u8> = buf[..frame.buffer_size()]
        .chunks_exact(channels)
        .flat_map(|px| [px[0], px[1], px[2]])
        .collect();
    ImageRGB::from_rgb8(w, h, &rgb)
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<ImageRGB, ImageError> {
    let malformed = |msg: &str| ImageError::Decode {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("bad header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing separator after header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        let bits = if maxval > 255 {
            16
        } else {
            (usize::BITS - maxval.leading_zeros()).max(1)
        };
        return Err(ImageError::UnsupportedBitDepth {
            path: path.to_path_buf(),
            bits,
        });
    }
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| malformed("dimensions overflow"))?;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| malformed("truncated pixel data"))?;
    ImageRGB::from_rgb8(w, h, data)
}

/// Write an 8-bit RGB PNG.
pub fn save_image(img: &ImageRGB, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let write_err = |source| ImageError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(write_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => write_err(io),
        other => write_err(std::io::Error::other(other.to_string())),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&img.to_rgb8()).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Write a binary PPM (P6).
pub fn save_ppm(img: &ImageRGB, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let write_err = |source| ImageError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(write_err)?);
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height()).map_err(write_err)?;
    out.write_all(&img.to_rgb8()).map_err(write_err)?;
    out.flush().map_err(write_err)
}

/// Bilinear resize of the whole image to the `256×256` network proxy.
pub fn make_proxy(img: &ImageRGB) -> Tensor<f32> {
    make_proxy_sized(img.pixels(), PROXY_SIZE)
}

pub fn make_proxy_sized<T: crate::tensor::Real>(pixels: &Tensor<T>, size: usize) -> Tensor<T> {
    ops::bilinear_resize(pixels, size, size).expect("image tensors are 3×H×W with H, W ≥ 1")
}
