//! On-disk image codecs: little-endian float32 raw and single-image
//! 32-bit-float grayscale TIFF (uncompressed or deflate).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Pixel encoding of the dataset's image files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Little-endian float32, row-major, no header; payload is exactly
    /// width*height*4 bytes.
    Raw,
    /// Single-image grayscale 32-bit float TIFF, uncompressed.
    Tiff,
    /// Same, deflate-compressed.
    TiffDeflate,
}

impl Encoding {
    pub fn extension(&self) -> &'static str {
        match self {
            Encoding::Raw => "raw",
            Encoding::Tiff | Encoding::TiffDeflate => "tif",
        }
    }
}

pub fn write_image(path: &Path, values: &Array2<f64>, encoding: Encoding) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (rows, cols) = values.dim();
    let data: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    match encoding {
        Encoding::Raw => {
            let mut w = BufWriter::new(File::create(path)?);
            for v in &data {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()?;
        }
        Encoding::Tiff | Encoding::TiffDeflate => {
            let file = BufWriter::new(File::create(path)?);
            let mut enc = tiff::encoder::TiffEncoder::new(file)
                .map_err(|e| Error::CorruptPayload(format!("tiff encode: {e}")))?;
            let result = match encoding {
                Encoding::Tiff => enc.write_image::<tiff::encoder::colortype::Gray32Float>(
                    cols as u32,
                    rows as u32,
                    &data,
                ),
                _ => enc
                    .write_image_with_compression::<tiff::encoder::colortype::Gray32Float, _>(
                        cols as u32,
                        rows as u32,
                        tiff::encoder::compression::Deflate::default(),
                        &data,
                    ),
            };
            result.map_err(|e| Error::CorruptPayload(format!("tiff encode: {e}")))?;
        }
    }
    Ok(())
}

pub fn read_image(
    path: &Path,
    encoding: Encoding,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>> {
    match encoding {
        Encoding::Raw => {
            let expected = rows * cols * 4;
            let mut bytes = Vec::with_capacity(expected);
            BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
            if bytes.len() != expected {
                return Err(Error::CorruptPayload(format!(
                    "{}: payload {} bytes, expected {expected} for {cols}x{rows} float32",
                    path.display(),
                    bytes.len()
                )));
            }
            let mut values = Array2::<f64>::zeros((rows, cols));
            for (chunk, v) in bytes.chunks_exact(4).zip(values.iter_mut()) {
                *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            }
            Ok(values)
        }
        Encoding::Tiff | Encoding::TiffDeflate => {
            let file = BufReader::new(File::open(path)?);
            let mut dec = tiff::decoder::Decoder::new(file)
                .map_err(|e| Error::CorruptPayload(format!("{}: {e}", path.display())))?;
            let (w, h) = dec
                .dimensions()
                .map_err(|e| Error::CorruptPayload(format!("{}: {e}", path.display())))?;
            if (h as usize, w as usize) != (rows, cols) {
                return Err(Error::CorruptPayload(format!(
                    "{}: tiff is {w}x{h}, expected {cols}x{rows}",
                    path.display()
                )));
            }
            match dec
                .read_image()
                .map_err(|e| Error::CorruptPayload(format!("{}: {e}", path.display())))?
            {
                tiff::decoder::DecodingResult::F32(data) => {
                    if data.len() != rows * cols {
                        return Err(Error::CorruptPayload(format!(
                            "{}: tiff payload length {}",
                            path.display(),
                            data.len()
                        )));
                    }
                    Ok(Array2::from_shape_vec(
                        (rows, cols),
                        data.into_iter().map(|v| v as f64).collect(),
                    )
                    .expect("length checked"))
                }
                _ => Err(Error::CorruptPayload(format!(
                    "{}: tiff sample type is not 32-bit float",
                    path.display()
                ))),
            }
        }
    }
}

/// Cheap dimension probe used by eager dataset validation.
pub fn probe_dimensions(path: &Path, encoding: Encoding) -> Result<(usize, usize)> {
    match encoding {
        Encoding::Raw => Err(Error::CorruptPayload(
            "raw files carry no dimensions; validate by size".into(),
        )),
        Encoding::Tiff | Encoding::TiffDeflate => {
            let file = BufReader::new(File::open(path)?);
            let mut dec = tiff::decoder::Decoder::new(file)
                .map_err(|e| Error::CorruptPayload(format!("{}: {e}", path.display())))?;
            let (w, h) = dec
                .dimensions()
                .map_err(|e| Error::CorruptPayload(format!("{}: {e}", path.display())))?;
            Ok((h as usize, w as usize))
        }
    }
}
