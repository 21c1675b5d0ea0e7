use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A row-major grayscale image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} mask",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "mask value {v} outside [0, 1]"
            )));
        }
        Ok(Mask {
            width,
            height,
            data,
        })
    }

    /// Builds a mask from values the caller guarantees are in range.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Mask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        assert!((0.0..=1.0).contains(&v), "mask value {v} outside [0, 1]");
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Fraction of pixels with value >= 0.5.
    pub fn coverage(&self) -> f64 {
        self.data.iter().filter(|&&v| v >= 0.5).count() as f64 / self.data.len() as f64
    }

    /// Binarizes at `level` (pixels `>= level` become 1).
    pub fn threshold(&self, level: f64) -> Mask {
        Mask::from_raw(
            self.width,
            self.height,
            self.data
                .iter()
                .map(|&v| if v >= level { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    /// Intersection over union of the two masks binarized at 0.5.
    ///
    /// Two empty masks have IoU 1.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (a, b) = (a >= 0.5, b >= 0.5);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }

    pub fn write_pgm(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        out.write_all(&bytes)
    }

    /// 16-bit variant, for soft masks that should survive a round trip.
    pub fn write_pgm16(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .flat_map(|&v| ((v * 65535.0).round().clamp(0.0, 65535.0) as u16).to_be_bytes())
            .collect();
        out.write_all(&bytes)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with(path.as_ref(), |m, w| m.write_pgm(w))
    }

    pub fn save_pgm16(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with(path.as_ref(), |m, w| m.write_pgm16(w))
    }

    fn save_with(
        &self,
        path: &Path,
        write: impl FnOnce(&Mask, &mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        write(self, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a binary (P5) PGM; maxval above 255 means 16-bit big-endian samples.
    pub fn read_pgm(reader: impl Read) -> Result<Mask> {
        let mut r = BufReader::new(reader);
        let mut header = Vec::new();
        while header.len() < 4 {
            let tok = next_token(&mut r)?;
            header.push(tok);
        }
        if header[0] != "P5" {
            return Err(pgm_err(format!("expected P5 magic, found '{}'", header[0])));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| pgm_err(format!("bad {what} '{s}'")))
        };
        let width = parse(&header[1], "width")?;
        let height = parse(&header[2], "height")?;
        let maxval = parse(&header[3], "maxval")?;
        if maxval == 0 || maxval > 65535 {
            return Err(pgm_err(format!("unsupported maxval {maxval}")));
        }
        let wide = maxval > 255;
        let mut bytes = vec![0u8; width * height * if wide { 2 } else { 1 }];
        r.read_exact(&mut bytes)
            .map_err(|e| pgm_err(format!("truncated pixel data: {e}")))?;
        let scale = maxval as f64;
        let data = if wide {
            bytes
                .chunks_exact(2)
                .map(|b| (u16::from_be_bytes([b[0], b[1]]) as f64 / scale).min(1.0))
                .collect()
        } else {
            bytes.iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
        };
        Ok(Mask::from_raw(width, height, data))
    }

    /// Loads a PGM, or a PNG when the extension says so.
    pub fn load(path: impl AsRef<Path>) -> Result<Mask> {
        let path = path.as_ref();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let img = image::open(path)
                .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
                .to_luma8();
            let (w, h) = img.dimensions();
            return Ok(Mask::from_raw(
                w as usize,
                h as usize,
                img.as_raw().iter().map(|&b| b as f64 / 255.0).collect(),
            ));
        }
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Mask::read_pgm(file)
    }
}

fn pgm_err(message: String) -> Error {
    Error::Parse { line: 0, message }
}

fn next_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte).map_err(|e| pgm_err(e.to_string()))? == 0 {
            return Err(pgm_err("unexpected end of PGM header".into()));
        }
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip).map_err(|e| pgm_err(e.to_string()))?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}
