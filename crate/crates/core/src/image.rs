//! Grayscale rasters, binary PGM I/O, and block partitioning.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, shape_err, Error, Result};
use crate::linalg::Matrix;

/// Row-major grayscale image with `f64` pixels, nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!(
                "{} pixels cannot fill a {height}x{width} image",
                data.len()
            ));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.width + c] = v;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.height, self.width, self.data.clone())
            .expect("image buffer length is an invariant")
    }

    pub fn from_matrix(m: Matrix) -> Self {
        let (height, width) = m.shape();
        Image {
            height,
            width,
            data: m.into_vec(),
        }
    }

    /// Copy with pixels clamped to `[0, 255]`.
    pub fn clamped(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 255.0)).collect(),
        }
    }

    /// Top-left `height×width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width {
            return Err(shape_err!(
                "cannot crop {}x{} to {height}x{width}",
                self.height,
                self.width
            ));
        }
        Ok(Image::from_fn(height, width, |r, c| self.get(r, c)))
    }

    /// Extends to `height×width` by repeating the last row and column.
    pub fn pad_edge(&self, height: usize, width: usize) -> Result<Image> {
        if height < self.height || width < self.width || self.is_empty() {
            return Err(shape_err!(
                "cannot pad {}x{} to {height}x{width}",
                self.height,
                self.width
            ));
        }
        Ok(Image::from_fn(height, width, |r, c| {
            self.get(r.min(self.height - 1), c.min(self.width - 1))
        }))
    }
}

/// Reads a binary (P5) PGM with maxval 255.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Writes a binary PGM, clamping to `[0, 255]` and rounding half up.
pub fn save_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 255.0) + 0.5).floor().min(255.0) as u8
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "expected P5 magic, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_number(next_token(bytes, &mut pos)?)?;
    let height = parse_number(next_token(bytes, &mut pos)?)?;
    let maxval = parse_number(next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::Format(format!("maxval must be 255, found {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("missing separator after header".into()));
    }
    pos += 1;
    let n = width * height;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(Error::Format(format!(
            "truncated raster: expected {n} bytes, found {}",
            payload.len()
        )));
    }
    let data = payload[..n].iter().map(|&b| b as f64).collect();
    Image::new(height, width, data)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad header field {:?}", String::from_utf8_lossy(tok))))
}

/// An image cut into `B×B` blocks, listed row-major over the block grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    pub block_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub orig_height: usize,
    pub orig_width: usize,
    pub blocks: Vec<Image>,
}

impl BlockGrid {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        (
            self.grid_rows * self.block_size,
            self.grid_cols * self.block_size,
        )
    }
}

/// Grid dimensions needed to cover `height×width` with `b×b` blocks.
pub fn grid_dims(height: usize, width: usize, b: usize) -> (usize, usize) {
    (height.div_ceil(b), width.div_ceil(b))
}

/// Pads by edge replication to multiples of `b` and tiles row-major.
pub fn partition(img: &Image, b: usize) -> Result<BlockGrid> {
    if b < 2 {
        return Err(invalid_arg!("block size must be at least 2, got {b}"));
    }
    if img.is_empty() {
        return Err(shape_err!("cannot partition an empty image"));
    }
    let (gr, gc) = grid_dims(img.height, img.width, b);
    let padded = img.pad_edge(gr * b, gc * b)?;
    let blocks = tile_blocks(&padded, b);
    Ok(BlockGrid {
        block_size: b,
        grid_rows: gr,
        grid_cols: gc,
        orig_height: img.height,
        orig_width: img.width,
        blocks,
    })
}

/// Splits an image whose sides are multiples of `b` into row-major blocks.
pub(crate) fn tile_blocks(img: &Image, b: usize) -> Vec<Image> {
    let (gr, gc) = (img.height / b, img.width / b);
    let mut blocks = Vec::with_capacity(gr * gc);
    for br in 0..gr {
        for bc in 0..gc {
            blocks.push(Image::from_fn(b, b, |r, c| img.get(br * b + r, bc * b + c)));
        }
    }
    blocks
}

/// Writes blocks onto the padded canvas without cropping.
pub(crate) fn assemble_padded(
    blocks: &[Image],
    b: usize,
    grid_rows: usize,
    grid_cols: usize,
) -> Result<Image> {
    if blocks.len() != grid_rows * grid_cols {
        return Err(shape_err!(
            "expected {} blocks, got {}",
            grid_rows * grid_cols,
            blocks.len()
        ));
    }
    let width = grid_cols * b;
    let mut out = Image::zeros(grid_rows * b, width);
    for (idx, blk) in blocks.iter().enumerate() {
        if blk.dims() != (b, b) {
            return Err(shape_err!(
                "block {idx} is {}x{}, expected {b}x{b}",
                blk.height,
                blk.width
            ));
        }
        let (br, bc) = (idx / grid_cols, idx % grid_cols);
        for r in 0..b {
            let dst = (br * b + r) * width + bc * b;
            out.data[dst..dst + b].copy_from_slice(&blk.data[r * b..(r + 1) * b]);
        }
    }
    Ok(out)
}

/// Tiles the blocks and crops the padding away.
pub fn reassemble(grid: &BlockGrid) -> Result<Image> {
    let full = assemble_padded(
        &grid.blocks,
        grid.block_size,
        grid.grid_rows,
        grid.grid_cols,
    )?;
    full.crop(grid.orig_height, grid.orig_width)
}
