//! 8-bit grayscale rasters, PNG I/O and tiling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Side length of every realization produced by the SOMs.
pub const SOM_SIZE: usize = 256;

/// Row-major 8-bit grayscale image.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    /// The standard 256x256 realization canvas.
    pub fn som_canvas() -> Self {
        Self::new(SOM_SIZE, SOM_SIZE)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Rebuilds an image from row-major tiles, the inverse of [`split_tiles`].
    pub fn from_tiles(
        width: usize,
        height: usize,
        tile_size: usize,
        tiles: &[Vec<u8>],
    ) -> Result<Self> {
        check_tile_size(width, height, tile_size)?;
        let cols = width / tile_size;
        if tiles.len() != cols * (height / tile_size)
            || tiles.iter().any(|t| t.len() != tile_size * tile_size)
        {
            return Err(Error::InvalidParameter(
                "tile count or tile size mismatch".into(),
            ));
        }
        let mut image = GrayImage::new(width, height);
        for (k, tile) in tiles.iter().enumerate() {
            let (x0, y0) = ((k % cols) * tile_size, (k / cols) * tile_size);
            for (dy, row) in tile.chunks_exact(tile_size).enumerate() {
                let start = (y0 + dy) * width + x0;
                image.pixels[start..start + tile_size].copy_from_slice(row);
            }
        }
        Ok(image)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    pub(crate) fn require_dimensions(&self, width: usize, height: usize) -> Result<()> {
        if self.dimensions() != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: self.dimensions(),
            });
        }
        Ok(())
    }
}

/// One square view into a [`GrayImage`].
#[derive(Clone, Copy, Debug)]
pub struct Tile<'a> {
    image: &'a GrayImage,
    row: usize,
    col: usize,
    size: usize,
}

impl<'a> Tile<'a> {
    /// Tile coordinates in the grid, `(row, col)`.
    pub fn position(&self) -> (usize, usize) {
        (self.row, self.col)
    }

    /// Pixel coordinates of the top-left corner.
    pub fn origin(&self) -> (usize, usize) {
        (self.col * self.size, self.row * self.size)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Pixels in row-major order within the tile.
    pub fn pixels(&self) -> impl Iterator<Item = u8> + 'a {
        let (x0, y0) = self.origin();
        let (size, width, data) = (self.size, self.image.width, self.image.pixels());
        (0..size).flat_map(move |dy| {
            let start = (y0 + dy) * width + x0;
            data[start..start + size].iter().copied()
        })
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.pixels().collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels().map(f64::from).collect()
    }

    pub fn mean(&self) -> f64 {
        let sum: u64 = self.pixels().map(u64::from).sum();
        sum as f64 / (self.size * self.size) as f64
    }
}

/// A partition of an image into equal square tiles, row-major.
#[derive(Clone, Copy, Debug)]
pub struct TileGrid<'a> {
    image: &'a GrayImage,
    tile_size: usize,
    rows: usize,
    cols: usize,
}

impl<'a> TileGrid<'a> {
    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tile(&self, row: usize, col: usize) -> Tile<'a> {
        assert!(
            row < self.rows && col < self.cols,
            "tile index out of range"
        );
        Tile {
            image: self.image,
            row,
            col,
            size: self.tile_size,
        }
    }

    pub fn tiles(&self) -> impl Iterator<Item = Tile<'a>> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| self.tile(r, c)))
    }
}

fn check_tile_size(width: usize, height: usize, tile: usize) -> Result<()> {
    if tile == 0 || width % tile != 0 || height % tile != 0 {
        return Err(Error::InvalidTileSize {
            tile,
            width,
            height,
        });
    }
    Ok(())
}

pub fn split_tiles(image: &GrayImage, tile_size: usize) -> Result<TileGrid<'_>> {
    check_tile_size(image.width, image.height, tile_size)?;
    Ok(TileGrid {
        image,
        tile_size,
        rows: image.height / tile_size,
        cols: image.width / tile_size,
    })
}

/// Encodes as a non-interlaced 8-bit single-channel PNG.
pub fn encode_png(image: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_png(
        &mut out,
        image.width,
        image.height,
        png::BitDepth::Eight,
        image.pixels(),
    )?;
    Ok(out)
}

fn write_png<W: Write>(
    w: W,
    width: usize,
    height: usize,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<()> {
    let mut encoder = png::Encoder::new(w, width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::PngEncode(e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::PngEncode(e.to_string()))?;
    writer.finish().map_err(|e| Error::PngEncode(e.to_string()))
}

/// Decodes an 8-bit grayscale PNG with no rescaling or gamma handling.
pub fn decode_png(bytes: &[u8], expected: Option<(usize, usize)>) -> Result<GrayImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(info.bit_depth as u8));
    }
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedColor(format!("{:?}", info.color_type)));
    }
    if let Some(exp) = expected {
        if exp != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: exp,
                found: (width, height),
            });
        }
    }
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::PngDecode("image too large".into()))?
    ];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    // Rows are tightly packed for 8-bit single channel.
    GrayImage::from_pixels(width, height, buf)
}

pub fn load_image(path: impl AsRef<Path>, expected: Option<(usize, usize)>) -> Result<GrayImage> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, expected)
}

pub fn save_image(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_png(
        BufWriter::new(file),
        image.width,
        image.height,
        png::BitDepth::Eight,
        image.pixels(),
    )
}

/// Writes a label raster as a 16-bit grayscale PNG (big-endian samples).
pub fn save_label_png(
    labels: &[u32],
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if labels.len() != width * height {
        return Err(Error::InvalidParameter("label raster size mismatch".into()));
    }
    let mut data = Vec::with_capacity(labels.len() * 2);
    for &l in labels {
        let l = u16::try_from(l)
            .map_err(|_| Error::InvalidParameter(format!("label {l} exceeds 16 bits")))?;
        data.extend_from_slice(&l.to_be_bytes());
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_png(
        BufWriter::new(file),
        width,
        height,
        png::BitDepth::Sixteen,
        &data,
    )
}

/// Reads a 16-bit label PNG written by [`save_label_png`].
pub fn load_label_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u32>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedBitDepth(info.bit_depth as u8));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(w * h * 2)];
    reader
        .next_frame(&mut buf)
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let labels = buf[..w * h * 2]
        .chunks_exact(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
        .collect();
    Ok((w, h, labels))
}
