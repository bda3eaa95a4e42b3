//! Raster types shared by every other module: RGB images, binary masks,
//! pixel coordinates, plus the mask metrics and file I/O built on them.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageBuffer, ImageFormat, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pixel coordinate: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: u32,
    pub y: u32,
}

impl PixelPoint {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Euclidean distance to `other` in pixels.
    pub fn distance(self, other: PixelPoint) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Dense row-major RGB raster, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "image extent must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::InvalidRaster(format!(
                "expected {expected} bytes for a {width}x{height} RGB image, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    /// An image filled with one color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        let data = rgb.iter().copied().cycle().take(n * 3).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        ImageBuffer::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction")
    }

    pub fn from_rgb_image(img: RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    /// Decodes a PNG or JPEG byte stream.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::InvalidRaster("empty image payload".into()));
        }
        let img = image::load_from_memory(bytes)?;
        Self::from_rgb_image(img.to_rgb8())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb_image().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "mask extent must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidRaster(format!(
                "expected {} bits for a {width}x{height} mask, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self::new(width, height, vec![false; width as usize * height as usize]).expect("mask extent must be positive")
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::new(width, height, vec![true; width as usize * height as usize]).expect("mask extent must be positive")
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits).expect("mask extent must be positive")
    }

    /// Rasterizes pixel indices into a mask.
    pub fn from_indices(width: u32, height: u32, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::empty(width, height);
        for i in indices {
            mask.bits[i] = true;
        }
        mask
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn at(&self, p: PixelPoint) -> bool {
        self.get(p.x, p.y)
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn contains(&self, p: PixelPoint) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    fn check_same_extent(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<Self> {
        self.check_same_extent(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect();
        Self::new(self.width, self.height, bits)
    }

    /// Inclusive bounding box `(min, max)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(PixelPoint, PixelPoint)> {
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bounds.map(|(x0, y0, x1, y1)| (PixelPoint::new(x0, y0), PixelPoint::new(x1, y1)))
    }

    /// Mean `(x, y)` of the set pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as u64;
                    sy += y as u64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx as f64 / n as f64, sy as f64 / n as f64))
    }

    pub fn to_gray_image(&self) -> GrayImage {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        ImageBuffer::from_raw(self.width, self.height, raw).expect("length checked")
    }

    /// Any nonzero gray value is foreground.
    pub fn from_gray_image(img: &GrayImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.as_raw().iter().map(|&v| v != 0).collect())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_gray_image().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Self::from_gray_image(&img.to_luma8())
    }
}

/// Intersection over union; two empty masks agree vacuously (1.0).
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_extent(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// A 4-connected set of mask pixels, stored as row-major indices in scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub pixels: Vec<usize>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn to_mask(&self, width: u32, height: u32) -> BinaryMask {
        BinaryMask::from_indices(width, height, self.pixels.iter().copied())
    }
}

/// 4-connected components, largest first. Equal areas keep scan order of
/// their first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut seen = vec![false; w * h];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.bits[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        pixels.sort_unstable();
        components.push(Component { pixels });
    }
    // stable: equal areas stay in discovery (scan) order
    components.sort_by_key(|c| std::cmp::Reverse(c.area()));
    components
}

/// Squared Euclidean distance from every pixel to the nearest `false` pixel,
/// treating everything beyond the raster edge as `false`.
pub fn squared_distance_to_background(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    // pad by one so the frame counts as background
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.bits[y * w + x] {
                grid[(y + 1) * pw + x + 1] = f64::INFINITY;
            }
        }
    }
    let mut line = Vec::new();
    let mut out = Vec::new();
    for y in 0..ph {
        line.clear();
        line.extend_from_slice(&grid[y * pw..(y + 1) * pw]);
        edt_1d(&line, &mut out);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&out);
    }
    for x in 0..pw {
        line.clear();
        line.extend((0..ph).map(|y| grid[y * pw + x]));
        edt_1d(&line, &mut out);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    let mut result = Vec::with_capacity(w * h);
    for y in 0..h {
        result.extend_from_slice(&grid[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]);
    }
    result
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher).
fn edt_1d(f: &[f64], out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let Some(first) = f.iter().position(|v| v.is_finite()) else {
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this never pops below the first parabola
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *slot = d * d + f[v[k]];
    }
}

/// The mask pixel farthest from the complement (exact Euclidean distance
/// transform, image frame counted as complement).
///
/// Ties go to the pixel closest to the mask centroid, then to the smallest
/// `(y, x)`.
pub fn interior_pole(mask: &BinaryMask) -> Result<PixelPoint> {
    let dist = squared_distance_to_background(mask);
    let w = mask.width as usize;
    let (mut sx, mut sy, mut n) = (0i128, 0i128, 0i128);
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        sx += (i % w) as i128;
        sy += (i / w) as i128;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    // distance to centroid scaled by n, kept in integers for exact ties
    let centroid_key = |i: usize| {
        let dx = n * (i % w) as i128 - sx;
        let dy = n * (i / w) as i128 - sy;
        dx * dx + dy * dy
    };
    let mut best: Option<(usize, f64, i128)> = None;
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        let d = dist[i];
        let better = match best {
            None => true,
            Some((_, bd, bk)) => d > bd || (d == bd && centroid_key(i) < bk),
        };
        if better {
            best = Some((i, d, centroid_key(i)));
        }
    }
    let (i, _, _) = best.expect("mask is nonempty");
    Ok(PixelPoint::new((i % w) as u32, (i / w) as u32))
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?;
    Image::from_rgb_image(img.to_rgb8())
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_rgb_image()
        .save_with_format(path, ImageFormat::Png)
        .map_err(image_err(path))
}

/// Reads an 8-bit mask; any nonzero value is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?;
    BinaryMask::from_gray_image(&img.to_luma8())
}

/// Writes an 8-bit single-channel PNG, 0 = background, 255 = foreground.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mask.to_gray_image()
        .save_with_format(path, ImageFormat::Png)
        .map_err(image_err(path))
}

pub(crate) fn gray_png(width: u32, height: u32, values: Vec<u8>) -> Result<Vec<u8>> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(width, height, values)
        .ok_or_else(|| Error::InvalidRaster("gray buffer length mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}
