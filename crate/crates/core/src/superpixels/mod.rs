//! Superpixel partitions and the lookups every guidance encoder relies on.

mod lab;
mod slic;

use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::raster::PixelPoint;

pub use lab::{image_to_lab, rgb_to_lab};
pub use slic::{slic, slic_with, SlicParams, DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS};

/// Identifier of one superpixel, dense in `[0, count)`.
pub type SuperpixelId = u32;

/// A complete partition of an image into labelled regions.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelMap {
    width: u32,
    height: u32,
    labels: Vec<SuperpixelId>,
    count: u32,
    centroids: Vec<(f64, f64)>,
    sizes: Vec<usize>,
    adjacency: Vec<Vec<SuperpixelId>>,
    members: Vec<Vec<usize>>,
}

impl SuperpixelMap {
    /// Builds the map from a label raster. Labels must cover `[0, count)`
    /// with every id used at least once.
    pub fn from_labels(width: u32, height: u32, labels: Vec<SuperpixelId>) -> Result<Self> {
        let n = width as usize * height as usize;
        if n == 0 || labels.len() != n {
            return Err(Error::InvalidRaster(format!(
                "label raster of length {} does not match {width}x{height}",
                labels.len()
            )));
        }
        let count = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut sums = vec![(0u64, 0u64); count as usize];
        let mut members = vec![Vec::new(); count as usize];
        for (i, &l) in labels.iter().enumerate() {
            let (x, y) = (i % width as usize, i / width as usize);
            sums[l as usize].0 += x as u64;
            sums[l as usize].1 += y as u64;
            members[l as usize].push(i);
        }
        if let Some(missing) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidRaster(format!("superpixel id {missing} has no pixels")));
        }
        let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
        let centroids = sums
            .iter()
            .zip(&sizes)
            .map(|(&(sx, sy), &size)| (sx as f64 / size as f64, sy as f64 / size as f64))
            .collect();

        let mut adjacency = vec![Vec::new(); count as usize];
        let w = width as usize;
        for i in 0..n {
            let (x, y) = (i % w, i / w);
            let a = labels[i];
            let mut link = |j: usize| {
                let b = labels[j];
                if a != b {
                    adjacency[a as usize].push(b);
                    adjacency[b as usize].push(a);
                }
            };
            if x + 1 < w {
                link(i + 1);
            }
            if y + 1 < height as usize {
                link(i + w);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }

        Ok(Self {
            width,
            height,
            labels,
            count,
            centroids,
            sizes,
            adjacency,
            members,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn labels(&self) -> &[SuperpixelId] {
        &self.labels
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Sorted neighbor ids of each superpixel (4-adjacency of member pixels).
    pub fn adjacency(&self) -> &[Vec<SuperpixelId>] {
        &self.adjacency
    }

    /// Row-major pixel indices of superpixel `id`, ascending.
    pub fn members(&self, id: SuperpixelId) -> Result<&[usize]> {
        self.check_id(id)?;
        Ok(&self.members[id as usize])
    }

    pub fn centroid(&self, id: SuperpixelId) -> Result<(f64, f64)> {
        self.check_id(id)?;
        Ok(self.centroids[id as usize])
    }

    fn check_id(&self, id: SuperpixelId) -> Result<()> {
        if id >= self.count {
            return Err(Error::InvalidSuperpixel { id, count: self.count });
        }
        Ok(())
    }

    /// The superpixel containing `p`.
    pub fn superpixel_of(&self, p: PixelPoint) -> Result<SuperpixelId> {
        if p.x >= self.width || p.y >= self.height {
            return Err(Error::OutOfBounds {
                x: p.x as i64,
                y: p.y as i64,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.labels[p.y as usize * self.width as usize + p.x as usize])
    }

    /// Plain Euclidean distance between the centroids of `i` and `j`.
    pub fn centroid_distance(&self, i: SuperpixelId, j: SuperpixelId) -> Result<f64> {
        let (xi, yi) = self.centroid(i)?;
        let (xj, yj) = self.centroid(j)?;
        let (dx, dy) = (xi - xj, yi - yj);
        Ok((dx * dx + dy * dy).sqrt())
    }

    /// The member pixel of `id` nearest its centroid; ties go to the
    /// smallest `(y, x)`.
    pub fn representative_pixel(&self, id: SuperpixelId) -> Result<PixelPoint> {
        let (cx, cy) = self.centroid(id)?;
        let w = self.width as usize;
        let best = self.members[id as usize]
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = ((a % w) as f64 - cx).powi(2) + ((a / w) as f64 - cy).powi(2);
                let db = ((b % w) as f64 - cx).powi(2) + ((b / w) as f64 - cy).powi(2);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("superpixels are nonempty");
        Ok(PixelPoint::new((best % w) as u32, (best / w) as u32))
    }

    /// Label raster as a 16-bit grayscale PNG (debug dump).
    pub fn labels_png(&self) -> Result<Vec<u8>> {
        if self.count > u16::MAX as u32 + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} superpixels do not fit a 16-bit PNG",
                self.count
            )));
        }
        let raw: Vec<u16> = self.labels.iter().map(|&l| l as u16).collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, raw).expect("length checked");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn save_labels_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.labels_png()?)?;
        Ok(())
    }
}
