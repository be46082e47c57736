//! The zoom-in tool: crop a normalized box out of an image and enlarge it.
//!
//! Pixel geometry: box edges are scaled to the source image's pixel size,
//! rounded to the nearest integer, and clamped inside the image. Crops
//! smaller than 8 px on a side are grown symmetrically to 8 px. The crop is
//! then upscaled with bilinear interpolation (half-pixel centers, edge
//! clamping, round-to-nearest) so its longer side equals
//! `min(target_side, longer side of the original image)`. Crops are never
//! downscaled.

use std::io::Cursor;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use base64::Engine;
use image::{ImageFormat, RgbImage};
use thiserror::Error;

use crate::types::{AssetInfo, AssetSource, BoundingBox, ToolInvocation, ValidationError};

pub const MIN_CROP_SIDE: u32 = 8;
pub const DEFAULT_TARGET_SIDE: u32 = 1024;

#[derive(Debug, Error)]
pub enum VistoolError {
    #[error(transparent)]
    DegenerateBox(#[from] ValidationError),
    #[error("region is smaller than {MIN_CROP_SIDE}x{MIN_CROP_SIDE} px and the image is too small to expand it")]
    TinyRegion,
    #[error("image index {index} is out of range ({available} images available)")]
    BadImageIndex { index: usize, available: usize },
    #[error("image decode failed: {0}")]
    Decode(#[from] image::ImageError),
}

/// An image available to a trace, with its provenance.
#[derive(Debug, Clone)]
pub struct ImageAsset {
    pixels: Arc<RgbImage>,
    source: AssetSource,
    root_longer_side: u32,
    data_url: Arc<OnceLock<String>>,
}

impl ImageAsset {
    /// Wrap pixels as an original image.
    pub fn original(pixels: RgbImage) -> Self {
        assert!(pixels.width() >= 1 && pixels.height() >= 1, "empty image");
        let root_longer_side = pixels.width().max(pixels.height());
        Self {
            pixels: Arc::new(pixels),
            source: AssetSource::Original,
            root_longer_side,
            data_url: Arc::default(),
        }
    }

    /// Decode a PNG or JPEG file.
    pub fn open(path: &Path) -> Result<Self, VistoolError> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::original(img))
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }
    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
    pub fn source(&self) -> &AssetSource {
        &self.source
    }

    pub fn info(&self) -> AssetInfo {
        AssetInfo {
            width: self.width(),
            height: self.height(),
            source: self.source.clone(),
        }
    }

    /// Lossless PNG encoding.
    pub fn to_png(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        self.pixels
            .write_to(&mut buf, ImageFormat::Png)
            .expect("PNG encoding into memory cannot fail");
        buf.into_inner()
    }

    /// `data:image/png;base64,...` URL, computed once per asset.
    pub fn data_url(&self) -> &str {
        self.data_url.get_or_init(|| {
            format!(
                "data:image/png;base64,{}",
                base64::engine::general_purpose::STANDARD.encode(self.to_png())
            )
        })
    }
}

/// Crop-and-enlarge tool with a configurable upscale target.
#[derive(Debug, Clone, Copy)]
pub struct ZoomTool {
    pub target_side: u32,
}

impl Default for ZoomTool {
    fn default() -> Self {
        Self {
            target_side: DEFAULT_TARGET_SIDE,
        }
    }
}

impl ZoomTool {
    pub fn new(target_side: u32) -> Self {
        Self { target_side }
    }

    /// Run an invocation against the trace's images.
    pub fn invoke(
        &self,
        images: &[ImageAsset],
        invocation: &ToolInvocation,
    ) -> Result<ImageAsset, VistoolError> {
        let image = images
            .get(invocation.image_index)
            .ok_or(VistoolError::BadImageIndex {
                index: invocation.image_index,
                available: images.len(),
            })?;
        self.zoom_in(image, invocation.image_index, invocation.bbox)
    }

    /// Crop `bbox` out of `image` (which sits at `parent_index` in the trace)
    /// and enlarge it.
    pub fn zoom_in(
        &self,
        image: &ImageAsset,
        parent_index: usize,
        bbox: BoundingBox,
    ) -> Result<ImageAsset, VistoolError> {
        let (x0, x1) = pixel_span(bbox.x1(), bbox.x2(), image.width())?;
        let (y0, y1) = pixel_span(bbox.y1(), bbox.y2(), image.height())?;
        let crop = image::imageops::crop_imm(&*image.pixels, x0, y0, x1 - x0, y1 - y0).to_image();

        let target = self.target_side.min(image.root_longer_side).max(1);
        let longer = crop.width().max(crop.height());
        let out = if longer >= target {
            crop
        } else {
            let scale = target as f64 / longer as f64;
            let (w, h) = if crop.width() >= crop.height() {
                (
                    target,
                    ((crop.height() as f64 * scale).round() as u32).max(1),
                )
            } else {
                (
                    ((crop.width() as f64 * scale).round() as u32).max(1),
                    target,
                )
            };
            resize_bilinear(&crop, w, h)
        };
        Ok(ImageAsset {
            pixels: Arc::new(out),
            source: AssetSource::Crop {
                parent: parent_index,
                bbox,
            },
            root_longer_side: image.root_longer_side,
            data_url: Arc::default(),
        })
    }
}

/// Map a normalized interval onto pixel columns `[start, end)`.
fn pixel_span(lo: f64, hi: f64, size: u32) -> Result<(u32, u32), VistoolError> {
    let s = size as i64;
    let mut a = ((lo * size as f64).round() as i64).clamp(0, s);
    let mut b = ((hi * size as f64).round() as i64).clamp(0, s);
    if b - a < MIN_CROP_SIDE as i64 {
        if s < MIN_CROP_SIDE as i64 {
            return Err(VistoolError::TinyRegion);
        }
        let need = MIN_CROP_SIDE as i64 - (b - a);
        a -= need / 2;
        b += need - need / 2;
        if a < 0 {
            b -= a;
            a = 0;
        }
        if b > s {
            a -= b - s;
            b = s;
        }
    }
    Ok((a as u32, b as u32))
}

/// Bilinear resize with half-pixel centers and clamped edges.
pub fn resize_bilinear(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = (src.width(), src.height());
    if (sw, sh) == (width, height) {
        return src.clone();
    }
    let axis = |out: u32, size_in: u32, size_out: u32| -> (u32, u32, f64) {
        let pos = ((out as f64 + 0.5) * size_in as f64 / size_out as f64 - 0.5)
            .clamp(0.0, (size_in - 1) as f64);
        let i0 = pos.floor() as u32;
        let i1 = (i0 + 1).min(size_in - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<(u32, u32, f64)> = (0..width).map(|x| axis(x, sw, width)).collect();
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        let (r0, r1, fy) = axis(y, sh, height);
        for (x, &(c0, c1, fx)) in cols.iter().enumerate() {
            let p00 = src.get_pixel(c0, r0).0;
            let p01 = src.get_pixel(c1, r0).0;
            let p10 = src.get_pixel(c0, r1).0;
            let p11 = src.get_pixel(c1, r1).0;
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let top = p00[ch] as f64 * (1.0 - fx) + p01[ch] as f64 * fx;
                let bottom = p10[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
                px[ch] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x as u32, y, image::Rgb(px));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: u32, h: u32, c: [u8; 3]) -> ImageAsset {
        ImageAsset::original(RgbImage::from_pixel(w, h, image::Rgb(c)))
    }

    fn noise(w: u32, h: u32) -> ImageAsset {
        ImageAsset::original(RgbImage::from_fn(w, h, |x, y| {
            let v = x
                .wrapping_mul(2654435761)
                .wrapping_add(y.wrapping_mul(40503))
                >> 7;
            image::Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
        }))
    }

    fn bbox(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn identity_crop_is_pixel_identical() {
        let img = noise(512, 512);
        let out = ZoomTool::default()
            .zoom_in(&img, 0, BoundingBox::full())
            .unwrap();
        assert_eq!((out.width(), out.height()), (512, 512));
        assert_eq!(out.pixels().as_raw(), img.pixels().as_raw());
    }

    #[test]
    fn mid_crop_dimensions() {
        let img = noise(1024, 768);
        let out = ZoomTool::default()
            .zoom_in(&img, 0, bbox(0.25, 0.25, 0.75, 0.75))
            .unwrap();
        assert_eq!((out.width(), out.height()), (1024, 768));
        assert_eq!(
            out.source(),
            &AssetSource::Crop {
                parent: 0,
                bbox: bbox(0.25, 0.25, 0.75, 0.75)
            }
        );
    }

    #[test]
    fn tiny_regions_expand_to_minimum() {
        let img = noise(100, 100);
        let out = ZoomTool::new(16)
            .zoom_in(&img, 0, bbox(0.995, 0.0, 0.999, 0.5))
            .unwrap();
        // 8 px wide, 50 px tall; target 16 < 50, so no resize
        assert_eq!((out.width(), out.height()), (8, 50));
        let tiny = noise(4, 4);
        assert!(matches!(
            ZoomTool::default().zoom_in(&tiny, 0, bbox(0.0, 0.0, 0.5, 0.5)),
            Err(VistoolError::TinyRegion)
        ));
    }

    #[test]
    fn never_downscales() {
        let img = noise(2000, 1000);
        let out = ZoomTool::default()
            .zoom_in(&img, 0, bbox(0.0, 0.0, 0.9, 1.0))
            .unwrap();
        assert_eq!((out.width(), out.height()), (1800, 1000));
    }

    #[test]
    fn bad_index() {
        let img = solid(10, 10, [0, 0, 0]);
        let inv = ToolInvocation {
            bbox: BoundingBox::full(),
            label: "x".into(),
            image_index: 2,
        };
        assert!(matches!(
            ZoomTool::default().invoke(&[img], &inv),
            Err(VistoolError::BadImageIndex {
                index: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn recursive_zoom_tracks_root_size() {
        let img = noise(400, 300);
        let tool = ZoomTool::default();
        let first = tool.zoom_in(&img, 0, bbox(0.0, 0.0, 0.5, 0.5)).unwrap();
        assert_eq!((first.width(), first.height()), (400, 300));
        let second = tool.zoom_in(&first, 1, bbox(0.0, 0.0, 0.25, 0.25)).unwrap();
        assert_eq!(second.width().max(second.height()), 400);
    }

    #[test]
    fn png_roundtrip() {
        let img = noise(33, 17);
        let decoded = image::load_from_memory(&img.to_png()).unwrap().to_rgb8();
        assert_eq!(decoded.as_raw(), img.pixels().as_raw());
        assert!(img.data_url().starts_with("data:image/png;base64,"));
    }

    #[test]
    fn bilinear_reproduces_linear_ramp() {
        // Bilinear interpolation is exact on affine data, so every output
        // pixel must match the analytic ramp evaluated at its sample point.
        let img = ImageAsset::original(RgbImage::from_fn(200, 150, |x, y| {
            image::Rgb([x as u8, y as u8, 77])
        }));
        let tool = ZoomTool::new(200);
        let out = tool.zoom_in(&img, 0, bbox(0.2, 0.2, 0.6, 0.6)).unwrap();
        // crop is x in [40,120), y in [30,90): 80x60 -> 200x150
        assert_eq!((out.width(), out.height()), (200, 150));
        let sample = |o: u32, n_in: f64, n_out: f64| {
            ((o as f64 + 0.5) * n_in / n_out - 0.5).clamp(0.0, n_in - 1.0)
        };
        for (x, y, p) in out.pixels().enumerate_pixels() {
            let ex = 40.0 + sample(x, 80.0, 200.0);
            let ey = 30.0 + sample(y, 60.0, 150.0);
            assert!(
                (p.0[0] as f64 - ex).abs() <= 0.5 + 1e-9,
                "x={x} got {} want {ex}",
                p.0[0]
            );
            assert!(
                (p.0[1] as f64 - ey).abs() <= 0.5 + 1e-9,
                "y={y} got {} want {ey}",
                p.0[1]
            );
            assert_eq!(p.0[2], 77);
        }
    }

    #[test]
    fn agrees_with_library_triangle_filter() {
        let src = noise(37, 23).pixels().clone();
        let ours = resize_bilinear(&src, 111, 69);
        let theirs = image::imageops::resize(&src, 111, 69, image::imageops::FilterType::Triangle);
        let worst = ours
            .as_raw()
            .iter()
            .zip(theirs.as_raw())
            .map(|(a, b)| (*a as i32 - *b as i32).abs())
            .max()
            .unwrap();
        assert!(worst <= 2, "max channel difference {worst}");
    }

    #[test]
    fn constant_images_stay_constant() {
        let img = solid(64, 48, [12, 200, 99]);
        let out = ZoomTool::default()
            .zoom_in(&img, 0, bbox(0.1, 0.3, 0.35, 0.5))
            .unwrap();
        assert!(out.pixels().pixels().all(|p| p.0 == [12, 200, 99]));
    }
}
