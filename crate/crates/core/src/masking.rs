//! Text-region masking: every detected box is painted with the mean colour of
//! the one-pixel ring around it.

use std::fmt;

use crate::error::{Error, Result};
use crate::manifest::{SampleRecord, TextBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const MID_GRAY: Rgb = Rgb([128, 128, 128]);

    /// Integer luminance (ITU-R BT.601 weights), 0..=255.
    pub fn luma(self) -> u8 {
        let [r, g, b] = self.0.map(u32::from);
        ((299 * r + 587 * g + 114 * b) / 1000) as u8
    }
}

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!(
                "image dimensions {width}x{height} must be positive"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::Domain(format!(
                "pixel buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let pixels = color.0.repeat(width as usize * height as usize);
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        Rgb([self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]])
    }

    pub fn set(&mut self, x: u32, y: u32, color: Rgb) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&color.0);
    }

    fn contains(&self, x: i64, y: i64) -> bool {
        0 <= x && x < i64::from(self.width) && 0 <= y && y < i64::from(self.height)
    }
}

/// Locates text regions in an image.
pub trait DetectorProvider: Send + Sync {
    /// Boxes satisfying the [`TextBox`] invariants, clipped to the image.
    fn detect(&self, image: &Image, record: &SampleRecord) -> Result<Vec<TextBox>>;
}

/// Reference detector: returns the record's annotated boxes, clamped.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDetector;

impl DetectorProvider for OracleDetector {
    fn detect(&self, image: &Image, record: &SampleRecord) -> Result<Vec<TextBox>> {
        oracle_detect(image, record)
    }
}

/// Detector that never finds text.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTextDetector;

impl DetectorProvider for NoTextDetector {
    fn detect(&self, _image: &Image, _record: &SampleRecord) -> Result<Vec<TextBox>> {
        Ok(Vec::new())
    }
}

pub fn oracle_detect(image: &Image, record: &SampleRecord) -> Result<Vec<TextBox>> {
    let boxes = record
        .boxes
        .as_ref()
        .ok_or_else(|| Error::MissingAnnotation(record.id.clone()))?;
    Ok(boxes
        .iter()
        .filter_map(|b| clamp_box(*b, image.width, image.height))
        .collect())
}

/// Intersection of `b` with `[0,width)×[0,height)`, or `None` if it has zero area.
pub fn clamp_box(b: TextBox, width: u32, height: u32) -> Option<TextBox> {
    let w = i32::try_from(width).unwrap_or(i32::MAX);
    let h = i32::try_from(height).unwrap_or(i32::MAX);
    let clamped = TextBox::new(
        b.x_min.clamp(0, w),
        b.y_min.clamp(0, h),
        b.x_max.clamp(0, w),
        b.y_max.clamp(0, h),
    );
    (clamped.x_min < clamped.x_max && clamped.y_min < clamped.y_max).then_some(clamped)
}

#[derive(Default)]
struct ChannelSum {
    sum: [u64; 3],
    count: u64,
}

impl ChannelSum {
    fn add(&mut self, c: Rgb) {
        for (s, v) in self.sum.iter_mut().zip(c.0) {
            *s += u64::from(v);
        }
        self.count += 1;
    }

    /// Per-channel mean rounded half-up.
    fn mean(&self) -> Option<Rgb> {
        (self.count > 0).then(|| Rgb(self.sum.map(|s| ((2 * s + self.count) / (2 * self.count)) as u8)))
    }
}

fn in_any(boxes: &[TextBox], x: i64, y: i64) -> bool {
    boxes.iter().any(|b| b.contains(x as i32, y as i32))
}

/// Mean colour of the one-pixel ring just outside `b`, skipping ring pixels that
/// lie outside the image or inside any box of `all_boxes`.
///
/// Falls back to the mean of every pixel outside all boxes, then to mid-gray.
pub fn border_ring_mean(image: &Image, b: &TextBox, all_boxes: &[TextBox]) -> Rgb {
    let (x0, y0) = (i64::from(b.x_min) - 1, i64::from(b.y_min) - 1);
    let (x1, y1) = (i64::from(b.x_max), i64::from(b.y_max));
    let mut acc = ChannelSum::default();
    let mut visit = |x: i64, y: i64| {
        if image.contains(x, y) && !in_any(all_boxes, x, y) {
            acc.add(image.get(x as u32, y as u32));
        }
    };
    for x in x0..=x1 {
        visit(x, y0);
        visit(x, y1);
    }
    for y in (y0 + 1)..y1 {
        visit(x0, y);
        visit(x1, y);
    }
    if let Some(c) = acc.mean() {
        return c;
    }

    let mut outside = ChannelSum::default();
    for y in 0..image.height {
        for x in 0..image.width {
            if !in_any(all_boxes, i64::from(x), i64::from(y)) {
                outside.add(image.get(x, y));
            }
        }
    }
    outside.mean().unwrap_or(Rgb::MID_GRAY)
}

/// Clamps, drops empty intersections and sorts into canonical order.
pub fn canonical_boxes(boxes: &[TextBox], width: u32, height: u32) -> Vec<TextBox> {
    let mut out: Vec<TextBox> = boxes.iter().filter_map(|b| clamp_box(*b, width, height)).collect();
    out.sort_by_key(TextBox::canonical_key);
    out
}

/// Paints every box with its ring-mean fill colour.
///
/// Fill colours are all computed on the input image before any painting; where
/// boxes overlap, the first box in canonical order wins. Pixels outside every
/// box are left untouched.
pub fn mask_image(image: &Image, boxes: &[TextBox]) -> Image {
    let boxes = canonical_boxes(boxes, image.width, image.height);
    let fills: Vec<Rgb> = boxes.iter().map(|b| border_ring_mean(image, b, &boxes)).collect();
    let mut out = image.clone();
    for (b, fill) in boxes.iter().zip(&fills).rev() {
        for y in b.y_min..b.y_max {
            for x in b.x_min..b.x_max {
                out.set(x as u32, y as u32, *fill);
            }
        }
    }
    out
}
