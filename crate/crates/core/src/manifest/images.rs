use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use super::SampleRecord;
use crate::error::{Error, Result};
use crate::masking::Image;

/// Where the pipeline fetches decoded images from.
pub trait ImageSource: Send + Sync {
    fn load(&self, record: &SampleRecord) -> Result<Image>;
}

/// Decodes PNG or JPEG bytes to 8-bit RGB.
pub fn decode_image(bytes: &[u8], id: &str) -> Result<Image> {
    let decoded = image::load_from_memory(bytes).map_err(|e| Error::Image {
        id: id.to_string(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    Image::from_raw(w, h, rgb.into_raw()).map_err(|e| Error::Image {
        id: id.to_string(),
        message: e.to_string(),
    })
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, &path.display().to_string())
}

/// Lossless PNG encoding.
pub fn encode_png(image: &Image) -> Vec<u8> {
    let buf = RgbImage::from_raw(image.width(), image.height(), image.pixels().to_vec())
        .expect("pixel buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding does not fail");
    out.into_inner()
}

pub fn save_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_png(image)).map_err(|e| Error::io(path, e))
}

/// Images stored as files under a root directory, addressed by `image_ref`.
#[derive(Debug, Clone)]
pub struct DirImages {
    root: PathBuf,
}

impl DirImages {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ImageSource for DirImages {
    fn load(&self, record: &SampleRecord) -> Result<Image> {
        let path = self.root.join(&record.image_ref);
        let bytes = std::fs::read(&path).map_err(|e| Error::Image {
            id: record.id.clone(),
            message: format!("{}: {e}", path.display()),
        })?;
        decode_image(&bytes, &record.id)
    }
}

/// Image bytes held in memory, as read from tar shards.
#[derive(Debug, Clone, Default)]
pub struct ShardImages {
    members: BTreeMap<String, Vec<u8>>,
}

impl ShardImages {
    pub fn new(members: BTreeMap<String, Vec<u8>>) -> Self {
        Self { members }
    }

    pub fn bytes(&self, image_ref: &str) -> Option<&[u8]> {
        self.members.get(image_ref).map(Vec::as_slice)
    }
}

impl ImageSource for ShardImages {
    fn load(&self, record: &SampleRecord) -> Result<Image> {
        let bytes = self.bytes(&record.image_ref).ok_or_else(|| Error::Image {
            id: record.id.clone(),
            message: format!("no shard member {:?}", record.image_ref),
        })?;
        decode_image(bytes, &record.id)
    }
}
