//! Two-row pixel barcodes carrying a 32-bit tag.

use std::collections::BTreeSet;

use crate::masking::{Image, Rgb};

pub const STRIP_WIDTH: u32 = 68;
pub const STRIP_HEIGHT: u32 = 2;
const SYNC: [bool; 4] = [true, false, true, false];
const BITS: u32 = 32;

const WHITE: Rgb = Rgb([255, 255, 255]);
const BLACK: Rgb = Rgb([0, 0, 0]);

/// Column pattern of a strip: `true` is white.
pub fn strip_columns(tag: u32) -> [bool; STRIP_WIDTH as usize] {
    let mut cols = [false; STRIP_WIDTH as usize];
    cols[..4].copy_from_slice(&SYNC);
    for i in 0..BITS {
        let bit = (tag >> (BITS - 1 - i)) & 1 == 1;
        let c = 4 + 2 * i as usize;
        cols[c] = bit;
        cols[c + 1] = bit;
    }
    cols
}

/// A standalone 68x2 image holding the strip for `tag`.
pub fn encode_tag_strip(tag: u32) -> Image {
    let mut img = Image::filled(STRIP_WIDTH, STRIP_HEIGHT, BLACK);
    paint_tag_strip(&mut img, 0, 0, tag);
    img
}

/// Draws the strip for `tag` with its top-left corner at `(x, y)`.
///
/// # Panics
/// If the strip does not fit inside the image.
pub fn paint_tag_strip(image: &mut Image, x: u32, y: u32, tag: u32) {
    assert!(
        x + STRIP_WIDTH <= image.width() && y + STRIP_HEIGHT <= image.height(),
        "strip at ({x},{y}) does not fit a {}x{} image",
        image.width(),
        image.height()
    );
    for (dx, white) in strip_columns(tag).into_iter().enumerate() {
        let color = if white { WHITE } else { BLACK };
        for dy in 0..STRIP_HEIGHT {
            image.set(x + dx as u32, y + dy, color);
        }
    }
}

fn bitmap(image: &Image) -> Vec<bool> {
    image
        .pixels()
        .chunks_exact(3)
        .map(|p| Rgb([p[0], p[1], p[2]]).luma() >= 128)
        .collect()
}

fn decode_at(bits: &[bool], width: usize, x: usize, y: usize) -> Option<u32> {
    let top = &bits[y * width + x..y * width + x + STRIP_WIDTH as usize];
    let bottom = &bits[(y + 1) * width + x..(y + 1) * width + x + STRIP_WIDTH as usize];
    if top[..4] != SYNC || bottom[..4] != SYNC {
        return None;
    }
    let mut tag = 0u32;
    for i in 0..BITS as usize {
        let c = 4 + 2 * i;
        let b = top[c];
        if top[c + 1] != b || bottom[c] != b || bottom[c + 1] != b {
            return None;
        }
        tag = (tag << 1) | u32::from(b);
    }
    Some(tag)
}

/// Reads the strip whose top-left corner is at `(x, y)`, if one is there.
pub fn decode_tag_strip_at(image: &Image, x: u32, y: u32) -> Option<u32> {
    if x + STRIP_WIDTH > image.width() || y + STRIP_HEIGHT > image.height() {
        return None;
    }
    decode_at(&bitmap(image), image.width() as usize, x as usize, y as usize)
}

/// Every tag whose strip appears anywhere in the image. Regions without a
/// valid sync prefix contribute nothing.
pub fn decode_tag_strips(image: &Image) -> BTreeSet<u32> {
    let mut found = BTreeSet::new();
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < STRIP_WIDTH as usize || h < STRIP_HEIGHT as usize {
        return found;
    }
    let bits = bitmap(image);
    for y in 0..h - 1 {
        for x in 0..=w - STRIP_WIDTH as usize {
            if let Some(tag) = decode_at(&bits, w, x, y) {
                found.insert(tag);
            }
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_examples() {
        for tag in [0, 1, 0xDEAD_BEEF, u32::MAX] {
            assert_eq!(decode_tag_strips(&encode_tag_strip(tag)), BTreeSet::from([tag]));
        }
    }

    #[test]
    fn layout_matches_reference_pixels() {
        let img = encode_tag_strip(0x8000_0001);
        let row: Vec<u8> = (0..STRIP_WIDTH).map(|x| img.get(x, 1).0[0]).collect();
        assert_eq!(&row[..6], &[255, 0, 255, 0, 255, 255]);
        assert!(row[6..66].iter().all(|&v| v == 0));
        assert_eq!(&row[66..], &[255, 255]);
    }

    #[test]
    fn exhaustive_low_sixteen_bits() {
        for tag in 0..=u16::MAX as u32 {
            let img = encode_tag_strip(tag);
            assert_eq!(decode_tag_strip_at(&img, 0, 0), Some(tag));
        }
    }

    #[test]
    fn noise_has_no_false_positives() {
        let mut hits = 0;
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pixels = (0..96 * 64 * 3).map(|_| rng.random::<u8>()).collect();
            let img = Image::from_raw(96, 64, pixels).unwrap();
            hits += usize::from(!decode_tag_strips(&img).is_empty());
        }
        assert!(hits == 0, "{hits} noisy images decoded a strip");
    }

    #[test]
    fn one_pixel_damage_invalidates() {
        let mut img = encode_tag_strip(77);
        img.set(10, 1, Rgb([128, 128, 128]));
        img.set(11, 1, Rgb([10, 10, 10]));
        assert!(decode_tag_strips(&img).is_empty());
    }

    #[test]
    fn narrow_images_decode_nothing() {
        assert!(decode_tag_strips(&Image::filled(67, 4, WHITE)).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]
        #[test]
        fn roundtrip_anywhere(tag: u32, other: u32, x in 0u32..20, y in 0u32..6) {
            let mut img = Image::filled(100, 16, Rgb([40, 90, 140]));
            paint_tag_strip(&mut img, x, y, tag);
            paint_tag_strip(&mut img, 100 - STRIP_WIDTH, 12, other);
            prop_assert_eq!(decode_tag_strips(&img), BTreeSet::from([tag, other]));
        }
    }
}
