//! Synthetic image-caption fixtures and utility fits.

mod pool;
mod strip;
mod utility;

pub use pool::{
    base_example, base_examples, build_pilot, build_pools, overlay_variant, render_caption, title_for, PilotSpec,
    PoolSpec, SynthPool, Variant, BOX_HEIGHT, BOX_TOP_MIN, IMAGE_HEIGHT, IMAGE_WIDTH, MIN_POOL_SOURCES,
};
pub use strip::{
    decode_tag_strip_at, decode_tag_strips, encode_tag_strip, paint_tag_strip, strip_columns, STRIP_HEIGHT, STRIP_WIDTH,
};
pub use utility::{read_utility_csv, utility_slope, UtilityPoint};
