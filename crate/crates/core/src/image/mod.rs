//! Image containers, color and geometric primitives, and file I/O.

mod blob;
mod buffer;
mod color;
pub(crate) mod geom;
mod png_io;

pub use blob::{read_blob, read_blobs, write_blob, write_blobs, TensorBlob};
pub use buffer::ImageBuffer;
pub use color::{hsv_to_rgb, rgb_to_hsv, scale_value, to_gray};
pub use geom::{
    crop, hflip, resize_bilinear, resize_nearest, rotate_about_center, rotate_about_center_with,
    Interp,
};
pub use png_io::{read_png, write_png};
