use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

fn data_error(path: &Path, msg: String) -> Error {
    Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

/// Read an 8-bit grayscale or RGB PNG, scaling samples by 1/255.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| data_error(path, e.to_string()))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(data_error(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(data_error(path, format!("unsupported color type {other:?}"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| data_error(path, "image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| data_error(path, e.to_string()))?;
    let stride = frame.line_size;
    let mut data = vec![0f32; h * w * channels];
    for y in 0..h {
        let row = &buf[y * stride..y * stride + w * channels];
        for x in 0..w {
            for c in 0..channels {
                data[(c * h + y) * w + x] = row[x * channels + c] as f32 / 255.0;
            }
        }
    }
    ImageBuffer::from_vec(h, w, channels, data)
}

/// Write a 1- or 3-channel image as 8-bit PNG (values clamped to `[0, 1]`, rounded).
pub fn write_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::invalid(format!("cannot write {c}-channel image as PNG"))),
    };
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut bytes = vec![0u8; h * w * ch];
    for c in 0..ch {
        let plane = img.channel(c);
        for (i, &v) in plane.iter().enumerate() {
            bytes[i * ch + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| data_error(path, e.to_string());
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn roundtrip_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = RngStream::new(3);
        for ch in [1, 3] {
            let data = (0..5 * 7 * ch).map(|_| rng.below(256) as f32 / 255.0).collect();
            let img = ImageBuffer::from_vec(5, 7, ch, data).unwrap();
            let p = dir.path().join(format!("x{ch}.png"));
            write_png(&img, &p).unwrap();
            assert_eq!(read_png(&p).unwrap(), img);
        }
    }

    #[test]
    fn white_pixel_and_ramp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        write_png(&ImageBuffer::filled(1, 1, 1, 1.0), &p).unwrap();
        assert_eq!(read_png(&p).unwrap().data(), &[1.0]);

        let ramp: Vec<f32> = (0..256).map(|k| k as f32 / 255.0).collect();
        let img = ImageBuffer::from_vec(1, 256, 1, ramp).unwrap();
        write_png(&img, &p).unwrap();
        let back = read_png(&p).unwrap();
        for (k, v) in back.data().iter().enumerate() {
            assert_eq!(*v, k as f32 / 255.0);
        }
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_png(dir.path().join("missing.png")), Err(Error::Io { .. })));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(matches!(read_png(&junk), Err(Error::Io { .. })));

        // 16-bit depth is rejected.
        let p16 = dir.path().join("d16.png");
        let f = File::create(&p16).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(f), 1, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 0]).unwrap();
        w.finish().unwrap();
        assert!(matches!(read_png(&p16), Err(Error::Io { .. })));

        assert!(write_png(&ImageBuffer::zeros(2, 2, 2), dir.path().join("two.png")).is_err());
    }
}
