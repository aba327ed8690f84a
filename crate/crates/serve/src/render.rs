use std::io::Cursor;

use image::{GrayImage, ImageFormat};

/// Encodes row-major `[0, 1]` pixels as an 8-bit grayscale PNG. Values are
/// clamped; non-finite values render black.
pub fn grayscale_png(pixels: &[f32], width: u32, height: u32) -> Vec<u8> {
    assert_eq!(pixels.len(), (width * height) as usize, "pixel count");
    let bytes = pixels.iter().map(|&v| to_u8(v)).collect();
    let img = GrayImage::from_raw(width, height, bytes).expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encoding to memory");
    out.into_inner()
}

fn to_u8(v: f32) -> u8 {
    if v.is_finite() {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    } else {
        0
    }
}

/// Tiles equally sized images into a `cols`-wide sheet with `gap` black
/// pixels between tiles, returned as PNG.
pub fn contact_sheet(tiles: &[&[f32]], side: u32, cols: u32, gap: u32) -> Vec<u8> {
    let rows = (tiles.len() as u32).div_ceil(cols.max(1));
    let step = side + gap;
    let (w, h) = (cols * step - gap, rows.max(1) * step - gap);
    let mut sheet = vec![0.0f32; (w * h) as usize];
    for (k, tile) in tiles.iter().enumerate() {
        let (r0, c0) = ((k as u32 / cols) * step, (k as u32 % cols) * step);
        for y in 0..side {
            for x in 0..side {
                sheet[((r0 + y) * w + c0 + x) as usize] = tile[(y * side + x) as usize];
            }
        }
    }
    grayscale_png(&sheet, w, h)
}
