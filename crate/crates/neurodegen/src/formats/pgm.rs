//! 8-bit binary PGM export of normalized images.

use neurodegen_core::Image;

/// Maps [-1, 1] linearly onto [0, 255], rounding half away from zero.
pub fn to_gray(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode(image: &Image) -> Vec<u8> {
    let (rows, cols) = image.shape();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(image.as_slice().iter().map(|&v| to_gray(v)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_levels() {
        assert_eq!(to_gray(-1.0), 0);
        assert_eq!(to_gray(1.0), 255);
        // 127.5 rounds up
        assert_eq!(to_gray(0.0), 128);
        assert_eq!(to_gray(-2.0), 0);
        assert_eq!(to_gray(3.0), 255);
    }

    #[test]
    fn header_and_payload() {
        let img = Image::from_vec(2, 3, vec![-1.0, 0.0, 1.0, 1.0, 0.0, -1.0]).unwrap();
        let bytes = encode(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255, 255, 128, 0]);
    }
}
