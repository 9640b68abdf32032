//! Binary portable graymap (P5) output.

use std::path::Path;

use crate::error::Result;

/// Encodes a row-major `h x w` image, clamping values to `[0, 1]` and
/// scaling to 8 bits.
pub fn encode(h: usize, w: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), h * w, "image has {} values, expected {h}x{w}", values.len());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write(path: &Path, h: usize, w: usize, values: &[f64]) -> Result<()> {
    std::fs::write(path, encode(h, w, values))?;
    Ok(())
}
