//! Color cue: instruments are grayish and plain, tissue is reddish and saturated.

use crate::frame::FrameSample;
use crate::map::ProbMap;

// sRGB (D65) to CIE XYZ, rows give X, Y, Z.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const WHITE_X: f64 = 0.950_47;
const WHITE_Y: f64 = 1.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// CIE a* (green-red axis) of an sRGB color with channels in `[0, 1]`.
pub fn lab_a_star(rgb: [f32; 3]) -> f64 {
    let lin = rgb.map(|c| srgb_to_linear(f64::from(c)));
    let dot = |row: [f64; 3]| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    let x = dot(RGB_TO_XYZ[0]) / WHITE_X;
    let y = dot(RGB_TO_XYZ[1]) / WHITE_Y;
    500.0 * (lab_f(x) - lab_f(y))
}

/// The A channel in the 8-bit convention (neutral at 128) divided by 255.
pub fn lab_a_normalized(rgb: [f32; 3]) -> f64 {
    ((lab_a_star(rgb) + 128.0).clamp(0.0, 255.0)) / 255.0
}

/// HSV saturation in `[0, 1]`.
pub fn hsv_saturation(rgb: [f32; 3]) -> f64 {
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    let min = rgb[0].min(rgb[1]).min(rgb[2]);
    if max <= 0.0 {
        0.0
    } else {
        f64::from((max - min) / max)
    }
}

/// Color cue of a single pixel: `(1 - A) * (1 - S)`.
pub fn color_cue_pixel(rgb: [f32; 3]) -> f64 {
    ((1.0 - lab_a_normalized(rgb)) * (1.0 - hsv_saturation(rgb))).clamp(0.0, 1.0)
}

/// Per-pixel product of the inverted LAB A channel and the inverted HSV S channel.
pub fn color_cue(frame: &FrameSample) -> ProbMap {
    let values = frame.rgb.pixels().map(color_cue_pixel).collect();
    ProbMap::new(frame.shape(), values).expect("color cue values lie in [0, 1]")
}
