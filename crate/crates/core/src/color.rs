//! Color-space conversions shared by the whole pipeline.
//!
//! Scalar intensity is Rec.601 luma; region appearance statistics use CIE
//! L*a*b* under a D65 white point. Both are fixed here so every stage sees
//! the same numbers.

/// CIE L*a*b* color. `l` is in [0, 100]; `a` and `b` are signed chroma
/// components (the sRGB gamut stays within roughly ±128).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

/// Rec.601 luma, rounded to the nearest integer level.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round() as u8
}

// sRGB → XYZ (D65). The white point is defined as the row sums of this
// matrix so that pure white maps to a = b = 0 exactly.
const M: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XN: f64 = M[0][0] + M[0][1] + M[0][2];
const YN: f64 = M[1][0] + M[1][1] + M[1][2];
const ZN: f64 = M[2][0] + M[2][1] + M[2][2];

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> u8 {
    let c = if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// sRGB (8-bit) to CIE L*a*b* under D65.
pub fn rgb_to_lab(r: u8, g: u8, b: u8) -> LabColor {
    let rl = srgb_to_linear(r);
    let gl = srgb_to_linear(g);
    let bl = srgb_to_linear(b);

    let x = M[0][0] * rl + M[0][1] * gl + M[0][2] * bl;
    let y = M[1][0] * rl + M[1][1] * gl + M[1][2] * bl;
    let z = M[2][0] * rl + M[2][1] * gl + M[2][2] * bl;

    let fx = lab_f(x / XN);
    let fy = lab_f(y / YN);
    let fz = lab_f(z / ZN);

    LabColor {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// Inverse of [`rgb_to_lab`]; used by the round-trip tests and nowhere in
/// the pipeline itself.
pub fn lab_to_rgb(lab: LabColor) -> (u8, u8, u8) {
    let fy = (lab.l + 16.0) / 116.0;
    let fx = fy + lab.a / 500.0;
    let fz = fy - lab.b / 200.0;

    let x = XN * lab_f_inv(fx);
    let y = YN * lab_f_inv(fy);
    let z = ZN * lab_f_inv(fz);

    let rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;

    (linear_to_srgb(rl), linear_to_srgb(gl), linear_to_srgb(bl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn luma_extremes() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(0, 0, 0), 0);
        // round(0.299 * 255) = round(76.245)
        assert_eq!(luma(255, 0, 0), 76);
    }

    #[test]
    fn lab_white_and_black() {
        let white = rgb_to_lab(255, 255, 255);
        assert!((white.l - 100.0).abs() < 0.01);
        assert!(white.a.abs() < 0.01);
        assert!(white.b.abs() < 0.01);

        let black = rgb_to_lab(0, 0, 0);
        assert!(black.l.abs() < 1e-9);
        assert!(black.a.abs() < 1e-9);
        assert!(black.b.abs() < 1e-9);
    }

    #[test]
    fn lab_mid_gray_is_neutral() {
        let gray = rgb_to_lab(119, 119, 119);
        assert!(gray.a.abs() < 0.5);
        assert!(gray.b.abs() < 0.5);
        assert!(gray.l > 0.0 && gray.l < 100.0);
    }

    proptest! {
        #[test]
        fn luma_gray_is_identity(v in 0u8..=255) {
            prop_assert_eq!(luma(v, v, v), v);
        }

        #[test]
        fn luma_monotone_in_each_channel(
            r in 0u8..255, g in 0u8..=255, b in 0u8..=255,
        ) {
            prop_assert!(luma(r + 1, g, b) >= luma(r, g, b));
            prop_assert!(luma(g, r + 1, b) >= luma(g, r, b));
            prop_assert!(luma(g, b, r + 1) >= luma(g, b, r));
        }

        // 1000-case random sweep: RGB -> LAB -> RGB stays within one level.
        #[test]
        fn lab_round_trip_within_one_level(
            r in 0u8..=255, g in 0u8..=255, b in 0u8..=255,
        ) {
            let (r2, g2, b2) = lab_to_rgb(rgb_to_lab(r, g, b));
            prop_assert!((r as i16 - r2 as i16).abs() <= 1);
            prop_assert!((g as i16 - g2 as i16).abs() <= 1);
            prop_assert!((b as i16 - b2 as i16).abs() <= 1);
        }
    }
}
