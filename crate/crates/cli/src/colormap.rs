//! 256-entry viridis-like colormap, built by linear interpolation between
//! eleven anchor colors. Luminance increases monotonically with the input,
//! so the brightest pixel of a rendered map is its largest value.

const ANCHORS: [[f64; 3]; 11] = [
    [0.267, 0.005, 0.329],
    [0.283, 0.141, 0.458],
    [0.254, 0.265, 0.530],
    [0.207, 0.372, 0.553],
    [0.164, 0.471, 0.558],
    [0.128, 0.567, 0.551],
    [0.135, 0.659, 0.518],
    [0.267, 0.749, 0.441],
    [0.478, 0.821, 0.318],
    [0.741, 0.873, 0.150],
    [0.993, 0.906, 0.144],
];

/// The full lookup table, index = quantized intensity.
pub fn table() -> [[u8; 3]; 256] {
    let mut out = [[0u8; 3]; 256];
    for (i, entry) in out.iter_mut().enumerate() {
        let t = i as f64 / 255.0 * (ANCHORS.len() - 1) as f64;
        let lo = (t.floor() as usize).min(ANCHORS.len() - 2);
        let frac = t - lo as f64;
        for c in 0..3 {
            let v = ANCHORS[lo][c] * (1.0 - frac) + ANCHORS[lo + 1][c] * frac;
            entry[c] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
