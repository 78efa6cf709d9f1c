//! Shared axis conventions: the azimuth grid and the Doppler-bin layout.
//!
//! Every stage that indexes angle or velocity — the teacher chain, label
//! rasterization, detection decoding, and the learnable module's exact
//! initialization — goes through these helpers so the conventions cannot
//! drift apart:
//!
//! * The Doppler axis is FFT-shifted; zero velocity sits at `floor(m/2)`.
//! * The azimuth axis is uniform in `sin(theta)`: bin `b` of `n` maps to
//!   `sin(theta) = (b - floor(n/2)) / (spacing * n)` where `spacing` is the
//!   element spacing in wavelengths. With half-wavelength spacing the grid
//!   spans `[-1, 1)`.

/// Doppler bin that corresponds to zero velocity after the FFT shift.
pub fn doppler_center_bin(n_doppler: usize) -> usize {
    n_doppler / 2
}

/// Signed Doppler bin for a shifted index (negative = receding).
pub fn signed_doppler_bin(index: usize, n_doppler: usize) -> isize {
    index as isize - (n_doppler / 2) as isize
}

/// Uniform sin-space azimuth grid for a zero-padded uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthGrid {
    n_bins: usize,
    /// Element spacing in wavelengths.
    spacing: f64,
}

impl AzimuthGrid {
    pub fn new(n_bins: usize, spacing: f64) -> Self {
        assert!(n_bins > 0 && spacing > 0.0);
        Self { n_bins, spacing }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// `sin(theta)` at bin `b`.
    pub fn sin_at(&self, b: usize) -> f64 {
        debug_assert!(b < self.n_bins);
        (b as f64 - (self.n_bins / 2) as f64) / (self.spacing * self.n_bins as f64)
    }

    /// Angle in radians at bin `b`. Bins whose sin value falls outside
    /// `[-1, 1]` (possible for spacing < 0.5) clamp to the horizon.
    pub fn angle_at(&self, b: usize) -> f64 {
        self.sin_at(b).clamp(-1.0, 1.0).asin()
    }

    /// Continuous (fractional) bin position of a sin value.
    pub fn position_of_sin(&self, s: f64) -> f64 {
        s * self.spacing * self.n_bins as f64 + (self.n_bins / 2) as f64
    }

    /// Bin containing `theta`: the largest bin whose grid sin does not
    /// exceed `sin(theta)`, clamped to the grid.
    pub fn bin_of_angle(&self, theta: f64) -> usize {
        let p = self.position_of_sin(theta.sin()).floor();
        p.clamp(0.0, (self.n_bins - 1) as f64) as usize
    }

    /// Azimuth residual of `theta` within its bin, in radians: the offset
    /// from the bin's grid angle. Non-negative for angles inside the grid.
    pub fn residual_of_angle(&self, theta: f64) -> f64 {
        theta - self.angle_at(self.bin_of_angle(theta))
    }
}
