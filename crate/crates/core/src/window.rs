//! Window partitioning with the cyclic shift used on alternating layers.

use crate::error::{Error, Result};
use crate::matrix::{seeded_fill, DenseMatrix, FillDistribution};

/// Channel-last feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, c: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w * c {
            return Err(Error::InvalidStructure(format!(
                "{} values cannot fill a {h}x{w}x{c} feature map",
                values.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { h, w, c, values })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            values: vec![0.0; h * w * c],
        }
    }

    /// Uniform(-1, 1) features from `seeded_fill`.
    pub fn synthetic(h: usize, w: usize, c: usize, seed: u64) -> Self {
        let values = seeded_fill(h * w, c, seed, FillDistribution::Uniform(1.0)).into_values();
        Self { h, w, c, values }
    }

    /// A `period × period` random tile repeated over the map, plus a little
    /// seeded noise so no two tokens are bit-identical.
    pub fn tiled_texture(h: usize, w: usize, c: usize, period: usize, seed: u64) -> Self {
        let period = period.max(1);
        let tile = seeded_fill(period * period, c, seed, FillDistribution::Uniform(1.0));
        let noise = seeded_fill(h * w, c, seed ^ 0x5eed, FillDistribution::Uniform(0.01));
        let mut values = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let t = tile.row((y % period) * period + x % period);
                let n = noise.row(y * w + x);
                values.extend(t.iter().zip(n).map(|(a, b)| a + b));
            }
        }
        Self { h, w, c, values }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let at = (y * self.w + x) * self.c;
        &self.values[at..at + self.c]
    }

    #[inline]
    fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let at = (y * self.w + x) * self.c;
        &mut self.values[at..at + self.c]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(
            (self.h, self.w, self.c),
            (other.h, other.w, other.c),
            "feature map shapes differ"
        );
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Cyclic shift applied before windowing, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Shift {
    pub dy: usize,
    pub dx: usize,
}

impl Shift {
    pub const NONE: Shift = Shift { dy: 0, dx: 0 };
}

/// Shift for a 1-based layer index: odd layers are unshifted, even layers
/// shift by half a window in both axes.
pub fn parity_shift(layer_index: usize, window_size: usize) -> Shift {
    debug_assert!(layer_index >= 1);
    if layer_index % 2 == 1 {
        Shift::NONE
    } else {
        Shift {
            dy: window_size / 2,
            dx: window_size / 2,
        }
    }
}

/// Reflect an index into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// A feature map cut into non-overlapping `W × W` windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    window: usize,
    shift: Shift,
    height: usize,
    width: usize,
    padded_height: usize,
    padded_width: usize,
    channels: usize,
    windows: Vec<DenseMatrix>,
}

impl WindowBatch {
    #[inline]
    pub fn window_size(&self) -> usize {
        self.window
    }

    #[inline]
    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    #[inline]
    pub fn num_windows(&self) -> usize {
        self.windows.len()
    }

    #[inline]
    pub fn shift(&self) -> Shift {
        self.shift
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Original (unpadded) size.
    pub fn original_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn padded_size(&self) -> (usize, usize) {
        (self.padded_height, self.padded_width)
    }

    pub fn windows(&self) -> &[DenseMatrix] {
        &self.windows
    }

    pub fn window(&self, index: usize) -> &DenseMatrix {
        &self.windows[index]
    }

    /// Replaces every window's token matrix, keeping the geometry.
    pub fn replace_windows(&mut self, windows: Vec<DenseMatrix>) -> Result<()> {
        let n = self.tokens_per_window();
        if windows.len() != self.windows.len()
            || windows
                .iter()
                .any(|m| m.rows() != n || m.cols() != self.channels)
        {
            return Err(Error::GeometryMismatch(format!(
                "expected {} windows of {n}x{}",
                self.windows.len(),
                self.channels
            )));
        }
        self.windows = windows;
        Ok(())
    }

    /// Window and token index that pixel `(y, x)` of the padded, unshifted
    /// map lands in.
    pub fn locate(&self, y: usize, x: usize) -> (usize, usize) {
        let sy = (y + self.padded_height - self.shift.dy % self.padded_height) % self.padded_height;
        let sx = (x + self.padded_width - self.shift.dx % self.padded_width) % self.padded_width;
        let per_row = self.padded_width / self.window;
        let win = (sy / self.window) * per_row + sx / self.window;
        let tok = (sy % self.window) * self.window + sx % self.window;
        (win, tok)
    }
}

/// Reflection-pads `f` on the bottom/right to multiples of `window_size`,
/// rolls it by `shift` and cuts row-major windows with row-major tokens.
pub fn partition(f: &FeatureMap, window_size: usize, shift: Shift) -> Result<WindowBatch> {
    if window_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "window size must be at least 2, got {window_size}"
        )));
    }
    if f.h < window_size || f.w < window_size {
        return Err(Error::InvalidParameter(format!(
            "window size {window_size} exceeds the {}x{} feature map",
            f.h, f.w
        )));
    }
    let ph = f.h.div_ceil(window_size) * window_size;
    let pw = f.w.div_ceil(window_size) * window_size;
    let n = window_size * window_size;
    let (wy_count, wx_count) = (ph / window_size, pw / window_size);
    let mut windows = Vec::with_capacity(wy_count * wx_count);
    for wy in 0..wy_count {
        for wx in 0..wx_count {
            let mut values = Vec::with_capacity(n * f.c);
            for ty in 0..window_size {
                for tx in 0..window_size {
                    let sy = (wy * window_size + ty + shift.dy) % ph;
                    let sx = (wx * window_size + tx + shift.dx) % pw;
                    values.extend_from_slice(f.pixel(reflect(sy, f.h), reflect(sx, f.w)));
                }
            }
            windows.push(DenseMatrix::from_vec(n, f.c, values)?);
        }
    }
    Ok(WindowBatch {
        window: window_size,
        shift,
        height: f.h,
        width: f.w,
        padded_height: ph,
        padded_width: pw,
        channels: f.c,
        windows,
    })
}

/// Inverse of [`partition`]: unwindows, undoes the roll and crops padding.
pub fn merge(b: &WindowBatch) -> FeatureMap {
    let ws = b.window;
    let per_row = b.padded_width / ws;
    let mut out = FeatureMap::zeros(b.height, b.width, b.channels);
    for (win, tokens) in b.windows.iter().enumerate() {
        let (wy, wx) = (win / per_row, win % per_row);
        for t in 0..ws * ws {
            let (ty, tx) = (t / ws, t % ws);
            let y = (wy * ws + ty + b.shift.dy) % b.padded_height;
            let x = (wx * ws + tx + b.shift.dx) % b.padded_width;
            if y < b.height && x < b.width {
                out.pixel_mut(y, x).copy_from_slice(tokens.row(t));
            }
        }
    }
    out
}
