//! Hounsfield-unit windowing to 8-bit gray levels.

use super::image::Plane;
use super::raster::RawSlice;

/// A display window over the HU axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HuWindow {
    pub center: i32,
    pub width: i32,
}

impl HuWindow {
    /// Standard lung window: center -600 HU, width 1500 HU.
    pub const LUNG: HuWindow = HuWindow {
        center: -600,
        width: 1500,
    };

    /// Maps one HU value to `[0, 255]`:
    /// `floor((clamp(v, low, low + width) - low) * 255 / width + 1/2)` with
    /// `low = center - width / 2`, evaluated in exact integer arithmetic.
    pub fn apply(&self, hu: i16) -> u8 {
        assert!(self.width > 0, "window width must be positive");
        // Work in half-HU units so an odd width keeps `low` integral.
        let low2 = 2 * self.center as i64 - self.width as i64;
        let high2 = low2 + 2 * self.width as i64;
        let v2 = (2 * hu as i64).clamp(low2, high2);
        // (v - low) * 255 / width + 1/2 == (2(v2 - low2) * 255 + 2 width) / (4 width)
        let num = 2 * (v2 - low2) * 255 + 2 * self.width as i64;
        let den = 4 * self.width as i64;
        (num.div_euclid(den)) as u8
    }
}

impl Default for HuWindow {
    fn default() -> Self {
        HuWindow::LUNG
    }
}

pub fn hu_window(hu: i16, center: i32, width: i32) -> u8 {
    HuWindow { center, width }.apply(hu)
}

/// Windows a whole slice into an 8-bit-valued plane.
pub fn window_slice(slice: &RawSlice, window: HuWindow) -> Plane {
    Plane::from_u8(
        slice.height,
        slice.width,
        &slice.pixels.iter().map(|&v| window.apply(v)).collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rational-arithmetic oracle: steps are (v - low) * 255 / width in
    /// exact fractions, rounded half up.
    fn oracle(v: i64, center: i64, width: i64) -> u8 {
        let low_num = 2 * center - width; // low = low_num / 2
        let vc = (2 * v).clamp(low_num, low_num + 2 * width);
        // value = (vc - low_num) * 255 / (2 width)
        let (p, q) = ((vc - low_num) * 255, 2 * width);
        // floor(p/q + 1/2) = floor((2p + q) / 2q)
        ((2 * p + q) / (2 * q)) as u8
    }

    #[test]
    fn lung_window_table() {
        let w = HuWindow::LUNG;
        assert_eq!(w.apply(-1350), 0);
        assert_eq!(w.apply(150), 255);
        assert_eq!(w.apply(-600), 128);
        assert_eq!(w.apply(-2000), 0);
        assert_eq!(w.apply(i16::MAX), 255);
        assert_eq!(w.apply(i16::MIN), 0);
    }

    #[test]
    fn matches_oracle_for_odd_and_even_widths() {
        for (c, wd) in [(-600, 1500), (40, 401), (0, 1), (-1000, 7)] {
            let w = HuWindow { center: c, width: wd };
            for v in (-3000i64..3000).step_by(7) {
                assert_eq!(w.apply(v as i16), oracle(v, c as i64, wd as i64), "v={v} c={c} w={wd}");
            }
        }
    }
}
