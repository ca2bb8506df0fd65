//! Bilinear resampling with half-pixel centers.

use super::image::Plane;

/// Resizes `src` to `out_h x out_w`. Output pixel `x` samples the source at
/// `(x + 0.5) * in_w / out_w - 0.5`, clamped to the valid range, so an
/// identity-size resize returns the input unchanged.
pub fn resize_bilinear(src: &Plane, out_h: usize, out_w: usize) -> Plane {
    assert!(out_h > 0 && out_w > 0, "resize target must be non-empty");
    if out_h == src.height && out_w == src.width {
        return src.clone();
    }
    let xs = taps(src.width, out_w);
    let ys = taps(src.height, out_h);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        let r0 = &src.data[y0 * src.width..(y0 + 1) * src.width];
        let r1 = &src.data[y1 * src.width..(y1 + 1) * src.width];
        for &(x0, x1, fx) in &xs {
            let top = lerp(r0[x0], r0[x1], fx);
            let bottom = lerp(r1[x0], r1[x1], fx);
            data.push(lerp(top, bottom, fy) as f32);
        }
    }
    Plane {
        height: out_h,
        width: out_w,
        data,
    }
}

fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn lerp(a: impl Into<f64>, b: impl Into<f64>, t: f64) -> f64 {
    let (a, b) = (a.into(), b.into());
    a + (b - a) * t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_size_is_exact() {
        let p = Plane::new(2, 3, vec![1.0, 2.5, 3.0, 4.0, 7.0, 9.0]).unwrap();
        assert_eq!(resize_bilinear(&p, 2, 3), p);
    }

    #[test]
    fn constant_stays_constant() {
        let p = Plane::filled(5, 7, 93.0);
        let r = resize_bilinear(&p, 13, 3);
        assert!(r.data.iter().all(|&v| v == 93.0));
    }

    #[test]
    fn ramp_upsample_matches_closed_form() {
        // Columns sample at -0.25, 0.25, 0.75, 1.25 -> clamp -> 0, .25, .75, 1.
        let p = Plane::new(2, 2, vec![0.0, 255.0, 0.0, 255.0]).unwrap();
        let r = resize_bilinear(&p, 2, 4);
        assert_eq!(&r.data[..4], &[0.0, 63.75, 191.25, 255.0]);
        assert_eq!(&r.data[..4], &r.data[4..]);
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let p = Plane::new(1, 4, vec![0.0, 10.0, 20.0, 30.0]).unwrap();
        assert_eq!(resize_bilinear(&p, 1, 2).data, vec![5.0, 25.0]);
    }
}
