use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stft::Spectrogram;
use crate::error::{invalid, Result};
use crate::io::write_matrix_csv;

/// Coordinates given to the spectrogram pixels before projecting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisNormalization {
    /// Time and frequency axes are each mapped onto `[0, 1]`.
    MinMax,
    /// Unit spacing per pixel on both axes.
    Pixel,
}

/// Line-integral projections of a spectrogram image.
///
/// Time runs along `x` and frequency along `y`. At angle `theta` the
/// integration direction is `(sin theta, cos theta)`, so 0 deg integrates
/// along frequency (one value per time column) and 90 deg along time (one
/// value per frequency row). A ridge of constant frequency peaks at 90 deg;
/// a rising ridge peaks below 90 deg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadonMap {
    pub angles: Vec<f64>,
    pub offsets: Vec<f64>,
    /// `response[angle][offset]`.
    pub response: Vec<Vec<f64>>,
    pub normalization: AxisNormalization,
    /// Pixel spacing `(dx, dy)` in the normalized coordinates.
    pub spacing: (f64, f64),
}

impl RadonMap {
    pub fn offset_step(&self) -> f64 {
        if self.offsets.len() > 1 {
            self.offsets[1] - self.offsets[0]
        } else {
            0.0
        }
    }

    /// Integral of the projection at angle index `a` over the offsets.
    pub fn mass(&self, a: usize) -> f64 {
        self.response[a].iter().sum::<f64>() * self.offset_step()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv("angle_deg", &self.angles, &self.offsets, &self.response, out)
    }

    pub fn write_meta_json<W: Write>(&self, out: W) -> Result<()> {
        let meta = serde_json::json!({
            "normalization": self.normalization,
            "pixel_spacing": [self.spacing.0, self.spacing.1],
            "direction": "(sin theta, cos theta) in (time, frequency)",
            "interpolation": "bilinear, zero outside the image",
        });
        serde_json::to_writer_pretty(out, &meta)?;
        Ok(())
    }
}

/// Sine and cosine of an angle in degrees, exact on multiples of 90.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let q = deg / 90.0;
    if q == q.round() {
        match (q as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        deg.to_radians().sin_cos()
    }
}

struct Image<'a> {
    data: &'a [Vec<f64>],
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
}

impl Image<'_> {
    fn pixel(&self, i: i64, j: i64) -> f64 {
        if i < 0 || j < 0 || i as usize >= self.ny || j as usize >= self.nx {
            0.0
        } else {
            self.data[i as usize][j as usize]
        }
    }

    fn bilinear(&self, x: f64, y: f64) -> f64 {
        let u = x / self.dx;
        let v = y / self.dy;
        let j0 = u.floor();
        let i0 = v.floor();
        if j0 < -1.0 || i0 < -1.0 || j0 > self.nx as f64 || i0 > self.ny as f64 {
            return 0.0;
        }
        let (fu, fv) = (u - j0, v - i0);
        let (j0, i0) = (j0 as i64, i0 as i64);
        (1.0 - fv) * ((1.0 - fu) * self.pixel(i0, j0) + fu * self.pixel(i0, j0 + 1))
            + fv * ((1.0 - fu) * self.pixel(i0 + 1, j0) + fu * self.pixel(i0 + 1, j0 + 1))
    }
}

/// Radon transform of the spectrogram magnitude with min-max normalized
/// axes.
pub fn radon(spec: &Spectrogram, angles: &[f64]) -> Result<RadonMap> {
    radon_with(spec, angles, AxisNormalization::MinMax)
}

pub fn radon_with(spec: &Spectrogram, angles: &[f64], normalization: AxisNormalization) -> Result<RadonMap> {
    radon_image(&spec.magnitude, angles, normalization)
}

/// Radon transform of an image stored `image[y][x]`.
pub fn radon_image(image: &[Vec<f64>], angles: &[f64], normalization: AxisNormalization) -> Result<RadonMap> {
    let ny = image.len();
    let nx = image.first().map_or(0, Vec::len);
    if ny == 0 || nx == 0 {
        return invalid("cannot project an empty spectrogram");
    }
    if image.iter().any(|r| r.len() != nx) {
        return invalid("spectrogram rows have unequal lengths");
    }
    if image.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return invalid("spectrogram magnitudes must be finite and nonnegative");
    }
    if angles.is_empty() || angles.iter().any(|a| !a.is_finite()) {
        return invalid("angle grid must be nonempty and finite");
    }
    let span = |n: usize| if n > 1 { 1.0 / (n - 1) as f64 } else { 1.0 };
    let (dx, dy) = match normalization {
        AxisNormalization::MinMax => (span(nx), span(ny)),
        AxisNormalization::Pixel => (1.0, 1.0),
    };
    let img = Image { data: image, nx, ny, dx, dy };
    let cx = (nx - 1) as f64 * dx / 2.0;
    let cy = (ny - 1) as f64 * dy / 2.0;
    // half-diagonal of the support, which extends one pixel past the nodes
    let radius = (cx + dx).hypot(cy + dy);
    let step = dx.min(dy) / 2.0;
    let k = (radius / step).ceil() as i64;
    let offsets: Vec<f64> = (-k..=k).map(|m| m as f64 * step).collect();

    let response = angles
        .par_iter()
        .map(|&deg| {
            let (s, c) = sin_cos_deg(deg);
            offsets
                .iter()
                .map(|&off| {
                    let (px, py) = (cx + off * c, cy - off * s);
                    let sum: f64 = (-k..=k).map(|m| m as f64 * step).map(|r| img.bilinear(px + r * s, py + r * c)).sum();
                    sum * step
                })
                .collect()
        })
        .collect();
    Ok(RadonMap { angles: angles.to_vec(), offsets, response, normalization, spacing: (dx, dy) })
}

/// Angle of the largest response over all angles and offsets; exact ties
/// go to the angle closest to 90 deg.
pub fn radon_peak_angle(map: &RadonMap) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (a, row) in map.angles.iter().zip(&map.response) {
        for &v in row {
            let better = match best {
                None => true,
                Some((bv, ba)) => v > bv || (v == bv && (a - 90.0).abs() < (ba - 90.0).abs()),
            };
            if better {
                best = Some((v, *a));
            }
        }
    }
    best.map(|(_, a)| a).ok_or_else(|| crate::Error::InvalidArgument("empty Radon map".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|k| k as f64 * 180.0 / n as f64).collect()
    }

    fn assert_matches(got: &[f64], expect: &[f64]) {
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() <= 1e-12 * (1.0 + e.abs()), "{g} vs {e}");
        }
    }

    /// Response sampled at the offsets of each pixel column (0 deg) or row
    /// (90 deg).
    fn axis_profiles(img: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let ny = img.len();
        let nx = img[0].len();
        let map = radon_image(img, &[0.0, 90.0], AxisNormalization::MinMax).unwrap();
        let (dx, dy) = map.spacing;
        let pick = |a: usize, off: f64| {
            let i = map.offsets.iter().position(|&o| (o - off).abs() < 1e-12).expect("offset on grid");
            map.response[a][i]
        };
        let cols: Vec<f64> = (0..nx).map(|j| pick(0, (j as f64 - (nx - 1) as f64 / 2.0) * dx) / dy).collect();
        let rows: Vec<f64> = (0..ny).map(|i| pick(1, ((ny - 1) as f64 / 2.0 - i as f64) * dy) / dx).collect();
        let col_sums = (0..nx).map(|j| img.iter().map(|r| r[j]).sum()).collect();
        let row_sums = img.iter().map(|r| r.iter().sum()).collect();
        (cols, col_sums, rows, row_sums)
    }

    #[test]
    fn horizontal_ridge_peaks_at_ninety() {
        let mut img = vec![vec![0.0; 40]; 30];
        img[12].iter_mut().for_each(|v| *v = 1.0);
        let map = radon_image(&img, &grid(180), AxisNormalization::MinMax).unwrap();
        assert_eq!(radon_peak_angle(&map).unwrap(), 90.0);
    }

    #[test]
    fn sloped_ridge_peaks_at_its_angle() {
        // line y = x tan(30 deg) in pixel units, direction (sin 60, cos 60)
        let n = 81;
        let mut img = vec![vec![0.0; n]; n];
        for j in 0..n {
            let y = (j as f64 * 30f64.to_radians().tan()).round() as usize;
            if y < n {
                img[y][j] = 1.0;
            }
        }
        let map = radon_image(&img, &grid(180), AxisNormalization::Pixel).unwrap();
        let peak = radon_peak_angle(&map).unwrap();
        assert!((peak - 60.0).abs() <= 2.0, "peak at {peak}");
    }

    #[test]
    fn uniform_map_ties_to_ninety() {
        let map = RadonMap {
            angles: grid(36),
            offsets: vec![0.0, 1.0],
            response: vec![vec![1.0; 2]; 36],
            normalization: AxisNormalization::MinMax,
            spacing: (1.0, 1.0),
        };
        assert_eq!(radon_peak_angle(&map).unwrap(), 90.0);
    }

    #[test]
    fn rejects_empty_input() {
        assert!(radon_image(&[], &[0.0], AxisNormalization::MinMax).is_err());
        assert!(radon_image(&[vec![]], &[0.0], AxisNormalization::MinMax).is_err());
        assert!(radon_image(&[vec![1.0]], &[], AxisNormalization::MinMax).is_err());
        assert!(radon_image(&[vec![-1.0]], &[0.0], AxisNormalization::MinMax).is_err());
        let empty = RadonMap { angles: vec![], offsets: vec![], response: vec![], normalization: AxisNormalization::Pixel, spacing: (1.0, 1.0) };
        assert!(radon_peak_angle(&empty).is_err());
    }

    #[test]
    fn wide_image_axis_sums() {
        // 41 columns and 21 rows: dx = dy / 2
        let img: Vec<Vec<f64>> = (0..21).map(|i| (0..41).map(|j| ((i * 7 + j * 3) % 5) as f64).collect()).collect();
        let (cols, col_sums, rows, row_sums) = axis_profiles(&img);
        assert_matches(&cols, &col_sums);
        assert_matches(&rows, &row_sums);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn axis_aligned_projections_are_sums(n in 2usize..14, vals in proptest::collection::vec(0.0f64..5.0, 196)) {
            let img: Vec<Vec<f64>> = (0..n).map(|i| vals[i * 14..i * 14 + n].to_vec()).collect();
            let (cols, col_sums, rows, row_sums) = axis_profiles(&img);
            for (g, e) in cols.iter().zip(&col_sums).chain(rows.iter().zip(&row_sums)) {
                prop_assert!((g - e).abs() <= 1e-9 * (1.0 + e.abs()));
            }
        }

        #[test]
        fn mass_is_conserved_per_angle(
            nx in 8usize..30,
            ny in 8usize..30,
            vals in proptest::collection::vec(0.0f64..1.0, 900),
            angle in 0.0f64..180.0,
        ) {
            let img: Vec<Vec<f64>> = (0..ny).map(|i| vals[i * 30..i * 30 + nx].to_vec()).collect();
            let map = radon_image(&img, &[angle], AxisNormalization::MinMax).unwrap();
            let (dx, dy) = map.spacing;
            let total: f64 = img.iter().flatten().sum::<f64>() * dx * dy;
            prop_assert!(map.response[0].iter().all(|&v| v >= 0.0));
            prop_assert!((map.mass(0) / total - 1.0).abs() < 0.01, "mass {} vs {}", map.mass(0), total);
        }
    }
}
