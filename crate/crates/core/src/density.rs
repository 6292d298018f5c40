//! Gaussian density maps: rasterizing head annotations and recovering counts.
//!
//! Each head point contributes a truncated Gaussian kernel renormalized so its
//! in-image mass is exactly one, which makes `sum(map) == number of heads` an
//! exact invariant rather than an approximation (border truncation included).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::datamodel::HeadPoints;
use crate::error::{Error, Result};

/// Truncation radius in units of sigma.
pub const TRUNCATION_SIGMAS: f64 = 4.0;

/// Default kernel width in pixels.
pub const DEFAULT_SIGMA: f64 = 4.0;

/// Non-negative per-pixel map whose integral is the crowd count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub values: Array2<f64>,
}

impl DensityMap {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(
                "density map must be finite and non-negative".into(),
            ));
        }
        Ok(DensityMap { values })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        DensityMap { values: Array2::zeros((h, w)) }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Rasterize head points into a density map of `h` x `w` pixels.
///
/// The kernel is sampled from the continuous Gaussian at pixel centers
/// (integer coordinates), truncated at [`TRUNCATION_SIGMAS`] * sigma, and each
/// head's in-image mass is renormalized to exactly one before accumulation.
pub fn gaussian_density_map(
    heads: &HeadPoints,
    h: usize,
    w: usize,
    sigma: f64,
) -> Result<DensityMap> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let mut map = Array2::<f64>::zeros((h, w));
    let radius = TRUNCATION_SIGMAS * sigma;
    let inv_two_sigma sq = ();
    let _ = inv_two_sigmasq;
    for &(r, c) in heads.points() {
        if !(0.0..h as f64).contains(&r) || !(0.0..w as f64).contains(&c) {
            return Err(Error::Validation(format!(
                "head point ({r}, {c}) outside {h}x{w} image"
            )));
        }
        let r0 = ((r - radius).ceil().max(0.0)) as usize;
        let r1 = ((r + radius).floor().min((h - 1) as f64)) as usize;
        let c0 = ((c - radius).ceil().max(0.0)) as usize;
        let c1 = ((c + radius).floor().min((w - 1) as f64)) as usize;
        let mut mass = 0.0;
        for i in r0..=r1 {
            for j in c0..=c1 {
                let d2 = (i as f64 - r).powi(2) + (j as f64 - c).powi(2);
                mass += (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        // The window always contains the nearest pixel, so mass > 0.
        for i in r0..=r1 {
            for j in c0..=c1 {
                let d2 = (i as f64 - r).powi(2) + (j as f64 - c).powi(2);
                map[[i, j]] += (-d2 / (2.0 * sigma * sigma)).exp() / mass;
            }
        }
    }
    Ok(DensityMap { values: map })
}

/// Crowd count = integral of the density map.
pub fn count_from_density(map: &DensityMap) -> f64 {
    map.values.sum()
}

const DENS_MAGIC: &[u8; 8] = b"DENSMAP1";

/// Serialize as a 16-byte header (magic, H, W as u32 LE) followed by
/// row-major f32 LE values.
pub fn save_density(map: &DensityMap, path: &Path) -> Result<()> {
    let (h, w) = map.dims();
    let mut buf = Vec::with_capacity(16 + 4 * h * w);
    buf.extend_from_slice(DENS_MAGIC);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for v in map.values.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_density(path: &Path) -> Result<DensityMap> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[..8] != DENS_MAGIC {
        return Err(Error::format(path, "bad density-map magic"));
    }
    let h = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut data = vec![0u8; 4 * h * w];
    file.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
    let values = Array2::from_shape_vec(
        (h, w),
        data.chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
    )
    .unwrap();
    DensityMap::new(values)
}

/// False-color rendering for reports: dark blue (low) through cyan, yellow,
/// to red (high), normalized by the map maximum.
pub fn density_to_png(map: &DensityMap, path: &Path) -> Result<()> {
    let (h, w) = map.dims();
    let max = map.values.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let t = (map.values[[i, j]] / max).clamp(0.0, 1.0);
            img.put_pixel(j as u32, i as u32, image::Rgb(colormap(t)));
        }
    }
    let mut out = Vec::new();
    {
        let enc = image::codecs::png::PngEncoder::new(&mut out);
        use image::ImageEncoder;
        enc.write_image(img.as_raw(), w as u32, h as u32, image::ColorType::Rgb8)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

fn colormap(t: f64) -> [u8; 3] {
    // Piecewise-linear ramp over anchors (position, rgb).
    const ANCHORS: [(f64, [f64; 3]); 5] = [
        (0.00, [10.0, 10.0, 60.0]),
        (0.25, [20.0, 80.0, 200.0]),
        (0.50, [30.0, 200.0, 200.0]),
        (0.75, [240.0, 220.0, 40.0]),
        (1.00, [220.0, 30.0, 30.0]),
    ];
    let mut rgb = ANCHORS[ANCHORS.len() - 1].1;
    for k in 0..ANCHORS.len() - 1 {
        let (t0, c0) = ANCHORS[k];
        let (t1, c1) = ANCHORS[k + 1];
        if t <= t1 {
            let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            rgb = [
                c0[0] + a * (c1[0] - c0[0]),
                c0[1] + a * (c1[1] - c0[1]),
                c0[2] + a * (c1[2] - c0[2]),
            ];
            break;
        }
    }
    [rgb[0] as u8, rgb[1] as u8, rgb[2] as u8]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn heads(pts: &[(f64, f64)], h: usize, w: usize) -> HeadPoints {
        HeadPoints::new(pts.to_vec(), h, w).unwrap()
    }

    /// Independent oracle: per-pixel double loop over heads, recomputing each
    /// head's normalization by scanning its window.
    fn brute_force_map(pts: &[(f64, f64)], h: usize, w: usize, sigma: f64) -> Array2<f64> {
        let radius = TRUNCATION_SIGMAS * sigma;
        let norm: Vec<f64> = pts
            .iter()
            .map(|&(r, c)| {
                let mut s = 0.0;
                for i in 0..h {
                    for j in 0..w {
                        if (i as f64 - r).abs() <= radius && (j as f64 - c).abs() <= radius {
                            let d2 = (i as f64 - r).powi(2) + (j as f64 - c).powi(2);
                            s += (-d2 / (2.0 * sigma * sigma)).exp();
                        }
                    }
                }
                s
            })
            .collect();
        Array2::from_shape_fn((h, w), |(i, j)| {
            pts.iter()
                .enumerate()
                .map(|(k, &(r, c))| {
                    if (i as f64 - r).abs() <= radius && (j as f64 - c).abs() <= radius {
                        let d2 = (i as f64 - r).powi(2) + (j as f64 - c).powi(2);
                        (-d2 / (2.0 * sigma * sigma)).exp() / norm[k]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
    }

    #[test]
    fn empty_heads_give_zero_map() {
        let map = gaussian_density_map(&heads(&[], 32, 32), 32, 32, 4.0).unwrap();
        assert_eq!(count_from_density(&map), 0.0);
    }

    #[test]
    fn single_head_has_unit_mass_even_in_corner() {
        for &pt in &[(16.0, 16.0), (1.0, 1.0), (0.0, 31.0), (30.7, 0.2)] {
            let map = gaussian_density_map(&heads(&[pt], 32, 32), 32, 32, 4.0).unwrap();
            assert!(
                (count_from_density(&map) - 1.0).abs() < 1e-9,
                "mass for head at {pt:?}"
            );
        }
    }

    #[test]
    fn five_heads_match_brute_force_oracle() {
        let pts = [
            (10.0, 12.5),
            (20.25, 40.0),
            (55.5, 55.5),
            (3.0, 60.0),
            (63.0, 1.0),
        ];
        let map = gaussian_density_map(&heads(&pts, 64, 64), 64, 64, 4.0).unwrap();
        assert!((count_from_density(&map) - 5.0).abs() < 1e-6);
        let oracle = brute_force_map(&pts, 64, 64, 4.0);
        let worst = map
            .values
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-12, "worst deviation {worst}");
    }

    #[test]
    fn count_of_constant_map() {
        let map = DensityMap::new(Array2::from_elem((4, 4), 0.25)).unwrap();
        assert!((count_from_density(&map) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn linearity_over_disjoint_point_sets() {
        let a = [(5.0, 5.0), (20.0, 20.0)];
        let b = [(40.0, 40.0), (12.0, 50.0), (60.0, 8.0)];
        let both: Vec<_> = a.iter().chain(b.iter()).cloned().collect();
        let ma = gaussian_density_map(&heads(&a, 64, 64), 64, 64, 4.0).unwrap();
        let mb = gaussian_density_map(&heads(&b, 64, 64), 64, 64, 4.0).unwrap();
        let mab = gaussian_density_map(&heads(&both, 64, 64), 64, 64, 4.0).unwrap();
        let sum = &ma.values + &mb.values;
        let worst = mab
            .values
            .iter()
            .zip(sum.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn translation_equivariance_away_from_borders() {
        let m1 = gaussian_density_map(&heads(&[(30.5, 30.5)], 96, 96), 96, 96, 3.0).unwrap();
        let m2 = gaussian_density_map(&heads(&[(35.5, 41.5)], 96, 96), 96, 96, 3.0).unwrap();
        // Shift by (5, 11): kernels must agree exactly inside the window.
        for i in 18..43 {
            for j in 18..43 {
                let d = (m1.values[[i, j]] - m2.values[[i + 5, j + 11]]).abs();
                assert!(d < 1e-15, "at ({i},{j}) diff {d}");
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(gaussian_density_map(&heads(&[], 8, 8), 8, 8, 0.0).is_err());
        assert!(gaussian_density_map(&heads(&[], 8, 8), 8, 8, -1.0).is_err());
        // HeadPoints owns bounds checking; a direct out-of-bounds call also errors.
        let pts = HeadPoints::new_unchecked(vec![(13.0, 3.0)]);
        assert!(gaussian_density_map(&pts, 8, 8, 4.0).is_err());
    }

    #[test]
    fn mass_conservation_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let n = rng.gen_range(0..200);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)))
                .collect();
            let map = gaussian_density_map(&heads(&pts, 64, 64), 64, 64, 4.0).unwrap();
            assert!(
                (count_from_density(&map) - n as f64).abs() < 1e-6,
                "trial {trial} n={n}"
            );
        }
    }

    #[test]
    fn binary_round_trip() {
        let pts = [(5.0, 6.5), (20.0, 30.0)];
        let map = gaussian_density_map(&heads(&pts, 40, 48), 40, 48, 4.0).unwrap();
        let dir = std::env::temp_dir().join("crowdadapt_dens_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.dens");
        save_density(&map, &path).unwrap();
        let loaded = load_density(&path).unwrap();
        assert_eq!(loaded.dims(), (40, 48));
        // Stored as f32: values agree to f32 precision.
        for (a, b) in map.values.iter().zip(loaded.values.iter()) {
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * 1e-6 + 1e-9);
        }
        density_to_png(&map, &dir.join("m.png")).unwrap();
        assert!(load_density(&dir.join("m.png")).is_err());
    }

    #[test]
    fn mass_conservation_thousand_heads_fast() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<(f64, f64)> = (0..1000)
            .map(|_| (rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)))
            .collect();
        let map = gaussian_density_map(&heads(&pts, 128, 128), 128, 128, 4.0).unwrap();
        assert!((count_from_density(&map) - 1000.0).abs() < 1e-6);
    }
}
