//! One-level Haar multiscale recovery of grayscale images.
//!
//! The detail bands of an orthonormal Haar split are thresholded to a
//! fixed fraction of their largest coefficients, measured with random real
//! Gaussian matrices, recovered with [`recover`](crate::estimator::recover)
//! and synthesized back with the untouched approximation band.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use crate::datagen::{add_real_noise, derive_seed, gen_real_matrix};
use crate::error::{domain, Error, Result};
use crate::estimator::{recover, RecoverOptions};
use crate::par;
use crate::search::SearchConfig;
use crate::types::C64;

/// Row-major grid of real samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} image needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Approximation and detail bands, each half the size of the source.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarBands {
    pub ll: Image,
    pub lh: Image,
    pub hl: Image,
    pub hh: Image,
}

impl HaarBands {
    pub fn details(&self) -> [&Image; 3] {
        [&self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.ll.energy() + self.lh.energy() + self.hl.energy() + self.hh.energy()
    }
}

/// Orthonormal one-level 2-D Haar analysis. For each 2x2 block
/// `[[a, b], [c, d]]`:
/// `LL = (a+b+c+d)/2`, `LH = (a−b+c−d)/2`, `HL = (a+b−c−d)/2`, `HH = (a−b−c+d)/2`.
pub fn haar_forward(image: &Image) -> Result<HaarBands> {
    let (w, h) = (image.width, image.height);
    if w % 2 != 0 || h % 2 != 0 || w == 0 || h == 0 {
        return Err(Error::OddDimension { width: w, height: h });
    }
    let (hw, hh_) = (w / 2, h / 2);
    let mut ll = Image::zeros(hw, hh_);
    let mut lh = Image::zeros(hw, hh_);
    let mut hl = Image::zeros(hw, hh_);
    let mut hh = Image::zeros(hw, hh_);
    for r in 0..hh_ {
        for c in 0..hw {
            let a = image.at(2 * r, 2 * c);
            let b = image.at(2 * r, 2 * c + 1);
            let cc = image.at(2 * r + 1, 2 * c);
            let d = image.at(2 * r + 1, 2 * c + 1);
            ll.set(r, c, (a + b + cc + d) / 2.0);
            lh.set(r, c, (a - b + cc - d) / 2.0);
            hl.set(r, c, (a + b - cc - d) / 2.0);
            hh.set(r, c, (a - b - cc + d) / 2.0);
        }
    }
    Ok(HaarBands { ll, lh, hl, hh })
}

/// Exact inverse of [`haar_forward`].
pub fn haar_inverse(bands: &HaarBands) -> Result<Image> {
    let HaarBands { ll, lh, hl, hh } = bands;
    if !(ll.same_shape(lh) && ll.same_shape(hl) && ll.same_shape(hh)) {
        return Err(Error::Dimension("Haar bands differ in shape".into()));
    }
    let mut out = Image::zeros(ll.width * 2, ll.height * 2);
    for r in 0..ll.height {
        for c in 0..ll.width {
            let (s, x, y, z) = (ll.at(r, c), lh.at(r, c), hl.at(r, c), hh.at(r, c));
            out.set(2 * r, 2 * c, (s + x + y + z) / 2.0);
            out.set(2 * r, 2 * c + 1, (s - x + y - z) / 2.0);
            out.set(2 * r + 1, 2 * c, (s + x - y - z) / 2.0);
            out.set(2 * r + 1, 2 * c + 1, (s - x - y + z) / 2.0);
        }
    }
    Ok(out)
}

/// Keeps the `⌈keep_fraction · count⌉` largest-magnitude coefficients
/// (ties at the cut go to the lower linear index) and zeros the rest.
/// Returns the band and its realized nonzero rate.
pub fn threshold_detail(band: &Image, keep_fraction: f64) -> Result<(Image, f64)> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(domain(format!("keep_fraction must lie in (0, 1], got {keep_fraction}")));
    }
    let count = band.data.len();
    let keep = ((keep_fraction * count as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| band.data[b].abs().total_cmp(&band.data[a].abs()).then(a.cmp(&b)));
    let mut out = Image::zeros(band.width, band.height);
    for &i in order.iter().take(keep) {
        out.data[i] = band.data[i];
    }
    let nonzero = out.data.iter().filter(|v| **v != 0.0).count();
    let rate = if count == 0 { 0.0 } else { nonzero as f64 / count as f64 };
    Ok((out, rate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleConfig {
    pub m_per_band: usize,
    pub snr_db: f64,
    pub keep_fraction: f64,
    pub search: SearchConfig,
    pub seed: u64,
}

impl Default for MultiscaleConfig {
    fn default() -> Self {
        Self {
            m_per_band: 64,
            snr_db: 25.0,
            keep_fraction: 0.05,
            search: SearchConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BandOutcome {
    /// NMSE of the recovered band against its thresholded version; `None`
    /// for an all-zero thresholded band (nothing is measured).
    pub nmse_db: Option<f64>,
    pub error_energy: f64,
    pub p_hat: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct MultiscaleResult {
    pub image: Image,
    /// Synthesis from the thresholded details (the noiseless target).
    pub thresholded: Image,
    /// LH, HL, HH in that order.
    pub bands: Vec<BandOutcome>,
    /// Reconstruction error against the original image, in dB.
    pub image_nmse_db: f64,
    /// Summed band error energy over summed thresholded detail energy, in dB.
    pub detail_nmse_db: f64,
    /// Total time spent inside `recover`.
    pub elapsed: Duration,
}

/// Thresholds, measures and recovers the three detail bands; the
/// approximation band passes through.
pub fn multiscale_recover(image: &Image, config: &MultiscaleConfig) -> Result<MultiscaleResult> {
    if image.width != image.height {
        return Err(domain("multiscale recovery expects a square image"));
    }
    let bands = haar_forward(image)?;
    let n_band = bands.ll.data.len();
    if config.m_per_band == 0 || config.m_per_band > n_band {
        return Err(domain(format!(
            "m_per_band must lie in [1, {n_band}], got {}",
            config.m_per_band
        )));
    }
    let thresholded: Vec<Image> = bands
        .details()
        .iter()
        .map(|b| threshold_detail(b, config.keep_fraction).map(|t| t.0))
        .collect::<Result<_>>()?;

    let outcomes = par::map_indices(3, |k| recover_band(&thresholded[k], k as u64, config));
    let mut recovered = Vec::with_capacity(3);
    let mut stats = Vec::with_capacity(3);
    for o in outcomes {
        let (img, st) = o?;
        recovered.push(img);
        stats.push(st);
    }

    let target = haar_inverse(&HaarBands {
        ll: bands.ll.clone(),
        lh: thresholded[0].clone(),
        hl: thresholded[1].clone(),
        hh: thresholded[2].clone(),
    })?;
    let mut it = recovered.into_iter();
    let out = haar_inverse(&HaarBands {
        ll: bands.ll.clone(),
        lh: it.next().unwrap(),
        hl: it.next().unwrap(),
        hh: it.next().unwrap(),
    })?;

    let err: f64 = out.data.iter().zip(&image.data).map(|(a, b)| (a - b).powi(2)).sum();
    let image_nmse_db = crate::model::ratio_to_db(err / image.energy().max(f64::MIN_POSITIVE));
    let detail_err: f64 = stats.iter().map(|s| s.error_energy).sum();
    let detail_energy: f64 = thresholded.iter().map(Image::energy).sum();
    let detail_nmse_db = if detail_energy > 0.0 {
        crate::model::ratio_to_db(detail_err / detail_energy)
    } else {
        f64::NEG_INFINITY
    };
    let elapsed = stats.iter().map(|s| s.elapsed).sum();
    Ok(MultiscaleResult {
        image: out,
        thresholded: target,
        bands: stats,
        image_nmse_db,
        detail_nmse_db,
        elapsed,
    })
}

fn recover_band(band: &Image, index: u64, config: &MultiscaleConfig) -> Result<(Image, BandOutcome)> {
    let n = band.data.len();
    let energy = band.energy();
    if energy == 0.0 {
        return Ok((
            Image::zeros(band.width, band.height),
            BandOutcome {
                nmse_db: None,
                error_energy: 0.0,
                p_hat: None,
                sigma2_hat: None,
                elapsed: Duration::ZERO,
            },
        ));
    }
    let phi = gen_real_matrix(config.m_per_band, n, derive_seed(config.seed, 10 + index, 0));
    let x: Vec<C64> = band.data.iter().map(|&v| C64::new(v, 0.0)).collect();
    let clean = phi.mul_vec(&x);
    let (y, _) = add_real_noise(&clean, config.snr_db, derive_seed(config.seed, 20 + index, 0))?;
    let options = RecoverOptions {
        p_init: (config.keep_fraction / 2.0).clamp(1.0 / n as f64, 0.5),
        search: config.search.clone(),
        ..Default::default()
    };
    let start = Instant::now();
    let res = recover(&phi, &y, &options)?;
    let elapsed = start.elapsed();
    let data: Vec<f64> = res.x_ammse.iter().map(|z| z.re).collect();
    let error_energy: f64 = data.iter().zip(&band.data).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((
        Image::new(band.width, band.height, data)?,
        BandOutcome {
            nmse_db: Some(crate::model::ratio_to_db(error_energy / energy)),
            error_energy,
            p_hat: Some(res.p_hat),
            sigma2_hat: Some(res.sigma2_hat),
            elapsed,
        },
    ))
}

/// Piecewise-constant test image: a background with a few axis-aligned
/// rectangles whose edges fall both on and off the 2x2 block grid.
pub fn synthetic_image(side: usize) -> Image {
    let mut img = Image::new(side, side, vec![96.0; side * side]).expect("square");
    let rects: [(f64, f64, f64, f64, f64); 4] = [
        (0.10, 0.15, 0.55, 0.60, 200.0),
        (0.45, 0.30, 0.90, 0.72, 40.0),
        (0.20, 0.70, 0.65, 0.95, 160.0),
        (0.70, 0.05, 0.95, 0.35, 230.0),
    ];
    for (r0, c0, r1, c1, v) in rects {
        let (r0, r1) = ((r0 * side as f64) as usize, (r1 * side as f64) as usize);
        let (c0, c1) = ((c0 * side as f64) as usize, (c1 * side as f64) as usize);
        for r in r0..r1.min(side) {
            for c in c0..c1.min(side) {
                img.set(r, c, v);
            }
        }
    }
    img
}

/// Decodes a binary (P5) PGM with `maxval ≤ 255`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Pgm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "P5" {
        return Err(Error::Pgm(format!("expected magic P5, found {magic:?}")));
    }
    let number = |what: &str, pos: &mut usize| -> Result<usize> {
        let t = token(pos)?;
        t.parse().map_err(|_| Error::Pgm(format!("invalid {what} {t:?}")))
    };
    let width = number("width", &mut pos)?;
    let height = number("height", &mut pos)?;
    let maxval = number("maxval", &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Pgm(format!("maxval {maxval} not in 1..=255")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::Pgm(format!(
            "raster holds {} bytes, expected {need}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let data = bytes[pos..pos + need].iter().map(|&b| b as f64).collect();
    Image::new(width, height, data)
}

/// Encodes as binary PGM, maxval 255; samples are rounded and clamped.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    out
}

pub fn pgm_read(path: impl AsRef<Path>) -> Result<Image> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn pgm_write(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_pgm(image))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, (0..w * h).map(|_| r.random::<f64>() * 255.0 - 60.0).collect()).unwrap()
    }

    #[test]
    fn constant_image_has_no_detail() {
        let img = Image::new(4, 6, vec![7.5; 24]).unwrap();
        let b = haar_forward(&img).unwrap();
        assert!(b.ll.data.iter().all(|v| (*v - 15.0).abs() < 1e-12));
        for d in b.details() {
            assert!(d.data.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_block() {
        let b = haar_forward(&Image::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!((b.ll.data[0], b.lh.data[0], b.hl.data[0], b.hh.data[0]), (5.0, -1.0, -2.0, 0.0));
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(matches!(
            haar_forward(&Image::zeros(3, 4)),
            Err(Error::OddDimension { .. })
        ));
    }

    #[test]
    fn round_trip_and_energy() {
        let img = random_image(10, 8, 1);
        let b = haar_forward(&img).unwrap();
        assert!((b.energy() - img.energy()).abs() <= 1e-10 * img.energy());
        let back = haar_inverse(&b).unwrap();
        let max_err = back.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err <= 1e-12);

        // forward ∘ inverse on arbitrary bands
        let bands = HaarBands {
            ll: random_image(4, 3, 2),
            lh: random_image(4, 3, 3),
            hl: random_image(4, 3, 4),
            hh: random_image(4, 3, 5),
        };
        let again = haar_forward(&haar_inverse(&bands).unwrap()).unwrap();
        for (x, y) in [(&again.ll, &bands.ll), (&again.lh, &bands.lh), (&again.hl, &bands.hl), (&again.hh, &bands.hh)] {
            assert!(x.data.iter().zip(&y.data).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }

    #[test]
    fn zero_details_give_block_constant_image() {
        let ll = random_image(3, 3, 9);
        let z = Image::zeros(3, 3);
        let img = haar_inverse(&HaarBands {
            ll: ll.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
        })
        .unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let v = ll.at(r, c) / 2.0;
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    assert!((img.at(2 * r + dr, 2 * c + dc) - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn threshold_rules() {
        let band = random_image(10, 10, 3);
        assert_eq!(threshold_detail(&band, 1.0).unwrap().0, band);
        let (zero, rate) = threshold_detail(&Image::zeros(4, 4), 0.5).unwrap();
        assert_eq!(zero, Image::zeros(4, 4));
        assert_eq!(rate, 0.0);
        let (t, rate) = threshold_detail(&band, 0.05).unwrap();
        assert_eq!(t.data.iter().filter(|v| **v != 0.0).count(), 5);
        assert_eq!(rate, 0.05);
        let (t, _) = threshold_detail(&random_image(16, 16, 4), 0.05).unwrap();
        assert_eq!(t.data.iter().filter(|v| **v != 0.0).count(), 13);
        assert!(threshold_detail(&band, 0.0).is_err());
    }

    #[test]
    fn threshold_ties_prefer_lower_index() {
        let band = Image::new(4, 1, vec![1.0, -3.0, 3.0, 2.0]).unwrap();
        let (t, _) = threshold_detail(&band, 0.25).unwrap();
        assert_eq!(t.data, vec![0.0, -3.0, 0.0, 0.0]);
    }

    #[test]
    fn pgm_round_trip_and_rejections() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let img = Image::new(7, 5, (0..35).map(|_| r.random_range(0..=255u8) as f64).collect()).unwrap();
        assert_eq!(parse_pgm(&encode_pgm(&img)).unwrap(), img);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        pgm_write(&path, &img).unwrap();
        assert_eq!(pgm_read(&path).unwrap(), img);

        assert!(parse_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(parse_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x00").is_err());
        let with_comment = b"P5\n# made by hand\n2 1\n255\n\x05\x06";
        assert_eq!(parse_pgm(with_comment).unwrap().data, vec![5.0, 6.0]);
    }

    #[test]
    fn fully_determined_noiseless_recovery_is_exact() {
        let img = synthetic_image(16);
        let cfg = MultiscaleConfig {
            m_per_band: 64,
            snr_db: f64::INFINITY,
            keep_fraction: 0.05,
            seed: 3,
            ..Default::default()
        };
        let res = multiscale_recover(&img, &cfg).unwrap();
        let err: f64 = res.image.data.iter().zip(&res.thresholded.data).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(err.sqrt() <= 1e-6 * res.thresholded.energy().sqrt(), "err {err}");
    }

    #[test]
    fn image_error_decomposes_over_bands() {
        let img = synthetic_image(16);
        let cfg = MultiscaleConfig {
            m_per_band: 32,
            snr_db: 20.0,
            keep_fraction: 0.1,
            seed: 5,
            ..Default::default()
        };
        let res = multiscale_recover(&img, &cfg).unwrap();
        let err: f64 = res.image.data.iter().zip(&res.thresholded.data).map(|(a, b)| (a - b).powi(2)).sum();
        let band_err: f64 = res.bands.iter().map(|b| b.error_energy).sum();
        assert!((err - band_err).abs() <= 1e-9 * band_err.max(1e-300));
    }
}
