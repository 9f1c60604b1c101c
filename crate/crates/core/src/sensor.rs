//! Photon-count histogram simulation and low-level spot extraction.
//!
//! [`render_histograms`] turns ideal spots into a noisy data cube, one
//! time-of-flight histogram per detector pixel. [`detect_pixels`] runs a
//! matched filter over every histogram and estimates per-pixel arrival time
//! and energy; [`extract_spots`] groups detected pixels into spots.
//!
//! Bin `k` is centered on `k * bin_width`. The leading tenth of every
//! histogram is reserved for background estimation and must be free of
//! signal, which the caller guarantees by choosing the time window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

use crate::scene::{DetectorGrid, Spot};

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingModel {
    /// Instrument response full width at half maximum, seconds.
    pub irf_fwhm: f64,
    pub bin_width: f64,
    pub n_bins: usize,
    /// Mean background counts per bin.
    pub background_rate: f64,
    /// Signal counts per unit relative energy per second of dwell.
    pub signal_scale: f64,
    pub dwell_time: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            irf_fwhm: 128e-12,
            bin_width: 16e-12,
            n_bins: 2048,
            background_rate: 0.01,
            signal_scale: 2e7,
            dwell_time: 5e-3,
        }
    }
}

impl TimingModel {
    pub fn irf_sigma(&self) -> f64 {
        self.irf_fwhm / FWHM_TO_SIGMA
    }

    fn sigma_bins(&self) -> f64 {
        self.irf_sigma() / self.bin_width
    }

    /// Half-width in bins of both the matched filter and the fitting window.
    pub fn window_half_width(&self) -> usize {
        (3.0 * self.sigma_bins()).ceil().max(1.0) as usize
    }

    pub fn noise_bins(&self) -> usize {
        (self.n_bins / 10).max(1)
    }

    /// Expected signal counts for a spot of the given relative energy.
    pub fn expected_counts(&self, energy: f64) -> f64 {
        self.signal_scale * energy * self.dwell_time
    }
}

/// Photon counts, `n_theta x n_phi x n_bins`, theta-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramCube {
    pub grid: DetectorGrid,
    pub n_bins: usize,
    pub bin_width: f64,
    pub counts: Vec<u32>,
}

#[derive(Debug, Error)]
pub enum CubeError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a histogram cube (bad magic)")]
    BadMagic,
    #[error("unsupported cube version {0}")]
    Version(u32),
    #[error("cube dimensions do not match: {0}")]
    Shape(String),
}

pub const CUBE_MAGIC: &[u8; 4] = b"SLHC";
pub const CUBE_VERSION: u32 = 1;

impl HistogramCube {
    pub fn zeros(grid: DetectorGrid, n_bins: usize, bin_width: f64) -> Self {
        Self { grid, n_bins, bin_width, counts: vec![0; grid.n_theta * grid.n_phi * n_bins] }
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.grid.n_phi + j) * self.n_bins
    }

    pub fn histogram(&self, i: usize, j: usize) -> &[u32] {
        let o = self.offset(i, j);
        &self.counts[o..o + self.n_bins]
    }

    fn histogram_mut(&mut self, i: usize, j: usize) -> &mut [u32] {
        let o = self.offset(i, j);
        &mut self.counts[o..o + self.n_bins]
    }

    /// Accumulates another cube of identical shape (summing exposures).
    pub fn accumulate(&mut self, other: &HistogramCube) -> Result<(), CubeError> {
        if self.grid != other.grid || self.n_bins != other.n_bins || self.bin_width != other.bin_width {
            return Err(CubeError::Shape("cannot sum cubes with different grids".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a = a.saturating_add(*b);
        }
        Ok(())
    }

    /// Little-endian layout: magic, version, `n_theta`, `n_phi`, `n_bins` as
    /// u32, `bin_width`, `theta_min`, `theta_max`, `phi_min`, `phi_max` as
    /// f64, followed by the u32 counts in theta-major order.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), CubeError> {
        w.write_all(CUBE_MAGIC)?;
        for v in [CUBE_VERSION, self.grid.n_theta as u32, self.grid.n_phi as u32, self.n_bins as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.bin_width, self.grid.theta_min, self.grid.theta_max, self.grid.phi_min, self.grid.phi_max] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.counts.len() * 4);
        for c in &self.counts {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CubeError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CUBE_MAGIC {
            return Err(CubeError::BadMagic);
        }
        let mut u = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> io::Result<u32> {
            r.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u))
        };
        let version = read_u32(&mut r)?;
        if version != CUBE_VERSION {
            return Err(CubeError::Version(version));
        }
        let n_theta = read_u32(&mut r)? as usize;
        let n_phi = read_u32(&mut r)? as usize;
        let n_bins = read_u32(&mut r)? as usize;
        let mut f = [0f64; 5];
        for v in &mut f {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let grid = DetectorGrid { theta_min: f[1], theta_max: f[2], phi_min: f[3], phi_max: f[4], n_theta, n_phi };
        let len = n_theta
            .checked_mul(n_phi)
            .and_then(|v| v.checked_mul(n_bins))
            .ok_or_else(|| CubeError::Shape("dimension overflow".into()))?;
        let mut raw = vec![0u8; len * 4];
        r.read_exact(&mut raw)?;
        let counts = raw.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self { grid, n_bins, bin_width: f[0], counts })
    }
}

/// Spatial footprint of a spot: Gaussian with a one-pixel standard deviation.
const FOOTPRINT_RADIUS: i64 = 3;

fn poisson(rng: &mut impl Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Renders ideal spots into a Poisson-noisy histogram cube. Deterministic in `seed`.
pub fn render_histograms(spots: &[Spot], grid: &DetectorGrid, timing: &TimingModel, seed: u64) -> HistogramCube {
    let mut cube = HistogramCube::zeros(*grid, timing.n_bins, timing.bin_width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = timing.irf_sigma();

    for spot in spots {
        if !grid.contains(spot.dir) {
            continue;
        }
        let total = timing.expected_counts(spot.energy);
        let (u, v) = grid.to_pixel(spot.dir);
        let (ci, cj) = (u.round() as i64, v.round() as i64);
        let mut weights = Vec::new();
        for di in -FOOTPRINT_RADIUS..=FOOTPRINT_RADIUS {
            for dj in -FOOTPRINT_RADIUS..=FOOTPRINT_RADIUS {
                let (i, j) = (ci + di, cj + dj);
                let w = (-((i as f64 - u).powi(2) + (j as f64 - v).powi(2)) / 2.0).exp();
                weights.push((i, j, w));
            }
        }
        let norm: f64 = weights.iter().map(|w| w.2).sum();
        for (i, j, w) in weights {
            if i < 0 || j < 0 || i >= grid.n_theta as i64 || j >= grid.n_phi as i64 {
                continue;
            }
            let n = poisson(&mut rng, total * w / norm);
            let hist = cube.histogram_mut(i as usize, j as usize);
            for _ in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                let bin = ((spot.tof + sigma * z) / timing.bin_width).round();
                if bin >= 0.0 && (bin as usize) < timing.n_bins {
                    hist[bin as usize] += 1;
                }
            }
        }
    }

    if timing.background_rate > 0.0 {
        let per_hist = timing.background_rate * timing.n_bins as f64;
        for i in 0..grid.n_theta {
            for j in 0..grid.n_phi {
                let n = poisson(&mut rng, per_hist);
                let hist = cube.histogram_mut(i, j);
                for _ in 0..n {
                    hist[rng.random_range(0..timing.n_bins)] += 1;
                }
            }
        }
    }
    cube
}

/// Gaussian perturbation applied directly to ideal spots.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpotNoise {
    /// Time-of-flight standard deviation, seconds.
    pub tof_sigma: f64,
    /// Standard deviation added independently to theta and phi, radians.
    pub angle_sigma: f64,
}

impl SpotNoise {
    pub fn is_zero(&self) -> bool {
        self.tof_sigma == 0.0 && self.angle_sigma == 0.0
    }
}

/// Jitters spot timing and arrival angles. Deterministic in `seed`; records
/// the timing deviation on each spot.
pub fn perturb_spots(spots: &[Spot], noise: &SpotNoise, seed: u64) -> Vec<Spot> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spots
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let (zt, za, zb): (f64, f64, f64) =
                (rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            s.tof += noise.tof_sigma * zt;
            s.dir.theta += noise.angle_sigma * za;
            s.dir.phi += noise.angle_sigma * zb;
            s.tof_sigma = s.tof_sigma.hypot(noise.tof_sigma);
            s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelDetection {
    pub detected: bool,
    pub tof: f64,
    pub tof_sigma: f64,
    /// Window counts minus expected background.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionGrid {
    pub grid: DetectorGrid,
    pub pixels: Vec<PixelDetection>,
}

impl DetectionGrid {
    pub fn get(&self, i: usize, j: usize) -> &PixelDetection {
        &self.pixels[i * self.grid.n_phi + j]
    }
}

/// Upper tail `P(X >= m)` of a Poisson variable.
fn poisson_tail(mean: f64, m: u64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let mut pmf = (-mean).exp();
    let mut cdf = pmf;
    for k in 1..m {
        pmf *= mean / k as f64;
        cdf += pmf;
    }
    (1.0 - cdf).max(0.0)
}

/// Smallest count `m` such that `trials * P(Poisson(mean) >= m) <= p_fa`.
fn count_threshold(mean: f64, trials: usize, p_fa: f64) -> u64 {
    let mut m = 1;
    while trials as f64 * poisson_tail(mean, m) > p_fa && m < 1_000_000 {
        m += 1;
    }
    m
}

fn matched_filter(timing: &TimingModel) -> Vec<f64> {
    let w = timing.window_half_width() as i64;
    let s = timing.sigma_bins();
    (-w..=w).map(|k| (-(k as f64).powi(2) / (2.0 * s * s)).exp()).collect()
}

/// Detects returns in every pixel histogram.
///
/// `fa_probability` is the per-pixel false-alarm probability. The filter has
/// unit peak, so a filtered value of `m` implies at least `m` counts under its
/// support; the background threshold is the smallest such `m` whose union-bound
/// false-alarm probability over all searched bins stays below `fa_probability`.
/// `abs_threshold` is an additional floor on the filtered peak.
pub fn detect_pixels(cube: &HistogramCube, timing: &TimingModel, fa_probability: f64, abs_threshold: f64) -> DetectionGrid {
    let filter = matched_filter(timing);
    let half = timing.window_half_width();
    let noise_bins = timing.noise_bins().min(cube.n_bins);
    let mut pixels = Vec::with_capacity(cube.grid.n_theta * cube.grid.n_phi);

    for i in 0..cube.grid.n_theta {
        for j in 0..cube.grid.n_phi {
            let hist = cube.histogram(i, j);
            pixels.push(detect_one(hist, &filter, half, noise_bins, cube.bin_width, fa_probability, abs_threshold));
        }
    }
    DetectionGrid { grid: cube.grid, pixels }
}

fn detect_one(
    hist: &[u32],
    filter: &[f64],
    half: usize,
    noise_bins: usize,
    bin_width: f64,
    fa_probability: f64,
    abs_threshold: f64,
) -> PixelDetection {
    let n = hist.len();
    let noise_sum: u64 = hist[..noise_bins].iter().map(|&c| c as u64).sum();
    // One pseudo-count keeps the threshold finite for empty noise regions.
    let background = (noise_sum as f64 + 1.0) / noise_bins as f64;

    let mut filtered = vec![0.0; n];
    for (b, &c) in hist.iter().enumerate() {
        if c == 0 {
            continue;
        }
        for (k, w) in filter.iter().enumerate() {
            let target = b as i64 + half as i64 - k as i64;
            if target >= 0 && (target as usize) < n {
                filtered[target as usize] += w * c as f64;
            }
        }
    }
    let Some((peak, &peak_value)) = filtered
        .iter()
        .enumerate()
        .skip(noise_bins)
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
    else {
        return PixelDetection::default();
    };

    let searched = n.saturating_sub(noise_bins).max(1);
    let fa = count_threshold(background * filter.len() as f64, searched, fa_probability) as f64;
    if peak_value < fa || peak_value < abs_threshold {
        return PixelDetection::default();
    }

    // Background-subtracted centroid, re-centered until the window settles.
    let mut center = peak as f64;
    let mut energy = 0.0;
    let mut spread = 0.0;
    for _ in 0..4 {
        let c = center.round() as i64;
        let lo = (c - half as i64).max(0) as usize;
        let hi = ((c + half as i64) as usize).min(n - 1);
        let (mut sw, mut swk) = (0.0, 0.0);
        for k in lo..=hi {
            let s = hist[k] as f64 - background;
            sw += s;
            swk += s * k as f64;
        }
        if sw <= 0.0 {
            return PixelDetection::default();
        }
        let next = swk / sw;
        energy = sw;
        spread = (lo..=hi).map(|k| (k as f64 - next).powi(2) * hist[k] as f64).sum::<f64>();
        let moved = (next.round() - center.round()).abs() > 0.0;
        center = next;
        if !moved {
            break;
        }
    }
    PixelDetection {
        detected: true,
        tof: center * bin_width,
        tof_sigma: (bin_width * spread.sqrt() / energy).max(bin_width / 12f64.sqrt() / energy.sqrt()),
        energy,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpotParams {
    /// Side of the centroid window in pixels (odd).
    pub window: usize,
    pub spottiness_threshold: f64,
}

impl Default for SpotParams {
    fn default() -> Self {
        Self { window: 3, spottiness_threshold: 0.3 }
    }
}

/// Ratio of a 3x3 Laplace response to a 3x3 box response on the energy image.
fn spottiness(energy: &[f64], n_theta: usize, n_phi: usize, i: usize, j: usize) -> f64 {
    let at = |a: i64, b: i64| -> f64 {
        if a < 0 || b < 0 || a >= n_theta as i64 || b >= n_phi as i64 {
            0.0
        } else {
            energy[a as usize * n_phi + b as usize]
        }
    };
    let c = at(i as i64, j as i64);
    let mut ring = 0.0;
    for di in -1..=1 {
        for dj in -1..=1 {
            if di != 0 || dj != 0 {
                ring += at(i as i64 + di, j as i64 + dj);
            }
        }
    }
    let bx = c + ring;
    if bx <= 0.0 {
        return 0.0;
    }
    (8.0 * c - ring) / bx
}

/// Groups detected pixels into spots.
pub fn extract_spots(detections: &DetectionGrid, params: &SpotParams) -> Vec<Spot> {
    let g = detections.grid;
    let (nt, np) = (g.n_theta, g.n_phi);
    let energy: Vec<f64> = detections.pixels.iter().map(|p| if p.detected { p.energy.max(0.0) } else { 0.0 }).collect();
    let passing: Vec<bool> = (0..nt * np)
        .map(|idx| {
            detections.pixels[idx].detected
                && energy[idx] > 0.0
                && spottiness(&energy, nt, np, idx / np, idx % np) >= params.spottiness_threshold
        })
        .collect();

    // 8-connected components of passing pixels.
    let mut label = vec![usize::MAX; nt * np];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for start in 0..nt * np {
        if !passing[start] || label[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        label[start] = id;
        while let Some(p) = stack.pop() {
            members.push(p);
            let (pi, pj) = ((p / np) as i64, (p % np) as i64);
            for di in -1..=1 {
                for dj in -1..=1 {
                    let (a, b) = (pi + di, pj + dj);
                    if a < 0 || b < 0 || a >= nt as i64 || b >= np as i64 {
                        continue;
                    }
                    let q = a as usize * np + b as usize;
                    if passing[q] && label[q] == usize::MAX {
                        label[q] = id;
                        stack.push(q);
                    }
                }
            }
        }
        components.push(members);
    }

    let half = (params.window / 2) as i64;
    let mut spots: Vec<(Spot, f64, f64)> = Vec::new();
    for members in components {
        let anchor = *members
            .iter()
            .max_by(|&&a, &&b| energy[a].total_cmp(&energy[b]).then(b.cmp(&a)))
            .expect("component is non-empty");
        let (ai, aj) = ((anchor / np) as i64, (anchor % np) as i64);
        let (mut sum, mut su, mut sv) = (0.0, 0.0, 0.0);
        let (mut wsum, mut wtof) = (0.0, 0.0);
        for di in -half..=half {
            for dj in -half..=half {
                let (a, b) = (ai + di, aj + dj);
                if a < 0 || b < 0 || a >= nt as i64 || b >= np as i64 {
                    continue;
                }
                let q = a as usize * np + b as usize;
                let e = energy[q];
                sum += e;
                su += e * a as f64;
                sv += e * b as f64;
                let px = &detections.pixels[q];
                if px.detected && e > 0.0 {
                    let w = 1.0 / px.tof_sigma.max(1e-18).powi(2);
                    wsum += w;
                    wtof += w * px.tof;
                }
            }
        }
        if sum <= 0.0 || wsum <= 0.0 {
            continue;
        }
        let (u, v) = (su / sum, sv / sum);
        let mut spot = Spot::new(g.from_pixel(u, v), wtof / wsum, sum);
        spot.tof_sigma = 1.0 / wsum.sqrt();
        spots.push((spot, u, v));
    }

    // Suppress the weaker of any two spots closer than half the window (rounded up).
    let min_sep = params.window.div_ceil(2) as f64;
    spots.sort_by(|a, b| b.0.energy.total_cmp(&a.0.energy));
    let mut kept: Vec<(Spot, f64, f64)> = Vec::new();
    for cand in spots {
        if kept.iter().all(|k| (k.1 - cand.1).hypot(k.2 - cand.2) >= min_sep) {
            kept.push(cand);
        }
    }
    kept.sort_by(|a, b| a.0.tof.total_cmp(&b.0.tof));
    kept.into_iter().map(|k| k.0).collect()
}
