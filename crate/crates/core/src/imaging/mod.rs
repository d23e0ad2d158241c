//! Continuous-to-discrete rendering under a Gaussian point response, and the
//! three measurement-noise models.

mod dataset;

pub use dataset::{read_dataset, Dataset, DatasetReader, DatasetWriter, DATASET_HEADER_LEN};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;
use crate::phantoms::{
    sample_clb, sample_lumpy, ClbParams, ClbRealization, LumpyParams, LumpyRealization,
    SignalSpec,
};
use crate::rng::Rng;
use crate::task::{ObjectModel, TaskConfig};

/// Gaussian point response h_m(r) = h / (2π w_h²) · exp(-|r - r_m|² / (2 w_h²)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfSpec {
    pub height: f64,
    pub width: f64,
}

impl PrfSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.height > 0.0 && self.height.is_finite()) {
            return Err(invalid("prf.height", "must be positive"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(invalid("prf.width", "must be positive"));
        }
        Ok(())
    }

    /// Value of h_m at `r` for the pixel centered at `center`.
    pub fn response(&self, center: [f64; 2], r: [f64; 2]) -> f64 {
        let dx = r[0] - center[0];
        let dy = r[1] - center[1];
        let w2 = self.width * self.width;
        self.height / (2.0 * std::f64::consts::PI * w2) * (-(dx * dx + dy * dy) / (2.0 * w2)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// i.i.d. Laplacian with density exp(-|n|/c) / (2c); standard deviation c√2.
    Laplacian { scale: f64 },
    Gaussian { sigma: f64 },
    /// Poisson counts on the (clamped) mean image plus Gaussian read noise.
    PoissonGaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            NoiseModel::Laplacian { scale } => ("noise.scale", scale),
            NoiseModel::Gaussian { sigma } => ("noise.sigma", sigma),
            NoiseModel::PoissonGaussian { sigma } => ("noise.sigma", sigma),
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, "must be positive"));
        }
        Ok(())
    }

    /// Standard deviation of the additive component.
    pub fn additive_std(&self) -> f64 {
        match *self {
            NoiseModel::Laplacian { scale } => scale * std::f64::consts::SQRT_2,
            NoiseModel::Gaussian { sigma } | NoiseModel::PoissonGaussian { sigma } => sigma,
        }
    }
}

/// A rank-one image `scale · rows[y] · cols[x]`.
///
/// Isotropic Gaussians (lumps, unrotated signals) factor this way, which
/// keeps per-lump updates in the MCMC sampler at O(width + height).
#[derive(Debug, Clone, PartialEq)]
pub struct Separable {
    pub scale: f64,
    pub cols: Vec<f64>,
    pub rows: Vec<f64>,
}

impl Separable {
    pub fn gaussian(
        scale: f64,
        center: [f64; 2],
        var_x: f64,
        var_y: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let axis = |c: f64, var: f64, n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let d = i as f64 + 0.5 - c;
                    (-d * d / (2.0 * var)).exp()
                })
                .collect()
        };
        Self {
            scale,
            cols: axis(center[0], var_x, width),
            rows: axis(center[1], var_y, height),
        }
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }

    /// `buf += sign · self`
    pub fn accumulate(&self, buf: &mut [f64], sign: f64) {
        let w = self.cols.len();
        for (row, &ry) in buf.chunks_mut(w).zip(&self.rows) {
            let k = sign * self.scale * ry;
            if k == 0.0 {
                continue;
            }
            for (p, &cx) in row.iter_mut().zip(&self.cols) {
                *p += k * cx;
            }
        }
    }

    pub fn dot_dense(&self, buf: &[f64]) -> f64 {
        let w = self.cols.len();
        let mut total = 0.0;
        for (row, &ry) in buf.chunks(w).zip(&self.rows) {
            let s: f64 = row.iter().zip(&self.cols).map(|(a, b)| a * b).sum();
            total += ry * s;
        }
        self.scale * total
    }

    pub fn dot(&self, other: &Separable) -> f64 {
        let cx: f64 = self.cols.iter().zip(&other.cols).map(|(a, b)| a * b).sum();
        let ry: f64 = self.rows.iter().zip(&other.rows).map(|(a, b)| a * b).sum();
        self.scale * other.scale * cx * ry
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut buf = vec![0.0; self.cols.len() * self.rows.len()];
        self.accumulate(&mut buf, 1.0);
        buf
    }
}

/// Image-domain coefficient and variance of one lump seen through the PRF:
/// `a·h·w_b²/(w_h²+w_b²)` and `w_h²+w_b²`. Without a PRF the lump is sampled
/// at pixel centers.
pub fn lump_kernel(params: &LumpyParams, prf: Option<&PrfSpec>) -> (f64, f64) {
    let wb2 = params.lump_width * params.lump_width;
    match prf {
        Some(p) => {
            let wh2 = p.width * p.width;
            (params.lump_amplitude * p.height * wb2 / (wh2 + wb2), wh2 + wb2)
        }
        None => (params.lump_amplitude, wb2),
    }
}

/// Image of a single lump centered at `center`.
pub fn lump_image(
    center: [f64; 2],
    params: &LumpyParams,
    prf: Option<&PrfSpec>,
    width: usize,
    height: usize,
) -> Separable {
    let (coef, var) = lump_kernel(params, prf);
    Separable::gaussian(coef, center, var, var, width, height)
}

/// Background image of a lumpy realization, accumulated in `f64`.
pub fn render_lumpy_f64(
    real: &LumpyRealization,
    params: &LumpyParams,
    prf: Option<&PrfSpec>,
) -> Vec<f64> {
    let (w, h) = (params.width, params.height);
    let mut buf = vec![0.0; w * h];
    for &c in &real.centers {
        lump_image(c, params, prf, w, h).accumulate(&mut buf, 1.0);
    }
    buf
}

pub fn render_lumpy_image(
    real: &LumpyRealization,
    params: &LumpyParams,
    prf: Option<&PrfSpec>,
) -> Result<ImageGrid> {
    params.validate()?;
    if let Some(p) = prf {
        p.validate()?;
    }
    ImageGrid::from_f64(params.width, params.height, &render_lumpy_f64(real, params, prf))
}

/// One clustered-lumpy blob evaluated at offset `d` from its center.
pub fn clb_blob(d: [f64; 2], angle: f64, params: &ClbParams) -> f64 {
    let (s, c) = angle.sin_cos();
    let vx = c * d[0] - s * d[1];
    let vy = s * d[0] + c * d[1];
    let norm = (vx * vx + vy * vy).sqrt();
    if norm == 0.0 {
        return params.blob_amplitude;
    }
    let (lx, ly) = (params.half_axis_x, params.half_axis_y);
    // L(v) = Lx·Ly·|v| / sqrt((Ly·vx)² + (Lx·vy)²)
    let denom = ((ly * vx).powi(2) + (lx * vy).powi(2)).sqrt();
    let radius = lx * ly * norm / denom;
    let powed = if params.beta == 0.5 {
        norm.sqrt()
    } else {
        norm.powf(params.beta)
    };
    params.blob_amplitude * (-params.alpha * powed / radius).exp()
}

pub fn render_clb_image(real: &ClbRealization, params: &ClbParams) -> Result<ImageGrid> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let mut buf = vec![0.0f64; w * h];
    for cluster in &real.clusters {
        for blob in &cluster.blobs {
            let cx = cluster.center[0] + blob.offset[0];
            let cy = cluster.center[1] + blob.offset[1];
            for (y, row) in buf.chunks_mut(w).enumerate() {
                let dy = y as f64 + 0.5 - cy;
                for (x, p) in row.iter_mut().enumerate() {
                    let dx = x as f64 + 0.5 - cx;
                    *p += clb_blob([dx, dy], blob.angle, params);
                }
            }
        }
    }
    ImageGrid::from_f64(w, h, &buf)
}

/// Peak amplitude of the imaged signal: `a_s·h·w1·w2 / sqrt((w_h²+w1²)(w_h²+w2²))`.
pub fn signal_peak(spec: &SignalSpec, prf: &PrfSpec) -> f64 {
    let wh2 = prf.width * prf.width;
    let (w1, w2) = (spec.width_1, spec.width_2);
    spec.amplitude * prf.height * w1 * w2 * (1.0 / ((wh2 + w1 * w1) * (wh2 + w2 * w2))).sqrt()
}

/// Amplitude and per-axis variances of the imaged signal.
fn signal_profile(spec: &SignalSpec, prf: Option<&PrfSpec>) -> (f64, f64, f64) {
    let (w1, w2) = (spec.width_1, spec.width_2);
    match prf {
        Some(p) => {
            let wh2 = p.width * p.width;
            (signal_peak(spec, p), wh2 + w1 * w1, wh2 + w2 * w2)
        }
        None => (spec.amplitude, w1 * w1, w2 * w2),
    }
}

/// Signal image in `f64`. With a PRF this is the closed-form C-D image;
/// without one the Gaussian is sampled directly at pixel centers.
pub fn render_signal_f64(
    spec: &SignalSpec,
    prf: Option<&PrfSpec>,
    width: usize,
    height: usize,
) -> Result<Vec<f64>> {
    if !(spec.width_1 > 0.0 && spec.width_2 > 0.0) {
        return Err(invalid("signal widths", "must be positive"));
    }
    if let Some(p) = prf {
        p.validate()?;
    }
    let (amp, var1, var2) = signal_profile(spec, prf);
    let (s, c) = spec.rotation.sin_cos();
    let mut buf = vec![0.0; width * height];
    for (y, row) in buf.chunks_mut(width).enumerate() {
        let dy = y as f64 + 0.5 - spec.center[1];
        for (x, p) in row.iter_mut().enumerate() {
            let dx = x as f64 + 0.5 - spec.center[0];
            let u = c * dx - s * dy;
            let v = s * dx + c * dy;
            *p = amp * (-(u * u) / (2.0 * var1) - (v * v) / (2.0 * var2)).exp();
        }
    }
    Ok(buf)
}

pub fn render_signal_image(
    spec: &SignalSpec,
    prf: Option<&PrfSpec>,
    width: usize,
    height: usize,
) -> Result<ImageGrid> {
    ImageGrid::from_f64(width, height, &render_signal_f64(spec, prf, width, height)?)
}

/// Rank-one form of the signal image when it has one (no rotation, or
/// isotropic widths).
pub fn signal_separable(
    spec: &SignalSpec,
    prf: Option<&PrfSpec>,
    width: usize,
    height: usize,
) -> Option<Separable> {
    let (amp, var1, var2) = signal_profile(spec, prf);
    if spec.rotation == 0.0 || var1 == var2 {
        Some(Separable::gaussian(amp, spec.center, var1, var2, width, height))
    } else {
        None
    }
}

/// Zero-mean Laplacian sample with scale `c` by inversion.
pub fn sample_laplacian(scale: f64, rng: &mut Rng) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn apply_noise(img: &ImageGrid, model: &NoiseModel, rng: &mut Rng) -> Result<ImageGrid> {
    model.validate()?;
    let mut out = img.clone();
    match *model {
        NoiseModel::Laplacian { scale } => {
            for p in out.pixels_mut() {
                *p = (*p as f64 + sample_laplacian(scale, rng)) as f32;
            }
        }
        NoiseModel::Gaussian { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            for p in out.pixels_mut() {
                *p = (*p as f64 + normal.sample(rng)) as f32;
            }
        }
        NoiseModel::PoissonGaussian { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            for p in out.pixels_mut() {
                let rate = (*p as f64).max(0.0);
                let counts = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| Error::Unsupported(format!("poisson rate {rate}: {e}")))?
                        .sample(rng)
                } else {
                    0.0
                };
                *p = (counts + normal.sample(rng)) as f32;
            }
        }
    }
    Ok(out)
}

/// A fresh noiseless background for the task (zero for BKE tasks).
pub fn sample_background(task: &TaskConfig, rng: &mut Rng) -> Result<ImageGrid> {
    match &task.object {
        ObjectModel::None => Ok(ImageGrid::zeros(task.width, task.height)),
        ObjectModel::Lumpy(p) => {
            let real = sample_lumpy(p, rng)?;
            render_lumpy_image(&real, p, task.prf.as_ref())
        }
        ObjectModel::Clb(p) => {
            let real = sample_clb(p, rng)?;
            render_clb_image(&real, p)
        }
    }
}

/// Noisy measurement `b + s_label + n` from a given noiseless background.
pub fn compose_measurement(
    task: &TaskConfig,
    background: &ImageGrid,
    signals: &[ImageGrid],
    label: usize,
    rng: &mut Rng,
) -> Result<ImageGrid> {
    if label > signals.len() {
        return Err(Error::LabelOutOfRange {
            label,
            max: signals.len(),
        });
    }
    let mut mean = background.clone();
    if label > 0 {
        mean.add_scaled(&signals[label - 1], 1.0)?;
    }
    apply_noise(&mean, &task.noise, rng)
}

/// Draws one image under hypothesis `label` (0 = signal absent).
pub fn simulate_measurement(
    task: &TaskConfig,
    signals: &[ImageGrid],
    label: usize,
    rng: &mut Rng,
) -> Result<(ImageGrid, usize)> {
    let background = sample_background(task, rng)?;
    let g = compose_measurement(task, &background, signals, label, rng)?;
    Ok((g, label))
}
