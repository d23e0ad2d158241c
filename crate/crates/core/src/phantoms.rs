//! Stochastic object models and the signal ensemble.
//!
//! Lumpy and clustered-lumpy backgrounds are sampled as parameter
//! realizations; turning them into pixels is the job of [`crate::imaging`].
//! All coordinates are continuous pixel units with the origin at the image
//! corner.

use std::f64::consts::{FRAC_PI_4, PI};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::task::{SignalLayout, TaskConfig};

/// Lumpy background: Poisson number of Gaussian lumps at uniform positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpyParams {
    pub mean_lump_count: f64,
    pub lump_amplitude: f64,
    /// Lump standard deviation in pixels.
    pub lump_width: f64,
    pub width: usize,
    pub height: usize,
}

impl LumpyParams {
    /// N̄ = 8, a = 1, w_b = 7 on a 64x64 field.
    pub fn standard_lb() -> Self {
        Self {
            mean_lump_count: 8.0,
            lump_amplitude: 1.0,
            lump_width: 7.0,
            width: 64,
            height: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_lump_count > 0.0 && self.mean_lump_count.is_finite()) {
            return Err(invalid("mean_lump_count", "must be positive"));
        }
        if !(self.lump_width > 0.0 && self.lump_width.is_finite()) {
            return Err(invalid("lump_width", "must be positive"));
        }
        if !self.lump_amplitude.is_finite() {
            return Err(invalid("lump_amplitude", "must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("field_of_view", "must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LumpyRealization {
    pub centers: Vec<[f64; 2]>,
}

impl LumpyRealization {
    pub fn lump_count(&self) -> usize {
        self.centers.len()
    }
}

/// Clustered lumpy background parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClbParams {
    pub mean_cluster_count: f64,
    pub mean_blobs_per_cluster: f64,
    pub half_axis_x: f64,
    pub half_axis_y: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Standard deviation of blob offsets about the cluster center.
    pub cluster_spread: f64,
    pub blob_amplitude: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for ClbParams {
    fn default() -> Self {
        Self {
            mean_cluster_count: 50.0,
            mean_blobs_per_cluster: 20.0,
            half_axis_x: 5.0,
            half_axis_y: 2.0,
            alpha: 2.1,
            beta: 0.5,
            cluster_spread: 12.0,
            blob_amplitude: 40.0,
            width: 128,
            height: 128,
        }
    }
}

impl ClbParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mean_cluster_count", self.mean_cluster_count),
            ("mean_blobs_per_cluster", self.mean_blobs_per_cluster),
            ("half_axis_x", self.half_axis_x),
            ("half_axis_y", self.half_axis_y),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("cluster_spread", self.cluster_spread),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !self.blob_amplitude.is_finite() {
            return Err(invalid("blob_amplitude", "must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("field_of_view", "must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    /// Offset from the cluster center.
    pub offset: [f64; 2],
    /// Orientation in `[0, 2π)`.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub center: [f64; 2],
    pub blobs: Vec<Blob>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClbRealization {
    pub clusters: Vec<Cluster>,
}

impl ClbRealization {
    pub fn blob_count(&self) -> usize {
        self.clusters.iter().map(|c| c.blobs.len()).sum()
    }
}

/// One candidate signal: a (possibly rotated, anisotropic) 2D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpec {
    /// 1-based location index.
    pub location_index: usize,
    pub center: [f64; 2],
    pub amplitude: f64,
    pub width_1: f64,
    pub width_2: f64,
    pub rotation: f64,
}

fn poisson_count(mean: f64, rng: &mut Rng) -> usize {
    // Poisson::new only rejects non-positive or non-finite means, which
    // validate() already excludes.
    Poisson::new(mean).expect("validated mean").sample(rng) as usize
}

fn uniform_point(width: usize, height: usize, rng: &mut Rng) -> [f64; 2] {
    [
        rng.random::<f64>() * width as f64,
        rng.random::<f64>() * height as f64,
    ]
}

pub fn sample_lumpy(params: &LumpyParams, rng: &mut Rng) -> Result<LumpyRealization> {
    params.validate()?;
    let n = poisson_count(params.mean_lump_count, rng);
    let centers = (0..n)
        .map(|_| uniform_point(params.width, params.height, rng))
        .collect();
    Ok(LumpyRealization { centers })
}

pub fn sample_clb(params: &ClbParams, rng: &mut Rng) -> Result<ClbRealization> {
    params.validate()?;
    let spread = Normal::new(0.0, params.cluster_spread).expect("validated spread");
    let k = poisson_count(params.mean_cluster_count, rng);
    let mut clusters = Vec::with_capacity(k);
    for _ in 0..k {
        let center = uniform_point(params.width, params.height, rng);
        let n = poisson_count(params.mean_blobs_per_cluster, rng);
        let blobs = (0..n)
            .map(|_| Blob {
                offset: [spread.sample(rng), spread.sample(rng)],
                angle: rng.random::<f64>() * 2.0 * PI,
            })
            .collect();
        clusters.push(Cluster { center, blobs });
    }
    Ok(ClbRealization { clusters })
}

/// Centers of the 3x3 location grid at the quarter points of the field,
/// ordered row-major (j = 1 top-left, j = 9 bottom-right).
pub fn grid_locations(width: usize, height: usize) -> Vec<[f64; 2]> {
    let qx = width as f64 / 4.0;
    let qy = height as f64 / 4.0;
    let mut out = Vec::with_capacity(9);
    for iy in 1..=3 {
        for ix in 1..=3 {
            out.push([qx * ix as f64, qy * iy as f64]);
        }
    }
    out
}

pub const CLB_SIGNAL_WIDTHS: [f64; 3] = [5.0, 8.0, 10.0];
pub const CLB_SIGNAL_ANGLES: [f64; 3] = [-FRAC_PI_4, 0.0, FRAC_PI_4];

/// Width/rotation assigned to location `i` (0-based) in the CLB task.
pub fn clb_assignment(i: usize) -> (f64, f64, f64) {
    (
        CLB_SIGNAL_WIDTHS[i % 3],
        CLB_SIGNAL_WIDTHS[(i + 1) % 3],
        CLB_SIGNAL_ANGLES[(i / 3) % 3],
    )
}

fn uniform_ensemble(width: usize, height: usize, amplitude: f64, w: f64) -> Vec<SignalSpec> {
    grid_locations(width, height)
        .into_iter()
        .enumerate()
        .map(|(i, center)| SignalSpec {
            location_index: i + 1,
            center,
            amplitude,
            width_1: w,
            width_2: w,
            rotation: 0.0,
        })
        .collect()
}

/// The J candidate signals of a task.
pub fn make_signal_ensemble(task: &TaskConfig) -> Result<Vec<SignalSpec>> {
    let (w, h) = (task.width, task.height);
    let specs = match &task.signal_layout {
        SignalLayout::Bke => uniform_ensemble(w, h, 0.2, 3.0),
        SignalLayout::Lb => uniform_ensemble(w, h, 0.5, 2.0),
        SignalLayout::Clb => grid_locations(w, h)
            .into_iter()
            .enumerate()
            .map(|(i, center)| {
                let (w1, w2, theta) = clb_assignment(i);
                SignalSpec {
                    location_index: i + 1,
                    center,
                    amplitude: 80.0,
                    width_1: w1,
                    width_2: w2,
                    rotation: theta,
                }
            })
            .collect(),
        SignalLayout::Custom(specs) => specs.clone(),
    };
    validate_ensemble(&specs, w, h)?;
    Ok(specs)
}

fn validate_ensemble(specs: &[SignalSpec], width: usize, height: usize) -> Result<()> {
    if specs.is_empty() {
        return Err(invalid("signals", "at least one location is required"));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.location_index != i + 1 {
            return Err(invalid("signals", "location indices must be 1..=J in order"));
        }
        let [x, y] = s.center;
        if !(x >= 0.0 && x <= width as f64 && y >= 0.0 && y <= height as f64) {
            return Err(invalid(
                "signals",
                format!("location {} at ({x}, {y}) is outside the field of view", i + 1),
            ));
        }
        if !(s.width_1 > 0.0 && s.width_2 > 0.0) {
            return Err(invalid("signals", "widths must be positive"));
        }
        for t in &specs[..i] {
            if t.center == s.center {
                return Err(invalid("signals", "signal centers must be distinct"));
            }
        }
    }
    Ok(())
}
