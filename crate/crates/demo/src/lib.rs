//! WebAssembly bindings for a static demo page.
//!
//! The plain functions (`phantom_frame`, `signal_frame`, `bke_curves`) do the
//! work and are what the native tests call; the `#[wasm_bindgen]` wrappers
//! only convert errors to JS exceptions.

use lrocsim::evaluation::{alroc, auc, empirical_lroc, empirical_roc, BootstrapConfig};
use lrocsim::grid::ImageGrid;
use lrocsim::imaging::{compose_measurement, sample_background, NoiseModel};
use lrocsim::observers::AnalyticLaplacianObserver;
use lrocsim::rng::{item_stream, stream};
use lrocsim::{Result, TaskConfig};
use wasm_bindgen::prelude::*;

/// A grayscale image mapped to RGBA bytes, row-major.
#[wasm_bindgen]
pub struct Frame {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
}

#[wasm_bindgen]
impl Frame {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

impl Frame {
    /// Linear window between the image minimum and maximum.
    pub fn from_grid(g: &ImageGrid) -> Self {
        let (lo, hi) = g
            .pixels()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut rgba = Vec::with_capacity(g.len() * 4);
        for &v in g.pixels() {
            let k = (((v - lo) / span) * 255.0).round() as u8;
            rgba.extend_from_slice(&[k, k, k, 255]);
        }
        Self {
            width: g.width(),
            height: g.height(),
            rgba,
        }
    }
}

/// LROC and ROC operating points with their areas.
#[wasm_bindgen]
pub struct Curves {
    lroc_fpf: Vec<f64>,
    lroc_pcl: Vec<f64>,
    roc_fpf: Vec<f64>,
    roc_tpf: Vec<f64>,
    alroc: f64,
    auc: f64,
}

#[wasm_bindgen]
impl Curves {
    #[wasm_bindgen(getter)]
    pub fn lroc_fpf(&self) -> Vec<f64> {
        self.lroc_fpf.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn lroc_pcl(&self) -> Vec<f64> {
        self.lroc_pcl.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn roc_fpf(&self) -> Vec<f64> {
        self.roc_fpf.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn roc_tpf(&self) -> Vec<f64> {
        self.roc_tpf.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn alroc(&self) -> f64 {
        self.alroc
    }

    #[wasm_bindgen(getter)]
    pub fn auc(&self) -> f64 {
        self.auc
    }
}

/// One measurement from a preset task, optionally with signal at `label`.
pub fn phantom_frame(preset: &str, seed: u64, label: usize, noisy: bool) -> Result<Frame> {
    let task = TaskConfig::preset(preset)?;
    let signals = task.signal_images()?;
    let mut rng = stream(seed, "demo-phantom");
    let background = sample_background(&task, &mut rng)?;
    if noisy {
        let g = compose_measurement(&task, &background, &signals, label, &mut rng)?;
        return Ok(Frame::from_grid(&g));
    }
    let mut mean = background;
    if label > 0 {
        let s = signals.get(label - 1).ok_or(lrocsim::Error::LabelOutOfRange {
            label,
            max: signals.len(),
        })?;
        mean.add_scaled(s, 1.0)?;
    }
    Ok(Frame::from_grid(&mean))
}

/// The noiseless imaged signal at location `location` (1-based).
pub fn signal_frame(preset: &str, location: usize) -> Result<Frame> {
    let task = TaskConfig::preset(preset)?;
    let signals = task.signal_images()?;
    let s = location
        .checked_sub(1)
        .and_then(|i| signals.get(i))
        .ok_or(lrocsim::Error::LabelOutOfRange {
            label: location,
            max: signals.len(),
        })?;
    Ok(Frame::from_grid(s))
}

/// Analytic ideal observer on a BKE system, `per_class` images per hypothesis.
pub fn bke_curves(preset: &str, per_class: usize, seed: u64) -> Result<Curves> {
    let task = TaskConfig::preset(preset)?;
    let NoiseModel::Laplacian { scale } = task.noise else {
        return Err(lrocsim::Error::Unsupported(format!(
            "{preset} is not a known-background task"
        )));
    };
    let signals = task.signal_images()?;
    let zero = ImageGrid::zeros(task.width, task.height);
    let io = AnalyticLaplacianObserver {
        background: zero.clone(),
        signals: signals.clone(),
        scale,
        priors: task.priors.clone(),
    };
    let classes = signals.len() + 1;
    let records = (0..per_class * classes)
        .map(|i| {
            let label = i % classes;
            let mut rng = item_stream(seed, "demo-test", i as u64);
            let g = compose_measurement(&task, &zero, &signals, label, &mut rng)?;
            io.evaluate(&g, label)
        })
        .collect::<Result<Vec<_>>>()?;
    let lroc = empirical_lroc(&records)?;
    let roc = empirical_roc(&records)?;
    let none = BootstrapConfig { resamples: 0, seed };
    Ok(Curves {
        lroc_fpf: lroc.points.iter().map(|p| p.fpf).collect(),
        lroc_pcl: lroc.points.iter().map(|p| p.y).collect(),
        roc_fpf: roc.points.iter().map(|p| p.fpf).collect(),
        roc_tpf: roc.points.iter().map(|p| p.y).collect(),
        alroc: alroc(&records, &none)?.value,
        auc: auc(&records, &none)?.value,
    })
}

fn js(e: lrocsim::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = renderPhantom)]
pub fn render_phantom(preset: &str, seed: u32, label: usize, noisy: bool) -> std::result::Result<Frame, JsError> {
    phantom_frame(preset, seed as u64, label, noisy).map_err(js)
}

#[wasm_bindgen(js_name = renderSignal)]
pub fn render_signal(preset: &str, location: usize) -> std::result::Result<Frame, JsError> {
    signal_frame(preset, location).map_err(js)
}

#[wasm_bindgen(js_name = lrocCurve)]
pub fn lroc_curve(preset: &str, per_class: usize, seed: u32) -> std::result::Result<Curves, JsError> {
    bke_curves(preset, per_class, seed as u64).map_err(js)
}
