//! Task definitions: everything needed to simulate and score one
//! detection-localization experiment, plus the four named presets.


use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;
use crate::imaging::{render_signal_image, NoiseModel, PrfSpec};
use crate::phantoms::{make_signal_ensemble, ClbParams, LumpyParams, SignalSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    BkeLaplacian,
    LbGaussian,
    ClbPoissonGaussian,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectModel {
    /// Background known exactly and equal to zero.
    None,
    Lumpy(LumpyParams),
    Clb(ClbParams),
}

/// Where the candidate signals come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalLayout {
    Bke,
    Lb,
    Clb,
    Custom(Vec<SignalSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub name: String,
    pub kind: TaskKind,
    pub width: usize,
    pub height: usize,
    /// Absent for tasks rendered directly in the image domain.
    pub prf: Option<PrfSpec>,
    pub object: ObjectModel,
    pub noise: NoiseModel,
    pub signal_layout: SignalLayout,
    /// Pr(H_0), Pr(H_1), ..., Pr(H_J).
    pub priors: Vec<f64>,
}

pub const PRESET_NAMES: [&str; 4] = ["bke_system1", "bke_system2", "lb", "clb"];

fn uniform_priors(j: usize) -> Vec<f64> {
    vec![1.0 / (j + 1) as f64; j + 1]
}

impl TaskConfig {
    fn bke(name: &str, h: f64, w_h: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: TaskKind::BkeLaplacian,
            width: 64,
            height: 64,
            prf: Some(PrfSpec {
                height: h,
                width: w_h,
            }),
            object: ObjectModel::None,
            noise: NoiseModel::Laplacian {
                scale: 20.0 / std::f64::consts::SQRT_2,
            },
            signal_layout: SignalLayout::Bke,
            priors: uniform_priors(9),
        }
    }

    /// BKE, Laplacian noise, h = 60, w_h = 5.
    pub fn bke_system1() -> Self {
        Self::bke("bke_system1", 60.0, 5.0)
    }

    /// BKE, Laplacian noise, h = 144, w_h = 12.
    pub fn bke_system2() -> Self {
        Self::bke("bke_system2", 144.0, 12.0)
    }

    /// Lumpy background with Gaussian noise of standard deviation 20.
    pub fn lb() -> Self {
        Self {
            name: "lb".to_string(),
            kind: TaskKind::LbGaussian,
            width: 64,
            height: 64,
            prf: Some(PrfSpec {
                height: 40.0,
                width: 1.5,
            }),
            object: ObjectModel::Lumpy(LumpyParams::standard_lb()),
            noise: NoiseModel::Gaussian { sigma: 20.0 },
            signal_layout: SignalLayout::Lb,
            priors: uniform_priors(9),
        }
    }

    /// Clustered lumpy background with mixed Poisson-Gaussian noise.
    pub fn clb() -> Self {
        Self {
            name: "clb".to_string(),
            kind: TaskKind::ClbPoissonGaussian,
            width: 128,
            height: 128,
            prf: None,
            object: ObjectModel::Clb(ClbParams::default()),
            noise: NoiseModel::PoissonGaussian { sigma: 20.0 },
            signal_layout: SignalLayout::Clb,
            priors: uniform_priors(9),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "bke_system1" => Ok(Self::bke_system1()),
            "bke_system2" => Ok(Self::bke_system2()),
            "lb" => Ok(Self::lb()),
            "clb" => Ok(Self::clb()),
            other => Err(Error::Config {
                key: "task.preset".into(),
                reason: format!("unknown preset `{other}`; expected one of {PRESET_NAMES:?}"),
            }),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn signals(&self) -> Result<Vec<SignalSpec>> {
        make_signal_ensemble(self)
    }

    /// Number of signal locations J.
    pub fn location_count(&self) -> Result<usize> {
        Ok(self.signals()?.len())
    }

    pub fn signal_images(&self) -> Result<Vec<ImageGrid>> {
        self.signals()?
            .iter()
            .map(|s| render_signal_image(s, self.prf.as_ref(), self.width, self.height))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("grid", "must be non-empty"));
        }
        if let Some(prf) = &self.prf {
            prf.validate()?;
        }
        self.noise.validate()?;
        match &self.object {
            ObjectModel::None => {}
            ObjectModel::Lumpy(p) => {
                p.validate()?;
                if (p.width, p.height) != (self.width, self.height) {
                    return Err(invalid("object", "lumpy field of view differs from the grid"));
                }
            }
            ObjectModel::Clb(p) => {
                p.validate()?;
                if (p.width, p.height) != (self.width, self.height) {
                    return Err(invalid("object", "CLB field of view differs from the grid"));
                }
            }
        }
        let j = self.location_count()?;
        if self.priors.len() != j + 1 {
            return Err(invalid(
                "priors",
                format!("expected {} entries, got {}", j + 1, self.priors.len()),
            ));
        }
        if self.priors.iter().any(|&p| !(p > 0.0)) {
            return Err(invalid("priors", "all priors must be positive"));
        }
        if (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("priors", "must sum to 1"));
        }
        Ok(())
    }
}
