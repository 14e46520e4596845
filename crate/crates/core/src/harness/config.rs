//! Experiment configuration, read from a sectioned `key = value` TOML file.
//! Every key is optional; unknown keys are rejected.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::acquisition::{AcquisitionParams, BackgroundPhase, Mode, SequenceMetadata};
use crate::phantom::{FlowWaveform, Harmonic, PhantomScene, Point2, TubeGeometry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub n_repeats: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    /// Zero the noise in every acquisition.
    pub noiseless: bool,
    pub supersampling: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n_repeats: 10,
            base_seed: 1,
            output_dir: PathBuf::from("out"),
            noiseless: false,
            supersampling: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformSection {
    pub mean_flow: f64,
    pub rate_bpm: f64,
    /// `[relative amplitude, phase in radians]` per harmonic of the pump rate.
    pub harmonics: Vec<[f64; 2]>,
}

impl Default for WaveformSection {
    fn default() -> Self {
        Self {
            mean_flow: 1150.0,
            rate_bpm: 99.0,
            harmonics: vec![[0.45, -FRAC_PI_2], [0.15, 0.0]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub fov: [f64; 2],
    /// Flow tube centres in mm; the first is the analysed vessel.
    pub tube_centers: Vec<[f64; 2]>,
    pub tube_diameters: Vec<f64>,
    pub static_center: [f64; 2],
    pub static_diameter: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            fov: [100.0, 60.0],
            tube_centers: vec![[25.0, 30.0], [55.0, 45.0], [70.0, 45.0], [85.0, 45.0]],
            tube_diameters: vec![9.5, 6.4, 4.4, 2.0],
            static_center: [40.0, 15.0],
            static_diameter: 10.0,
        }
    }
}

/// Settings shared by both sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSection {
    pub venc: f64,
    pub pixel_size: f64,
    pub noise_sigma_ref: f64,
    /// Background phase `a + b x + c y` as `[a, b, c]` (rad, rad/mm, rad/mm).
    pub background: [f64; 3],
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        let b = BackgroundPhase::default();
        Self {
            venc: 50.0,
            pixel_size: 1.2,
            noise_sigma_ref: 0.12,
            background: [b.offset, b.slope_x, b.slope_y],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CineSection {
    pub phases_per_cycle: usize,
    pub acq_duration: f64,
    pub tr_ms: f64,
    pub te_ms: f64,
    pub flip_deg: f64,
    pub thickness_mm: f64,
    pub sense: f64,
}

impl Default for CineSection {
    fn default() -> Self {
        let m = SequenceMetadata::cine_default();
        Self {
            phases_per_cycle: 32,
            acq_duration: 23.6,
            tr_ms: m.tr_ms,
            te_ms: m.te_ms,
            flip_deg: m.flip_deg,
            thickness_mm: m.thickness_mm,
            sense: m.sense,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpiSection {
    pub frame_interval: f64,
    pub n_frames: usize,
    pub acq_duration: f64,
    pub tr_ms: f64,
    pub te_ms: f64,
    pub flip_deg: f64,
    pub thickness_mm: f64,
    pub sense: f64,
    pub epi_factor: u32,
}

impl Default for EpiSection {
    fn default() -> Self {
        let m = SequenceMetadata::epi_default();
        Self {
            frame_interval: 0.062,
            n_frames: 150,
            acq_duration: 9.3,
            tr_ms: m.tr_ms,
            te_ms: m.te_ms,
            flip_deg: m.flip_deg,
            thickness_mm: m.thickness_mm,
            sense: m.sense,
            epi_factor: m.epi_factor.unwrap_or(9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub min_px: f64,
    pub max_px: f64,
    pub step: f64,
    pub repeats_per_size: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            min_px: 0.8,
            max_px: 4.4,
            step: 0.4,
            repeats_per_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub waveform: WaveformSection,
    pub scene: SceneSection,
    pub acquisition: AcquisitionSection,
    pub cine: CineSection,
    pub epi: EpiSection,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: Self =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.experiment.n_repeats == 0 {
            return bad("experiment.n_repeats must be at least 1");
        }
        if self.experiment.supersampling == 0 {
            return bad("experiment.supersampling must be at least 1");
        }
        let s = &self.sweep;
        if !(s.step > 0.0) {
            return bad("sweep.step must be positive");
        }
        if !(s.min_px > 0.0 && s.min_px <= s.max_px) {
            return bad("sweep needs 0 < min_px <= max_px");
        }
        if s.repeats_per_size == 0 {
            return bad("sweep.repeats_per_size must be at least 1");
        }
        if self.scene.tube_centers.len() != self.scene.tube_diameters.len() {
            return bad("scene.tube_centers and scene.tube_diameters differ in length");
        }
        self.scene()?;
        for mode in [Mode::Cine, Mode::Epi] {
            self.params(mode, 0).validate()?;
        }
        Ok(())
    }

    pub fn waveform(&self) -> Result<FlowWaveform, HarnessError> {
        let w = &self.waveform;
        let harmonics = w
            .harmonics
            .iter()
            .map(|&[a, phi]| Harmonic::new(a, phi))
            .collect();
        Ok(FlowWaveform::new(w.mean_flow, w.rate_bpm, harmonics)?)
    }

    pub fn scene(&self) -> Result<PhantomScene, HarnessError> {
        let s = &self.scene;
        let tubes = s
            .tube_centers
            .iter()
            .zip(&s.tube_diameters)
            .map(|(&[x, y], &d)| TubeGeometry::flowing(Point2::new(x, y), d))
            .collect();
        let calibration = TubeGeometry::static_water(
            Point2::new(s.static_center[0], s.static_center[1]),
            s.static_diameter,
        );
        Ok(PhantomScene::new(
            tubes,
            calibration,
            self.waveform()?,
            (s.fov[0], s.fov[1]),
        )?)
    }

    /// Acquisition parameters for `mode` with the given noise seed.
    pub fn params(&self, mode: Mode, seed: u64) -> AcquisitionParams {
        let a = &self.acquisition;
        let mut p = AcquisitionParams::default_for(mode);
        p.venc = a.venc;
        p.pixel_size = a.pixel_size;
        p.fov = (self.scene.fov[0], self.scene.fov[1]);
        p.noise_sigma_ref = if self.experiment.noiseless {
            0.0
        } else {
            a.noise_sigma_ref
        };
        p.background = BackgroundPhase {
            offset: a.background[0],
            slope_x: a.background[1],
            slope_y: a.background[2],
        };
        p.rng_seed = seed;
        p.supersampling = self.experiment.supersampling;
        let e = &self.epi;
        p.frame_interval = e.frame_interval;
        p.n_frames = e.n_frames;
        let c = &self.cine;
        p.phases_per_cycle = c.phases_per_cycle;
        match mode {
            Mode::Cine => {
                p.acq_duration = c.acq_duration;
                p.metadata = SequenceMetadata {
                    tr_ms: c.tr_ms,
                    te_ms: c.te_ms,
                    flip_deg: c.flip_deg,
                    thickness_mm: c.thickness_mm,
                    sense: c.sense,
                    epi_factor: None,
                };
            }
            Mode::Epi => {
                p.acq_duration = e.acq_duration;
                p.metadata = SequenceMetadata {
                    tr_ms: e.tr_ms,
                    te_ms: e.te_ms,
                    flip_deg: e.flip_deg,
                    thickness_mm: e.thickness_mm,
                    sense: e.sense,
                    epi_factor: Some(e.epi_factor),
                };
            }
        }
        p
    }

    /// Pixel sizes `min_px, min_px + step, ...` up to `max_px`, rounded to 1e-9 mm.
    pub fn sweep_sizes(&self) -> Vec<f64> {
        let s = &self.sweep;
        let n = ((s.max_px - s.min_px) / s.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| ((s.min_px + i as f64 * s.step) * 1e9).round() / 1e9)
            .collect()
    }
}
