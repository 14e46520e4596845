//! Synthetic phase-contrast acquisitions: CINE-gated (one averaged cycle)
//! and real-time EPI (free-running frames).
//!
//! Velocity is encoded as `phase = pi * v / venc + background(x, y)` on a
//! complex signal of amplitude 1.0 in fluid and 0.05 elsewhere. Complex
//! Gaussian noise has SD `noise_sigma_ref * (1.2 / pixel_size)^2` per channel
//! (SNR proportional to pixel area). CINE divides that SD by the square
//! root of the number of averaged heartbeats.

mod io;
mod raster;

use std::f64::consts::PI;
use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phantom::{PhantomScene, Point2};

pub use io::{load_series, save_series, SeriesIoError, HEADER_FILE};
pub use raster::{coverage_map, fluid_mask, rasterize_velocity, PixelGrid};

/// Velocity map in mm/s, indexed `[row, col]`.
pub type VelocityMap = Array2<f64>;

/// Pixel size at which `noise_sigma_ref` is specified.
pub const REFERENCE_PIXEL_SIZE: f64 = 1.2;
pub const FLUID_AMPLITUDE: f64 = 1.0;
pub const BACKGROUND_AMPLITUDE: f64 = 0.05;
pub const DEFAULT_SUPERSAMPLING: usize = 16;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("acquisition expects {expected} parameters, got {got}")]
    WrongMode { expected: Mode, got: Mode },
    #[error("invalid acquisition parameters: {0}")]
    InvalidParams(String),
    #[error("grid is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite velocity at pixel ({row}, {col})")]
    NonFiniteVelocity { row: usize, col: usize },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Cine,
    Epi,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Cine => "CINE",
            Mode::Epi => "EPI",
        })
    }
}

/// Linear background phase `offset + slope_x * x + slope_y * y` (rad, rad/mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundPhase {
    pub offset: f64,
    pub slope_x: f64,
    pub slope_y: f64,
}

impl BackgroundPhase {
    pub const ZERO: BackgroundPhase = BackgroundPhase {
        offset: 0.0,
        slope_x: 0.0,
        slope_y: 0.0,
    };

    pub fn at(&self, p: &Point2) -> f64 {
        self.offset + self.slope_x * p.x + self.slope_y * p.y
    }
}

impl Default for BackgroundPhase {
    fn default() -> Self {
        Self {
            offset: 0.05,
            slope_x: 0.002,
            slope_y: 0.002,
        }
    }
}

/// Scanner settings carried for the record; they do not affect the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetadata {
    pub tr_ms: f64,
    pub te_ms: f64,
    pub flip_deg: f64,
    pub thickness_mm: f64,
    pub sense: f64,
    pub epi_factor: Option<u32>,
}

impl SequenceMetadata {
    pub fn cine_default() -> Self {
        Self {
            tr_ms: 11.0,
            te_ms: 7.7,
            flip_deg: 30.0,
            thickness_mm: 4.0,
            sense: 1.5,
            epi_factor: None,
        }
    }

    pub fn epi_default() -> Self {
        Self {
            tr_ms: 15.2,
            te_ms: 9.1,
            flip_deg: 30.0,
            thickness_mm: 4.0,
            sense: 2.5,
            epi_factor: Some(9),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub mode: Mode,
    /// Velocity encoding, mm/s.
    pub venc: f64,
    /// Isotropic in-plane pixel size, mm.
    pub pixel_size: f64,
    /// Field of view (width, height), mm.
    pub fov: (f64, f64),
    /// EPI frame spacing, s.
    pub frame_interval: f64,
    /// EPI frame count.
    pub n_frames: usize,
    /// CINE cardiac phases.
    pub phases_per_cycle: usize,
    /// Total scan time, s.
    pub acq_duration: f64,
    /// Complex-channel noise SD at the reference pixel size (signal amplitude 1).
    pub noise_sigma_ref: f64,
    pub background: BackgroundPhase,
    pub rng_seed: u64,
    /// Subsamples per pixel edge for partial-volume rasterization.
    pub supersampling: usize,
    pub metadata: SequenceMetadata,
}

impl AcquisitionParams {
    pub fn epi_default() -> Self {
        Self {
            mode: Mode::Epi,
            venc: 50.0,
            pixel_size: 1.2,
            fov: (100.0, 60.0),
            frame_interval: 0.062,
            n_frames: 150,
            phases_per_cycle: 32,
            acq_duration: 9.3,
            noise_sigma_ref: 0.12,
            background: BackgroundPhase::default(),
            rng_seed: 0,
            supersampling: DEFAULT_SUPERSAMPLING,
            metadata: SequenceMetadata::epi_default(),
        }
    }

    pub fn cine_default() -> Self {
        Self {
            mode: Mode::Cine,
            acq_duration: 23.6,
            metadata: SequenceMetadata::cine_default(),
            ..Self::epi_default()
        }
    }

    pub fn default_for(mode: Mode) -> Self {
        match mode {
            Mode::Cine => Self::cine_default(),
            Mode::Epi => Self::epi_default(),
        }
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        let bad = |msg: String| Err(AcquisitionError::InvalidParams(msg));
        if !(self.venc.is_finite() && self.venc > 0.0) {
            return bad(format!("venc must be positive, got {}", self.venc));
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return bad(format!("pixel_size must be positive, got {}", self.pixel_size));
        }
        if !(self.fov.0 > 0.0 && self.fov.1 > 0.0) {
            return bad(format!("fov must be positive, got {:?}", self.fov));
        }
        if !(self.noise_sigma_ref.is_finite() && self.noise_sigma_ref >= 0.0) {
            return bad(format!("noise_sigma_ref must be >= 0, got {}", self.noise_sigma_ref));
        }
        if self.supersampling == 0 {
            return bad("supersampling must be >= 1".into());
        }
        match self.mode {
            Mode::Epi => {
                if !(self.frame_interval > 0.0) || self.n_frames == 0 {
                    return bad("EPI needs frame_interval > 0 and n_frames >= 1".into());
                }
            }
            Mode::Cine => {
                if self.phases_per_cycle == 0 || !(self.acq_duration > 0.0) {
                    return bad("CINE needs phases_per_cycle >= 1 and acq_duration > 0".into());
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> PixelGrid {
        PixelGrid::new(self.fov, self.pixel_size)
    }

    /// (rows, cols) = ceil(fov / pixel_size) per axis.
    pub fn matrix_dims(&self) -> (usize, usize) {
        self.grid().dims()
    }

    /// Per-channel noise SD at this pixel size.
    pub fn effective_sigma(&self) -> f64 {
        let ratio = REFERENCE_PIXEL_SIZE / self.pixel_size;
        self.noise_sigma_ref * ratio * ratio
    }

    /// Whole heartbeats averaged by a CINE scan at `rate_bpm`.
    pub fn cine_cycles(&self, rate_bpm: f64) -> usize {
        ((self.acq_duration * rate_bpm / 60.0).floor() as usize).max(1)
    }

    /// Frame-centre times. CINE times are within one pump cycle of `period`.
    pub fn frame_times(&self, period: f64) -> Vec<f64> {
        match self.mode {
            Mode::Epi => (0..self.n_frames)
                .map(|i| (i as f64 + 0.5) * self.frame_interval)
                .collect(),
            Mode::Cine => (0..self.phases_per_cycle)
                .map(|i| (i as f64 + 0.5) * period / self.phases_per_cycle as f64)
                .collect(),
        }
    }
}

/// One reconstructed image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub magnitude: Array2<f64>,
    /// Radians in `[-pi, pi)`.
    pub phase: Array2<f64>,
    /// Frame-centre time, s.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSeries {
    frames: Vec<Frame>,
    params: AcquisitionParams,
    scene_hash: String,
}

impl ImageSeries {
    pub fn new(
        frames: Vec<Frame>,
        params: AcquisitionParams,
        scene_hash: String,
    ) -> Result<Self, AcquisitionError> {
        let dims = params.matrix_dims();
        for (i, f) in frames.iter().enumerate() {
            for grid in [&f.magnitude, &f.phase] {
                if grid.dim() != dims {
                    return Err(AcquisitionError::DimensionMismatch {
                        expected: dims,
                        got: grid.dim(),
                    });
                }
            }
            if i > 0 && !(f.timestamp > frames[i - 1].timestamp) {
                return Err(AcquisitionError::InvalidSeries(format!(
                    "timestamps not strictly increasing at frame {i}"
                )));
            }
        }
        Ok(Self {
            frames,
            params,
            scene_hash,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn params(&self) -> &AcquisitionParams {
        &self.params
    }

    pub fn scene_hash(&self) -> &str {
        &self.scene_hash
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    /// Consumes the series, returning its frames.
    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }
}

/// Wraps a phase expressed in half-turns (units of pi) into `[-1, 1)`.
pub fn wrap_half_turns(h: f64) -> f64 {
    let mut w = h - 2.0 * ((h + 1.0) * 0.5).floor();
    if w >= 1.0 {
        w -= 2.0;
    } else if w < -1.0 {
        w += 2.0;
    }
    w
}

/// Wraps radians into `[-pi, pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = phi - two_pi * ((phi + PI) / two_pi).floor();
    if w >= PI {
        w -= two_pi;
    } else if w < -PI {
        w += two_pi;
    }
    w
}

/// Phase-encodes a velocity map into a magnitude/phase frame.
///
/// Noise is drawn row-major, real then imaginary channel, so a given
/// random stream always produces the same frame.
pub fn encode_frame<R: Rng + ?Sized>(
    vmap: &VelocityMap,
    params: &AcquisitionParams,
    fluid_mask: &Array2<bool>,
    t: f64,
    rng: &mut R,
) -> Result<Frame, AcquisitionError> {
    let dims = params.matrix_dims();
    for got in [vmap.dim(), fluid_mask.dim()] {
        if got != dims {
            return Err(AcquisitionError::DimensionMismatch {
                expected: dims,
                got,
            });
        }
    }
    let grid = params.grid();
    let sigma = params.effective_sigma();
    let mut magnitude = Array2::zeros(dims);
    let mut phase = Array2::zeros(dims);
    for ((row, col), &v) in vmap.indexed_iter() {
        if !v.is_finite() {
            return Err(AcquisitionError::NonFiniteVelocity { row, col });
        }
        let amplitude = if fluid_mask[[row, col]] {
            FLUID_AMPLITUDE
        } else {
            BACKGROUND_AMPLITUDE
        };
        let background = params.background.at(&grid.pixel_center(row, col));
        let half_turns = v / params.venc + background / PI;
        if sigma == 0.0 {
            magnitude[[row, col]] = amplitude;
            phase[[row, col]] = PI * wrap_half_turns(half_turns);
        } else {
            let angle = PI * half_turns;
            let n_re: f64 = StandardNormal.sample(rng);
            let n_im: f64 = StandardNormal.sample(rng);
            let re = amplitude * angle.cos() + sigma * n_re;
            let im = amplitude * angle.sin() + sigma * n_im;
            magnitude[[row, col]] = re.hypot(im);
            phase[[row, col]] = wrap_phase(im.atan2(re));
        }
    }
    Ok(Frame {
        magnitude,
        phase,
        timestamp: t,
    })
}

/// Independent random stream for one frame of one acquisition.
pub fn frame_rng(seed: u64, frame_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index as u64);
    rng
}

fn acquire(
    scene: &PhantomScene,
    params: &AcquisitionParams,
    times: &[f64],
    noise_scale: f64,
) -> Result<ImageSeries, AcquisitionError> {
    let unit = rasterize_velocity(scene, 1.0, params, params.supersampling);
    let mask = fluid_mask(scene, params, params.supersampling);
    let frame_params = AcquisitionParams {
        noise_sigma_ref: params.noise_sigma_ref * noise_scale,
        ..params.clone()
    };
    let frames = times
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let q = scene.waveform().flow_at(t);
            let vmap = unit.mapv(|u| u * q);
            let mut rng = frame_rng(params.rng_seed, i);
            encode_frame(&vmap, &frame_params, &mask, t, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ImageSeries::new(frames, params.clone(), scene.scene_hash())
}

/// Real-time EPI: `n_frames` instantaneous samples at `(i + 0.5) * frame_interval`.
pub fn acquire_epi(
    scene: &PhantomScene,
    params: &AcquisitionParams,
) -> Result<ImageSeries, AcquisitionError> {
    if params.mode != Mode::Epi {
        return Err(AcquisitionError::WrongMode {
            expected: Mode::Epi,
            got: params.mode,
        });
    }
    params.validate()?;
    let times = params.frame_times(scene.waveform().period());
    acquire(scene, params, &times, 1.0)
}

/// CINE: one averaged cycle of `phases_per_cycle` bins, noise reduced by
/// `sqrt(floor(acq_duration * rate_bpm / 60))`.
pub fn acquire_cine(
    scene: &PhantomScene,
    params: &AcquisitionParams,
) -> Result<ImageSeries, AcquisitionError> {
    if params.mode != Mode::Cine {
        return Err(AcquisitionError::WrongMode {
            expected: Mode::Cine,
            got: params.mode,
        });
    }
    params.validate()?;
    let waveform = scene.waveform();
    let times = params.frame_times(waveform.period());
    let n_cycles = params.cine_cycles(waveform.rate_bpm());
    acquire(scene, params, &times, 1.0 / (n_cycles as f64).sqrt())
}

/// Dispatches on `params.mode`.
pub fn acquire_series(
    scene: &PhantomScene,
    params: &AcquisitionParams,
) -> Result<ImageSeries, AcquisitionError> {
    match params.mode {
        Mode::Epi => acquire_epi(scene, params),
        Mode::Cine => acquire_cine(scene, params),
    }
}
