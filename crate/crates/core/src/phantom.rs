//! Flow phantom scene: tube geometry, pump waveform and the ground-truth
//! axial velocity field.
//!
//! All flow tubes sit in series on the same pump, so they carry the same
//! volumetric flow `Q(t)` at every instant. The calibration tube is filled
//! with static water and carries no flow.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("mean flow must be finite and non-negative, got {0}")]
    InvalidMeanFlow(f64),
    #[error("pump rate must be finite and positive, got {0} bpm")]
    InvalidRate(f64),
    #[error("harmonic {index} is not finite")]
    NonFiniteHarmonic { index: usize },
    #[error("harmonic set produces negative flow (minimum {min_relative:.4} x mean)")]
    NegativeFlow { min_relative: f64 },
    #[error("tube diameter must be finite and positive, got {0} mm")]
    InvalidDiameter(f64),
    #[error("tubes {a} and {b} overlap")]
    Overlap { a: usize, b: usize },
    #[error("tube {0} is not fully inside the field of view")]
    OutsideFov(usize),
    #[error("scene needs at least one flow tube")]
    NoFlowTube,
    #[error("flow tube {0} is flagged static")]
    StaticFlowTube(usize),
    #[error("calibration tube must be static")]
    FlowingCalibrationTube,
}

/// A point in the imaging plane, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One Fourier component of the pump waveform, relative to the mean flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Relative amplitude (dimensionless).
    pub amplitude: f64,
    /// Phase offset in radians.
    pub phase: f64,
}

impl Harmonic {
    pub const fn new(amplitude: f64, phase: f64) -> Self {
        Self { amplitude, phase }
    }
}

/// Periodic volumetric pump output,
/// `Q(t) = mean_flow * (1 + sum_k a_k sin(2 pi k f t + phi_k))` with `f = rate_bpm / 60`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowWaveform {
    mean_flow: f64,
    rate_bpm: f64,
    harmonics: Vec<Harmonic>,
}

/// Default pump harmonics: one dominant systolic peak and one clear minimum per cycle.
pub const DEFAULT_HARMONICS: [Harmonic; 2] =
    [Harmonic::new(0.45, -PI / 2.0), Harmonic::new(0.15, 0.0)];

pub const DEFAULT_MEAN_FLOW: f64 = 1150.0;
pub const DEFAULT_RATE_BPM: f64 = 99.0;

impl FlowWaveform {
    /// Builds a waveform, rejecting harmonic sets that would drive `Q(t)` below zero.
    pub fn new(
        mean_flow: f64,
        rate_bpm: f64,
        harmonics: Vec<Harmonic>,
    ) -> Result<Self, PhantomError> {
        if !mean_flow.is_finite() || mean_flow < 0.0 {
            return Err(PhantomError::InvalidMeanFlow(mean_flow));
        }
        if !rate_bpm.is_finite() || rate_bpm <= 0.0 {
            return Err(PhantomError::InvalidRate(rate_bpm));
        }
        for (index, h) in harmonics.iter().enumerate() {
            if !h.amplitude.is_finite() || !h.phase.is_finite() {
                return Err(PhantomError::NonFiniteHarmonic { index });
            }
        }
        let waveform = Self {
            mean_flow,
            rate_bpm,
            harmonics,
        };
        let bound: f64 = waveform.harmonics.iter().map(|h| h.amplitude.abs()).sum();
        if bound > 1.0 {
            let min_relative = waveform.min_relative_flow();
            if min_relative < 0.0 {
                return Err(PhantomError::NegativeFlow { min_relative });
            }
        }
        Ok(waveform)
    }

    /// Steady flow with no pulsatile component.
    pub fn constant(mean_flow: f64, rate_bpm: f64) -> Result<Self, PhantomError> {
        Self::new(mean_flow, rate_bpm, Vec::new())
    }

    pub fn mean_flow(&self) -> f64 {
        self.mean_flow
    }

    pub fn rate_bpm(&self) -> f64 {
        self.rate_bpm
    }

    pub fn harmonics(&self) -> &[Harmonic] {
        &self.harmonics
    }

    /// Fundamental frequency in Hz.
    pub fn frequency(&self) -> f64 {
        self.rate_bpm / 60.0
    }

    /// Cycle length in seconds.
    pub fn period(&self) -> f64 {
        60.0 / self.rate_bpm
    }

    /// Volumetric flow (mm³/s) at time `t` (s).
    pub fn flow_at(&self, t: f64) -> f64 {
        // Evaluate on the cycle fraction so that t and t + period hit the same angle.
        let cycles = t / self.period();
        let fraction = cycles - cycles.floor();
        self.mean_flow * self.relative_at_fraction(fraction)
    }

    fn relative_at_fraction(&self, fraction: f64) -> f64 {
        let theta = 2.0 * PI * fraction;
        1.0 + self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, h)| h.amplitude * ((k + 1) as f64 * theta + h.phase).sin())
            .sum::<f64>()
    }

    /// Smallest value of `Q / mean_flow` over a cycle, from a dense scan
    /// refined by golden-section search around the best sample.
    fn min_relative_flow(&self) -> f64 {
        let n = 4096 * self.harmonics.len().max(1);
        let (best, _) = (0..n)
            .map(|i| {
                let u = i as f64 / n as f64;
                (i, self.relative_at_fraction(u))
            })
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        let step = 1.0 / n as f64;
        let (mut lo, mut hi) = (best as f64 * step - step, best as f64 * step + step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if self.relative_at_fraction(a) < self.relative_at_fraction(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        self.relative_at_fraction(0.5 * (lo + hi))
    }
}

impl Default for FlowWaveform {
    fn default() -> Self {
        Self::new(DEFAULT_MEAN_FLOW, DEFAULT_RATE_BPM, DEFAULT_HARMONICS.to_vec())
            .expect("default waveform is non-negative")
    }
}

/// Free-function form of [`FlowWaveform::flow_at`].
pub fn flow_at(waveform: &FlowWaveform, t: f64) -> f64 {
    waveform.flow_at(t)
}

/// Circular tube cross-section in the imaging plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeGeometry {
    pub center: Point2,
    /// Inner diameter in mm.
    pub diameter: f64,
    /// Static water-filled calibration tube (zero flow).
    pub is_static: bool,
}

impl TubeGeometry {
    pub fn flowing(center: Point2, diameter: f64) -> Self {
        Self {
            center,
            diameter,
            is_static: false,
        }
    }

    pub fn static_water(center: Point2, diameter: f64) -> Self {
        Self {
            center,
            diameter,
            is_static: true,
        }
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    /// Cross-sectional area in mm².
    pub fn area(&self) -> f64 {
        let r = self.radius();
        PI * r * r
    }

    pub fn contains(&self, point: &Point2) -> bool {
        let dx = point.x - self.center.x;
        let dy = point.y - self.center.y;
        let r = self.radius();
        dx * dx + dy * dy <= r * r
    }

    /// Axial velocity (mm/s) at `point` for volumetric flow `q` (mm³/s):
    /// Poiseuille profile `2 q / A (1 - (r/R)^2)`, zero outside the lumen
    /// and everywhere in a static tube.
    pub fn velocity_at(&self, q: f64, point: &Point2) -> f64 {
        if self.is_static {
            return 0.0;
        }
        let dx = point.x - self.center.x;
        let dy = point.y - self.center.y;
        let r = self.radius();
        let rho2 = (dx * dx + dy * dy) / (r * r);
        if rho2 > 1.0 {
            0.0
        } else {
            2.0 * q / self.area() * (1.0 - rho2)
        }
    }
}

/// Free-function form of [`TubeGeometry::velocity_at`].
pub fn velocity_at(tube: &TubeGeometry, q: f64, point: &Point2) -> f64 {
    tube.velocity_at(q, point)
}

/// Flow tubes, the calibration tube, the pump and the field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomScene {
    tubes: Vec<TubeGeometry>,
    static_tube: TubeGeometry,
    waveform: FlowWaveform,
    /// Field of view (width, height) in mm, origin at the top-left corner.
    fov: (f64, f64),
}

impl PhantomScene {
    pub fn new(
        tubes: Vec<TubeGeometry>,
        static_tube: TubeGeometry,
        waveform: FlowWaveform,
        fov: (f64, f64),
    ) -> Result<Self, PhantomError> {
        if tubes.is_empty() {
            return Err(PhantomError::NoFlowTube);
        }
        if let Some(i) = tubes.iter().position(|t| t.is_static) {
            return Err(PhantomError::StaticFlowTube(i));
        }
        if !static_tube.is_static {
            return Err(PhantomError::FlowingCalibrationTube);
        }
        // The calibration tube is indexed last in error reports.
        let all: Vec<&TubeGeometry> = tubes.iter().chain(std::iter::once(&static_tube)).collect();
        for (i, t) in all.iter().enumerate() {
            if !t.diameter.is_finite() || t.diameter <= 0.0 {
                return Err(PhantomError::InvalidDiameter(t.diameter));
            }
            let r = t.radius();
            let c = t.center;
            if c.x - r < 0.0 || c.y - r < 0.0 || c.x + r > fov.0 || c.y + r > fov.1 {
                return Err(PhantomError::OutsideFov(i));
            }
        }
        for a in 0..all.len() {
            for b in a + 1..all.len() {
                if all[a].center.distance(&all[b].center) < all[a].radius() + all[b].radius() {
                    return Err(PhantomError::Overlap { a, b });
                }
            }
        }
        Ok(Self {
            tubes,
            static_tube,
            waveform,
            fov,
        })
    }

    pub fn tubes(&self) -> &[TubeGeometry] {
        &self.tubes
    }

    /// The analysed vessel (first and widest tube of the series).
    pub fn tube1(&self) -> &TubeGeometry {
        &self.tubes[0]
    }

    pub fn static_tube(&self) -> &TubeGeometry {
        &self.static_tube
    }

    pub fn waveform(&self) -> &FlowWaveform {
        &self.waveform
    }

    pub fn fov(&self) -> (f64, f64) {
        self.fov
    }

    /// Every tube including the calibration tube.
    pub fn all_tubes(&self) -> impl Iterator<Item = &TubeGeometry> {
        self.tubes.iter().chain(std::iter::once(&self.static_tube))
    }

    /// Same geometry driven by a different pump waveform.
    pub fn with_waveform(&self, waveform: FlowWaveform) -> Self {
        Self {
            waveform,
            ..self.clone()
        }
    }

    /// Velocity at `point` when the pump delivers `q`. Tubes never overlap,
    /// so at most one contributes.
    pub fn velocity_at(&self, q: f64, point: &Point2) -> f64 {
        self.tubes
            .iter()
            .find(|t| t.contains(point))
            .map_or(0.0, |t| t.velocity_at(q, point))
    }

    pub fn is_fluid(&self, point: &Point2) -> bool {
        self.all_tubes().any(|t| t.contains(point))
    }

    /// Short stable identifier: SHA-256 of the canonical JSON form, first 16 hex digits.
    pub fn scene_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scene serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub const DEFAULT_FOV: (f64, f64) = (100.0, 60.0);
pub const TUBE_DIAMETERS: [f64; 4] = [9.5, 6.4, 4.4, 2.0];
pub const TUBE1_CENTER: Point2 = Point2::new(25.0, 30.0);
pub const STATIC_TUBE_CENTER: Point2 = Point2::new(40.0, 15.0);
pub const STATIC_TUBE_DIAMETER: f64 = 10.0;

/// The four-tube phantom plus calibration tube in a 100 x 60 mm field of view.
///
/// The calibration tube sits where `x + y` equals that of tube-1, so a
/// background phase gradient with equal x and y slopes has the same value
/// at both centres.
pub fn default_scene() -> PhantomScene {
    let centers = [
        TUBE1_CENTER,
        Point2::new(55.0, 45.0),
        Point2::new(70.0, 45.0),
        Point2::new(85.0, 45.0),
    ];
    let tubes = centers
        .iter()
        .zip(TUBE_DIAMETERS)
        .map(|(&c, d)| TubeGeometry::flowing(c, d))
        .collect();
    PhantomScene::new(
        tubes,
        TubeGeometry::static_water(STATIC_TUBE_CENTER, STATIC_TUBE_DIAMETER),
        FlowWaveform::default(),
        DEFAULT_FOV,
    )
    .expect("default scene is valid")
}
