//! Measurement side of the post-processing: velocity decoding, vessel
//! segmentation, static-tube calibration and flow-curve extraction.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{Frame, ImageSeries, Mode, PixelGrid, VelocityMap};
use crate::phantom::Point2;
use crate::format::format_sig9;

#[derive(Debug, Error)]
pub enum QuantifyError {
    #[error("seed point ({x}, {y}) mm lies outside the image")]
    SeedOutsideImage { x: f64, y: f64 },
    #[error("seed pixel ({row}, {col}) is not above the signal threshold; empty region")]
    EmptyRegion { row: usize, col: usize },
    #[error("series has no frames")]
    EmptySeries,
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask is {got:?}, image is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("venc must be positive, got {0}")]
    InvalidVenc(f64),
    #[error("invalid flow curve: {0}")]
    InvalidCurve(String),
    #[error("flow curve csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskLabel {
    Vessel,
    Static,
}

/// Binary region of interest on the pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pixels: Array2<bool>,
    pixel_size: f64,
    label: MaskLabel,
}

impl Mask {
    pub fn new(pixels: Array2<bool>, pixel_size: f64, label: MaskLabel) -> Self {
        Self {
            pixels,
            pixel_size,
            label,
        }
    }

    pub fn pixels(&self) -> &Array2<bool> {
        &self.pixels
    }

    pub fn label(&self) -> MaskLabel {
        self.label
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Area in mm².
    pub fn area(&self) -> f64 {
        self.count() as f64 * self.pixel_size * self.pixel_size
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    fn check_dims(&self, dims: (usize, usize)) -> Result<(), QuantifyError> {
        if self.dims() != dims {
            return Err(QuantifyError::DimensionMismatch {
                expected: dims,
                got: self.dims(),
            });
        }
        Ok(())
    }

    /// Mean of `map` over the mask.
    pub fn mean_of(&self, map: &Array2<f64>) -> Result<f64, QuantifyError> {
        self.check_dims(map.dim())?;
        let n = self.count();
        if n == 0 {
            return Err(QuantifyError::EmptyMask);
        }
        let sum: f64 = Zip::from(map)
            .and(&self.pixels)
            .fold(0.0, |acc, &v, &m| if m { acc + v } else { acc });
        Ok(sum / n as f64)
    }
}

/// `v = venc * phase / pi`.
pub fn decode_velocity(frame: &Frame, venc: f64) -> Result<VelocityMap, QuantifyError> {
    if !(venc > 0.0) {
        return Err(QuantifyError::InvalidVenc(venc));
    }
    Ok(frame.phase.mapv(|phi| venc * phi / PI))
}

/// Pixel-wise mean magnitude over all frames.
pub fn mean_magnitude(series: &ImageSeries) -> Result<Array2<f64>, QuantifyError> {
    let frames = series.frames();
    if frames.is_empty() {
        return Err(QuantifyError::EmptySeries);
    }
    let mut acc = Array2::zeros(frames[0].magnitude.dim());
    for f in frames {
        acc += &f.magnitude;
    }
    Ok(acc / frames.len() as f64)
}

/// Region growing on the time-averaged magnitude image.
///
/// Starting at the pixel containing `seed_point`, 4-connected neighbours
/// are admitted while their mean magnitude is at least half the seed's.
/// The seed is rejected when its own magnitude is below half the image
/// maximum, which catches background and pure-noise seeds.
pub fn segment_vessel(
    series: &ImageSeries,
    seed_point: Point2,
    label: MaskLabel,
) -> Result<Mask, QuantifyError> {
    let mean = mean_magnitude(series)?;
    let grid = series.params().grid();
    segment_magnitude(&mean, &grid, seed_point, label)
}

/// Region growing on an already averaged magnitude image.
pub fn segment_magnitude(
    magnitude: &Array2<f64>,
    grid: &PixelGrid,
    seed_point: Point2,
    label: MaskLabel,
) -> Result<Mask, QuantifyError> {
    let (row, col) = grid
        .pixel_of(&seed_point)
        .filter(|&(r, c)| r < magnitude.nrows() && c < magnitude.ncols())
        .ok_or(QuantifyError::SeedOutsideImage {
            x: seed_point.x,
            y: seed_point.y,
        })?;
    let seed_value = magnitude[[row, col]];
    let image_max = magnitude.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(seed_value > 0.0) || seed_value < 0.5 * image_max {
        return Err(QuantifyError::EmptyRegion { row, col });
    }
    let threshold = 0.5 * seed_value;
    let (rows, cols) = magnitude.dim();
    let mut pixels = Array2::from_elem((rows, cols), false);
    let mut frontier = VecDeque::from([(row, col)]);
    pixels[[row, col]] = true;
    while let Some((r, c)) = frontier.pop_front() {
        let neighbours = [
            (r.wrapping_sub(1), c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
            (r + 1, c),
        ];
        for (nr, nc) in neighbours {
            if nr < rows && nc < cols && !pixels[[nr, nc]] && magnitude[[nr, nc]] >= threshold {
                pixels[[nr, nc]] = true;
                frontier.push_back((nr, nc));
            }
        }
    }
    Ok(Mask::new(pixels, grid.pixel_size, label))
}

/// Subtracts, frame by frame, the mean velocity of the static tube from the whole map.
pub fn calibrate_background(
    vmaps: &[VelocityMap],
    static_mask: &Mask,
) -> Result<Vec<VelocityMap>, QuantifyError> {
    if static_mask.is_empty() {
        return Err(QuantifyError::EmptyMask);
    }
    vmaps
        .iter()
        .map(|v| {
            let offset = static_mask.mean_of(v)?;
            Ok(v.mapv(|x| x - offset))
        })
        .collect()
}

/// Volumetric flow through `vessel` for one calibrated velocity map.
fn mask_flow(vmap: &VelocityMap, vessel: &Mask) -> f64 {
    let sum: f64 = Zip::from(vmap)
        .and(vessel.pixels())
        .fold(0.0, |acc, &v, &m| if m { acc + v } else { acc });
    sum * vessel.pixel_size() * vessel.pixel_size()
}

/// Time-indexed volumetric flow samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCurve {
    times: Vec<f64>,
    flows: Vec<f64>,
    source_mode: Mode,
}

impl FlowCurve {
    pub fn new(times: Vec<f64>, flows: Vec<f64>, source_mode: Mode) -> Result<Self, QuantifyError> {
        if times.len() != flows.len() {
            return Err(QuantifyError::InvalidCurve(format!(
                "{} times but {} flows",
                times.len(),
                flows.len()
            )));
        }
        if times.iter().chain(&flows).any(|v| !v.is_finite()) {
            return Err(QuantifyError::InvalidCurve("non-finite sample".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(QuantifyError::InvalidCurve(
                "times not strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            flows,
            source_mode,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn flows(&self) -> &[f64] {
        &self.flows
    }

    pub fn source_mode(&self) -> Mode {
        self.source_mode
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.flows.iter().sum::<f64>() / self.flows.len() as f64
    }

    /// Mean sample spacing.
    pub fn sample_interval(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        })
    }

    /// CSV with header `time_s,flow_mm3_s`, 9 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), QuantifyError> {
        writeln!(w, "time_s,flow_mm3_s")?;
        for (t, q) in self.times.iter().zip(&self.flows) {
            writeln!(w, "{},{}", format_sig9(*t), format_sig9(*q))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, source_mode: Mode) -> Result<Self, QuantifyError> {
        let mut times = Vec::new();
        let mut flows = Vec::new();
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "time_s,flow_mm3_s" => {}
            other => return Err(QuantifyError::Csv(format!("bad header {other:?}"))),
        }
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = || -> Result<f64, QuantifyError> {
                parts
                    .next()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| QuantifyError::Csv(format!("bad row {line:?}")))
            };
            times.push(next()?);
            flows.push(next()?);
        }
        Self::new(times, flows, source_mode)
    }
}

/// Decode, calibrate and integrate every frame of `series` over `vessel_mask`.
pub fn flow_curve(
    series: &ImageSeries,
    vessel_mask: &Mask,
    static_mask: &Mask,
) -> Result<FlowCurve, QuantifyError> {
    let dims = series.params().matrix_dims();
    vessel_mask.check_dims(dims)?;
    static_mask.check_dims(dims)?;
    if static_mask.is_empty() {
        return Err(QuantifyError::EmptyMask);
    }
    let venc = series.params().venc;
    let flows = series
        .frames()
        .par_iter()
        .map(|frame| {
            let v = decode_velocity(frame, venc)?;
            let calibrated = calibrate_background(std::slice::from_ref(&v), static_mask)?;
            Ok(mask_flow(&calibrated[0], vessel_mask))
        })
        .collect::<Result<Vec<_>, QuantifyError>>()?;
    FlowCurve::new(series.timestamps(), flows, series.params().mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{
        acquire_cine, acquire_epi, encode_frame, frame_rng, AcquisitionParams, BackgroundPhase,
    };
    use crate::phantom::{default_scene, FlowWaveform};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn frame_with_phase(phase: Array2<f64>) -> Frame {
        Frame {
            magnitude: Array2::ones(phase.dim()),
            phase,
            timestamp: 0.0,
        }
    }

    #[test]
    fn decode_examples() {
        let f = frame_with_phase(Array2::from_shape_vec(
            (1, 3),
            vec![0.0, PI / 2.0, -0.8 * PI],
        )
        .unwrap());
        let v = decode_velocity(&f, 50.0).unwrap();
        assert_eq!(v[[0, 0]], 0.0);
        assert_eq!(v[[0, 1]], 25.0);
        assert_eq!(v[[0, 2]], -40.0);
        assert!(decode_velocity(&f, 0.0).is_err());
    }

    #[test]
    fn uniform_velocity_over_49_pixels() {
        let mut pixels = Array2::from_elem((10, 10), false);
        pixels.slice_mut(ndarray::s![1..8, 1..8]).fill(true);
        let vessel = Mask::new(pixels, 1.2, MaskLabel::Vessel);
        assert_eq!(vessel.count(), 49);
        let flow = mask_flow(&Array2::from_elem((10, 10), 10.0), &vessel);
        assert_relative_eq!(flow, 705.6, epsilon = 1e-9);
    }

    fn noiseless(mode: Mode) -> AcquisitionParams {
        AcquisitionParams {
            noise_sigma_ref: 0.0,
            ..AcquisitionParams::default_for(mode)
        }
    }

    #[test]
    fn calibration_constant_offset() {
        let scene = default_scene();
        let base = AcquisitionParams {
            background: BackgroundPhase::ZERO,
            supersampling: 4,
            ..noiseless(Mode::Cine)
        };
        let shifted = AcquisitionParams {
            background: BackgroundPhase {
                offset: 0.05,
                ..BackgroundPhase::ZERO
            },
            ..base.clone()
        };
        let a = acquire_cine(&scene, &base).unwrap();
        let b = acquire_cine(&scene, &shifted).unwrap();
        let st = segment_vessel(&a, scene.static_tube().center, MaskLabel::Static).unwrap();
        let va = decode_velocity(&a.frames()[3], 50.0).unwrap();
        let vb = decode_velocity(&b.frames()[3], 50.0).unwrap();
        // Raw shift is +50 * 0.05 / pi; calibration removes it.
        let shift = 50.0 * 0.05 / PI;
        assert_relative_eq!(shift, 0.7958, epsilon = 1e-4);
        Zip::from(&va).and(&vb).for_each(|x, y| {
            assert!((y - x - shift).abs() < 1e-12);
        });
        let cb = calibrate_background(&[vb.clone()], &st).unwrap();
        Zip::from(&va).and(&cb[0]).for_each(|x, y| assert!((x - y).abs() < 1e-12));
        Zip::from(&vb).and(&cb[0]).for_each(|x, y| assert!((x - y - shift).abs() < 1e-12));
    }

    #[test]
    fn calibration_without_background_is_identity() {
        let scene = default_scene();
        let params = AcquisitionParams {
            background: BackgroundPhase::ZERO,
            supersampling: 4,
            ..noiseless(Mode::Cine)
        };
        let s = acquire_cine(&scene, &params).unwrap();
        let st = segment_vessel(&s, scene.static_tube().center, MaskLabel::Static).unwrap();
        let v = decode_velocity(&s.frames()[0], 50.0).unwrap();
        let c = calibrate_background(&[v.clone()], &st).unwrap();
        assert_eq!(c[0], v);
    }

    #[test]
    fn calibration_zeroes_static_mean_and_is_idempotent() {
        let scene = default_scene();
        let params = AcquisitionParams {
            supersampling: 4,
            rng_seed: 4,
            n_frames: 8,
            ..AcquisitionParams::epi_default()
        };
        let s = acquire_epi(&scene, &params).unwrap();
        let st = segment_vessel(&s, scene.static_tube().center, MaskLabel::Static).unwrap();
        let v: Vec<_> = s.frames().iter().map(|f| decode_velocity(f, 50.0).unwrap()).collect();
        let once = calibrate_background(&v, &st).unwrap();
        let twice = calibrate_background(&once, &st).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!(st.mean_of(a).unwrap().abs() < 1e-12);
            Zip::from(a).and(b).for_each(|x, y| assert!((x - y).abs() < 1e-12));
        }
        let empty = Mask::new(Array2::from_elem(st.dims(), false), 1.2, MaskLabel::Static);
        assert!(matches!(calibrate_background(&v, &empty), Err(QuantifyError::EmptyMask)));
    }

    #[test]
    fn noiseless_tube1_area_in_interval() {
        let scene = default_scene();
        for mode in [Mode::Cine, Mode::Epi] {
            let params = AcquisitionParams {
                n_frames: 10,
                ..noiseless(mode)
            };
            let s = match mode {
                Mode::Cine => acquire_cine(&scene, &params),
                Mode::Epi => acquire_epi(&scene, &params),
            }
            .unwrap();
            let m = segment_vessel(&s, scene.tube1().center, MaskLabel::Vessel).unwrap();
            assert!((63.72..=77.8).contains(&m.area()), "{mode}: {}", m.area());
        }
    }

    #[test]
    fn background_seed_is_empty_region() {
        let scene = default_scene();
        let params = AcquisitionParams {
            n_frames: 4,
            supersampling: 4,
            ..noiseless(Mode::Epi)
        };
        let s = acquire_epi(&scene, &params).unwrap();
        let err = segment_vessel(&s, Point2::new(5.0, 5.0), MaskLabel::Vessel).unwrap_err();
        assert!(matches!(err, QuantifyError::EmptyRegion { .. }));
        let err = segment_vessel(&s, Point2::new(150.0, 5.0), MaskLabel::Vessel).unwrap_err();
        assert!(matches!(err, QuantifyError::SeedOutsideImage { .. }));
    }

    #[test]
    fn coarse_pixels_distort_area() {
        let scene = default_scene();
        let params = AcquisitionParams {
            pixel_size: 4.4,
            n_frames: 4,
            ..noiseless(Mode::Epi)
        };
        let s = acquire_epi(&scene, &params).unwrap();
        let m = segment_vessel(&s, scene.tube1().center, MaskLabel::Vessel).unwrap();
        let err = (m.area() - scene.tube1().area()).abs() / scene.tube1().area();
        assert!(err > 0.10, "area {} err {err}", m.area());
    }

    #[test]
    fn segmentation_ignores_frame_order() {
        let scene = default_scene();
        let params = AcquisitionParams {
            supersampling: 4,
            rng_seed: 11,
            n_frames: 12,
            ..AcquisitionParams::epi_default()
        };
        let s = acquire_epi(&scene, &params).unwrap();
        let mut frames = s.frames().to_vec();
        let times: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
        frames.reverse();
        for (f, t) in frames.iter_mut().zip(times) {
            f.timestamp = t;
        }
        let shuffled = ImageSeries::new(frames, s.params().clone(), s.scene_hash().into()).unwrap();
        let a = segment_vessel(&s, scene.tube1().center, MaskLabel::Vessel).unwrap();
        let b = segment_vessel(&shuffled, scene.tube1().center, MaskLabel::Vessel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_phase_gives_flat_zero_curve() {
        let dims = (5, 5);
        let params = AcquisitionParams {
            fov: (5.0, 5.0),
            pixel_size: 1.0,
            ..AcquisitionParams::cine_default()
        };
        let frames = (0..4)
            .map(|i| Frame {
                magnitude: Array2::ones(dims),
                phase: Array2::zeros(dims),
                timestamp: i as f64,
            })
            .collect();
        let s = ImageSeries::new(frames, params, "x".into()).unwrap();
        let mut vp = Array2::from_elem(dims, false);
        vp[[1, 1]] = true;
        let mut sp = Array2::from_elem(dims, false);
        sp[[3, 3]] = true;
        let curve = flow_curve(
            &s,
            &Mask::new(vp, 1.0, MaskLabel::Vessel),
            &Mask::new(sp, 1.0, MaskLabel::Static),
        )
        .unwrap();
        assert_eq!(curve.flows(), &[0.0; 4]);
    }

    #[test]
    fn noiseless_cine_mean_within_three_percent() {
        let scene = default_scene();
        let s = acquire_cine(&scene, &noiseless(Mode::Cine)).unwrap();
        let v = segment_vessel(&s, scene.tube1().center, MaskLabel::Vessel).unwrap();
        let st = segment_vessel(&s, scene.static_tube().center, MaskLabel::Static).unwrap();
        let c = flow_curve(&s, &v, &st).unwrap();
        assert_eq!(c.len(), 32);
        assert!((c.mean() - 1150.0).abs() / 1150.0 < 0.03, "{}", c.mean());
    }

    #[test]
    fn cine_bins_match_waveform_within_one_percent() {
        let scene = default_scene();
        let params = AcquisitionParams {
            background: BackgroundPhase::ZERO,
            supersampling: 64,
            ..noiseless(Mode::Cine)
        };
        let s = acquire_cine(&scene, &params).unwrap();
        let vessel = segment_vessel(&s, scene.tube1().center, MaskLabel::Vessel).unwrap();
        let st = segment_vessel(&s, scene.static_tube().center, MaskLabel::Static).unwrap();
        let c = flow_curve(&s, &vessel, &st).unwrap();
        for (t, q) in c.times().iter().zip(c.flows()) {
            let truth = scene.waveform().flow_at(*t);
            assert!((q - truth).abs() / truth < 0.01, "t={t} {q} vs {truth}");
        }
    }

    #[test]
    fn csv_roundtrip() {
        let c = FlowCurve::new(vec![0.031, 0.093], vec![1150.123456789, -3.5], Mode::Epi).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "time_s,flow_mm3_s\n0.031,1150.12346\n0.093,-3.5\n");
        let back = FlowCurve::read_csv(&buf[..], Mode::Epi).unwrap();
        assert_eq!(back.flows()[1], -3.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn flow_is_linear_in_velocity(alpha in 0.1f64..1.4) {
            // Constant flow: peak centre velocity 2 * 1000 / 70.88 = 28 mm/s.
            let scene = default_scene().with_waveform(FlowWaveform::constant(1000.0, 99.0).unwrap());
            let params = AcquisitionParams {
                background: BackgroundPhase::ZERO,
                supersampling: 4,
                ..noiseless(Mode::Cine)
            };
            let s = acquire_cine(&scene, &params).unwrap();
            let v = segment_vessel(&s, scene.tube1().center, MaskLabel::Vessel).unwrap();
            let st = segment_vessel(&s, scene.static_tube().center, MaskLabel::Static).unwrap();
            let mask = crate::acquisition::fluid_mask(&scene, &params, 4);
            let unit = crate::acquisition::rasterize_velocity(&scene, 1000.0, &params, 4);
            let encode = |scale: f64| {
                let frames = (0..3).map(|i| {
                    encode_frame(&unit.mapv(|u| u * scale), &params, &mask, i as f64, &mut frame_rng(0, i)).unwrap()
                }).collect();
                let series = ImageSeries::new(frames, params.clone(), "p".into()).unwrap();
                flow_curve(&series, &v, &st).unwrap()
            };
            let base = encode(1.0);
            let scaled = encode(alpha);
            for (a, b) in base.flows().iter().zip(scaled.flows()) {
                prop_assert!((alpha * a - b).abs() < 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
