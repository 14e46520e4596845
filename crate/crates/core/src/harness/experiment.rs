//! The repeated default-parameter validation and the pixel-size sweep.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::config::ExperimentConfig;
use super::HarnessError;
use crate::acquisition::{acquire_series, AcquisitionError, ImageSeries, Mode};
use crate::cycle::{
    detect_cycle_minima, reconstruct_average_cycle, CycleError, ReconstructedCycle, CYCLE_POINTS,
};
use crate::phantom::{PhantomScene, Point2};
use crate::quantify::{flow_curve, segment_vessel, FlowCurve, MaskLabel, QuantifyError};
use crate::stats::{agreement_verdict, bland_altman, BlandAltmanResult, RunSummary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Quantify(#[from] QuantifyError),
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

/// Everything measured from one series.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub mode: Mode,
    pub curve: FlowCurve,
    /// Segmented vessel area, mm².
    pub area: f64,
    /// Present for EPI series.
    pub cycle: Option<ReconstructedCycle>,
}

impl Analysis {
    /// Cycle-averaged flow for EPI, curve mean for CINE.
    pub fn mean_flow(&self) -> f64 {
        match &self.cycle {
            Some(c) => c.mean(),
            None => self.curve.mean(),
        }
    }
}

/// Segment, calibrate and integrate `series`; EPI curves are also cut into
/// cycles of `period` seconds and averaged.
pub fn analyze_series(
    series: &ImageSeries,
    vessel_seed: Point2,
    static_seed: Point2,
    period: f64,
) -> Result<Analysis, PipelineError> {
    let vessel = segment_vessel(series, vessel_seed, MaskLabel::Vessel)?;
    let calibration = segment_vessel(series, static_seed, MaskLabel::Static)?;
    let curve = flow_curve(series, &vessel, &calibration)?;
    let mode = series.params().mode;
    let cycle = match mode {
        Mode::Epi => {
            let minima = detect_cycle_minima(&curve, period)?;
            Some(reconstruct_average_cycle(&curve, &minima)?)
        }
        Mode::Cine => None,
    };
    Ok(Analysis {
        mode,
        curve,
        area: vessel.area(),
        cycle,
    })
}

/// Acquire `scene` with `params` and analyse tube-1.
pub fn run_pipeline(
    scene: &PhantomScene,
    params: &crate::acquisition::AcquisitionParams,
) -> Result<Analysis, PipelineError> {
    let series = acquire_series(scene, params)?;
    analyze_series(
        &series,
        scene.tube1().center,
        scene.static_tube().center,
        scene.waveform().period(),
    )
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mode_tag(mode: Mode) -> u64 {
    match mode {
        Mode::Cine => 0,
        Mode::Epi => 1,
    }
}

/// Noise seed of one mode within a validation repeat. Both modes of a
/// repeat share `repeat_seed` but draw independent noise.
pub fn mode_seed(repeat_seed: u64, mode: Mode) -> u64 {
    splitmix64(repeat_seed ^ (mode_tag(mode) << 62))
}

/// Noise seed of one sweep cell: `base_seed ^ splitmix64(size | mode | repeat)`
/// with the size index in bits 32.., the mode in bit 31 and the repeat below.
pub fn cell_seed(base_seed: u64, size_index: usize, mode: Mode, repeat: usize) -> u64 {
    let packed = ((size_index as u64) << 32) | (mode_tag(mode) << 31) | (repeat as u64 & 0x7FFF_FFFF);
    base_seed ^ splitmix64(packed)
}

#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub cine: Analysis,
    pub epi: Analysis,
    /// EPI cycle shifted so its peak matches the CINE peak of the same repeat.
    pub epi_aligned: ReconstructedCycle,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub base_seed: u64,
    pub noiseless: bool,
    pub repeats: Vec<RepeatResult>,
    pub cine_summary: RunSummary,
    pub epi_summary: RunSummary,
    /// Point-wise mean over repeats of the CINE curves.
    pub cine_mean: Vec<f64>,
    /// Point-wise mean over repeats of the aligned EPI cycles.
    pub epi_mean: Vec<f64>,
    /// Point-wise mean over repeats of the per-cycle SDs.
    pub epi_sd: Vec<f64>,
    pub bland_altman: BlandAltmanResult,
    pub agreement: bool,
}

fn pointwise_mean<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut sum = vec![0.0; CYCLE_POINTS];
    let mut n = 0usize;
    for row in rows {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
        n += 1;
    }
    sum.into_iter().map(|s| s / n as f64).collect()
}

fn run_repeat(
    config: &ExperimentConfig,
    scene: &PhantomScene,
    repeat: usize,
) -> Result<RepeatResult, HarnessError> {
    let seed = config.experiment.base_seed.wrapping_add(repeat as u64);
    let run = |mode: Mode| {
        run_pipeline(scene, &config.params(mode, mode_seed(seed, mode))).map_err(|source| {
            HarnessError::Pipeline {
                context: format!("{mode} repeat {repeat}"),
                source,
            }
        })
    };
    let cine = run(Mode::Cine)?;
    let epi = run(Mode::Epi)?;
    let cycle = epi.cycle.as_ref().expect("EPI analysis has a cycle");
    let epi_aligned = cycle
        .align_to_peak(&cine.curve)
        .map_err(|e| HarnessError::Pipeline {
            context: format!("alignment repeat {repeat}"),
            source: e.into(),
        })?;
    Ok(RepeatResult {
        repeat,
        seed,
        cine,
        epi,
        epi_aligned,
    })
}

/// Acquire and analyse CINE and EPI `n_repeats` times with seeds
/// `base_seed + r`, then summarize each mode and compare the mean curves.
pub fn run_validation(config: &ExperimentConfig) -> Result<ValidationReport, HarnessError> {
    config.validate()?;
    let scene = config.scene()?;
    let repeats = (0..config.experiment.n_repeats)
        .into_par_iter()
        .map(|r| run_repeat(config, &scene, r))
        .collect::<Result<Vec<_>, _>>()?;

    let summary = |pick: fn(&RepeatResult) -> &Analysis| {
        let flows: Vec<f64> = repeats.iter().map(|r| pick(r).mean_flow()).collect();
        let areas: Vec<f64> = repeats.iter().map(|r| pick(r).area).collect();
        RunSummary::from_repeats(&flows, &areas)
    };
    let cine_summary = summary(|r| &r.cine)?;
    let epi_summary = summary(|r| &r.epi)?;

    let cine_mean = pointwise_mean(repeats.iter().map(|r| r.cine.curve.flows()));
    let epi_mean = pointwise_mean(repeats.iter().map(|r| &r.epi_aligned.flows()[..]));
    let epi_sd = pointwise_mean(repeats.iter().map(|r| &r.epi_aligned.sds()[..]));
    let bland_altman = bland_altman(&epi_mean, &cine_mean)?;
    let agreement = agreement_verdict(&bland_altman);
    Ok(ValidationReport {
        base_seed: config.experiment.base_seed,
        noiseless: config.experiment.noiseless,
        repeats,
        cine_summary,
        epi_summary,
        cine_mean,
        epi_mean,
        epi_sd,
        bland_altman,
        agreement,
    })
}

/// One sweep cell. `area` and `mean_flow` are absent when the pipeline failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub pixel_size: f64,
    pub size_index: usize,
    pub mode: Mode,
    pub repeat: usize,
    pub seed: u64,
    pub area: Option<f64>,
    pub mean_flow: Option<f64>,
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Every (pixel size, mode, repeat) cell of the sweep, sorted by that key.
pub fn run_pixel_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRecord>, HarnessError> {
    config.validate()?;
    let scene = config.scene()?;
    let sizes = config.sweep_sizes();
    let mut cells = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        for mode in [Mode::Cine, Mode::Epi] {
            for r in 0..config.sweep.repeats_per_size {
                cells.push((i, size, mode, r));
            }
        }
    }
    let mut records: Vec<SweepRecord> = cells
        .into_par_iter()
        .map(|(size_index, pixel_size, mode, repeat)| {
            let seed = cell_seed(config.experiment.base_seed, size_index, mode, repeat);
            let mut params = config.params(mode, seed);
            params.pixel_size = pixel_size;
            let outcome = run_pipeline(&scene, &params);
            let (area, mean_flow, error) = match outcome {
                Ok(a) => (Some(a.area), Some(a.mean_flow()), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            SweepRecord {
                pixel_size,
                size_index,
                mode,
                repeat,
                seed,
                area,
                mean_flow,
                error,
            }
        })
        .collect();
    records.sort_by_key(|r| (r.size_index, r.mode, r.repeat));
    Ok(records)
}
