//! Cutting a real-time flow curve into pump cycles and averaging them into
//! one 32-point representative cycle.

mod spline;

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::format::format_sig9;
use crate::quantify::FlowCurve;

pub use spline::NaturalSpline;

pub const CYCLE_POINTS: usize = 32;

/// Minimum spacing of accepted minima, as a fraction of the expected period.
const MIN_SEPARATION: f64 = 0.7;

#[derive(Debug, Error)]
pub enum CycleError {
    #[error("expected period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error("curve has {len} samples, at least {needed} needed for two periods")]
    CurveTooShort { len: usize, needed: usize },
    #[error("curve too short: found {found} cycle minima, need at least 2")]
    TooFewMinima { found: usize },
    #[error("invalid minima: {0}")]
    InvalidMinima(String),
    #[error("reference curve has {0} samples, expected {CYCLE_POINTS}")]
    ReferenceLength(usize),
    #[error("invalid cycle: {0}")]
    InvalidCycle(String),
    #[error("cycle csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How each min-to-min segment is resampled onto the 32-point grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    /// Piecewise-linear between samples; segment ends at the detected sample times.
    Linear,
    /// Natural cubic spline through the whole curve; segment ends refined to
    /// the spline minimum next to each detected sample.
    #[default]
    Spline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedCycle {
    flows: [f64; CYCLE_POINTS],
    sds: [f64; CYCLE_POINTS],
    n_cycles: usize,
    period_estimate: f64,
}

impl ReconstructedCycle {
    pub fn new(
        flows: [f64; CYCLE_POINTS],
        sds: [f64; CYCLE_POINTS],
        n_cycles: usize,
        period_estimate: f64,
    ) -> Result<Self, CycleError> {
        if n_cycles == 0 {
            return Err(CycleError::InvalidCycle("n_cycles must be at least 1".into()));
        }
        if flows.iter().any(|v| !v.is_finite()) {
            return Err(CycleError::InvalidCycle("non-finite flow".into()));
        }
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(CycleError::InvalidCycle("sds must be finite and >= 0".into()));
        }
        if !(period_estimate.is_finite() && period_estimate > 0.0) {
            return Err(CycleError::InvalidCycle(format!(
                "period estimate {period_estimate}"
            )));
        }
        Ok(Self {
            flows,
            sds,
            n_cycles,
            period_estimate,
        })
    }

    pub fn flows(&self) -> &[f64; CYCLE_POINTS] {
        &self.flows
    }

    pub fn sds(&self) -> &[f64; CYCLE_POINTS] {
        &self.sds
    }

    pub fn n_cycles(&self) -> usize {
        self.n_cycles
    }

    pub fn period_estimate(&self) -> f64 {
        self.period_estimate
    }

    pub fn mean(&self) -> f64 {
        self.flows.iter().sum::<f64>() / CYCLE_POINTS as f64
    }

    /// Circularly shifts flows and sds together so the peak lands on the
    /// reference curve's peak index.
    pub fn align_to_peak(&self, reference: &FlowCurve) -> Result<Self, CycleError> {
        if reference.len() != CYCLE_POINTS {
            return Err(CycleError::ReferenceLength(reference.len()));
        }
        let target = argmax(reference.flows());
        let own = argmax(&self.flows);
        let shift = (target + CYCLE_POINTS - own) % CYCLE_POINTS;
        let mut flows = [0.0; CYCLE_POINTS];
        let mut sds = [0.0; CYCLE_POINTS];
        for j in 0..CYCLE_POINTS {
            let k = (j + shift) % CYCLE_POINTS;
            flows[k] = self.flows[j];
            sds[k] = self.sds[j];
        }
        Ok(Self {
            flows,
            sds,
            ..self.clone()
        })
    }

    /// CSV `index,flow_mm3_s,sd_mm3_s` preceded by `#` lines for the cycle
    /// count and period estimate.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), CycleError> {
        writeln!(w, "# n_cycles = {}", self.n_cycles)?;
        writeln!(w, "# period_estimate_s = {}", format_sig9(self.period_estimate))?;
        writeln!(w, "index,flow_mm3_s,sd_mm3_s")?;
        for j in 0..CYCLE_POINTS {
            writeln!(
                w,
                "{j},{},{}",
                format_sig9(self.flows[j]),
                format_sig9(self.sds[j])
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, CycleError> {
        let bad = |what: &str| CycleError::Csv(what.to_string());
        let mut n_cycles = None;
        let mut period = None;
        let mut header_seen = false;
        let mut rows = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, value)) = comment.split_once('=') {
                    match key.trim() {
                        "n_cycles" => n_cycles = value.trim().parse::<usize>().ok(),
                        "period_estimate_s" => period = value.trim().parse::<f64>().ok(),
                        _ => {}
                    }
                }
                continue;
            }
            if !header_seen {
                if line != "index,flow_mm3_s,sd_mm3_s" {
                    return Err(bad(&format!("bad header {line:?}")));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parsed = match fields.as_slice() {
                [i, q, s] => i
                    .parse::<usize>()
                    .ok()
                    .zip(q.parse::<f64>().ok())
                    .zip(s.parse::<f64>().ok()),
                _ => None,
            };
            let ((i, q), s) = parsed.ok_or_else(|| bad(&format!("bad row {line:?}")))?;
            if i != rows.len() {
                return Err(bad(&format!("row index {i} out of order")));
            }
            rows.push((q, s));
        }
        if rows.len() != CYCLE_POINTS {
            return Err(bad(&format!("{} rows, expected {CYCLE_POINTS}", rows.len())));
        }
        let mut flows = [0.0; CYCLE_POINTS];
        let mut sds = [0.0; CYCLE_POINTS];
        for (j, (q, s)) in rows.into_iter().enumerate() {
            flows[j] = q;
            sds[j] = s;
        }
        Self::new(
            flows,
            sds,
            n_cycles.ok_or_else(|| bad("missing n_cycles"))?,
            period.ok_or_else(|| bad("missing period_estimate_s"))?,
        )
    }
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the per-cycle flow minima.
///
/// A sample is a candidate when it is a strict local minimum and the first
/// occurrence of the minimum of a window one expected period wide centred on
/// it. Candidates closer than 0.7 periods keep the lower one (earlier on ties).
pub fn detect_cycle_minima(
    curve: &FlowCurve,
    expected_period: f64,
) -> Result<Vec<usize>, CycleError> {
    if !(expected_period.is_finite() && expected_period > 0.0) {
        return Err(CycleError::InvalidPeriod(expected_period));
    }
    let n = curve.len();
    let dt = match curve.sample_interval() {
        Some(dt) if dt > 0.0 => dt,
        _ => return Err(CycleError::TooFewMinima { found: 0 }),
    };
    let needed = (2.0 * expected_period / dt - 1e-9).ceil() as usize;
    if n < needed {
        return Err(CycleError::CurveTooShort { len: n, needed });
    }
    let y = curve.flows();
    let t = curve.times();
    let half = ((expected_period / dt).round() as usize / 2).max(1);

    let mut candidates = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(y[i] < y[i - 1] && y[i] <= y[i + 1]) {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        if lo + argmin(&y[lo..=hi]) == i {
            candidates.push(i);
        }
    }

    let min_gap = MIN_SEPARATION * expected_period;
    let mut minima: Vec<usize> = Vec::new();
    for i in candidates {
        match minima.last_mut() {
            Some(last) if t[i] - t[*last] < min_gap => {
                if y[i] < y[*last] {
                    *last = i;
                }
            }
            _ => minima.push(i),
        }
    }
    if minima.len() < 2 {
        return Err(CycleError::TooFewMinima {
            found: minima.len(),
        });
    }
    Ok(minima)
}

/// First index of the smallest value.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn check_minima(curve: &FlowCurve, minima: &[usize]) -> Result<(), CycleError> {
    if minima.len() < 2 {
        return Err(CycleError::TooFewMinima {
            found: minima.len(),
        });
    }
    if minima.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CycleError::InvalidMinima("not strictly increasing".into()));
    }
    if minima[minima.len() - 1] >= curve.len() {
        return Err(CycleError::InvalidMinima(format!(
            "index {} beyond curve of {} samples",
            minima[minima.len() - 1],
            curve.len()
        )));
    }
    Ok(())
}

/// Normalized cycle times `u_j = j / 32`.
fn grid_fractions() -> impl Iterator<Item = f64> {
    (0..CYCLE_POINTS).map(|j| j as f64 / CYCLE_POINTS as f64)
}

fn linear_at(t: &[f64], y: &[f64], at: f64) -> f64 {
    let k = t.partition_point(|&v| v <= at).clamp(1, t.len() - 1);
    let w = (at - t[k - 1]) / (t[k] - t[k - 1]);
    y[k - 1] + w * (y[k] - y[k - 1])
}

/// Each min-to-min segment resampled to 32 points, together with the
/// segment boundary times actually used.
pub fn resampled_segments(
    curve: &FlowCurve,
    minima: &[usize],
    resampling: Resampling,
) -> Result<(Vec<[f64; CYCLE_POINTS]>, Vec<f64>), CycleError> {
    check_minima(curve, minima)?;
    let t = curve.times();
    let y = curve.flows();
    let mut segments = Vec::with_capacity(minima.len() - 1);
    let bounds: Vec<f64>;
    match resampling {
        Resampling::Linear => {
            bounds = minima.iter().map(|&i| t[i]).collect();
            for w in bounds.windows(2) {
                let mut seg = [0.0; CYCLE_POINTS];
                for (s, u) in seg.iter_mut().zip(grid_fractions()) {
                    *s = linear_at(t, y, w[0] + u * (w[1] - w[0]));
                }
                segments.push(seg);
            }
        }
        Resampling::Spline => {
            let spline = NaturalSpline::new(t, y);
            bounds = minima
                .iter()
                .map(|&i| {
                    if i == 0 || i + 1 >= t.len() {
                        t[i]
                    } else {
                        spline.argmin_on(t[i - 1], t[i + 1])
                    }
                })
                .collect();
            if bounds.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CycleError::InvalidMinima(
                    "refined boundaries out of order".into(),
                ));
            }
            for w in bounds.windows(2) {
                let mut seg = [0.0; CYCLE_POINTS];
                for (s, u) in seg.iter_mut().zip(grid_fractions()) {
                    *s = spline.eval(w[0] + u * (w[1] - w[0]));
                }
                segments.push(seg);
            }
        }
    }
    Ok((segments, bounds))
}

/// Point-wise mean and sample SD of the resampled cycles, spline resampling.
pub fn reconstruct_average_cycle(
    curve: &FlowCurve,
    minima: &[usize],
) -> Result<ReconstructedCycle, CycleError> {
    reconstruct_average_cycle_with(curve, minima, Resampling::default())
}

pub fn reconstruct_average_cycle_with(
    curve: &FlowCurve,
    minima: &[usize],
    resampling: Resampling,
) -> Result<ReconstructedCycle, CycleError> {
    let (segments, bounds) = resampled_segments(curve, minima, resampling)?;
    let n = segments.len();
    let mut flows = [0.0; CYCLE_POINTS];
    let mut sds = [0.0; CYCLE_POINTS];
    for j in 0..CYCLE_POINTS {
        let mean = segments.iter().map(|s| s[j]).sum::<f64>() / n as f64;
        flows[j] = mean;
        if n > 1 {
            let ss: f64 = segments.iter().map(|s| (s[j] - mean).powi(2)).sum();
            sds[j] = (ss / (n - 1) as f64).sqrt();
        }
    }
    let period = (bounds[bounds.len() - 1] - bounds[0]) / n as f64;
    ReconstructedCycle::new(flows, sds, n, period)
}
