//! Pass/fail checks applied by `--gate`.

use super::experiment::{SweepRecord, ValidationReport};
use crate::acquisition::Mode;
use crate::stats::{confidence_check, CI_TOLERANCE_PERCENT, GOLD_FLOW};

/// Largest acceptable repeat CV, percent.
pub const MAX_CV_PERCENT: f64 = 5.0;
/// Pixel sizes whose EPI flow must be inside the confidence interval.
pub const SWEEP_PASS_SIZES: [f64; 4] = [1.2, 1.6, 2.0, 2.4];
/// Pixel size whose EPI flow must fall outside it.
pub const SWEEP_FAIL_SIZE: f64 = 4.4;
/// Finest sweep size; noise should make it worse than the reference size.
pub const SWEEP_FINE_SIZE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

pub fn validation_checks(report: &ValidationReport) -> Vec<Check> {
    let mut out = Vec::new();
    for (mode, s) in [(Mode::Cine, &report.cine_summary), (Mode::Epi, &report.epi_summary)] {
        out.push(check(
            &format!("{mode} mean flow in CI"),
            s.in_flow_ci,
            format!("{:.1} mm³/s", s.mean_flow),
        ));
        out.push(check(
            &format!("{mode} area in CI"),
            s.in_area_ci,
            format!("{:.2} mm²", s.area),
        ));
        if let Some(cv) = s.cv_percent {
            out.push(check(
                &format!("{mode} CV <= {MAX_CV_PERCENT}%"),
                cv <= MAX_CV_PERCENT,
                format!("{cv:.2}%"),
            ));
        }
    }
    let ba = &report.bland_altman;
    out.push(check(
        "EPI vs CINE within limits of agreement",
        report.agreement,
        format!(
            "mean diff {:.1}, LoA [{:.1}, {:.1}]",
            ba.mean_diff, ba.loa_low, ba.loa_high
        ),
    ));
    out
}

fn in_flow_ci(flow: f64) -> bool {
    confidence_check(flow, GOLD_FLOW, CI_TOLERANCE_PERCENT)
        .map(|c| c.within)
        .unwrap_or(false)
}

/// Every EPI record at the pass sizes inside the flow CI, every EPI record
/// at the fail size outside it. Failed cells count against the check.
pub fn sweep_checks(records: &[SweepRecord]) -> Vec<Check> {
    let epi_at = |size: f64| -> Vec<&SweepRecord> {
        records
            .iter()
            .filter(|r| r.mode == Mode::Epi && (r.pixel_size - size).abs() < 1e-6)
            .collect()
    };
    let describe = |rs: &[&SweepRecord]| -> String {
        rs.iter()
            .map(|r| match r.mean_flow {
                Some(q) => format!("{q:.1}"),
                None => "failed".into(),
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut out = Vec::new();
    for size in SWEEP_PASS_SIZES {
        let rs = epi_at(size);
        let passed = !rs.is_empty() && rs.iter().all(|r| r.mean_flow.is_some_and(in_flow_ci));
        out.push(check(
            &format!("EPI {size:.1} mm inside flow CI"),
            passed,
            describe(&rs),
        ));
    }
    let rs = epi_at(SWEEP_FAIL_SIZE);
    let passed = !rs.is_empty() && rs.iter().all(|r| r.mean_flow.is_some_and(|q| !in_flow_ci(q)));
    out.push(check(
        &format!("EPI {SWEEP_FAIL_SIZE:.1} mm outside flow CI"),
        passed,
        describe(&rs),
    ));
    out.push(extremes_check(records));
    out
}

/// Mean relative EPI flow error at one size, percent. `None` if any cell failed.
pub fn epi_flow_error_percent(records: &[SweepRecord], size: f64) -> Option<f64> {
    let flows: Option<Vec<f64>> = records
        .iter()
        .filter(|r| r.mode == Mode::Epi && (r.pixel_size - size).abs() < 1e-6)
        .map(|r| r.mean_flow)
        .collect();
    let flows = flows.filter(|f| !f.is_empty())?;
    let mean = flows.iter().sum::<f64>() / flows.len() as f64;
    Some(100.0 * (mean - GOLD_FLOW).abs() / GOLD_FLOW)
}

/// Error at the finest size exceeds the error at the reference 1.2 mm, and
/// the error at the coarsest size exceeds every pass-band error.
fn extremes_check(records: &[SweepRecord]) -> Check {
    let band: Option<Vec<f64>> = SWEEP_PASS_SIZES
        .iter()
        .map(|&s| epi_flow_error_percent(records, s))
        .collect();
    let fine = epi_flow_error_percent(records, SWEEP_FINE_SIZE);
    let coarse = epi_flow_error_percent(records, SWEEP_FAIL_SIZE);
    let name = "EPI error grows at both sweep extremes";
    match (band, fine, coarse) {
        (Some(band), Some(fine), Some(coarse)) => {
            let worst = band.iter().cloned().fold(0.0, f64::max);
            check(
                name,
                fine > band[0] && coarse > worst,
                format!(
                    "{SWEEP_FINE_SIZE} mm {fine:.1}% vs 1.2 mm {:.1}%; {SWEEP_FAIL_SIZE} mm {coarse:.1}% vs band max {worst:.1}%",
                    band[0]
                ),
            )
        }
        _ => check(name, false, "missing or failed cells".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(pixel_size: f64, mode: Mode, flow: Option<f64>) -> SweepRecord {
        SweepRecord {
            pixel_size,
            size_index: 0,
            mode,
            repeat: 0,
            seed: 0,
            area: flow.map(|_| 70.0),
            mean_flow: flow,
            error: flow.is_none().then(|| "boom".into()),
        }
    }

    fn sweep(flows: &[(f64, f64)]) -> Vec<SweepRecord> {
        flows
            .iter()
            .flat_map(|&(s, q)| [record(s, Mode::Epi, Some(q)), record(s, Mode::Cine, Some(0.0))])
            .collect()
    }

    #[test]
    fn passing_sweep() {
        let rs = sweep(&[(0.8, 1080.0), (1.2, 1120.0), (1.6, 1110.0), (2.0, 1100.0), (2.4, 1050.0), (4.4, 950.0)]);
        let checks = sweep_checks(&rs);
        assert_eq!(checks.len(), 6);
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    }

    #[test]
    fn coarse_size_inside_ci_fails() {
        let rs = sweep(&[(0.8, 1080.0), (1.2, 1120.0), (1.6, 1110.0), (2.0, 1100.0), (2.4, 1050.0), (4.4, 1100.0)]);
        let checks = sweep_checks(&rs);
        assert!(!checks[4].passed);
        assert!(!checks[5].passed);
    }

    #[test]
    fn fine_size_better_than_reference_fails_extremes() {
        let rs = sweep(&[(0.8, 1140.0), (1.2, 1120.0), (1.6, 1110.0), (2.0, 1100.0), (2.4, 1050.0), (4.4, 950.0)]);
        let checks = sweep_checks(&rs);
        assert!(checks[..5].iter().all(|c| c.passed));
        assert!(!checks[5].passed);
    }

    #[test]
    fn failed_cell_counts_against() {
        let mut rs = sweep(&[(0.8, 1080.0), (1.2, 1120.0), (1.6, 1110.0), (2.0, 1100.0), (2.4, 1050.0), (4.4, 950.0)]);
        rs.push(record(1.6, Mode::Epi, None));
        let checks = sweep_checks(&rs);
        assert!(!checks[1].passed);
        assert_eq!(epi_flow_error_percent(&rs, 1.6), None);
        assert!(!checks[5].passed);
    }

    #[test]
    fn error_percent() {
        let rs = sweep(&[(1.2, 1035.0)]);
        assert!((epi_flow_error_percent(&rs, 1.2).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(epi_flow_error_percent(&rs, 2.0), None);
    }
}
