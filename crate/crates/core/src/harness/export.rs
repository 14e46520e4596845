//! CSV files written by the experiments and read back by the renderer.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::experiment::{SweepRecord, ValidationReport};
use super::HarnessError;
use crate::acquisition::Mode;
use crate::format::format_sig9;
use crate::stats::RunSummary;

pub const SUMMARY_CSV: &str = "summary.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const BLAND_ALTMAN_CSV: &str = "bland_altman.csv";
pub const REPEATS_CSV: &str = "repeats.csv";
pub const REPEAT_CURVES_CSV: &str = "repeat_curves.csv";
pub const REPEAT_CYCLES_CSV: &str = "repeat_cycles.csv";
pub const SWEEP_CSV: &str = "sweep.csv";

const AGREEMENT_NOTE: &str = "agreement checks every difference against its own 95% limits; \
about 1 point in 20 falls outside for Gaussian differences, so this screens for gross shape \
mismatch and is not a significance test";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(io_err(&path))?;
    Ok((path, BufWriter::new(file)))
}

fn write_records<I, R>(dir: &Path, name: &str, comments: &[String], header: &[&str], rows: I) -> Result<PathBuf, HarnessError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let (path, mut file) = create(dir, name)?;
    for c in comments {
        writeln!(file, "# {c}").map_err(io_err(&path))?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err(&path))?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}

fn summary_row(mode: Mode, s: &RunSummary) -> Vec<String> {
    vec![
        mode.to_string(),
        s.n_repeats.to_string(),
        format_sig9(s.mean_flow),
        format_sig9(s.sd_flow),
        s.cv_percent.map(format_sig9).unwrap_or_default(),
        format_sig9(s.area),
        s.in_flow_ci.to_string(),
        s.in_area_ci.to_string(),
        if s.cv_percent.is_none() {
            "insufficient repeats".into()
        } else {
            String::new()
        },
    ]
}

/// Writes every validation CSV into `dir` and returns the paths.
pub fn write_validation(report: &ValidationReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::new();
    written.push(write_records(
        dir,
        SUMMARY_CSV,
        &[],
        &[
            "mode",
            "n_repeats",
            "mean_flow_mm3_s",
            "sd_flow_mm3_s",
            "cv_percent",
            "area_mm2",
            "in_flow_ci",
            "in_area_ci",
            "note",
        ],
        [
            summary_row(Mode::Cine, &report.cine_summary),
            summary_row(Mode::Epi, &report.epi_summary),
        ],
    )?);

    written.push(write_records(
        dir,
        CURVES_CSV,
        &[],
        &["index", "cine_flow_mm3_s", "epi_flow_mm3_s", "epi_sd_mm3_s"],
        (0..report.cine_mean.len()).map(|j| {
            vec![
                j.to_string(),
                format_sig9(report.cine_mean[j]),
                format_sig9(report.epi_mean[j]),
                format_sig9(report.epi_sd[j]),
            ]
        }),
    )?);

    let ba = &report.bland_altman;
    written.push(write_records(
        dir,
        BLAND_ALTMAN_CSV,
        &[
            format!("mean_diff = {}", format_sig9(ba.mean_diff)),
            format!("loa_low = {}", format_sig9(ba.loa_low)),
            format!("loa_high = {}", format_sig9(ba.loa_high)),
            format!("agreement = {}", report.agreement),
            format!("note = {AGREEMENT_NOTE}"),
        ],
        &["pair_mean", "diff"],
        ba.pair_means
            .iter()
            .zip(&ba.diffs)
            .map(|(m, d)| vec![format_sig9(*m), format_sig9(*d)]),
    )?);

    let mut repeat_rows = Vec::new();
    let mut curve_rows = Vec::new();
    let mut cycle_rows = Vec::new();
    for r in &report.repeats {
        for a in [&r.cine, &r.epi] {
            repeat_rows.push(vec![
                r.repeat.to_string(),
                r.seed.to_string(),
                a.mode.to_string(),
                format_sig9(a.area),
                format_sig9(a.mean_flow()),
            ]);
            for (j, (t, q)) in a.curve.times().iter().zip(a.curve.flows()).enumerate() {
                curve_rows.push(vec![
                    r.repeat.to_string(),
                    a.mode.to_string(),
                    j.to_string(),
                    format_sig9(*t),
                    format_sig9(*q),
                ]);
            }
        }
        for (j, (q, s)) in r
            .epi_aligned
            .flows()
            .iter()
            .zip(r.epi_aligned.sds())
            .enumerate()
        {
            cycle_rows.push(vec![
                r.repeat.to_string(),
                j.to_string(),
                format_sig9(*q),
                format_sig9(*s),
                r.epi_aligned.n_cycles().to_string(),
            ]);
        }
    }
    written.push(write_records(
        dir,
        REPEATS_CSV,
        &[],
        &["repeat", "seed", "mode", "area_mm2", "mean_flow_mm3_s"],
        repeat_rows,
    )?);
    written.push(write_records(
        dir,
        REPEAT_CURVES_CSV,
        &[],
        &["repeat", "mode", "index", "time_s", "flow_mm3_s"],
        curve_rows,
    )?);
    written.push(write_records(
        dir,
        REPEAT_CYCLES_CSV,
        &[],
        &["repeat", "index", "flow_mm3_s", "sd_mm3_s", "n_cycles"],
        cycle_rows,
    )?);
    Ok(written)
}

pub fn write_sweep(records: &[SweepRecord], dir: &Path) -> Result<PathBuf, HarnessError> {
    write_records(
        dir,
        SWEEP_CSV,
        &[],
        &[
            "pixel_size_mm",
            "mode",
            "repeat",
            "seed",
            "status",
            "area_mm2",
            "mean_flow_mm3_s",
            "error",
        ],
        records.iter().map(|r| {
            vec![
                format_sig9(r.pixel_size),
                r.mode.to_string(),
                r.repeat.to_string(),
                r.seed.to_string(),
                if r.succeeded() { "ok" } else { "failed" }.to_string(),
                r.area.map(format_sig9).unwrap_or_default(),
                r.mean_flow.map(format_sig9).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

/// The 32-point comparison read back from [`CURVES_CSV`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub cine: Vec<f64>,
    pub epi: Vec<f64>,
    pub epi_sd: Vec<f64>,
}

/// Bland–Altman data read back from [`BLAND_ALTMAN_CSV`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlandAltmanTable {
    pub pair_means: Vec<f64>,
    pub diffs: Vec<f64>,
    pub mean_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// A sweep row as read back; failed cells carry no values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub pixel_size: f64,
    pub mode: Mode,
    pub area: Option<f64>,
    pub mean_flow: Option<f64>,
}

fn reader(path: &Path) -> Result<csv::Reader<File>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn parse_f64(path: &Path, s: &str) -> Result<f64, HarnessError> {
    s.trim().parse().map_err(|_| HarnessError::Csv {
        path: path.to_path_buf(),
        message: format!("not a number: {s:?}"),
    })
}

fn column(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize, HarnessError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| HarnessError::Csv {
            path: path.to_path_buf(),
            message: format!("missing column {name}"),
        })
}

pub fn read_curves(dir: &Path) -> Result<CurveTable, HarnessError> {
    let path = dir.join(CURVES_CSV);
    let mut rd = reader(&path)?;
    let headers = rd.headers().map_err(csv_err(&path))?.clone();
    let cols = [
        column(&path, &headers, "cine_flow_mm3_s")?,
        column(&path, &headers, "epi_flow_mm3_s")?,
        column(&path, &headers, "epi_sd_mm3_s")?,
    ];
    let mut table = CurveTable {
        cine: Vec::new(),
        epi: Vec::new(),
        epi_sd: Vec::new(),
    };
    for rec in rd.records() {
        let rec = rec.map_err(csv_err(&path))?;
        let get = |i: usize| parse_f64(&path, rec.get(i).unwrap_or(""));
        table.cine.push(get(cols[0])?);
        table.epi.push(get(cols[1])?);
        table.epi_sd.push(get(cols[2])?);
    }
    Ok(table)
}

pub fn read_bland_altman(dir: &Path) -> Result<BlandAltmanTable, HarnessError> {
    let path = dir.join(BLAND_ALTMAN_CSV);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let value = |key: &str| -> Result<f64, HarnessError> {
        text.lines()
            .filter_map(|l| l.strip_prefix('#'))
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| parse_f64(&path, v))
            .unwrap_or_else(|| {
                Err(HarnessError::Csv {
                    path: path.clone(),
                    message: format!("missing {key}"),
                })
            })
    };
    let mean_diff = value("mean_diff")?;
    let loa_low = value("loa_low")?;
    let loa_high = value("loa_high")?;
    let mut rd = reader(&path)?;
    let mut pair_means = Vec::new();
    let mut diffs = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err(&path))?;
        pair_means.push(parse_f64(&path, rec.get(0).unwrap_or(""))?);
        diffs.push(parse_f64(&path, rec.get(1).unwrap_or(""))?);
    }
    Ok(BlandAltmanTable {
        pair_means,
        diffs,
        mean_diff,
        loa_low,
        loa_high,
    })
}

pub fn read_sweep(dir: &Path) -> Result<Vec<SweepPoint>, HarnessError> {
    let path = dir.join(SWEEP_CSV);
    let mut rd = reader(&path)?;
    let headers = rd.headers().map_err(csv_err(&path))?.clone();
    let c_size = column(&path, &headers, "pixel_size_mm")?;
    let c_mode = column(&path, &headers, "mode")?;
    let c_area = column(&path, &headers, "area_mm2")?;
    let c_flow = column(&path, &headers, "mean_flow_mm3_s")?;
    let mut points = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err(&path))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let optional = |i: usize| -> Result<Option<f64>, HarnessError> {
            match field(i) {
                "" => Ok(None),
                s => parse_f64(&path, s).map(Some),
            }
        };
        let mode = match field(c_mode) {
            "CINE" => Mode::Cine,
            "EPI" => Mode::Epi,
            other => {
                return Err(HarnessError::Csv {
                    path: path.clone(),
                    message: format!("unknown mode {other:?}"),
                })
            }
        };
        points.push(SweepPoint {
            pixel_size: parse_f64(&path, field(c_size))?,
            mode,
            area: optional(c_area)?,
            mean_flow: optional(c_flow)?,
        });
    }
    Ok(points)
}
