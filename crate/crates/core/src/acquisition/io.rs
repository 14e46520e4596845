//! On-disk image series: a JSON header plus one raw little-endian `f32`
//! file per frame holding the magnitude plane followed by the phase plane,
//! both row-major.

use std::f32::consts::PI as PI_F32;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AcquisitionError, AcquisitionParams, Frame, ImageSeries};

pub const HEADER_FILE: &str = "series.json";
const FORMAT_NAME: &str = "pcflow-series";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SeriesIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Series(#[from] AcquisitionError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Dims {
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesHeader {
    format: String,
    version: u32,
    scene_hash: String,
    frame_count: usize,
    dims: Dims,
    dtype: String,
    endianness: String,
    layout: String,
    timestamps: Vec<f64>,
    frame_files: Vec<String>,
    params: AcquisitionParams,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SeriesIoError + '_ {
    move |source| SeriesIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Largest `f32` strictly below pi.
fn phase_limit() -> f32 {
    f32::from_bits(PI_F32.to_bits() - 1)
}

/// Narrows a phase to `f32` while keeping it inside `[-pi, pi)`.
fn phase_to_f32(phi: f64) -> f32 {
    let limit = phase_limit();
    (phi as f32).clamp(-limit, limit)
}

fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.bin")
}

/// Writes `series` into `dir`, creating it if needed.
pub fn save_series(series: &ImageSeries, dir: &Path) -> Result<(), SeriesIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (rows, cols) = series.params().matrix_dims();
    let frame_files: Vec<String> = (0..series.len()).map(frame_file_name).collect();
    let header = SeriesHeader {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        scene_hash: series.scene_hash().to_string(),
        frame_count: series.len(),
        dims: Dims { rows, cols },
        dtype: "f32".into(),
        endianness: "little".into(),
        layout: "magnitude plane then phase plane, row-major".into(),
        timestamps: series.timestamps(),
        frame_files: frame_files.clone(),
        params: series.params().clone(),
    };
    let header_path = dir.join(HEADER_FILE);
    let json = serde_json::to_string_pretty(&header).map_err(|source| SeriesIoError::Header {
        path: header_path.clone(),
        source,
    })?;
    fs::write(&header_path, json + "\n").map_err(io_err(&header_path))?;

    for (frame, name) in series.frames().iter().zip(&frame_files) {
        let mut bytes = Vec::with_capacity(8 * rows * cols);
        for &m in frame.magnitude.iter() {
            bytes.extend_from_slice(&(m as f32).to_le_bytes());
        }
        for &p in frame.phase.iter() {
            bytes.extend_from_slice(&phase_to_f32(p).to_le_bytes());
        }
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads a series written by [`save_series`].
pub fn load_series(dir: &Path) -> Result<ImageSeries, SeriesIoError> {
    let header_path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&header_path).map_err(io_err(&header_path))?;
    let header: SeriesHeader =
        serde_json::from_str(&text).map_err(|source| SeriesIoError::Header {
            path: header_path.clone(),
            source,
        })?;
    let format_err = |message: String| SeriesIoError::Format {
        path: header_path.clone(),
        message,
    };
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    if header.dtype != "f32" || header.endianness != "little" {
        return Err(format_err(format!(
            "unsupported sample type {} {}",
            header.dtype, header.endianness
        )));
    }
    if header.frame_files.len() != header.frame_count
        || header.timestamps.len() != header.frame_count
    {
        return Err(format_err("frame_count disagrees with frame list".into()));
    }
    let dims = (header.dims.rows, header.dims.cols);
    if dims != header.params.matrix_dims() {
        return Err(format_err(format!(
            "dims {dims:?} disagree with params {:?}",
            header.params.matrix_dims()
        )));
    }
    let plane = dims.0 * dims.1;
    let mut frames = Vec::with_capacity(header.frame_count);
    for (name, &timestamp) in header.frame_files.iter().zip(&header.timestamps) {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() != 8 * plane {
            return Err(SeriesIoError::Format {
                path,
                message: format!("expected {} bytes, found {}", 8 * plane, bytes.len()),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let magnitude = Array2::from_shape_vec(dims, values[..plane].to_vec())
            .expect("plane length checked");
        let phase = Array2::from_shape_vec(dims, values[plane..].to_vec())
            .expect("plane length checked");
        frames.push(Frame {
            magnitude,
            phase,
            timestamp,
        });
    }
    Ok(ImageSeries::new(frames, header.params, header.scene_hash)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::acquire_epi;
    use crate::phantom::default_scene;
    use std::f64::consts::PI;

    fn small_series() -> ImageSeries {
        let params = AcquisitionParams {
            n_frames: 5,
            supersampling: 2,
            rng_seed: 3,
            pixel_size: 2.0,
            ..AcquisitionParams::epi_default()
        };
        acquire_epi(&default_scene(), &params).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let series = small_series();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_series(&series, a.path()).unwrap();
        let loaded = load_series(a.path()).unwrap();
        assert_eq!(loaded.params(), series.params());
        assert_eq!(loaded.scene_hash(), series.scene_hash());
        assert_eq!(loaded.timestamps(), series.timestamps());
        for (l, s) in loaded.frames().iter().zip(series.frames()) {
            for (x, y) in l.magnitude.iter().zip(s.magnitude.iter()) {
                assert_eq!(*x, *y as f32 as f64);
            }
            for (x, y) in l.phase.iter().zip(s.phase.iter()) {
                assert_eq!(*x, phase_to_f32(*y) as f64);
                assert!((-PI..PI).contains(x));
            }
        }
        save_series(&loaded, b.path()).unwrap();
        for entry in fs::read_dir(a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap(),
                "{name:?}"
            );
        }
        assert_eq!(load_series(b.path()).unwrap(), loaded);
    }

    #[test]
    fn frame_file_layout() {
        let series = small_series();
        let dir = tempfile::tempdir().unwrap();
        save_series(&series, dir.path()).unwrap();
        let (rows, cols) = series.params().matrix_dims();
        let bytes = fs::read(dir.path().join("frame_00002.bin")).unwrap();
        assert_eq!(bytes.len(), 2 * rows * cols * 4);
        let f = &series.frames()[2];
        let first_mag = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
        assert_eq!(first_mag, f.magnitude[[0, 0]] as f32);
        let k = rows * cols * 4 + (cols + 1) * 4;
        let phase_11 = f32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
        assert_eq!(phase_11, phase_to_f32(f.phase[[1, 1]]));
    }

    #[test]
    fn phase_narrowing_stays_in_range() {
        let below_pi = PI - 1e-12;
        assert!((phase_to_f32(below_pi) as f64) < PI);
        assert!((phase_to_f32(-PI) as f64) >= -PI);
    }

    #[test]
    fn truncated_frame_rejected() {
        let series = small_series();
        let dir = tempfile::tempdir().unwrap();
        save_series(&series, dir.path()).unwrap();
        let path = dir.path().join("frame_00001.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_series(dir.path()), Err(SeriesIoError::Format { .. })));
    }
}
