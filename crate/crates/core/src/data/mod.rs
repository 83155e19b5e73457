//! Cylinder-wake dataset: ingestion, the space-time sample grid, seeded
//! sampling and test slices.
//!
//! Two on-disk layouts are supported.
//!
//! * CSV: header `x,y,ti,u,v,p`, one row per (point, time) with all times of
//!   a point on consecutive rows, plus a sidecar `<stem>.times.csv` with a
//!   single column `t` listing the `T` time values.
//! * Binary: the magic bytes `NSWAKE01`, `N` and `T` as little-endian `u64`,
//!   then `X_star` (`N × 2`), `t` (`T`), `U_star` (`N × 2 × T`) and `p_star`
//!   (`N × T`) as little-endian `f64` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"NSWAKE01";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("array `{name}` has {got} values, expected {expected}")]
    Extent { name: &'static str, expected: usize, got: usize },
    #[error("time values must increase strictly (index {0})")]
    TimesNotIncreasing(usize),
    #[error("non-finite value in `{0}`")]
    NonFinite(&'static str),
    #[error("cannot draw {n} samples from a grid of {size}")]
    TooManySamples { n: usize, size: usize },
    #[error("time {t} is not in the dataset; available times: {available:?}")]
    AbsentTime { t: f64, available: Vec<f64> },
    #[error("not a wake dataset (bad magic bytes)")]
    BadMagic,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `N` spatial points observed at `T` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NsDataset {
    /// `N × 2`, row-major.
    pub x_star: Vec<f64>,
    pub t: Vec<f64>,
    /// `N × 2 × T`, row-major: `u_star[(i * 2 + c) * T + j]`.
    pub u_star: Vec<f64>,
    /// `N × T`, row-major.
    pub p_star: Vec<f64>,
}

/// One grid entry with its indices into the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NsSample {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub point: usize,
    pub time: usize,
}

/// Coordinates and fields of all points at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSlice {
    pub time_index: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
}

impl NsDataset {
    pub fn new(x_star: Vec<f64>, t: Vec<f64>, u_star: Vec<f64>, p_star: Vec<f64>) -> Result<Self> {
        let d = Self {
            x_star,
            t,
            u_star,
            p_star,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn n_points(&self) -> usize {
        self.x_star.len() / 2
    }

    pub fn n_times(&self) -> usize {
        self.t.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_star.len() % 2 != 0 {
            return Err(DataError::Extent {
                name: "x_star",
                expected: self.x_star.len() + 1,
                got: self.x_star.len(),
            });
        }
        let (n, t) = (self.n_points(), self.n_times());
        for (name, expected, got) in [("u_star", 2 * n * t, self.u_star.len()), ("p_star", n * t, self.p_star.len())] {
            if got != expected {
                return Err(DataError::Extent { name, expected, got });
            }
        }
        if let Some(j) = self.t.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(DataError::TimesNotIncreasing(j + 1));
        }
        for (name, values) in [
            ("x_star", &self.x_star),
            ("t", &self.t),
            ("u_star", &self.u_star),
            ("p_star", &self.p_star),
        ] {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.x_star[2 * i], self.x_star[2 * i + 1])
    }

    pub fn velocity(&self, i: usize, j: usize) -> (f64, f64) {
        let t = self.n_times();
        (self.u_star[2 * i * t + j], self.u_star[(2 * i + 1) * t + j])
    }

    pub fn pressure(&self, i: usize, j: usize) -> f64 {
        self.p_star[i * self.n_times() + j]
    }

    /// `[(x_min, x_max), (y_min, y_max), (t_min, t_max)]`.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        vec![
            range(&mut self.x_star.iter().step_by(2).copied()),
            range(&mut self.x_star.iter().skip(1).step_by(2).copied()),
            range(&mut self.t.iter().copied()),
        ]
    }

    /// Loads the binary layout if the file starts with [`MAGIC`], CSV otherwise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut head = [0u8; 8];
        let mut file = File::open(path).map_err(io_error(path))?;
        let n = file.read(&mut head).map_err(io_error(path))?;
        if n == 8 && &head == MAGIC {
            Self::load_binary(path)
        } else {
            Self::load_csv(path)
        }
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
            .map_err(io_error(path))?;
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(DataError::BadMagic);
        }
        let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap()) as usize;
        let (n, t) = (word(0), word(1));
        let floats = &bytes[24..];
        let expected = 2 * n + t + 2 * n * t + n * t;
        if floats.len() != 8 * expected {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: 0,
                message: format!("expected {} bytes of data for N = {n}, T = {t}, found {}", 8 * expected, floats.len()),
            });
        }
        let mut values = floats.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |count: usize| values.by_ref().take(count).collect::<Vec<f64>>();
        let x_star = take(2 * n);
        let times = take(t);
        let u_star = take(2 * n * t);
        let p_star = take(n * t);
        Self::new(x_star, times, u_star, p_star)
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(io_error(path))?);
        let mut write = || -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&(self.n_points() as u64).to_le_bytes())?;
            w.write_all(&(self.n_times() as u64).to_le_bytes())?;
            for v in self.x_star.iter().chain(&self.t).chain(&self.u_star).chain(&self.p_star) {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()
        };
        write().map_err(io_error(path))
    }

    /// Sidecar holding the time values of a CSV file: `wake.csv` → `wake.times.csv`.
    pub fn times_path(path: &Path) -> PathBuf {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        path.with_file_name(format!("{stem}.times.csv"))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let times_path = Self::times_path(path);
        let t = read_times(&times_path)?;
        let n_times = t.len();
        let name = path.display().to_string();
        let parse_err = |line: u64, message: String| DataError::Parse {
            path: name.clone(),
            line,
            message,
        };

        let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(0, e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header != ["x", "y", "ti", "u", "v", "p"] {
            return Err(parse_err(1, format!("expected header x,y,ti,u,v,p, found {}", header.join(","))));
        }
        let mut x_star = Vec::new();
        let mut rows: Vec<[f64; 3]> = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let line = r as u64 + 2;
            let record = record.map_err(|e| parse_err(line, e.to_string()))?;
            if record.len() != 6 {
                return Err(parse_err(line, format!("expected 6 fields, found {}", record.len())));
            }
            let field = |k: usize| -> Result<f64> {
                record[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("column {}: {e}", header[k])))
            };
            let (x, y, u, v, p) = (field(0)?, field(1)?, field(3)?, field(4)?, field(5)?);
            let ti: usize = record[2]
                .trim()
                .parse()
                .map_err(|e| parse_err(line, format!("column ti: {e}")))?;
            let j = r % n_times.max(1);
            if ti != j {
                return Err(parse_err(line, format!("expected time index {j}, found {ti}")));
            }
            if j == 0 {
                x_star.extend([x, y]);
            } else {
                let i = x_star.len() / 2 - 1;
                if (x, y) != (x_star[2 * i], x_star[2 * i + 1]) {
                    return Err(parse_err(line, format!("coordinates differ from the first row of point {i}")));
                }
            }
            rows.push([u, v, p]);
        }
        if n_times == 0 || rows.len() % n_times != 0 {
            return Err(parse_err(
                rows.len() as u64 + 1,
                format!("{} rows do not fill whole points of {n_times} times", rows.len()),
            ));
        }
        let n = rows.len() / n_times;
        let mut u_star = vec![0.0; 2 * n * n_times];
        let mut p_star = vec![0.0; n * n_times];
        for (r, [u, v, p]) in rows.into_iter().enumerate() {
            let (i, j) = (r / n_times, r % n_times);
            u_star[2 * i * n_times + j] = u;
            u_star[(2 * i + 1) * n_times + j] = v;
            p_star[i * n_times + j] = p;
        }
        Self::new(x_star, t, u_star, p_star)
    }

    /// Writes the CSV and its time sidecar.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| DataError::Io {
            path: path.display().to_string(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["x", "y", "ti", "u", "v", "p"]).map_err(csv_err)?;
        for i in 0..self.n_points() {
            let (x, y) = self.point(i);
            for j in 0..self.n_times() {
                let (u, v) = self.velocity(i, j);
                w.write_record([
                    x.to_string(),
                    y.to_string(),
                    j.to_string(),
                    u.to_string(),
                    v.to_string(),
                    self.pressure(i, j).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(io_error(path))?;
        let times_path = Self::times_path(path);
        let mut w = csv::Writer::from_path(&times_path).map_err(csv_err)?;
        w.write_record(["t"]).map_err(csv_err)?;
        for t in &self.t {
            w.write_record([t.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(io_error(&times_path))
    }

    /// Every (point, time) pair, point-major.
    pub fn build_st_grid(&self) -> Vec<NsSample> {
        let mut out = Vec::with_capacity(self.n_points() * self.n_times());
        for i in 0..self.n_points() {
            let (x, y) = self.point(i);
            for (j, &t) in self.t.iter().enumerate() {
                let (u, v) = self.velocity(i, j);
                out.push(NsSample {
                    x,
                    y,
                    t,
                    u,
                    v,
                    point: i,
                    time: j,
                });
            }
        }
        out
    }

    /// Index of a time within 1e-9.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.t
            .iter()
            .position(|v| (v - t).abs() <= 1e-9)
            .ok_or_else(|| DataError::AbsentTime {
                t,
                available: self.t.clone(),
            })
    }

    pub fn test_slice(&self, t: f64) -> Result<TestSlice> {
        let j = self.time_index(t)?;
        let n = self.n_points();
        let mut s = TestSlice {
            time_index: j,
            t: self.t[j],
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
        };
        for i in 0..n {
            let (x, y) = self.point(i);
            let (u, v) = self.velocity(i, j);
            s.x.push(x);
            s.y.push(y);
            s.u.push(u);
            s.v.push(v);
            s.p.push(self.pressure(i, j));
        }
        Ok(s)
    }
}

fn read_times(path: &Path) -> Result<Vec<f64>> {
    let name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Parse {
        path: name.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r as u64 + 2;
        let value = record
            .map_err(|e| e.to_string())
            .and_then(|rec| rec.get(0).unwrap_or("").trim().parse::<f64>().map_err(|e| e.to_string()))
            .map_err(|message| DataError::Parse {
                path: name.clone(),
                line,
                message,
            })?;
        out.push(value);
    }
    Ok(out)
}

/// `n` distinct grid entries drawn uniformly with a ChaCha8 stream seeded by `seed`.
pub fn sample_training_points(grid: &[NsSample], n: usize, seed: u64) -> Result<Vec<NsSample>> {
    if n > grid.len() {
        return Err(DataError::TooManySamples { n, size: grid.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, grid.len(), n).into_iter().map(|i| grid[i]).collect())
}
