//! Kernel files: a CSV of `x_index,y_index,value` rows and a JSON sidecar.
//!
//! Values are written with 17 significant digits, so reading a dump back
//! reproduces every double exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::lattice::Grid;
use crate::propagator::{KernelMatrix, Scheme};
use crate::{Error, Matrix, Result};

/// Metadata stored next to a kernel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSidecar {
    pub m: u32,
    #[serde(rename = "L")]
    pub half_width: f64,
    pub t: f64,
    pub scheme: String,
    pub delta_t: Option<f64>,
    pub n_steps: Option<u64>,
}

impl KernelSidecar {
    pub fn of(kernel: &KernelMatrix) -> Self {
        let n_steps = match kernel.scheme {
            Scheme::Euler { n_steps, .. } | Scheme::SpectralEuler { n_steps, .. } => Some(n_steps),
            _ => None,
        };
        KernelSidecar {
            m: kernel.level(),
            half_width: kernel.grid.half_width(),
            t: kernel.time,
            scheme: kernel.scheme.name().to_string(),
            delta_t: kernel.scheme.delta_t(),
            n_steps,
        }
    }

    fn scheme(&self) -> Result<Scheme> {
        let stepped = || match (self.delta_t, self.n_steps) {
            (Some(delta_t), Some(n_steps)) => Ok((delta_t, n_steps)),
            _ => Err(Error::Config(format!(
                "scheme {} needs delta_t and n_steps",
                self.scheme
            ))),
        };
        Ok(match self.scheme.as_str() {
            "semidiscrete" => Scheme::Semidiscrete,
            "spectral" => Scheme::Spectral,
            "continuum" => Scheme::Continuum,
            "euler" => {
                let (delta_t, n_steps) = stepped()?;
                Scheme::Euler { delta_t, n_steps }
            }
            "spectral_euler" => {
                let (delta_t, n_steps) = stepped()?;
                Scheme::SpectralEuler { delta_t, n_steps }
            }
            other => return Err(Error::Config(format!("unknown scheme {other:?}"))),
        })
    }
}

/// Formats a double with 17 significant digits.
pub fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn kernel_csv(kernel: &KernelMatrix) -> String {
    let n = kernel.dim();
    let mut out = String::with_capacity(32 * n * n + 24);
    out.push_str("x_index,y_index,value\n");
    for x in 0..n {
        for y in 0..n {
            out.push_str(&format!("{x},{y},{}\n", exact(kernel.get(x, y))));
        }
    }
    out
}

/// Parses the CSV of an `n x n` kernel; every entry must appear exactly once.
pub fn parse_kernel_csv(text: &str, n: usize) -> Result<Matrix> {
    let mut lines = text.lines();
    if lines.next() != Some("x_index,y_index,value") {
        return Err(Error::Config("kernel CSV header is missing".into()));
    }
    let mut values = Matrix::from_element(n, n, f64::NAN);
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let bad = || Error::Config(format!("malformed kernel CSV line {}: {line:?}", i + 2));
        let mut fields = line.split(',');
        let (Some(x), Some(y), Some(v), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(bad());
        };
        let x: usize = x.parse().map_err(|_| bad())?;
        let y: usize = y.parse().map_err(|_| bad())?;
        let v: f64 = v.parse().map_err(|_| bad())?;
        if x >= n || y >= n || !values[(x, y)].is_nan() {
            return Err(bad());
        }
        values[(x, y)] = v;
        seen += 1;
    }
    if seen != n * n {
        return Err(Error::Config(format!(
            "kernel CSV has {seen} entries, expected {}",
            n * n
        )));
    }
    Ok(values)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_kernel(kernel: &KernelMatrix, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    fs::write(&csv, kernel_csv(kernel))?;
    fs::write(&json, serde_json::to_string_pretty(&KernelSidecar::of(kernel))? + "\n")?;
    Ok((csv, json))
}

/// Reads a kernel back from its CSV and sidecar.
pub fn read_kernel(csv: &Path, sidecar: &Path) -> Result<KernelMatrix> {
    let meta: KernelSidecar = serde_json::from_str(&fs::read_to_string(sidecar)?)?;
    let grid = Grid::with_limit(meta.m, meta.half_width, usize::MAX)?;
    let values = parse_kernel_csv(&fs::read_to_string(csv)?, grid.len())?;
    Ok(KernelMatrix {
        grid,
        time: meta.t,
        scheme: meta.scheme()?,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{make_family, Family};
    use crate::generator::build_generator;
    use crate::lattice::build_grid;
    use crate::propagator::{euler_kernel, expm_kernel, EulerStep};

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let f = make_family(&Family::default_trig(), 1.0).unwrap();
        let op = build_generator(&f, &build_grid(3, 1.0).unwrap()).unwrap();
        let t = 0.1;
        let kernels = [
            expm_kernel(&op, t).unwrap(),
            euler_kernel(&op, t, EulerStep::for_horizon(&op, t).unwrap()).unwrap(),
        ];
        for (i, k) in kernels.iter().enumerate() {
            let (csv, json) = write_kernel(k, dir.path(), &format!("k{i}")).unwrap();
            let back = read_kernel(&csv, &json).unwrap();
            assert_eq!(&back, k);
        }
    }

    #[test]
    fn rejects_incomplete_csv() {
        assert!(parse_kernel_csv("x_index,y_index,value\n0,0,1\n", 2).is_err());
        assert!(parse_kernel_csv("0,0,1\n", 1).is_err());
        assert!(parse_kernel_csv("x_index,y_index,value\n0,0,1\n0,0,2\n", 1).is_err());
        assert_eq!(
            parse_kernel_csv("x_index,y_index,value\n0,0,2.5\n", 1).unwrap()[(0, 0)],
            2.5
        );
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -2.5e-17, std::f64::consts::PI] {
            assert_eq!(exact(v).parse::<f64>().unwrap(), v);
        }
    }
}
