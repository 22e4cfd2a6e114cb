//! Text snapshot container: a `key value` header followed by one `re im`
//! line per entry of the `M × L` snapshot matrix in row-major order.
//!
//! ```text
//! doa-snapshots 1
//! sensors 1 2 5 7
//! dims 4 200
//! seed 3
//! sigma 0.1
//! snr_db 10
//! theta -1 3
//! power 1 1
//! data
//! 0.12 -0.4
//! ...
//! ```

use std::fmt::Write as _;

use doa_core::{ArrayGeometry, CMat, Snapshots};
use num_complex::Complex64;

use crate::CliError;

const MAGIC: &str = "doa-snapshots 1";

/// Snapshots with the ground truth they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotFile {
    pub geometry: ArrayGeometry,
    pub seed: u64,
    pub snr_db: f64,
    pub thetas_deg: Vec<f64>,
    pub powers: Vec<f64>,
    pub snapshots: Snapshots,
}

fn join(v: impl IntoIterator<Item = impl ToString>) -> String {
    v.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl SnapshotFile {
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_text(&self) -> String {
        let x = &self.snapshots.x;
        let mut out = String::with_capacity(48 * x.len() + 256);
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "sensors {}", join(self.geometry.sensors().iter()));
        let _ = writeln!(out, "dims {} {}", x.nrows(), x.ncols());
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "sigma {}", self.snapshots.sigma_true);
        let _ = writeln!(out, "snr_db {}", self.snr_db);
        let _ = writeln!(out, "theta {}", join(&self.thetas_deg));
        let _ = writeln!(out, "power {}", join(&self.powers));
        out.push_str("data\n");
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let z = x[(r, c)];
                let _ = writeln!(out, "{} {}", z.re, z.im);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let err = |msg: String| CliError::Runtime(format!("snapshot file: {msg}"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(err(format!("missing `{MAGIC}` header")));
        }
        let (mut sensors, mut dims, mut seed, mut sigma, mut snr, mut theta, mut power) =
            (None, None, None, None, None, None, None);
        for line in lines.by_ref() {
            let line = line.trim();
            if line == "data" {
                break;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let nums = |what: &str| -> Result<Vec<f64>, CliError> {
                rest.split_whitespace()
                    .map(|t| {
                        t.parse::<f64>()
                            .map_err(|_| err(format!("bad {what} `{t}`")))
                    })
                    .collect()
            };
            match key {
                "sensors" => {
                    sensors = Some(
                        nums("sensor")?
                            .iter()
                            .map(|&v| v as usize)
                            .collect::<Vec<_>>(),
                    )
                }
                "dims" => {
                    dims = Some(
                        nums("dimension")?
                            .iter()
                            .map(|&v| v as usize)
                            .collect::<Vec<_>>(),
                    )
                }
                "seed" => {
                    seed = Some(
                        rest.trim()
                            .parse::<u64>()
                            .map_err(|_| err("bad seed".into()))?,
                    )
                }
                "sigma" => sigma = nums("sigma")?.first().copied(),
                "snr_db" => snr = nums("snr")?.first().copied(),
                "theta" => theta = Some(nums("theta")?),
                "power" => power = Some(nums("power")?),
                other => return Err(err(format!("unknown header key `{other}`"))),
            }
        }
        let missing = |k: &str| err(format!("header lacks `{k}`"));
        let geometry = ArrayGeometry::sparse(sensors.ok_or_else(|| missing("sensors"))?)
            .map_err(|e| err(e.to_string()))?;
        let dims = dims.ok_or_else(|| missing("dims"))?;
        let [m, l] = dims[..] else {
            return Err(err("`dims` needs two numbers".into()));
        };
        if m != geometry.num_sensors() {
            return Err(err(format!(
                "{m} rows for {} sensors",
                geometry.num_sensors()
            )));
        }
        let mut values = Vec::with_capacity(m * l);
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(re)), Some(Ok(im)), None) => values.push(Complex64::new(re, im)),
                _ => return Err(err(format!("bad data line `{line}`"))),
            }
        }
        if values.len() != m * l {
            return Err(err(format!(
                "expected {} entries, found {}",
                m * l,
                values.len()
            )));
        }
        let thetas_deg = theta.unwrap_or_default();
        let powers = power.unwrap_or_default();
        if powers.len() != thetas_deg.len() {
            return Err(err("`theta` and `power` lengths differ".into()));
        }
        Ok(SnapshotFile {
            geometry,
            seed: seed.ok_or_else(|| missing("seed"))?,
            snr_db: snr.ok_or_else(|| missing("snr_db"))?,
            thetas_deg,
            powers,
            snapshots: Snapshots {
                x: CMat::from_row_iterator(m, l, values),
                sigma_true: sigma.ok_or_else(|| missing("sigma"))?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use doa_core::{synthesize_snapshots, Scenario};

    #[test]
    fn round_trip_is_exact() {
        let geometry = ArrayGeometry::sparse(vec![1, 2, 5, 7]).unwrap();
        let sc = Scenario::equal_power(vec![-3.0, 12.5], 7.0, 9, 4);
        let file = SnapshotFile {
            snapshots: synthesize_snapshots(&geometry, &sc).unwrap(),
            geometry,
            seed: 4,
            snr_db: 7.0,
            thetas_deg: sc.thetas_deg.clone(),
            powers: sc.powers.clone(),
        };
        assert_eq!(SnapshotFile::parse(&file.to_text()).unwrap(), file);
    }

    #[test]
    fn truncated_data_is_an_error() {
        let text = "doa-snapshots 1\nsensors 1 2\ndims 2 1\nseed 0\nsigma 1\nsnr_db 0\ntheta 1\npower 1\ndata\n1 2\n";
        assert!(SnapshotFile::parse(text)
            .unwrap_err()
            .to_string()
            .contains("expected 2 entries"));
    }
}
