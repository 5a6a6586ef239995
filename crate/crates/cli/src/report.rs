//! Manifests, file headers, and the columnar trajectory format.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::config::RunConfig;

/// FNV-1a over the reproducibility-relevant content (config snapshot,
/// seed, version). Timestamps are recorded in the manifest but excluded
/// from the hash so reruns produce identical data files.
pub fn manifest_hash(config_toml: &str, seed: u64, version: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in config_toml
        .bytes()
        .chain(seed.to_le_bytes())
        .chain(version.bytes())
    {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub struct Manifest {
    pub config_toml: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub parameters: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let config_toml = toml::to_string(cfg).context("serializing config snapshot")?;
        Ok(Manifest {
            config_toml,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: unix_now(),
            finished_unix: 0,
            parameters: Vec::new(),
        })
    }

    pub fn hash(&self) -> u64 {
        manifest_hash(&self.config_toml, self.seed, &self.version)
    }

    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.parameters.push((key.to_string(), value.to_string()));
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let mut s = String::new();
        writeln!(s, "# manifest {:016x}", self.hash())?;
        writeln!(s, "version = \"{}\"", self.version)?;
        writeln!(s, "seed = {}", self.seed)?;
        writeln!(s, "hash = \"{:016x}\"", self.hash())?;
        writeln!(s, "started_unix = {}", self.started_unix)?;
        writeln!(s, "finished_unix = {}", self.finished_unix)?;
        writeln!(s)?;
        writeln!(s, "[parameters]")?;
        for (k, v) in &self.parameters {
            writeln!(s, "{k} = \"{v}\"")?;
        }
        writeln!(s)?;
        writeln!(s, "[config]")?;
        for line in self.config_toml.lines() {
            writeln!(s, "# {line}")?;
        }
        std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
    }

    pub fn header_comment(&self) -> String {
        format!("# manifest {:016x}\n", self.hash())
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Serialize a float with 17 significant digits, enough for bit-faithful
/// round trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Columnar trajectory writer: header
/// `step,replica,time,coord_0,...[,vel_0,...]`.
pub struct TrajectoryWriter {
    out: std::io::BufWriter<std::fs::File>,
}

impl TrajectoryWriter {
    pub fn create(
        path: &Path,
        manifest_header: &str,
        dim: usize,
        velocities: bool,
    ) -> Result<Self> {
        let f =
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = std::io::BufWriter::new(f);
        out.write_all(manifest_header.as_bytes())?;
        let mut header = String::from("step,replica,time");
        for i in 0..dim {
            write!(header, ",coord_{i}")?;
        }
        if velocities {
            for i in 0..dim {
                write!(header, ",vel_{i}")?;
            }
        }
        header.push('\n');
        out.write_all(header.as_bytes())?;
        Ok(TrajectoryWriter { out })
    }

    pub fn row(
        &mut self,
        step: usize,
        replica: usize,
        time: f64,
        coords: &[f64],
        vels: Option<&[f64]>,
    ) -> Result<()> {
        let mut line = format!("{step},{replica},{}", fmt_f64(time));
        for &c in coords {
            line.push(',');
            line.push_str(&fmt_f64(c));
        }
        if let Some(v) = vels {
            for &c in v {
                line.push(',');
                line.push_str(&fmt_f64(c));
            }
        }
        line.push('\n');
        self.out.write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// A parsed trajectory file.
pub struct TrajectoryData {
    pub dim: usize,
    #[allow(dead_code)]
    pub has_velocities: bool,
    /// Rows in file order.
    pub rows: Vec<TrajectoryRow>,
}

pub struct TrajectoryRow {
    pub step: usize,
    pub replica: usize,
    pub time: f64,
    pub coords: Vec<f64>,
    #[allow(dead_code)]
    pub vels: Vec<f64>,
}

impl TrajectoryData {
    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut dim = 0usize;
        let mut has_velocities = false;
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let n = lineno + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = line.split(',').collect();
                dim = cols.iter().filter(|c| c.starts_with("coord_")).count();
                has_velocities = cols.iter().any(|c| c.starts_with("vel_"));
                if dim == 0 {
                    anyhow::bail!("line {n}: header has no coord_ columns");
                }
                header_seen = true;
                continue;
            }
            let mut it = line.split(',');
            let parse_err = |what: &str| format!("line {n}: bad {what}");
            let step: usize = it
                .next()
                .ok_or_else(|| anyhow::anyhow!(parse_err("step")))?
                .parse()
                .with_context(|| parse_err("step"))?;
            let replica: usize = it
                .next()
                .ok_or_else(|| anyhow::anyhow!(parse_err("replica")))?
                .parse()
                .with_context(|| parse_err("replica"))?;
            let time: f64 = it
                .next()
                .ok_or_else(|| anyhow::anyhow!(parse_err("time")))?
                .parse()
                .with_context(|| parse_err("time"))?;
            let rest: Vec<f64> = it
                .map(|v| v.parse::<f64>().with_context(|| parse_err("coordinate")))
                .collect::<Result<_>>()?;
            let expect = if has_velocities { 2 * dim } else { dim };
            if rest.len() != expect {
                anyhow::bail!(
                    "line {n}: expected {expect} coordinate columns, got {}",
                    rest.len()
                );
            }
            let (coords, vels) = rest.split_at(dim);
            rows.push(TrajectoryRow {
                step,
                replica,
                time,
                coords: coords.to_vec(),
                vels: vels.to_vec(),
            });
        }
        if !header_seen {
            anyhow::bail!("no header row found");
        }
        Ok(TrajectoryData {
            dim,
            has_velocities,
            rows,
        })
    }

    /// Per-replica series of one coordinate, ordered by step.
    pub fn coordinate_series(&self, coord: usize) -> std::collections::BTreeMap<usize, Vec<f64>> {
        let mut map: std::collections::BTreeMap<usize, Vec<(usize, f64)>> = Default::default();
        for r in &self.rows {
            map.entry(r.replica)
                .or_default()
                .push((r.step, r.coords[coord]));
        }
        map.into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|p| p.0);
                (k, v.into_iter().map(|p| p.1).collect())
            })
            .collect()
    }

    pub fn dt_phys(&self) -> f64 {
        let mut times: Vec<f64> = self.rows.iter().map(|r| r.time).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        if times.len() >= 2 {
            times[1] - times[0]
        } else {
            1.0
        }
    }
}

/// Matrix file: first line `rows cols`, then row-major values.
pub fn write_matrix(
    path: &Path,
    manifest_header: &str,
    rows: usize,
    cols: usize,
    values: &[f64],
) -> Result<()> {
    let mut s = String::from(manifest_header);
    writeln!(s, "{rows} {cols}")?;
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| fmt_f64(values[r * cols + c])).collect();
        writeln!(s, "{}", line.join(" "))?;
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}
