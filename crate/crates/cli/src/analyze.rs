//! The `analyze` subcommand: observable tables from trajectory files.

use std::process::ExitCode;

use anyhow::{bail, Context, Result};

use gluesim_core::observables::{
    aligned_internal_coordinates, batch_correlation_matrix, circular_acf,
    integrated_autocorrelation, pairwise_distance_matrix, radius_of_gyration, AngleSeries,
    FrameMetric, ObservableSeries,
};

use crate::report::{fmt_f64, write_matrix, TrajectoryData};
use crate::Ctx;

pub struct AnalyzeSpec {
    pub rg: bool,
    pub acf_col: Option<usize>,
    pub angle_acf_col: Option<usize>,
    pub max_lag: usize,
    pub corr_coord: Option<usize>,
    pub corr_frames: bool,
    pub dist_matrix: Option<String>,
}

pub fn cmd_analyze(ctx: &Ctx, traj: &std::path::Path, spec: AnalyzeSpec) -> Result<ExitCode> {
    let data = TrajectoryData::read(traj)?;
    std::fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("creating {}", ctx.out_dir.display()))?;
    let stem = traj.file_stem().and_then(|s| s.to_str()).unwrap_or("traj");
    let header = format!("# source {}\n", traj.display());
    let dt_phys = data.dt_phys();
    let mut stats = String::new();

    if spec.rg {
        if data.dim % 3 != 0 {
            bail!(
                "radius of gyration needs 3N coordinates, file has {}",
                data.dim
            );
        }
        let path = ctx.out_dir.join(format!("{stem}_rg.csv"));
        let mut s = header.clone();
        s.push_str("step,replica,time,rg\n");
        for r in &data.rows {
            let frame: Vec<[f64; 3]> = r
                .coords
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect();
            let rg = radius_of_gyration(&frame)?;
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.step,
                r.replica,
                fmt_f64(r.time),
                fmt_f64(rg)
            ));
        }
        std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }

    if let Some(col) = spec.acf_col {
        check_col(col, data.dim)?;
        let series_by_replica = data.coordinate_series(col);
        let (replica, vals) = series_by_replica
            .into_iter()
            .next()
            .ok_or_else(|| anyhow::anyhow!("empty trajectory"))?;
        let series = ObservableSeries::new(vals, dt_phys, format!("coord_{col}"))?;
        let max_lag = spec.max_lag.min(series.len().saturating_sub(1));
        let acf = gluesim_core::observables::acf(&series, max_lag)?;
        let path = ctx.out_dir.join(format!("{stem}_acf_coord{col}.csv"));
        write_acf_table(&path, &header, &acf, dt_phys)?;
        println!("wrote {}", path.display());
        match integrated_autocorrelation(&series) {
            Ok(est) => stats.push_str(&format!(
                "coord_{col} replica {replica}: tau_int {:.4} (frames), {:.4} (time), n_eff {:.1}\n",
                est.tau_int,
                est.tau_int * dt_phys,
                est.n_eff
            )),
            Err(e) => stats.push_str(&format!("coord_{col}: tau_int unavailable: {e}\n")),
        }
    }

    if let Some(col) = spec.angle_acf_col {
        check_col(col, data.dim)?;
        let series_by_replica = data.coordinate_series(col);
        let (_, vals) = series_by_replica
            .into_iter()
            .next()
            .ok_or_else(|| anyhow::anyhow!("empty trajectory"))?;
        let angles = AngleSeries::new(vals);
        let max_lag = spec.max_lag.min(angles.len().saturating_sub(1));
        let acf = circular_acf(&angles, max_lag)?;
        let path = ctx.out_dir.join(format!("{stem}_circacf_coord{col}.csv"));
        write_acf_table(&path, &header, &acf, dt_phys)?;
        println!("wrote {}", path.display());
    }

    if let Some(col) = spec.corr_coord {
        check_col(col, data.dim)?;
        let series_by_replica = data.coordinate_series(col);
        let rows: Vec<Vec<f64>> = series_by_replica.into_values().collect();
        let m = batch_correlation_matrix(&rows)?;
        let path = ctx.out_dir.join(format!("{stem}_corr_coord{col}.mat"));
        write_matrix(&path, &header, m.size, m.size, &m.values)?;
        println!("wrote {}", path.display());
        if !m.degenerate_rows.is_empty() {
            stats.push_str(&format!(
                "correlation: degenerate replicas {:?}\n",
                m.degenerate_rows
            ));
        }
    }

    if spec.corr_frames {
        if data.dim % 3 != 0 {
            bail!(
                "frame correlation needs 3N coordinates, file has {}",
                data.dim
            );
        }
        let frames = terminal_frames(&data);
        let rows = aligned_internal_coordinates(&frames)?;
        let m = batch_correlation_matrix(&rows)?;
        let path = ctx.out_dir.join(format!("{stem}_corr_frames.mat"));
        write_matrix(&path, &header, m.size, m.size, &m.values)?;
        println!("wrote {}", path.display());
    }

    if let Some(metric) = &spec.dist_matrix {
        if data.dim % 3 != 0 {
            bail!(
                "distance matrix needs 3N coordinates, file has {}",
                data.dim
            );
        }
        let metric = match metric.as_str() {
            "raw" => FrameMetric::Raw,
            "centered" => FrameMetric::Centered,
            "aligned" => FrameMetric::Aligned,
            other => bail!("usage error: unknown distance metric {other:?}"),
        };
        let frames = terminal_frames(&data);
        let m = pairwise_distance_matrix(&frames, metric)?;
        let b = frames.len();
        let path = ctx.out_dir.join(format!("{stem}_dist.mat"));
        write_matrix(&path, &header, b, b, &m)?;
        println!("wrote {}", path.display());
    }

    if !stats.is_empty() {
        let path = ctx.out_dir.join(format!("{stem}_stats.txt"));
        std::fs::write(&path, format!("{header}{stats}"))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Terminal frame per replica, in replica order.
fn terminal_frames(data: &TrajectoryData) -> Vec<Vec<[f64; 3]>> {
    let mut terminal: std::collections::BTreeMap<usize, &crate::report::TrajectoryRow> =
        Default::default();
    for r in &data.rows {
        let e = terminal.entry(r.replica).or_insert(r);
        if r.step >= e.step {
            *e = r;
        }
    }
    terminal
        .values()
        .map(|r| {
            r.coords
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect()
        })
        .collect()
}

fn check_col(col: usize, dim: usize) -> Result<()> {
    if col >= dim {
        bail!("usage error: coordinate column {col} out of range (dim {dim})");
    }
    Ok(())
}

/// Lag tables carry both the frame index and the physical time.
fn write_acf_table(path: &std::path::Path, header: &str, acf: &[f64], dt_phys: f64) -> Result<()> {
    let mut s = String::from(header);
    s.push_str("lag,time,acf\n");
    for (lag, v) in acf.iter().enumerate() {
        s.push_str(&format!(
            "{lag},{},{}\n",
            fmt_f64(lag as f64 * dt_phys),
            fmt_f64(*v)
        ));
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}
