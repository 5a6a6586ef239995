//! Trajectory analytics: radius of gyration, circular autocorrelation,
//! integrated autocorrelation time, batch matrices, and Kabsch alignment.

use nalgebra::Matrix3;

use crate::{Error, Result};

/// A scalar time series with the physical time per frame, so lag axes can
/// be reported both in frame index and in physical time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub values: Vec<f64>,
    pub dt_phys: f64,
    pub label: String,
}

impl ObservableSeries {
    pub fn new(values: Vec<f64>, dt_phys: f64, label: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Degenerate("empty series".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate(
                "series contains non-finite entries".into(),
            ));
        }
        Ok(ObservableSeries {
            values,
            dt_phys,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }
}

/// An angular series stored wrapped to `[-π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSeries {
    thetas: Vec<f64>,
}

impl AngleSeries {
    pub fn new(raw: impl IntoIterator<Item = f64>) -> Self {
        AngleSeries {
            thetas: raw.into_iter().map(crate::potentials::wrap_angle).collect(),
        }
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// Radius of gyration of one frame: root mean square distance of the atoms
/// from their center of mass, unweighted masses.
pub fn radius_of_gyration(frame: &[[f64; 3]]) -> Result<f64> {
    if frame.is_empty() {
        return Err(Error::Degenerate(
            "frame must contain at least one atom".into(),
        ));
    }
    let n = frame.len() as f64;
    let mut cm = [0.0; 3];
    for a in frame {
        for k in 0..3 {
            cm[k] += a[k];
        }
    }
    for c in cm.iter_mut() {
        *c /= n;
    }
    let msd: f64 = frame
        .iter()
        .map(|a| (0..3).map(|k| (a[k] - cm[k]) * (a[k] - cm[k])).sum::<f64>())
        .sum::<f64>()
        / n;
    Ok(msd.sqrt())
}

/// Circular autocorrelation `C(τ) = ⟨cos(θ_t − θ_{t+τ})⟩_t` for
/// `τ = 0..=max_lag`. `C(0) = 1` by construction and every value lies in
/// `[-1, 1]`; the estimator is invariant under 2π wrapping and under a
/// global angle shift.
pub fn circular_acf(angles: &AngleSeries, max_lag: usize) -> Result<Vec<f64>> {
    let n = angles.len();
    if n == 0 {
        return Err(Error::Degenerate("empty angle series".into()));
    }
    if max_lag >= n {
        return Err(Error::Degenerate(format!(
            "max_lag {max_lag} must be below the length {n}"
        )));
    }
    let t = angles.thetas();
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for lag in 1..=max_lag {
        let m = n - lag;
        let c = (0..m).map(|i| (t[i] - t[i + lag]).cos()).sum::<f64>() / m as f64;
        out.push(c);
    }
    Ok(out)
}

/// Normalized autocovariance of a real series for `τ = 0..=max_lag`.
pub fn acf(series: &ObservableSeries, max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::Degenerate(format!(
            "max_lag {max_lag} must be below the length {n}"
        )));
    }
    let mean = series.mean();
    let d: Vec<f64> = series.values.iter().map(|v| v - mean).collect();
    let var = d.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var == 0.0 {
        return Err(Error::Degenerate(
            "constant series has no autocorrelation".into(),
        ));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let m = n - lag;
        let c = (0..m).map(|i| d[i] * d[i + lag]).sum::<f64>() / (m as f64 * var);
        out.push(c);
    }
    Ok(out)
}

/// Weighted sum `Σ_τ w(τ)·C(τ)·Δt` over an autocorrelation table — the
/// generic transport-style integral over a lag kernel.
pub fn weighted_acf_sum(acf: &[f64], dt_phys: f64, weight: impl Fn(f64) -> f64) -> f64 {
    acf.iter()
        .enumerate()
        .map(|(lag, c)| weight(lag as f64 * dt_phys) * c * dt_phys)
        .sum()
}

/// Result of the integrated-autocorrelation estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IatEstimate {
    pub tau_int: f64,
    pub n_eff: f64,
    /// Window at which the automatic truncation stopped.
    pub window: usize,
}

/// Integrated autocorrelation time `τ_int = 1 + 2 Σ_{τ≥1} C(τ)` with the
/// standard automatic window (smallest `W` with `W ≥ c·τ_int(W)`, `c = 5`),
/// and the effective sample size `N_eff = N/(2 τ_int)`.
///
/// A constant series is reported as `τ_int = +∞`, `N_eff = 0`.
pub fn integrated_autocorrelation(series: &ObservableSeries) -> Result<IatEstimate> {
    let n = series.len();
    if n < 10 {
        return Err(Error::Degenerate(format!(
            "need at least 10 samples, got {n}"
        )));
    }
    let mean = series.mean();
    let d: Vec<f64> = series.values.iter().map(|v| v - mean).collect();
    let var = d.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var == 0.0 {
        return Ok(IatEstimate {
            tau_int: f64::INFINITY,
            n_eff: 0.0,
            window: 0,
        });
    }
    const C_WINDOW: f64 = 5.0;
    let max_lag = n / 2;
    let mut tau = 1.0;
    let mut window = max_lag;
    for lag in 1..=max_lag {
        let m = n - lag;
        let c = (0..m).map(|i| d[i] * d[i + lag]).sum::<f64>() / (m as f64 * var);
        tau += 2.0 * c;
        if (lag as f64) >= C_WINDOW * tau.max(1e-12) {
            window = lag;
            break;
        }
    }
    let tau_int = tau.max(1e-12);
    Ok(IatEstimate {
        tau_int,
        n_eff: n as f64 / (2.0 * tau_int),
        window,
    })
}

/// Pearson correlation matrix across the rows of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub size: usize,
    /// Row-major entries; rows flagged degenerate hold NaN off-diagonal.
    pub values: Vec<f64>,
    pub degenerate_rows: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

/// Pearson batch-correlation matrix: symmetric, unit diagonal, entries in
/// `[-1, 1]`. Zero-variance rows are flagged and their off-diagonal
/// entries set to NaN.
pub fn batch_correlation_matrix(rows: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let b = rows.len();
    if b == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let len = rows[0].len();
    if len < 2 {
        return Err(Error::Degenerate("rows must have length at least 2".into()));
    }
    if rows.iter().any(|r| r.len() != len) {
        return Err(Error::Shape("rows differ in length".into()));
    }
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(b);
    let mut norms = Vec::with_capacity(b);
    let mut degenerate = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let mean = r.iter().sum::<f64>() / len as f64;
        let c: Vec<f64> = r.iter().map(|v| v - mean).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            degenerate.push(i);
        }
        centered.push(c);
        norms.push(norm);
    }
    let mut values = vec![0.0; b * b];
    for i in 0..b {
        values[i * b + i] = 1.0;
        for j in (i + 1)..b {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                f64::NAN
            } else {
                let dot: f64 = centered[i]
                    .iter()
                    .zip(&centered[j])
                    .map(|(a, c)| a * c)
                    .sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            values[i * b + j] = v;
            values[j * b + i] = v;
        }
    }
    Ok(CorrelationMatrix {
        size: b,
        values,
        degenerate_rows: degenerate,
    })
}

/// Distance metric for [`pairwise_distance_matrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMetric {
    /// Plain RMSD of the raw coordinates.
    Raw,
    /// RMSD after centering both frames.
    Centered,
    /// RMSD after centering and optimal rotation (Kabsch).
    Aligned,
}

/// Pairwise RMSD matrix across frames: symmetric with zero diagonal.
pub fn pairwise_distance_matrix(frames: &[Vec<[f64; 3]>], metric: FrameMetric) -> Result<Vec<f64>> {
    let b = frames.len();
    if b == 0 {
        return Err(Error::Degenerate("no frames".into()));
    }
    let n = frames[0].len();
    if frames.iter().any(|f| f.len() != n) {
        return Err(Error::Shape("frames differ in atom count".into()));
    }
    let mut out = vec![0.0; b * b];
    for i in 0..b {
        for j in (i + 1)..b {
            let d = match metric {
                FrameMetric::Raw => rmsd_raw(&frames[i], &frames[j]),
                FrameMetric::Centered => {
                    rmsd_raw(&center_frame(&frames[i]), &center_frame(&frames[j]))
                }
                FrameMetric::Aligned => kabsch_align(&frames[i], &frames[j])?.rmsd,
            };
            out[i * b + j] = d;
            out[j * b + i] = d;
        }
    }
    Ok(out)
}

fn rmsd_raw(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let n = a.len() as f64;
    let ss: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum::<f64>())
        .sum();
    (ss / n).sqrt()
}

/// Subtract the center of mass.
pub fn center_frame(frame: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let n = frame.len() as f64;
    let mut cm = [0.0; 3];
    for a in frame {
        for k in 0..3 {
            cm[k] += a[k] / n;
        }
    }
    frame
        .iter()
        .map(|a| [a[0] - cm[0], a[1] - cm[1], a[2] - cm[2]])
        .collect()
}

/// Result of a Kabsch superposition.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Proper rotation (determinant +1), applied as `row · R`.
    pub rotation: Matrix3<f64>,
    /// Moving frame centered, rotated onto the reference, in the
    /// reference's centered coordinates.
    pub aligned: Vec<[f64; 3]>,
    pub rmsd: f64,
    /// Set when the point sets were rank-deficient and the rotation is a
    /// best-effort choice among the optimizers.
    pub degenerate: bool,
}

/// Optimal proper rotation of `moving` onto `reference` (both centered
/// internally), determinant-corrected so reflections are never returned.
pub fn kabsch_align(reference: &[[f64; 3]], moving: &[[f64; 3]]) -> Result<Alignment> {
    if reference.len() != moving.len() {
        return Err(Error::Shape("frames differ in atom count".into()));
    }
    if reference.is_empty() {
        return Err(Error::Degenerate("empty frames".into()));
    }
    let r = center_frame(reference);
    let m = center_frame(moving);

    // Cross-covariance H = Σ m_iᵀ r_i (3x3).
    let mut h = Matrix3::<f64>::zeros();
    for (p, q) in m.iter().zip(&r) {
        for a in 0..3 {
            for b in 0..3 {
                h[(a, b)] += p[a] * q[b];
            }
        }
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let det = (u * v_t).determinant();
    let sign = if det < 0.0 { -1.0 } else { 1.0 };
    let mut d = Matrix3::<f64>::identity();
    d[(2, 2)] = sign;
    let rotation = u * d * v_t;

    // Rank-deficiency: at least two vanishing singular values leaves the
    // in-plane rotation underdetermined.
    let sv = svd.singular_values;
    let scale = sv[0].max(1e-300);
    let degenerate = sv[1] / scale < 1e-12;

    let aligned: Vec<[f64; 3]> = m
        .iter()
        .map(|p| {
            let mut out = [0.0; 3];
            for b in 0..3 {
                out[b] = (0..3).map(|a| p[a] * rotation[(a, b)]).sum();
            }
            out
        })
        .collect();
    let rmsd = rmsd_raw(&aligned, &r);
    Ok(Alignment {
        rotation,
        aligned,
        rmsd,
        degenerate,
    })
}

/// Default internal-coordinate extraction for batch correlation: every
/// frame centered and Kabsch-aligned to the first, then flattened.
pub fn aligned_internal_coordinates(frames: &[Vec<[f64; 3]>]) -> Result<Vec<Vec<f64>>> {
    if frames.is_empty() {
        return Err(Error::Degenerate("no frames".into()));
    }
    let reference = center_frame(&frames[0]);
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let aligned = if i == 0 {
                reference.clone()
            } else {
                kabsch_align(&frames[0], f)?.aligned
            };
            Ok(aligned.into_iter().flat_map(|p| p.into_iter()).collect())
        })
        .collect()
}

/// Dihedral angle defined by four points, in `[-π, π)`.
pub fn dihedral(frame: &[[f64; 3]], quad: [usize; 4]) -> Result<f64> {
    for &i in &quad {
        if i >= frame.len() {
            return Err(Error::Shape(format!("dihedral index {i} out of range")));
        }
    }
    let p = |i: usize| frame[quad[i]];
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let b1 = sub(p(1), p(0));
    let b2 = sub(p(2), p(1));
    let b3 = sub(p(3), p(2));
    let n1 = cross(b1, b2);
    let n2 = cross(b2, b3);
    let b2n = dot(b2, b2).sqrt();
    let y = dot(cross(n1, n2), b2) / b2n;
    let x = dot(n1, n2);
    Ok(crate::potentials::wrap_angle(y.atan2(x)))
}
