//! Online latency against the decomposition rank.

use std::time::Instant;

use anyhow::{ensure, Result};
use fsr_core::ranking::{filter_with, FilterOptions};
use fsr_core::{
    observation_vector, sparsify, DescriptorSet, ObservationVector, SpectralDecomposition,
    TransferFunction,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub rank: usize,
    pub nnz: usize,
    /// Per-query latency statistics over all repeats, in milliseconds.
    pub mean_ms: f64,
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub queries: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of log median latency against log r.
    pub slope: f64,
    /// Coefficient of variation of one query repeated at the largest rank.
    pub single_query_cv: f64,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,rank,nnz,mean_ms,median_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                r.variant, r.rank, r.nnz, r.mean_ms, r.median_ms
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchParams {
    pub alpha: f64,
    pub gamma: f64,
    pub obs_k: usize,
    pub repeats: usize,
    /// Fraction of the entries of `U` kept for the SPARSE row; none when 0.
    pub tau_fraction: f64,
}

/// Times the filter `U h(Λ) Uᵀ y` for each rank, using leading slices of
/// `dec`. Observation vectors are built once outside the timed region.
pub fn bench_online(
    dec: &SpectralDecomposition,
    data: &DescriptorSet,
    queries: &[Vec<f64>],
    ranks: &[usize],
    params: &BenchParams,
) -> Result<BenchReport> {
    ensure!(ranks.len() >= 2, "need at least two ranks");
    ensure!(!queries.is_empty(), "need at least one query");
    ensure!(params.repeats >= 1, "need at least one repeat");
    let max_rank = *ranks.iter().max().expect("nonempty");
    ensure!(
        max_rank <= dec.rank(),
        "rank {max_rank} exceeds the decomposition rank {}",
        dec.rank()
    );
    let h = TransferFunction::h_alpha(params.alpha)?;
    let ys: Vec<ObservationVector> = queries
        .iter()
        .map(|q| observation_vector(std::slice::from_ref(q), data, params.obs_k, params.gamma))
        .collect::<fsr_core::Result<_>>()?;

    let mut rows = Vec::new();
    let mut top = None;
    for &r in ranks {
        let d = dec.truncate(r)?;
        rows.push(time_rows("APPROX", &d, &h, &ys, params.repeats)?);
        if r == max_rank {
            top = Some(d);
        }
    }
    let top = top.expect("max rank is in ranks");
    if params.tau_fraction > 0.0 {
        let tau = ((params.tau_fraction * (top.n() * top.rank()) as f64).round() as usize).max(1);
        let sparse = sparsify(&top, tau)?;
        rows.push(time_rows("SPARSE", &sparse, &h, &ys, params.repeats)?);
    }

    let (xs, ys_log): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.variant == "APPROX")
        .map(|r| {
            (
                (r.rank as f64).ln(),
                r.median_ms.max(f64::MIN_POSITIVE).ln(),
            )
        })
        .unzip();
    let slope = fit_slope(&xs, &ys_log);

    let single: Vec<f64> = (0..params.repeats.max(5))
        .map(|_| time_one(&top, &h, &ys[0]))
        .collect::<Result<_>>()?;
    let m = single.iter().sum::<f64>() / single.len() as f64;
    let var = single.iter().map(|t| (t - m).powi(2)).sum::<f64>() / single.len() as f64;

    Ok(BenchReport {
        n: dec.n(),
        queries: queries.len(),
        repeats: params.repeats,
        rows,
        slope,
        single_query_cv: if m > 0.0 { var.sqrt() / m } else { 0.0 },
    })
}

fn time_one(
    dec: &SpectralDecomposition,
    h: &TransferFunction,
    y: &ObservationVector,
) -> Result<f64> {
    let t = Instant::now();
    let x = filter_with(dec, h, y, FilterOptions::default())?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    std::hint::black_box(x);
    Ok(ms)
}

fn time_rows(
    variant: &str,
    dec: &SpectralDecomposition,
    h: &TransferFunction,
    ys: &[ObservationVector],
    repeats: usize,
) -> Result<BenchRow> {
    // Untimed warm-up pass.
    for y in ys {
        time_one(dec, h, y)?;
    }
    let mut times = Vec::with_capacity(ys.len() * repeats);
    for _ in 0..repeats {
        for y in ys {
            times.push(time_one(dec, h, y)?);
        }
    }
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median_ms = if times.len() % 2 == 0 {
        0.5 * (times[mid - 1] + times[mid])
    } else {
        times[mid]
    };
    Ok(BenchRow {
        variant: variant.to_string(),
        rank: dec.rank(),
        nnz: dec.basis().nnz(),
        mean_ms,
        median_ms,
    })
}

pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let x: Vec<f64> = [64.0f64, 128.0, 256.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 1.5 * v).collect();
        assert!((fit_slope(&x, &y) - 1.5).abs() < 1e-12);
    }
}
