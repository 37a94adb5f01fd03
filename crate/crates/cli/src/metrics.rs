//! Retrieval metrics.

use std::collections::HashSet;
use std::hash::Hash;

use anyhow::{ensure, Result};

/// Mean over the positives of precision at each positive's rank. Positives
/// missing from `ranked` count as retrieved at no rank (precision 0).
pub fn average_precision<T: Eq + Hash>(ranked: &[T], positives: &HashSet<T>) -> Result<f64> {
    ensure!(
        !positives.is_empty(),
        "average precision needs at least one positive"
    );
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if positives.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / positives.len() as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
