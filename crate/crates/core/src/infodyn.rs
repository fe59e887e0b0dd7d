//! Plug-in information estimators over discretized series, in bits.
//!
//! Transfer entropy from `src` to `dst` with histories `k` (target) and `l`
//! (source) is
//!
//! ```text
//! TE = H(dst[t+1] | dst[t-k+1..=t]) - H(dst[t+1] | dst[t-k+1..=t], src[t-l+1..=t])
//! ```
//!
//! with every probability taken from empirical counts over the aligned
//! windows `t = max(k, l) - 1 ..= T - 2`. Direct transfer entropy adds a
//! mediator's `l`-history to both conditioning sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer symbols in `[0, alphabet)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteSeries {
    symbols: Vec<u64>,
    alphabet: u64,
}

impl DiscreteSeries {
    pub fn new(symbols: Vec<u64>, alphabet: u64) -> Result<Self> {
        if alphabet == 0 {
            return Err(Error::param("alphabet", "must be at least 1"));
        }
        if let Some(bad) = symbols.iter().find(|&&s| s >= alphabet) {
            return Err(Error::param(
                "symbols",
                format!("symbol {bad} outside alphabet of size {alphabet}"),
            ));
        }
        Ok(DiscreteSeries { symbols, alphabet })
    }

    pub fn symbols(&self) -> &[u64] {
        &self.symbols
    }

    pub fn alphabet(&self) -> u64 {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// How the thresholded adjacency is derived from the normalized TE matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRule {
    /// Keep `i→j` when `m[i][j] > c` and `m[i][j] > m[j][i]`.
    #[default]
    Dominance,
    /// Keep `i→j` when `m[i][j] - m[j][i] > c`.
    NetTe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeConfig {
    pub bins: u64,
    pub history_k: usize,
    pub history_l: usize,
    pub dte_bins: u64,
    /// DTE at or below this many bits marks an edge as indirect.
    pub dte_epsilon: f64,
    pub threshold: f64,
    pub edge_rule: EdgeRule,
}

impl Default for TeConfig {
    fn default() -> Self {
        TeConfig {
            bins: 8,
            history_k: 1,
            history_l: 1,
            dte_bins: 4,
            dte_epsilon: 0.02,
            threshold: 0.2,
            edge_rule: EdgeRule::Dominance,
        }
    }
}

impl TeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::param("bins", "must be at least 2"));
        }
        if self.history_k < 1 {
            return Err(Error::param("history_k", "must be at least 1"));
        }
        if self.history_l < 1 {
            return Err(Error::param("history_l", "must be at least 1"));
        }
        if self.dte_bins < 2 {
            return Err(Error::param("dte_bins", "must be at least 2"));
        }
        if !(self.dte_epsilon.is_finite() && self.dte_epsilon >= 0.0) {
            return Err(Error::param("dte_epsilon", "must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::param("threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Equal-width binning over `[min, max]`; a constant series maps to symbol 0.
pub fn discretize(series: &[f64], bins: u64) -> DiscreteSeries {
    assert!(bins >= 1, "bins must be positive");
    let (min, max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    let symbols = if !(span > 0.0) || !span.is_finite() {
        vec![0; series.len()]
    } else {
        series
            .iter()
            .map(|&v| {
                let s = (bins as f64 * (v - min) / span).floor();
                (s.max(0.0) as u64).min(bins - 1)
            })
            .collect()
    };
    DiscreteSeries {
        symbols,
        alphabet: bins,
    }
}

fn entropy_from_counts(counts: impl Iterator<Item = u64>, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Run lengths of a sorted slice.
fn run_counts<T: PartialEq>(sorted: &[T]) -> impl Iterator<Item = u64> + '_ {
    let mut i = 0;
    std::iter::from_fn(move || {
        if i >= sorted.len() {
            return None;
        }
        let start = i;
        while i < sorted.len() && sorted[i] == sorted[start] {
            i += 1;
        }
        Some((i - start) as u64)
    })
}

fn entropy_of_codes(codes: &[u64]) -> f64 {
    let mut sorted = codes.to_vec();
    sorted.sort_unstable();
    entropy_from_counts(run_counts(&sorted), sorted.len() as u64)
}

fn joint_entropy_of_codes(x: &[u64], y: &[u64]) -> f64 {
    let mut pairs: Vec<(u64, u64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_unstable();
    entropy_from_counts(run_counts(&pairs), pairs.len() as u64)
}

fn conditional_entropy_of_codes(x: &[u64], y: &[u64]) -> f64 {
    (joint_entropy_of_codes(x, y) - entropy_of_codes(y)).max(0.0)
}

pub fn entropy(s: &DiscreteSeries) -> f64 {
    entropy_of_codes(&s.symbols)
}

pub fn joint_entropy(x: &DiscreteSeries, y: &DiscreteSeries) -> Result<f64> {
    check_equal_lengths(&[x, y])?;
    Ok(joint_entropy_of_codes(&x.symbols, &y.symbols))
}

/// `H(X | Y)` from empirical joint counts.
pub fn conditional_entropy(x: &DiscreteSeries, y: &DiscreteSeries) -> Result<f64> {
    check_equal_lengths(&[x, y])?;
    Ok(conditional_entropy_of_codes(&x.symbols, &y.symbols))
}

fn check_equal_lengths(series: &[&DiscreteSeries]) -> Result<()> {
    let n = series[0].len();
    if series.iter().any(|s| s.len() != n) {
        let lens: Vec<usize> = series.iter().map(|s| s.len()).collect();
        return Err(Error::Dimension(format!("series lengths differ: {lens:?}")));
    }
    Ok(())
}

/// One past-state component: a series and how many lags of it to pack.
struct History<'a> {
    series: &'a DiscreteSeries,
    depth: usize,
}

/// Packs the listed histories at every aligned window into one code each.
/// Window `w` ends at time `t = start + w`.
fn pack_histories(parts: &[History<'_>], start: usize, windows: usize) -> Result<DiscreteSeries> {
    let mut alphabet: u64 = 1;
    for p in parts {
        for _ in 0..p.depth {
            alphabet = alphabet
                .checked_mul(p.series.alphabet)
                .ok_or_else(|| Error::param("history", "joint state space exceeds 64 bits"))?;
        }
    }
    let symbols = (0..windows)
        .map(|w| {
            let t = start + w;
            let mut code = 0u64;
            for p in parts {
                for lag in 0..p.depth {
                    code = code * p.series.alphabet + p.series.symbols[t - lag];
                }
            }
            code
        })
        .collect();
    Ok(DiscreteSeries { symbols, alphabet })
}

/// Aligned future/past codes for transfer entropy.
#[derive(Debug, Clone)]
pub struct TeEmbedding {
    /// `dst[t+1]`.
    pub future: DiscreteSeries,
    /// `dst` k-history at `t`.
    pub target_past: DiscreteSeries,
    /// `dst` k-history and `src` l-history at `t`, packed together.
    pub joint_past: DiscreteSeries,
    /// `src` l-history at `t`.
    pub source_past: DiscreteSeries,
}

impl TeEmbedding {
    pub fn new(src: &DiscreteSeries, dst: &DiscreteSeries, k: usize, l: usize) -> Result<Self> {
        check_equal_lengths(&[src, dst])?;
        if k == 0 || l == 0 {
            return Err(Error::param("history", "history lengths must be at least 1"));
        }
        let m = k.max(l);
        if dst.len() < m + 1 {
            return Err(Error::Dimension(format!(
                "series of length {} too short for history {m}",
                dst.len()
            )));
        }
        let start = m - 1;
        let windows = dst.len() - m;
        let future = DiscreteSeries {
            symbols: dst.symbols[start + 1..].to_vec(),
            alphabet: dst.alphabet,
        };
        let target = History { series: dst, depth: k };
        let source = History { series: src, depth: l };
        Ok(TeEmbedding {
            future,
            target_past: pack_histories(&[target], start, windows)?,
            joint_past: pack_histories(
                &[History { series: dst, depth: k }, History { series: src, depth: l }],
                start,
                windows,
            )?,
            source_past: pack_histories(&[source], start, windows)?,
        })
    }

    /// Counts of each observed `(future, target_past, source_past)` cell, sorted.
    pub fn joint_counts(&self) -> Vec<([u64; 3], u64)> {
        let mut cells: Vec<[u64; 3]> = (0..self.future.len())
            .map(|w| {
                [
                    self.future.symbols[w],
                    self.target_past.symbols[w],
                    self.source_past.symbols[w],
                ]
            })
            .collect();
        cells.sort_unstable();
        let mut out: Vec<([u64; 3], u64)> = Vec::new();
        for cell in cells {
            match out.last_mut() {
                Some((last, count)) if *last == cell => *count += 1,
                _ => out.push((cell, 1)),
            }
        }
        out
    }
}

/// Transfer entropy from `src` to `dst`, clamped at zero.
pub fn transfer_entropy(src: &DiscreteSeries, dst: &DiscreteSeries, k: usize, l: usize) -> Result<f64> {
    let e = TeEmbedding::new(src, dst, k, l)?;
    let without = conditional_entropy_of_codes(&e.future.symbols, &e.target_past.symbols);
    let with = conditional_entropy_of_codes(&e.future.symbols, &e.joint_past.symbols);
    Ok((without - with).max(0.0))
}

/// `TE(x→y) - TE(y→x)`; positive means `x` drives `y`.
pub fn net_transfer_entropy(x: &DiscreteSeries, y: &DiscreteSeries, cfg: &TeConfig) -> Result<f64> {
    let forward = transfer_entropy(x, y, cfg.history_k, cfg.history_l)?;
    let backward = transfer_entropy(y, x, cfg.history_k, cfg.history_l)?;
    Ok(forward - backward)
}

/// Transfer entropy from `src` to `dst` conditioned on the mediator's
/// `history_l`-history. Callers discretize with `cfg.dte_bins`.
pub fn direct_transfer_entropy(
    src: &DiscreteSeries,
    dst: &DiscreteSeries,
    mediator: &DiscreteSeries,
    cfg: &TeConfig,
) -> Result<f64> {
    check_equal_lengths(&[src, dst, mediator])?;
    let (k, l) = (cfg.history_k, cfg.history_l);
    let m = k.max(l);
    if dst.len() < m + 1 {
        return Err(Error::Dimension(format!(
            "series of length {} too short for history {m}",
            dst.len()
        )));
    }
    let start = m - 1;
    let windows = dst.len() - m;
    let future = &dst.symbols[start + 1..];
    let given_mediator = pack_histories(
        &[History { series: dst, depth: k }, History { series: mediator, depth: l }],
        start,
        windows,
    )?;
    let given_both = pack_histories(
        &[
            History { series: dst, depth: k },
            History { series: mediator, depth: l },
            History { series: src, depth: l },
        ],
        start,
        windows,
    )?;
    let without = conditional_entropy_of_codes(future, &given_mediator.symbols);
    let with = conditional_entropy_of_codes(future, &given_both.symbols);
    Ok((without - with).max(0.0))
}
