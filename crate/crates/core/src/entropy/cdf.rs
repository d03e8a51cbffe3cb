//! Quantised cumulative frequency tables.

use crate::error::{Error, Result};

/// Frequency precision in bits.
pub const PRECISION: u32 = 16;
/// Sum of every table's frequencies.
pub const TOTAL: u32 = 1 << PRECISION;
/// Smallest codable symbol.
pub const SYMBOL_MIN: i32 = -128;
/// Largest codable symbol.
pub const SYMBOL_MAX: i32 = 127;
/// Number of codable symbols.
pub const SUPPORT: usize = (SYMBOL_MAX - SYMBOL_MIN + 1) as usize;

/// Cumulative frequencies `cdf[0] = 0 < cdf[1] < ... < cdf[S] = 2^16` over
/// symbols `min_symbol .. min_symbol + S`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    min_symbol: i32,
    cdf: Vec<u32>,
}

impl CdfTable {
    pub fn from_cdf(min_symbol: i32, cdf: Vec<u32>) -> Result<Self> {
        if cdf.len() < 2 || cdf[0] != 0 || *cdf.last().expect("non-empty") != TOTAL {
            return Err(Error::Format("cdf must run from 0 to 2^16".into()));
        }
        if cdf.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("cdf must be strictly increasing".into()));
        }
        Ok(CdfTable { min_symbol, cdf })
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    pub fn min_symbol(&self) -> i32 {
        self.min_symbol
    }

    pub fn num_symbols(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn index_of(&self, s: i32) -> Option<usize> {
        let i = s.checked_sub(self.min_symbol)?;
        (i >= 0 && (i as usize) < self.num_symbols()).then_some(i as usize)
    }

    pub fn symbol_at(&self, idx: usize) -> i32 {
        self.min_symbol + idx as i32
    }

    pub fn freq(&self, idx: usize) -> u32 {
        self.cdf[idx + 1] - self.cdf[idx]
    }

    /// Index whose interval `[cdf[i], cdf[i+1])` contains `slot`.
    pub fn slot_to_index(&self, slot: u32) -> usize {
        self.cdf.partition_point(|&c| c <= slot) - 1
    }

    /// Ideal code length of `s` under this table, in bits.
    pub fn bits(&self, s: i32) -> Option<f64> {
        let i = self.index_of(s)?;
        Some(-(self.freq(i) as f64 / TOTAL as f64).log2())
    }
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mass of the unit bin centred on `s` under `N(mu, sigma^2)`.
pub fn gaussian_bin(s: f64, mu: f64, sigma: f64) -> f64 {
    // Evaluate on the tail side nearest zero so the subtraction keeps digits.
    let d = (s - mu).abs();
    phi((0.5 - d) / sigma) - phi((-0.5 - d) / sigma)
}

/// Quantises probabilities to integer frequencies summing to `2^16`, each at
/// least 1. The `2^16 - n` free units are shared by largest remainder (ties
/// go to the lower index).
pub fn quantize_pmf(probs: &[f64]) -> Vec<u32> {
    let n = probs.len();
    assert!(n >= 1 && n <= TOTAL as usize, "table size {n} out of range");
    let spare = TOTAL as usize - n;
    let clean: Vec<f64> = probs.iter().map(|&p| if p.is_finite() && p > 0.0 { p } else { 0.0 }).collect();
    let sum: f64 = clean.iter().sum();
    let scaled: Vec<f64> = if sum > 0.0 {
        clean.iter().map(|p| p / sum * spare as f64).collect()
    } else {
        vec![spare as f64 / n as f64; n]
    };
    let mut freq: Vec<usize> = scaled.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = freq.iter().sum();
    let mut left = spare - assigned.min(spare);
    if left > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.partial_cmp(&ra).expect("finite remainders").then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            freq[i] += 1;
            left -= 1;
        }
    }
    let mut cdf = Vec::with_capacity(n + 1);
    let mut acc = 0u32;
    cdf.push(0);
    for f in freq {
        acc += 1 + f as u32;
        cdf.push(acc);
    }
    debug_assert_eq!(acc, TOTAL);
    cdf
}

/// Table for a discretised Gaussian over `[-128, 127]`.
pub fn build_cdf(mu: f64, sigma: f64) -> CdfTable {
    let mut edges = [0.0f64; SUPPORT + 1];
    for (k, e) in edges.iter_mut().enumerate() {
        let x = SYMBOL_MIN as f64 - 0.5 + k as f64;
        *e = (x - mu) / sigma;
    }
    let probs: Vec<f64> = (0..SUPPORT)
        .map(|k| {
            // bins above the mean are taken from the upper tail to keep digits
            let (a, b) = (edges[k], edges[k + 1]);
            if a >= 0.0 {
                phi(-a) - phi(-b)
            } else {
                phi(b) - phi(a)
            }
        })
        .collect();
    CdfTable {
        min_symbol: SYMBOL_MIN,
        cdf: quantize_pmf(&probs),
    }
}

/// Table for an explicit probability vector over `[-128, 127]`.
pub fn table_from_pmf(probs: &[f64]) -> CdfTable {
    assert_eq!(probs.len(), SUPPORT);
    CdfTable {
        min_symbol: SYMBOL_MIN,
        cdf: quantize_pmf(probs),
    }
}
