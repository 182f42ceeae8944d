//! Rank-frequency tables and power-law exponent fits.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Error, PartialEq)]
pub enum ZipfError {
    #[error("no items to count")]
    Empty,
    #[error("need at least 3 distinct ranks to fit, got {0}")]
    TooFewRanks(usize),
}

/// What counts as one observation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    #[default]
    Tokens,
    /// Whole response strings.
    Responses,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub case_fold: bool,
    pub collapse_whitespace: bool,
    pub strip_punctuation: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            case_fold: true,
            collapse_whitespace: true,
            strip_punctuation: false,
        }
    }
}

impl Normalization {
    pub fn apply(&self, s: &str) -> String {
        let mut out: String = if self.strip_punctuation {
            s.chars().filter(|c| !c.is_ascii_punctuation()).collect()
        } else {
            s.to_string()
        };
        if self.case_fold {
            out = out.to_lowercase();
        }
        if self.collapse_whitespace {
            out = out.split_whitespace().collect::<Vec<_>>().join(" ");
        }
        out
    }
}

/// Splits texts into observation units.
pub fn units(texts: &[&str], unit: Unit) -> Vec<String> {
    match unit {
        Unit::Tokens => texts.iter().flat_map(|t| tokenize(t)).collect(),
        Unit::Responses => texts.iter().map(|t| t.to_string()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item: String,
    pub count: u64,
    /// Position of the item's first occurrence in the input.
    pub first_seen: u64,
}

/// Items by descending count, rank 1 first; ties by first occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankFrequency {
    pub items: Vec<RankedItem>,
    pub total: u64,
}

impl RankFrequency {
    fn from_counts(mut items: Vec<RankedItem>, total: u64) -> RankFrequency {
        items.sort_by(|a, b| b.count.cmp(&a.count).then(a.first_seen.cmp(&b.first_seen)));
        RankFrequency { items, total }
    }

    /// `(rank, count)` pairs, 1-based.
    pub fn pairs(&self) -> Vec<(usize, u64)> {
        self.items
            .iter()
            .enumerate()
            .map(|(i, it)| (i + 1, it.count))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Counts of both tables combined, as if their inputs were concatenated.
    pub fn merge(&self, other: &RankFrequency) -> RankFrequency {
        let by_item: HashMap<&str, usize> = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item.as_str(), i))
            .collect();
        let mut items = self.items.clone();
        for it in &other.items {
            match by_item.get(it.item.as_str()) {
                Some(&i) => items[i].count += it.count,
                None => items.push(RankedItem {
                    first_seen: self.total + it.first_seen,
                    ..it.clone()
                }),
            }
        }
        RankFrequency::from_counts(items, self.total + other.total)
    }

    /// Columns: rank, item, count.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "item", "count"])?;
        for (i, it) in self.items.iter().enumerate() {
            w.write_record([(i + 1).to_string(), it.item.clone(), it.count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn rank_frequency<S: AsRef<str>>(
    items: &[S],
    norm: &Normalization,
) -> Result<RankFrequency, ZipfError> {
    if items.is_empty() {
        return Err(ZipfError::Empty);
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<RankedItem> = Vec::new();
    for (pos, raw) in items.iter().enumerate() {
        let key = norm.apply(raw.as_ref());
        match index.get(&key) {
            Some(&i) => out[i].count += 1,
            None => {
                index.insert(key.clone(), out.len());
                out.push(RankedItem {
                    item: key,
                    count: 1,
                    first_seen: pos as u64,
                });
            }
        }
    }
    Ok(RankFrequency::from_counts(out, items.len() as u64))
}

/// Which ranks enter the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    pub min_rank: usize,
    pub max_rank: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            min_rank: 1,
            max_rank: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfFit {
    /// Negative slope of log(count) against log(rank).
    pub beta: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Ranks used in the fit.
    pub n: usize,
}

/// Least-squares line through `(ln rank, ln count)`.
pub fn fit_zipf(rf: &RankFrequency, opts: &FitOptions) -> Result<ZipfFit, ZipfError> {
    let pts: Vec<(usize, f64)> = rf
        .pairs()
        .into_iter()
        .filter(|&(r, c)| r >= opts.min_rank && opts.max_rank.is_none_or(|m| r <= m) && c >= 1)
        .map(|(r, c)| (r, c as f64))
        .collect();
    fit_power_law(&pts)
}

/// The same fit over arbitrary positive `(rank, weight)` pairs.
pub fn fit_power_law(pairs: &[(usize, f64)]) -> Result<ZipfFit, ZipfError> {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|&&(r, c)| r >= 1 && c > 0.0)
        .map(|&(r, c)| ((r as f64).ln(), c.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(ZipfError::TooFewRanks(n));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // A flat line is a perfect fit.
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(ZipfFit {
        beta: -slope,
        intercept,
        r_squared,
        n,
    })
}

/// Share of distinct items seen exactly once.
pub fn singleton_fraction(rf: &RankFrequency) -> Result<f64, ZipfError> {
    if rf.is_empty() {
        return Err(ZipfError::Empty);
    }
    let ones = rf.items.iter().filter(|it| it.count == 1).count();
    Ok(ones as f64 / rf.len() as f64)
}
