//! Bin grids for continuous latents and their conversion into frequency tables.
//!
//! A grid with `K` bins stores its `K - 1` interior edges; the first and last bins
//! extend to minus and plus infinity so that discretizing a density never loses
//! tail mass. Each bin also carries a finite representative value, used when a
//! decoded bin has to condition a downstream distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rans::{quantize_pmf, FrequencyTable};

/// Location/scale of a logistic distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    mu: f64,
    scale: f64,
}

impl LogisticParams {
    pub fn new(mu: f64, scale: f64) -> Result<Self> {
        if !mu.is_finite() || !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidLogistic { mu, scale });
        }
        Ok(Self { mu, scale })
    }

    pub fn standard() -> Self {
        Self { mu: 0.0, scale: 1.0 }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Inverse CDF at probability `q` in `(0, 1)`.
    pub fn quantile(&self, q: f64) -> f64 {
        self.mu + self.scale * (q / (1.0 - q)).ln()
    }

    /// CDF and survival function at `x`, each computed without cancellation.
    fn cdf_sf(&self, x: f64) -> (f64, f64) {
        let e = (-(x - self.mu) / self.scale).exp();
        if e.is_infinite() {
            (0.0, 1.0)
        } else {
            (1.0 / (1.0 + e), e / (1.0 + e))
        }
    }
}

pub fn logistic_cdf(x: f64, params: &LogisticParams) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    params.cdf_sf(x).0
}

/// A discretization lattice with `K` bins, `K` a power of two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct BinGrid {
    edges: Vec<f64>,
    representatives: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    interior_edges: Vec<f64>,
    representatives: Vec<f64>,
}

impl TryFrom<RawGrid> for BinGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        BinGrid::from_parts(raw.interior_edges, raw.representatives)
    }
}

impl From<BinGrid> for RawGrid {
    fn from(grid: BinGrid) -> Self {
        RawGrid {
            interior_edges: grid.edges,
            representatives: grid.representatives,
        }
    }
}

fn check_bin_count(n_bins: usize) -> Result<()> {
    if n_bins < 2 || !n_bins.is_power_of_two() {
        return Err(Error::InvalidGrid(format!(
            "bin count must be a power of two >= 2, got {n_bins}"
        )));
    }
    Ok(())
}

impl BinGrid {
    /// Validates and assembles a grid from its interior edges and representatives.
    pub fn from_parts(edges: Vec<f64>, representatives: Vec<f64>) -> Result<Self> {
        let n_bins = edges.len() + 1;
        check_bin_count(n_bins)?;
        if representatives.len() != n_bins {
            return Err(Error::InvalidGrid(format!(
                "{} representatives for {n_bins} bins",
                representatives.len()
            )));
        }
        if edges.iter().chain(&representatives).any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite edge or representative".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid("edges must be strictly increasing".into()));
        }
        let grid = Self {
            edges,
            representatives,
        };
        for (k, &r) in grid.representatives.iter().enumerate() {
            if grid.bin_index(r) != k {
                return Err(Error::InvalidGrid(format!(
                    "representative {r} lies outside bin {k}"
                )));
            }
        }
        Ok(grid)
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn interior_edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn representatives(&self) -> &[f64] {
        &self.representatives
    }

    /// Bin containing `value`; values beyond the outer edges clamp to the outer bins.
    pub fn bin_index(&self, value: f64) -> usize {
        self.edges.partition_point(|&e| e <= value)
    }

    pub fn bin_representative(&self, idx: usize) -> Result<f64> {
        self.representatives
            .get(idx)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                index: idx,
                len: self.n_bins(),
            })
    }

    /// Probability of each bin under `params`, with the outer bins taking the tails.
    pub fn bin_masses(&self, params: &LogisticParams) -> Vec<f64> {
        let k = self.n_bins();
        let at_edges: Vec<(f64, f64)> = self.edges.iter().map(|&e| params.cdf_sf(e)).collect();
        let mut masses = Vec::with_capacity(k);
        for bin in 0..k {
            let (lo_cdf, lo_sf) = if bin == 0 { (0.0, 1.0) } else { at_edges[bin - 1] };
            let (hi_cdf, hi_sf) = if bin == k - 1 { (1.0, 0.0) } else { at_edges[bin] };
            let upper_below_mu = bin < k - 1 && self.edges[bin] <= params.mu;
            let lower_above_mu = bin > 0 && self.edges[bin - 1] >= params.mu;
            let mass = if upper_below_mu {
                hi_cdf - lo_cdf
            } else if lower_above_mu {
                lo_sf - hi_sf
            } else {
                1.0 - lo_cdf - hi_sf
            };
            masses.push(mass.max(0.0));
        }
        masses
    }
}

/// Grid whose bins each carry mass exactly `1/K` under `params`.
///
/// Interior representatives sit at the mass midpoint of their bin. The two outer
/// bins use the innermost edge pushed out by half the neighbouring bin's width;
/// with only two bins there is no finite neighbour, so both use mass midpoints.
pub fn equal_mass_grid(params: &LogisticParams, n_bins: usize) -> Result<BinGrid> {
    check_bin_count(n_bins)?;
    let k = n_bins as f64;
    let edges: Vec<f64> = (1..n_bins).map(|j| params.quantile(j as f64 / k)).collect();
    let mut reps: Vec<f64> = (0..n_bins)
        .map(|b| params.quantile((b as f64 + 0.5) / k))
        .collect();
    if n_bins > 2 {
        let last = edges.len() - 1;
        reps[0] = edges[0] - 0.5 * (edges[1] - edges[0]);
        reps[n_bins - 1] = edges[last] + 0.5 * (edges[last] - edges[last - 1]);
    }
    BinGrid::from_parts(edges, reps)
}

/// `K` equal-width bins on `[lo, hi]`; representatives are the nominal bin midpoints.
pub fn uniform_grid(lo: f64, hi: f64, n_bins: usize) -> Result<BinGrid> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidGrid(format!("empty range [{lo}, {hi}]")));
    }
    check_bin_count(n_bins)?;
    let width = (hi - lo) / n_bins as f64;
    let edges = (1..n_bins).map(|j| lo + j as f64 * width).collect();
    let reps = (0..n_bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    BinGrid::from_parts(edges, reps)
}

/// Discretizes a logistic density on `grid` and quantizes the bin masses.
pub fn discretize_density(
    params: &LogisticParams,
    grid: &BinGrid,
    precision_bits: u32,
) -> Result<FrequencyTable> {
    quantize_pmf(&grid.bin_masses(params), precision_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN3: f64 = 1.098_612_288_668_109_8;

    #[test]
    fn cdf_values() {
        let std = LogisticParams::standard();
        assert_eq!(logistic_cdf(0.0, &std), 0.5);
        assert!((logistic_cdf(LN3, &std) - 0.75).abs() < 1e-15);
        assert_eq!(logistic_cdf(f64::NEG_INFINITY, &std), 0.0);
        assert_eq!(logistic_cdf(-1e6, &std), 0.0);
        let p = LogisticParams::new(3.0, 0.5).unwrap();
        assert_eq!(logistic_cdf(3.0, &p), 0.5);
    }

    #[test]
    fn logistic_params_validation() {
        assert!(LogisticParams::new(0.0, 0.0).is_err());
        assert!(LogisticParams::new(0.0, -1.0).is_err());
        assert!(LogisticParams::new(f64::NAN, 1.0).is_err());
        assert!(LogisticParams::new(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn equal_mass_edges() {
        let std = LogisticParams::standard();
        assert_eq!(equal_mass_grid(&std, 2).unwrap().interior_edges(), &[0.0]);
        let g = equal_mass_grid(&std, 4).unwrap();
        let e = g.interior_edges();
        assert!((e[0] + LN3).abs() < 1e-12 && e[1].abs() < 1e-12 && (e[2] - LN3).abs() < 1e-12);

        let shifted = equal_mass_grid(&LogisticParams::new(2.0, 1.0).unwrap(), 4).unwrap();
        for (a, b) in shifted.interior_edges().iter().zip(e) {
            assert!((a - b - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_mass_representatives() {
        let g = equal_mass_grid(&LogisticParams::standard(), 4).unwrap();
        let r1 = g.bin_representative(1).unwrap();
        assert!((r1 - (0.375f64 / 0.625).ln()).abs() < 1e-12);
        assert!((r1 + 0.5108).abs() < 1e-4);
        // Outer bins: innermost edge offset by half the neighbouring width.
        let e = g.interior_edges();
        assert!((g.bin_representative(0).unwrap() - (e[0] - 0.5 * (e[1] - e[0]))).abs() < 1e-15);
        for k in 0..4 {
            assert_eq!(g.bin_index(g.bin_representative(k).unwrap()), k);
        }
    }

    #[test]
    fn uniform_edges_and_reps() {
        let g = uniform_grid(0.0, 4.0, 4).unwrap();
        assert_eq!(g.interior_edges(), &[1.0, 2.0, 3.0]);
        assert_eq!(g.representatives(), &[0.5, 1.5, 2.5, 3.5]);
        assert_eq!(uniform_grid(-1.0, 1.0, 2).unwrap().interior_edges(), &[0.0]);
        assert!(uniform_grid(1.0, 1.0, 4).is_err());
        assert!(uniform_grid(2.0, 1.0, 4).is_err());
        assert!(uniform_grid(0.0, 1.0, 3).is_err());
        assert!(uniform_grid(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn bin_index_clamps() {
        let g = uniform_grid(0.0, 4.0, 4).unwrap();
        assert_eq!(g.bin_index(-100.0), 0);
        assert_eq!(g.bin_index(100.0), 3);
        assert_eq!(g.bin_index(1.0), 1);
        assert_eq!(g.bin_index(0.999), 0);
        assert!(matches!(
            g.bin_representative(4),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn discretize_examples() {
        let std = LogisticParams::standard();
        let g = equal_mass_grid(&std, 4).unwrap();
        assert_eq!(discretize_density(&std, &g, 2).unwrap().freqs(), &[1, 1, 1, 1]);

        // One edge at 1: masses (sigmoid(1), 1 - sigmoid(1)).
        let two = BinGrid::from_parts(vec![1.0], vec![0.0, 2.0]).unwrap();
        let m = two.bin_masses(&std);
        assert!((m[0] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(discretize_density(&std, &two, 8).unwrap().freqs(), &[187, 69]);

        let sym = uniform_grid(-3.0, 3.0, 2).unwrap();
        for r in [1, 5, 12] {
            let t = discretize_density(&std, &sym, r).unwrap();
            assert_eq!(t.freqs(), &[1 << (r - 1), 1 << (r - 1)]);
        }
    }

    #[test]
    fn masses_sum_to_one() {
        let cases = [(0.0, 1.0), (5.0, 0.01), (-40.0, 3.0), (1e3, 1e-3)];
        for (mu, s) in cases {
            let p = LogisticParams::new(mu, s).unwrap();
            for grid in [
                uniform_grid(-4.0, 4.0, 1024).unwrap(),
                equal_mass_grid(&LogisticParams::standard(), 256).unwrap(),
            ] {
                let total: f64 = grid.bin_masses(&p).iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "mu={mu} s={s}: {total}");
            }
        }
    }

    #[test]
    fn grid_serde_roundtrip_and_validation() {
        let g = equal_mass_grid(&LogisticParams::new(0.3, 1.7).unwrap(), 64).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: BinGrid = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"interior_edges":[1.0,0.5,2.0],"representatives":[0,0.7,1.5,3]}"#;
        assert!(serde_json::from_str::<BinGrid>(bad).is_err());
    }
}
