use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 500;
const EPS: f64 = 1e-15;

/// Regularized lower incomplete gamma P(a, x) by its power series.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - libm::lgamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - libm::lgamma(a)).exp() * h
}

/// Q(a, x) = Γ(a, x)/Γ(a).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    gamma_q(df / 2.0, x / 2.0).clamp(0.0, 1.0)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// CDF of the studentized range of `k` standard normals (infinite degrees of freedom):
/// `k ∫ φ(z) [Φ(z) - Φ(z - q)]^(k-1) dz`, by composite Simpson on [-9, 9].
pub fn studentized_range_cdf(q: f64, k: usize) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let (lo, hi, steps) = (-9.0, 9.0, 3000);
    let h = (hi - lo) / steps as f64;
    let f = |z: f64| normal_pdf(z) * (normal_cdf(z) - normal_cdf(z - q)).powi(k as i32 - 1);
    let mut sum = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    (k as f64 * sum * h / 3.0).clamp(0.0, 1.0)
}

/// Two-sided Nemenyi critical values `q_α/√2` for k = 2..=10 groups.
const Q_05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const Q_10: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

/// Critical value for `k` groups at `alpha` ∈ {0.05, 0.10}.
pub fn nemenyi_critical_value(k: usize, alpha: f64) -> Result<f64> {
    if !(2..=10).contains(&k) {
        return Err(Error::Unsupported(format!(
            "Nemenyi critical values are tabulated for 2..=10 groups, got {k}"
        )));
    }
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_10
    } else {
        return Err(Error::Unsupported(format!("no critical values for alpha {alpha}")));
    };
    Ok(table[k - 2])
}

/// Items (rows) by groups (columns) with possibly missing cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl RatingMatrix {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Self {
        Self { columns, rows }
    }

    /// A matrix with no missing cells and columns named `c0, c1, ...`.
    pub fn complete(rows: Vec<Vec<f64>>) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        Self {
            columns: (0..k).map(|j| format!("c{j}")).collect(),
            rows: rows
                .into_iter()
                .map(|r| r.into_iter().map(Some).collect())
                .collect(),
        }
    }

    fn dense(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.columns.len();
        if k < 2 || self.rows.len() < 3 {
            return Err(Error::Input(format!(
                "need at least 3 rows and 2 columns, got {}x{k}",
                self.rows.len()
            )));
        }
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != k {
                    return Err(Error::Input(format!("row {i} has {} cells, expected {k}", row.len())));
                }
                row.iter()
                    .map(|c| match c {
                        Some(v) if v.is_finite() => Ok(*v),
                        _ => Err(Error::Input(format!("missing cell in row {i}"))),
                    })
                    .collect()
            })
            .collect()
    }
}

/// Ascending ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseP {
    pub a: String,
    pub b: String,
    pub q: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanNemenyi {
    pub statistic: f64,
    pub friedman_p: f64,
    pub mean_ranks: BTreeMap<String, f64>,
    /// Critical difference of mean ranks at α = 0.05.
    pub critical_difference: f64,
    pub pairwise: Vec<PairwiseP>,
}

impl FriedmanNemenyi {
    /// Pairwise p-value for two columns in either order.
    pub fn pair_p(&self, a: &str, b: &str) -> Option<f64> {
        self.pairwise
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map(|p| p.p)
    }
}

/// Friedman rank test with tie correction, then Nemenyi pairwise comparisons.
pub fn friedman_nemenyi(matrix: &RatingMatrix) -> Result<FriedmanNemenyi> {
    let data = matrix.dense()?;
    let (n, k) = (data.len(), matrix.columns.len());
    let critical = nemenyi_critical_value(k, 0.05)?;
    let (nf, kf) = (n as f64, k as f64);

    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in &data {
        let ranks = average_ranks(row);
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
        let mut sorted = row.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
    }
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>()
        - 3.0 * nf * (kf + 1.0);
    let correction = 1.0 - tie_term / (nf * (kf * kf * kf - kf));
    let statistic = if correction <= 0.0 { 0.0 } else { (raw / correction).max(0.0) };
    let friedman_p = if statistic == 0.0 { 1.0 } else { chi_square_sf(statistic, kf - 1.0) };

    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / nf).collect();
    let se = (kf * (kf + 1.0) / (6.0 * nf)).sqrt();
    let mut pairwise = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let q = (mean_ranks[i] - mean_ranks[j]).abs() / se;
            let p = (1.0 - studentized_range_cdf(q * std::f64::consts::SQRT_2, k)).clamp(f64::MIN_POSITIVE, 1.0);
            pairwise.push(PairwiseP {
                a: matrix.columns[i].clone(),
                b: matrix.columns[j].clone(),
                q,
                p,
            });
        }
    }
    Ok(FriedmanNemenyi {
        statistic,
        friedman_p,
        mean_ranks: matrix.columns.iter().cloned().zip(mean_ranks).collect(),
        critical_difference: critical * se,
        pairwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wmcore::SplitMix64;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn chi_square_tail_matches_statrs() {
        for df in [1.0, 2.0, 3.0, 5.0, 9.0, 20.0] {
            let reference = ChiSquared::new(df).unwrap();
            for x in [0.01, 0.5, 1.0, 2.5, 4.0, 7.8, 15.0, 40.0] {
                let ours = chi_square_sf(x, df);
                assert!((ours - reference.sf(x)).abs() < 1e-10, "df {df} x {x}: {ours}");
            }
        }
    }

    #[test]
    fn table_values_sit_at_their_significance_level() {
        for k in 2..=10 {
            for (alpha, table) in [(0.05, &Q_05), (0.10, &Q_10)] {
                let q = table[k - 2] * std::f64::consts::SQRT_2;
                let tail = 1.0 - studentized_range_cdf(q, k);
                assert!((tail - alpha).abs() < 1.5e-3, "k {k}: {tail} vs {alpha}");
            }
        }
    }

    #[test]
    fn two_group_range_is_scaled_normal() {
        // With k = 2 the range is |Z1 - Z2|, i.e. √2·|N(0,1)|.
        for q in [0.5, 1.0, 2.0, 3.0] {
            let exact = 2.0 * normal_cdf(q / std::f64::consts::SQRT_2) - 1.0;
            assert!((studentized_range_cdf(q, 2) - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn too_many_groups_unsupported() {
        let m = RatingMatrix::complete(vec![vec![1.0; 11]; 4]);
        assert!(matches!(friedman_nemenyi(&m), Err(Error::Unsupported(_))));
    }

    #[test]
    fn missing_cells_rejected() {
        let mut m = RatingMatrix::complete(vec![vec![1.0, 2.0]; 4]);
        m.rows[2][1] = None;
        assert!(matches!(friedman_nemenyi(&m), Err(Error::Input(_))));
    }

    #[test]
    fn identical_columns_give_unit_p() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64; 3]).collect();
        let r = friedman_nemenyi(&RatingMatrix::complete(rows)).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.friedman_p, 1.0);
        assert!(r.pairwise.iter().all(|p| p.p == 1.0));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn dominant_column_is_significant_and_agrees_with_permutation_oracle() {
        let mut rng = SplitMix64::new(21);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![5.0 + rng.next_f64(), rng.next_f64() * 4.0, rng.next_f64() * 4.0])
            .collect();
        let m = RatingMatrix::complete(rows.clone());
        let r = friedman_nemenyi(&m).unwrap();
        assert!(r.friedman_p < 0.01);

        // Within-row shuffles under the null; the observed statistic should be extreme.
        let mut extreme = 0;
        let trials = 2000;
        for _ in 0..trials {
            let shuffled: Vec<Vec<f64>> = rows
                .iter()
                .map(|row| {
                    let mut r = row.clone();
                    for i in (1..r.len()).rev() {
                        r.swap(i, rng.next_below(i as u64 + 1) as usize);
                    }
                    r
                })
                .collect();
            if friedman_nemenyi(&RatingMatrix::complete(shuffled)).unwrap().statistic >= r.statistic {
                extreme += 1;
            }
        }
        assert!((extreme as f64 / trials as f64) < 0.01);
        assert_eq!(r.pair_p("c0", "c1"), r.pair_p("c1", "c0"));
        assert!(r.pair_p("c0", "c1").unwrap() < 0.05);
    }

    #[test]
    fn statistic_invariant_to_rank_preserving_transform() {
        let mut rng = SplitMix64::new(4);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| rng.next_f64()).collect()).collect();
        let cubed: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.powi(3) + 1.0).collect()).collect();
        let a = friedman_nemenyi(&RatingMatrix::complete(rows)).unwrap();
        let b = friedman_nemenyi(&RatingMatrix::complete(cubed)).unwrap();
        assert_eq!(a.statistic, b.statistic);
        for p in a.pairwise.iter().chain(&b.pairwise) {
            assert!(p.p > 0.0 && p.p <= 1.0);
        }
    }
}
