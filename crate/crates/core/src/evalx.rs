//! Localization and counting metrics.
//!
//! A prediction may match a ground-truth head only if its center lies within
//! that head's `sigma_l` (half the box diagonal). Among admissible pairs the
//! one-to-one assignment maximizes the number of matches and, among those,
//! minimizes the summed distance (Hungarian algorithm).

use std::fmt;

use serde::{Deserialize, Serialize};

/// Ground-truth head for matching: center and match radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtPoint {
    pub center: [f64; 2],
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub distance: f64,
}

/// Matching outcome for one image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pairs: Vec<MatchedPair>,
}

impl MatchReport {
    pub fn matched_pred(&self, pred: usize) -> bool {
        self.pairs.iter().any(|p| p.pred == pred)
    }

    pub fn matched_gt(&self, gt: usize) -> bool {
        self.pairs.iter().any(|p| p.gt == gt)
    }
}

/// Minimum-cost assignment of every row of an `n x m` matrix (`n <= m`) to a
/// distinct column. Returns the column chosen for each row.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based potentials; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if row_of[j] > 0 {
            assign[row_of[j] - 1] = j - 1;
        }
    }
    assign
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Optimal one-to-one matching of predicted centers to ground truth.
pub fn match_instances(preds: &[[f64; 2]], gts: &[GtPoint]) -> MatchReport {
    let (np, ng) = (preds.len(), gts.len());
    let d: Vec<Vec<Option<f64>>> = preds
        .iter()
        .map(|&p| {
            gts.iter()
                .map(|g| {
                    let dd = dist(p, g.center);
                    (dd <= g.sigma).then_some(dd)
                })
                .collect()
        })
        .collect();
    let admissible_total: f64 = d.iter().flatten().flatten().sum();
    if admissible_total == 0.0 && !d.iter().flatten().any(Option::is_some) {
        return MatchReport {
            tp: 0,
            fp: np,
            fn_: ng,
            pairs: Vec::new(),
        };
    }
    // Any inadmissible or dummy cell costs more than every admissible
    // assignment combined, so the optimum first maximizes the match count.
    let sentinel = admissible_total + 1.0;
    let n = np.max(ng);
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i < np && j < ng {
                        d[i][j].unwrap_or(sentinel)
                    } else {
                        sentinel
                    }
                })
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);
    let mut pairs: Vec<MatchedPair> = assign
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < np && j < ng)
        .filter_map(|(i, &j)| {
            d[i][j].map(|distance| MatchedPair {
                pred: i,
                gt: j,
                distance,
            })
        })
        .collect();
    pairs.sort_by_key(|p| p.pred);
    let tp = pairs.len();
    MatchReport {
        tp,
        fp: np - tp,
        fn_: ng - tp,
        pairs,
    }
}

/// Dataset-level (micro-averaged) precision, recall and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalizationScores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn localization_scores<'a>(reports: impl IntoIterator<Item = &'a MatchReport>) -> LocalizationScores {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for r in reports {
        tp += r.tp;
        fp += r.fp;
        fn_ += r.fn_;
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    LocalizationScores {
        f1,
        precision,
        recall,
        tp,
        fp,
        fn_,
    }
}

/// Image-level counting errors. `mse` is the root of the mean squared error,
/// as is customary for crowd counting. `nae` averages `|error| / gt` over
/// images with at least one head and is `None` when there are none.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub abs_errors: Vec<f64>,
    pub mae: f64,
    pub mse: f64,
    pub nae: Option<f64>,
}

pub fn counting_errors(counts: &[(usize, usize)]) -> CountReport {
    if counts.is_empty() {
        return CountReport::default();
    }
    let abs_errors: Vec<f64> = counts
        .iter()
        .map(|&(p, g)| (p as f64 - g as f64).abs())
        .collect();
    let n = counts.len() as f64;
    let mae = abs_errors.iter().sum::<f64>() / n;
    let mse = (abs_errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let rel: Vec<f64> = counts
        .iter()
        .zip(&abs_errors)
        .filter(|((_, g), _)| *g > 0)
        .map(|(&(_, g), e)| e / g as f64)
        .collect();
    let nae = (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64);
    CountReport {
        abs_errors,
        mae,
        mse,
        nae,
    }
}

/// Aggregate report written by evaluation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "F1m")]
    pub f1m: f64,
    #[serde(rename = "Pre")]
    pub pre: f64,
    #[serde(rename = "Rec")]
    pub rec: f64,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "MSE")]
    pub mse: f64,
    #[serde(rename = "NAE")]
    pub nae: Option<f64>,
    pub images: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricsReport {
    pub fn new(scores: &LocalizationScores, counts: &CountReport, images: usize) -> Self {
        Self {
            f1m: scores.f1,
            pre: scores.precision,
            rec: scores.recall,
            mae: counts.mae,
            mse: counts.mse,
            nae: counts.nae,
            images,
            tp: scores.tp,
            fp: scores.fp,
            fn_: scores.fn_,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nae = self.nae.map_or("-".to_string(), |v| format!("{v:.3}"));
        writeln!(f, "{:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}", "F1-m", "Pre", "Rec", "MAE", "MSE", "NAE")?;
        writeln!(
            f,
            "{:>8.1} {:>8.1} {:>8.1} | {:>8.2} {:>8.2} {:>8}",
            100.0 * self.f1m,
            100.0 * self.pre,
            100.0 * self.rec,
            self.mae,
            self.mse,
            nae
        )?;
        write!(f, "images={} tp={} fp={} fn={}", self.images, self.tp, self.fp, self.fn_)
    }
}
