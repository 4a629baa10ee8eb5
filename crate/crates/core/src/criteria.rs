//! Filter-importance criteria and survivor selection.
//!
//! Every criterion yields one score per filter with the convention that a
//! higher score means the filter is more worth keeping.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::StatsBundle;
use crate::tensor::{LayerParams, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Random,
    MeanActivation,
    L1Norm,
    Entropy,
    ScaledEntropy,
    Apoz,
    Sensitivity,
    ClassSpecific,
}

impl Criterion {
    pub const ALL: [Criterion; 8] = [
        Criterion::Random,
        Criterion::MeanActivation,
        Criterion::L1Norm,
        Criterion::Entropy,
        Criterion::ScaledEntropy,
        Criterion::Apoz,
        Criterion::Sensitivity,
        Criterion::ClassSpecific,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Random => "random",
            Criterion::MeanActivation => "mean-activation",
            Criterion::L1Norm => "l1-norm",
            Criterion::Entropy => "entropy",
            Criterion::ScaledEntropy => "scaled-entropy",
            Criterion::Apoz => "apoz",
            Criterion::Sensitivity => "sensitivity",
            Criterion::ClassSpecific => "class-specific",
        }
    }

    /// Whether scoring reads a [`StatsBundle`].
    pub fn needs_stats(self) -> bool {
        !matches!(self, Criterion::Random | Criterion::L1Norm)
    }

    /// Whether the bundle must hold gradient accumulators.
    pub fn needs_gradients(self) -> bool {
        matches!(self, Criterion::Sensitivity | Criterion::ClassSpecific)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Criterion::ALL.iter().map(|c| c.name()).collect();
                Error::invalid(format!("unknown criterion {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterScore {
    pub layer_id: usize,
    pub criterion: Criterion,
    pub scores: Vec<f64>,
    /// Seed of the random criterion's generator.
    pub seed: Option<u64>,
}

/// Optional inputs to [`score_filters`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreInputs<'a> {
    pub stats: Option<&'a StatsBundle>,
    /// Class labels for the class-specific criterion.
    pub class_set: Option<&'a [usize]>,
    /// Seed for the random criterion.
    pub seed: Option<u64>,
}

/// Scores the filters of conv layer `layer_id`.
pub fn score_filters<S: Scalar>(
    criterion: Criterion,
    layer_id: usize,
    layer: &LayerParams<S>,
    inputs: ScoreInputs<'_>,
) -> Result<FilterScore> {
    let LayerParams::Conv2d { weights, .. } = layer else {
        return Err(Error::invalid(format!("layer {layer_id} is not a conv layer")));
    };
    let n = weights.shape()[0];

    if inputs.class_set.is_some() != (criterion == Criterion::ClassSpecific) {
        return Err(Error::invalid(format!(
            "a class set is required by, and only by, class-specific (criterion {criterion})"
        )));
    }
    if inputs.seed.is_some() != (criterion == Criterion::Random) {
        return Err(Error::invalid(format!(
            "a seed is required by, and only by, random (criterion {criterion})"
        )));
    }
    let stats = if criterion.needs_stats() {
        let s = inputs.stats.ok_or_else(|| {
            Error::MissingStats(format!("criterion {criterion} needs collected statistics"))
        })?;
        if criterion.needs_gradients() && !s.with_gradients {
            return Err(Error::MissingStats(format!(
                "criterion {criterion} needs gradient statistics"
            )));
        }
        let layer_stats = s.layer(layer_id).ok_or_else(|| {
            Error::MissingStats(format!("no statistics for layer {layer_id}"))
        })?;
        if layer_stats.filters() != n {
            return Err(Error::MissingStats(format!(
                "statistics for layer {layer_id} cover {} filters, layer has {n}",
                layer_stats.filters()
            )));
        }
        Some(s)
    } else {
        None
    };

    let scores = match criterion {
        Criterion::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed.unwrap_or_default());
            rng.set_stream(layer_id as u64);
            (0..n).map(|_| rng.gen::<f64>()).collect()
        }
        Criterion::L1Norm => (0..n)
            .map(|f| weights.outer(f).iter().map(|w| w.as_f64().abs()).sum())
            .collect(),
        Criterion::MeanActivation => stats.unwrap().mean_activation(layer_id)?,
        Criterion::Entropy => entropies(stats.unwrap(), layer_id)?,
        Criterion::ScaledEntropy => {
            let s = stats.unwrap();
            entropies(s, layer_id)?
                .into_iter()
                .zip(s.mean_activation(layer_id)?)
                .map(|(e, m)| e * m)
                .collect()
        }
        Criterion::Apoz => stats.unwrap().apoz(layer_id)?.into_iter().map(|z| 1.0 - z).collect(),
        Criterion::Sensitivity => {
            let s = stats.unwrap();
            if s.grad_images == 0 {
                return Err(Error::MissingStats("no gradient samples accumulated".into()));
            }
            s.layer(layer_id)
                .unwrap()
                .grad_l1_sum
                .iter()
                .map(|g| g.value() / s.grad_images as f64)
                .collect()
        }
        Criterion::ClassSpecific => class_specific(stats.unwrap(), layer_id, inputs.class_set.unwrap())?,
    };
    if let Some(i) = scores.iter().position(|s: &f64| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{criterion} score of filter {i} in layer {layer_id}")));
    }
    Ok(FilterScore {
        layer_id,
        criterion,
        scores,
        seed: inputs.seed,
    })
}

/// `-Σ p ln p` over each filter's histogram, with `0 ln 0 = 0`.
fn entropies(stats: &StatsBundle, layer_id: usize) -> Result<Vec<f64>> {
    Ok(stats
        .bin_probabilities(layer_id)?
        .iter()
        .map(|p| entropy(p))
        .collect())
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn class_specific(stats: &StatsBundle, layer_id: usize, class_set: &[usize]) -> Result<Vec<f64>> {
    if class_set.is_empty() {
        return Err(Error::invalid("class set is empty"));
    }
    let layer = stats.layer(layer_id).unwrap();
    let classes = stats.class_images.len();
    if let Some(&c) = class_set.iter().find(|&&c| c >= classes) {
        return Err(Error::invalid(format!("class {c} out of range for {classes} classes")));
    }
    let images: u64 = class_set.iter().map(|&c| stats.class_images[c]).sum();
    if images == 0 {
        return Err(Error::MissingStats(format!(
            "no gradient samples for classes {class_set:?}"
        )));
    }
    Ok((0..layer.filters())
        .map(|f| {
            let sum = class_set
                .iter()
                .map(|&c| layer.class_grad_l1_sum[c][f])
                .fold(crate::stats::FixedSum::default(), |a, b| a + b);
            sum.value() / images as f64
        })
        .collect())
}

/// Indices of the `keep` highest scores (ties go to the lower index),
/// in ascending order.
pub fn select_top_m(scores: &FilterScore, keep: usize) -> Result<Vec<usize>> {
    let n = scores.scores.len();
    if keep == 0 || keep > n {
        return Err(Error::invalid(format!("keep count {keep} not in 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b]
            .total_cmp(&scores.scores[a])
            .then(a.cmp(&b))
    });
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Filters kept when `percent`% of `n` are pruned: `n - floor(percent·n/100)`,
/// never below one.
pub fn keep_count_for(n: usize, percent: u32) -> Result<usize> {
    if percent >= 100 {
        return Err(Error::invalid(format!("prune percent {percent} must be below 100")));
    }
    let keep = n - n * percent as usize / 100;
    if keep == 0 {
        log::warn!("pruning {percent}% of {n} filters leaves none; keeping 1");
        return Ok(1);
    }
    Ok(keep)
}

/// Splits a global prune budget across layers in proportion to `n_k²`, with
/// largest-remainder rounding. Returns keep counts. Every layer keeps at
/// least one filter and wider layers are never pruned by a smaller fraction
/// than narrower ones.
pub fn allocate_differential(sizes: &[usize], budget: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if sizes.contains(&0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    if budget >= total || budget > total - sizes.len() {
        return Err(Error::invalid(format!(
            "budget {budget} infeasible for {} layers totalling {total} filters",
            sizes.len()
        )));
    }
    let weights: Vec<f64> = sizes.iter().map(|&n| (n as f64).powi(2)).collect();
    let caps: Vec<usize> = sizes.iter().map(|&n| n - 1).collect();
    let mut prune = largest_remainder(&weights, budget, &caps);

    // rounding can leave a wider layer a hair below a narrower one in prune
    // fraction; move single filters until the fractions are ordered
    let mut guard = 0;
    while let Some((lo, hi)) = fraction_violation(sizes, &prune) {
        prune[lo] -= 1;
        prune[hi] += 1;
        guard += 1;
        if guard > 10 * total {
            return Err(Error::invalid("could not find a monotone allocation"));
        }
    }
    debug_assert_eq!(prune.iter().sum::<usize>(), budget);
    Ok(sizes.iter().zip(&prune).map(|(&n, &p)| n - p).collect())
}

/// A pair (narrower, wider) where the narrower layer is pruned by a strictly
/// larger fraction and a filter can move from it to the wider one.
fn fraction_violation(sizes: &[usize], prune: &[usize]) -> Option<(usize, usize)> {
    for a in 0..sizes.len() {
        for b in 0..sizes.len() {
            if sizes[a] < sizes[b]
                && prune[a] * sizes[b] > prune[b] * sizes[a]
                && prune[a] > 0
                && prune[b] < sizes[b] - 1
            {
                return Some((a, b));
            }
        }
    }
    None
}

/// Integer shares of `total` proportional to `weights`, each at most its cap.
/// Shares cut by a cap are handed out one at a time in remainder order.
fn largest_remainder(weights: &[f64], total: usize, caps: &[usize]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact
        .iter()
        .zip(caps)
        .map(|(&e, &c)| (e.floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(out.iter().sum());
    while left > 0 {
        let mut progressed = false;
        for &i in &order {
            if left == 0 {
                break;
            }
            if out[i] < caps[i] {
                out[i] += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn conv_with(filters: Vec<Vec<f64>>) -> LayerParams<f64> {
        let n = filters.len();
        let per = filters[0].len();
        let w = Tensor::from_vec(&[n, per, 1, 1], filters.concat()).unwrap();
        LayerParams::conv(w, Tensor::zeros(&[n])).unwrap()
    }

    fn scores(v: &[f64]) -> FilterScore {
        FilterScore {
            layer_id: 0,
            criterion: Criterion::L1Norm,
            scores: v.to_vec(),
            seed: None,
        }
    }

    #[test]
    fn l1_hand_values() {
        let layer = conv_with(vec![vec![0.0; 8], vec![0.5; 8], vec![-0.5; 8]]);
        let s = score_filters(Criterion::L1Norm, 0, &layer, ScoreInputs::default()).unwrap();
        assert_eq!(s.scores, vec![0.0, 4.0, 4.0]);
    }

    #[test]
    fn entropy_extremes() {
        assert!((entropy(&[0.1; 10]) - 10f64.ln()).abs() < 1e-12);
        let mut one = [0.0; 10];
        one[3] = 1.0;
        assert_eq!(entropy(&one), 0.0);
    }

    #[test]
    fn random_is_seeded() {
        let layer = conv_with(vec![vec![1.0]; 6]);
        let inputs = ScoreInputs {
            seed: Some(11),
            ..Default::default()
        };
        let a = score_filters(Criterion::Random, 2, &layer, inputs).unwrap();
        let b = score_filters(Criterion::Random, 2, &layer, inputs).unwrap();
        let c = score_filters(Criterion::Random, 3, &layer, inputs).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.scores, c.scores);
        assert!(a.scores.iter().all(|s| (0.0..1.0).contains(s)));
    }

    #[test]
    fn seed_and_class_set_preconditions() {
        let layer = conv_with(vec![vec![1.0]; 2]);
        assert!(score_filters(Criterion::Random, 0, &layer, ScoreInputs::default()).is_err());
        let seeded = ScoreInputs {
            seed: Some(1),
            ..Default::default()
        };
        assert!(score_filters(Criterion::L1Norm, 0, &layer, seeded).is_err());
        assert!(matches!(
            score_filters(Criterion::Entropy, 0, &layer, ScoreInputs::default()),
            Err(Error::MissingStats(_))
        ));
    }

    #[test]
    fn top_m_examples() {
        assert_eq!(select_top_m(&scores(&[3.0, 1.0, 2.0]), 2).unwrap(), vec![0, 2]);
        assert_eq!(select_top_m(&scores(&[5.0; 4]), 2).unwrap(), vec![0, 1]);
        assert!(select_top_m(&scores(&[1.0]), 0).is_err());
        assert!(select_top_m(&scores(&[1.0]), 2).is_err());
    }

    #[test]
    fn keep_counts() {
        assert_eq!(keep_count_for(64, 50).unwrap(), 32);
        assert_eq!(keep_count_for(512, 75).unwrap(), 128);
        assert_eq!(keep_count_for(3, 75).unwrap(), 1);
        assert_eq!(keep_count_for(7, 0).unwrap(), 7);
        assert!(keep_count_for(7, 100).is_err());
    }

    #[test]
    fn differential_hand_cases() {
        assert_eq!(allocate_differential(&[64, 64], 64).unwrap(), vec![32, 32]);
        assert_eq!(allocate_differential(&[64, 128], 96).unwrap(), vec![45, 51]);
        assert!(allocate_differential(&[4, 4], 8).is_err());
        assert!(allocate_differential(&[4, 4], 7).is_err());
        assert_eq!(allocate_differential(&[4, 4], 6).unwrap(), vec![1, 1]);
    }

    #[test]
    fn criterion_names_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(c.name().parse::<Criterion>().unwrap(), c);
        }
        assert!("taylor".parse::<Criterion>().is_err());
    }
}
