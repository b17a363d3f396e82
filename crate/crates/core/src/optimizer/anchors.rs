use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backends::EmbeddingObjective;
use crate::error::{Error, Result};
use crate::types::{l2_distance, Embedding, IdentityLabel, UNIT_NORM_TOLERANCE};

/// Gallery embeddings the anchors are drawn from. The user's own identity
/// must not be in here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPool {
    entries: Vec<(IdentityLabel, Embedding)>,
    source: String,
}

impl AnchorPool {
    pub fn new(entries: Vec<(IdentityLabel, Embedding)>, source: impl Into<String>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::Pool(format!("anchor pool has {} entries, needs 2", entries.len())));
        }
        let labels: BTreeSet<&IdentityLabel> = entries.iter().map(|(l, _)| l).collect();
        if labels.len() < 2 {
            return Err(Error::Pool("anchor pool needs at least two identities".into()));
        }
        let dim = entries[0].1.dim();
        for (label, e) in &entries {
            let norm = e.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            if e.dim() != dim || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Pool(format!(
                    "entry for {label} is not a unit vector of dimension {dim}"
                )));
            }
        }
        Ok(AnchorPool { entries, source: source.into() })
    }

    pub fn entries(&self) -> &[(IdentityLabel, Embedding)] {
        &self.entries
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pool without any entry of `label`.
    pub fn excluding(&self, label: &IdentityLabel) -> Result<Self> {
        Self::new(
            self.entries.iter().filter(|(l, _)| l != label).cloned().collect(),
            self.source.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub index: usize,
    pub label: IdentityLabel,
    pub embedding: Embedding,
}

/// `near` is G+ (closest to the seed), `far` is G− (farthest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPair {
    pub near: Anchor,
    pub far: Anchor,
}

pub fn select_anchors(seed: &Embedding, pool: &AnchorPool) -> Result<AnchorPair> {
    if pool.entries.len() < 2 {
        return Err(Error::Pool("anchor pool needs at least two entries".into()));
    }
    if seed.dim() != pool.entries[0].1.dim() {
        return Err(Error::shape(pool.entries[0].1.dim(), seed.dim()));
    }
    let (mut near, mut far) = (0, 0);
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, (_, e)) in pool.entries.iter().enumerate() {
        let d = seed.distance(e);
        if d < dmin {
            dmin = d;
            near = i;
        }
        if d > dmax {
            dmax = d;
            far = i;
        }
    }
    let anchor = |i: usize| Anchor {
        index: i,
        label: pool.entries[i].0.clone(),
        embedding: pool.entries[i].1.clone(),
    };
    Ok(AnchorPair { near: anchor(near), far: anchor(far) })
}

/// `mean_i ‖e_i − far‖ − ‖e_i − near‖`.
pub fn contrastive_loss(perturbed: &[Embedding], anchors: &AnchorPair) -> f64 {
    let obj = AnchorObjective::new(anchors);
    perturbed.iter().map(|e| obj.value(e.values())).sum::<f64>() / perturbed.len() as f64
}

/// Per-image term of the contrastive loss as a differentiable objective.
#[derive(Debug, Clone)]
pub struct AnchorObjective {
    near: Vec<f64>,
    far: Vec<f64>,
}

impl AnchorObjective {
    pub fn new(anchors: &AnchorPair) -> Self {
        AnchorObjective {
            near: anchors.near.embedding.values().to_vec(),
            far: anchors.far.embedding.values().to_vec(),
        }
    }
}

impl EmbeddingObjective for AnchorObjective {
    fn value(&self, e: &[f64]) -> f64 {
        l2_distance(e, &self.far) - l2_distance(e, &self.near)
    }

    fn gradient(&self, e: &[f64]) -> Vec<f64> {
        let df = l2_distance(e, &self.far);
        let dn = l2_distance(e, &self.near);
        let inv = |d: f64| if d > 1e-12 { 1.0 / d } else { 0.0 };
        let (wf, wn) = (inv(df), inv(dn));
        e.iter()
            .zip(self.far.iter().zip(&self.near))
            .map(|(x, (f, n))| (x - f) * wf - (x - n) * wn)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn label(s: &str) -> IdentityLabel {
        IdentityLabel::new(s).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
        Embedding::normalize((0..dim).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    fn unit(x: f64, y: f64) -> Embedding {
        Embedding::normalize(vec![x, y]).unwrap()
    }

    #[test]
    fn two_element_pool() {
        let seed = unit(1.0, 0.0);
        let pool = AnchorPool::new(
            vec![(label("a"), unit(1.0, 0.1)), (label("b"), unit(-1.0, 0.1))],
            "test",
        )
        .unwrap();
        let pair = select_anchors(&seed, &pool).unwrap();
        assert_eq!((pair.near.index, pair.far.index), (0, 1));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let seed = unit(1.0, 0.0);
        let pool = AnchorPool::new(
            vec![(label("a"), unit(0.0, 1.0)), (label("b"), unit(0.0, -1.0))],
            "test",
        )
        .unwrap();
        let pair = select_anchors(&seed, &pool).unwrap();
        assert_eq!((pair.near.index, pair.far.index), (0, 0));
    }

    #[test]
    fn pool_invariants() {
        assert!(matches!(AnchorPool::new(vec![(label("a"), unit(1.0, 0.0))], "x"), Err(Error::Pool(_))));
        assert!(matches!(
            AnchorPool::new(vec![(label("a"), unit(1.0, 0.0)), (label("a"), unit(0.0, 1.0))], "x"),
            Err(Error::Pool(_))
        ));
    }

    // Exhaustive scan written independently of select_anchors.
    fn oracle(seed: &Embedding, pool: &AnchorPool) -> (usize, usize) {
        let d: Vec<f64> = pool
            .entries()
            .iter()
            .map(|(_, e)| {
                e.values()
                    .iter()
                    .zip(seed.values())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let near = (0..d.len()).find(|&i| d.iter().all(|&x| d[i] <= x)).unwrap();
        let far = (0..d.len()).find(|&i| d.iter().all(|&x| d[i] >= x)).unwrap();
        (near, far)
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..1000 {
            let size = 2 + trial % 99;
            let dim = 2 + trial % 7;
            let entries = (0..size)
                .map(|i| (label(&format!("id{}", i % 5)), random_unit(&mut rng, dim)))
                .collect();
            let pool = AnchorPool::new(entries, "random").unwrap();
            let seed = random_unit(&mut rng, dim);
            let pair = select_anchors(&seed, &pool).unwrap();
            assert_eq!((pair.near.index, pair.far.index), oracle(&seed, &pool));
        }
    }

    fn pair_of(near: Embedding, far: Embedding) -> AnchorPair {
        AnchorPair {
            near: Anchor { index: 0, label: label("n"), embedding: near },
            far: Anchor { index: 1, label: label("f"), embedding: far },
        }
    }

    #[test]
    fn loss_at_far_anchor_is_minus_gap() {
        let near = unit(1.0, 0.0);
        // Chord of length 1.2 on the unit circle.
        let theta = 2.0 * (0.6f64).asin();
        let far = unit(theta.cos(), theta.sin());
        let pair = pair_of(near, far.clone());
        let loss = contrastive_loss(&[far.clone(), far], &pair);
        assert!((loss + 1.2).abs() < 1e-12);
    }

    #[test]
    fn coincident_anchors_give_zero_loss() {
        let a = unit(0.3, 0.7);
        let pair = pair_of(a.clone(), a);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let es: Vec<_> = (0..4).map(|_| random_unit(&mut rng, 2)).collect();
        assert_eq!(contrastive_loss(&es, &pair), 0.0);
    }

    #[test]
    fn loss_matches_direct_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pair = pair_of(random_unit(&mut rng, 8), random_unit(&mut rng, 8));
        let es = [random_unit(&mut rng, 8), random_unit(&mut rng, 8)];
        let dist = |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for i in 0..a.len() {
                s += (a[i] - b[i]) * (a[i] - b[i]);
            }
            s.sqrt()
        };
        let expected = es
            .iter()
            .map(|e| {
                dist(e.values(), pair.far.embedding.values())
                    - dist(e.values(), pair.near.embedding.values())
            })
            .sum::<f64>()
            / 2.0;
        assert!((contrastive_loss(&es, &pair) - expected).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn objective_gradient_matches_finite_differences(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let obj = AnchorObjective::new(&pair_of(random_unit(&mut rng, 6), random_unit(&mut rng, 6)));
            let e: Vec<f64> = random_unit(&mut rng, 6).values().to_vec();
            let g = obj.gradient(&e);
            for i in 0..6 {
                let h = 1e-6;
                let mut p = e.clone();
                let mut m = e.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (obj.value(&p) - obj.value(&m)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() < 1e-5);
            }
        }
    }
}
