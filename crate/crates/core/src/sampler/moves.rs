//! Structural proposals and Metropolis-Hastings acceptance for one tree.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Priors;
use crate::error::{Error, Result};
use crate::soft_tree::{Node, SoftTree, SplitRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        MoveProbs {
            grow: 0.25,
            prune: 0.25,
            change: 0.40,
            swap: 0.10,
        }
    }
}

impl MoveProbs {
    pub fn validate(&self) -> Result<()> {
        let all = [self.grow, self.prune, self.change, self.swap];
        if all.iter().any(|p| !(*p >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "move probabilities must be nonnegative and sum to 1: {self:?}"
            )));
        }
        if self.grow > 0.0 && self.prune == 0.0 || self.prune > 0.0 && self.grow == 0.0 {
            return Err(Error::invalid("grow and prune must both be enabled or both disabled"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

#[derive(Debug, Clone)]
pub struct Proposal {
    pub kind: MoveKind,
    pub candidate: SoftTree,
    /// `ln q(T* → T) - ln q(T → T*)`.
    pub log_q_ratio: f64,
}

/// What a proposal may split on: current split probabilities and which
/// features have a nonzero range.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpace<'a> {
    pub probs: &'a [f64],
    pub splittable: &'a [bool],
}

impl SplitSpace<'_> {
    /// Draws a feature from `probs` with one uniform. `None` when the draw
    /// lands on a feature that cannot be split.
    fn draw_feature<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.probs.len() - 1;
        for (j, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = j;
                break;
            }
        }
        (self.splittable[chosen] && self.probs[chosen] > 0.0).then_some(chosen)
    }

    fn draw_rule<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<SplitRule> {
        let feature = self.draw_feature(rng);
        let cut: f64 = rng.random();
        feature.map(|feature| SplitRule { feature, cut })
    }
}

fn pick<R: Rng + ?Sized, T: Copy>(items: &[T], rng: &mut R) -> T {
    items[rng.random_range(0..items.len())]
}

/// Proposes a structural change. `None` means the drawn move is impossible
/// for this tree and counts as a rejection.
pub fn propose_move<R: Rng + ?Sized>(
    tree: &SoftTree,
    space: SplitSpace<'_>,
    probs: &MoveProbs,
    rng: &mut R,
) -> Option<Proposal> {
    let u: f64 = rng.random();
    let kind = if u < probs.grow {
        MoveKind::Grow
    } else if u < probs.grow + probs.prune {
        MoveKind::Prune
    } else if u < probs.grow + probs.prune + probs.change {
        MoveKind::Change
    } else {
        MoveKind::Swap
    };
    match kind {
        MoveKind::Grow => {
            let leaves = tree.leaf_indices();
            let leaf = pick(&leaves, rng);
            let rule = space.draw_rule(rng)?;
            let candidate = tree.grown(leaf, rule);
            let nogs = candidate.prunable_indices().len();
            let log_q_ratio =
                (probs.prune / nogs as f64).ln() - (probs.grow / leaves.len() as f64 * space.probs[rule.feature]).ln();
            Some(Proposal {
                kind,
                candidate,
                log_q_ratio,
            })
        }
        MoveKind::Prune => {
            let nogs = tree.prunable_indices();
            if nogs.is_empty() {
                return None;
            }
            let node = pick(&nogs, rng);
            let rule = tree.rule(node)?;
            let candidate = tree.pruned(node);
            let log_q_ratio = (probs.grow / candidate.num_leaves() as f64 * space.probs[rule.feature]).ln()
                - (probs.prune / nogs.len() as f64).ln();
            Some(Proposal {
                kind,
                candidate,
                log_q_ratio,
            })
        }
        MoveKind::Change => {
            let branches = tree.branch_indices();
            if branches.is_empty() {
                return None;
            }
            let node = pick(&branches, rng);
            let old = tree.rule(node)?;
            let rule = space.draw_rule(rng)?;
            Some(Proposal {
                kind,
                candidate: tree.with_rule(node, rule),
                log_q_ratio: space.probs[old.feature].ln() - space.probs[rule.feature].ln(),
            })
        }
        MoveKind::Swap => {
            let pairs = tree.swappable_pairs();
            if pairs.is_empty() {
                return None;
            }
            let (parent, child) = pick(&pairs, rng);
            Some(Proposal {
                kind,
                candidate: tree.with_swapped_rules(parent, child),
                log_q_ratio: 0.0,
            })
        }
    }
}

/// Log prior of a tree structure: depth-dependent split probabilities times
/// the split-variable mass of every branch. Cuts are uniform on `[0, 1]`.
pub fn log_tree_prior(tree: &SoftTree, split_probs: &[f64], priors: &Priors) -> f64 {
    let depths = tree.depths();
    tree.nodes()
        .iter()
        .zip(depths)
        .map(|(node, d)| {
            let p = priors.split_prob(d);
            match node {
                Node::Branch { rule, .. } => p.ln() + split_probs[rule.feature].ln(),
                Node::Leaf { .. } => (1.0 - p).ln(),
            }
        })
        .sum()
}

/// Metropolis-Hastings decision for a log acceptance ratio. Always consumes
/// exactly one uniform; NaN ratios reject.
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    !log_ratio.is_nan() && (log_ratio >= 0.0 || u.ln() < log_ratio)
}

/// One structural MH update. `evaluate` returns the log likelihood of a
/// candidate (or `None` if it cannot be evaluated) plus any state the caller
/// wants to keep for the accepted tree. Returns the accepted candidate, or
/// `None` when the current tree stays.
pub fn structure_step<R, T, F>(
    tree: &SoftTree,
    current_loglik: f64,
    space: SplitSpace<'_>,
    priors: &Priors,
    probs: &MoveProbs,
    mut evaluate: F,
    rng: &mut R,
) -> Option<(SoftTree, T)>
where
    R: Rng + ?Sized,
    F: FnMut(&SoftTree) -> Option<(f64, T)>,
{
    let proposal = propose_move(tree, space, probs, rng);
    let evaluated = proposal.and_then(|p| {
        let (loglik, payload) = evaluate(&p.candidate)?;
        let log_ratio = loglik - current_loglik + log_tree_prior(&p.candidate, space.probs, priors)
            - log_tree_prior(tree, space.probs, priors)
            + p.log_q_ratio;
        Some((p.candidate, payload, log_ratio))
    });
    let log_ratio = evaluated.as_ref().map_or(f64::NAN, |e| e.2);
    if mh_accept(log_ratio, rng) {
        evaluated.map(|(candidate, payload, _)| (candidate, payload))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_rng;
    use crate::soft_tree::tests::stump;

    fn priors() -> Priors {
        Priors {
            alpha: 0.95,
            beta: 2.0,
            sigma_mu: 0.1,
            nu: 3.0,
            lambda: 0.1,
            dirichlet_a: 1.0,
            softness_mean: 0.1,
        }
    }

    const ONE: SplitSpace<'static> = SplitSpace {
        probs: &[1.0],
        splittable: &[true],
    };

    fn only(kind: MoveKind) -> MoveProbs {
        let mut p = MoveProbs {
            grow: 0.0,
            prune: 0.0,
            change: 0.0,
            swap: 0.0,
        };
        match kind {
            MoveKind::Grow => p.grow = 1.0,
            MoveKind::Prune => p.prune = 1.0,
            MoveKind::Change => p.change = 1.0,
            MoveKind::Swap => p.swap = 1.0,
        }
        p
    }

    #[test]
    fn prune_on_root_is_skipped() {
        let tree = SoftTree::leaf(0.0, 0.1);
        let mut rng = seeded_rng(1);
        assert!(propose_move(&tree, ONE, &only(MoveKind::Prune), &mut rng).is_none());
        assert!(propose_move(&tree, ONE, &only(MoveKind::Change), &mut rng).is_none());
        assert!(propose_move(&tree, ONE, &only(MoveKind::Swap), &mut rng).is_none());
    }

    #[test]
    fn grow_then_prune_restores_topology() {
        let tree = SoftTree::leaf(0.0, 0.1);
        let mut rng = seeded_rng(2);
        let probs = MoveProbs::default();
        let draw = |t: &SoftTree, kind: MoveKind, rng: &mut rand_chacha::ChaCha8Rng| loop {
            if let Some(p) = propose_move(t, ONE, &probs, rng).filter(|p| p.kind == kind) {
                break p;
            }
        };
        let grown = draw(&tree, MoveKind::Grow, &mut rng);
        assert_eq!(grown.candidate.num_leaves(), 2);
        // Root-only: one leaf to pick, one nog to undo, and P_grow = P_prune.
        assert!(grown.log_q_ratio.abs() < 1e-15);
        let back = draw(&grown.candidate, MoveKind::Prune, &mut rng);
        assert_eq!(back.candidate.nodes(), tree.nodes());
        assert!((back.log_q_ratio + grown.log_q_ratio).abs() < 1e-15);
    }

    #[test]
    fn grow_on_constant_feature_is_skipped() {
        let space = SplitSpace {
            probs: &[0.0, 1.0],
            splittable: &[true, false],
        };
        let tree = SoftTree::leaf(0.0, 0.1);
        let mut rng = seeded_rng(3);
        for _ in 0..20 {
            assert!(propose_move(&tree, space, &only(MoveKind::Grow), &mut rng).is_none());
        }
    }

    #[test]
    fn tree_prior_values() {
        let p = priors();
        let root = SoftTree::leaf(0.0, 0.1);
        assert!((log_tree_prior(&root, &[1.0], &p) - 0.05f64.ln()).abs() < 1e-15);
        let s = stump(0, 0.5, 0.1, 0.0, 0.0);
        let want = 0.95f64.ln() + 2.0 * (1.0 - 0.95 / 4.0f64).ln() + 0.5f64.ln();
        assert!((log_tree_prior(&s, &[0.5, 0.5], &p) - want).abs() < 1e-15);
    }

    #[test]
    fn identical_candidate_always_accepted() {
        let mut rng = seeded_rng(4);
        assert!((0..1000).all(|_| mh_accept(0.0, &mut rng)));
        assert!((0..1000).all(|_| !mh_accept(f64::NEG_INFINITY, &mut rng)));
        assert!(!mh_accept(f64::NAN, &mut rng));
    }

    #[test]
    fn acceptance_frequency_matches_probability() {
        // Frozen two-state proposal with ratio 0.3.
        let mut rng = seeded_rng(5);
        let trials = 10_000;
        let p: f64 = 0.3;
        let hits = (0..trials).filter(|_| mh_accept(p.ln(), &mut rng)).count() as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits / trials as f64 - p).abs() < 3.0 * se);
    }

    #[test]
    fn swap_and_change_keep_shape() {
        let mut rng = seeded_rng(6);
        let mut tree = SoftTree::leaf(0.0, 0.1);
        for _ in 0..4 {
            tree = propose_move(&tree, ONE, &only(MoveKind::Grow), &mut rng)
                .unwrap()
                .candidate;
        }
        for kind in [MoveKind::Change, MoveKind::Swap] {
            let p = propose_move(&tree, ONE, &only(kind), &mut rng).unwrap();
            assert_eq!(p.candidate.num_leaves(), tree.num_leaves());
            assert_eq!(p.candidate.depths(), tree.depths());
            assert_eq!(p.log_q_ratio, 0.0);
        }
    }

    #[test]
    fn validation() {
        assert!(MoveProbs::default().validate().is_ok());
        let bad = MoveProbs {
            grow: 0.5,
            prune: 0.5,
            change: 0.5,
            swap: 0.0,
        };
        assert!(bad.validate().is_err());
        assert!(only(MoveKind::Grow).validate().is_err());
        assert!(only(MoveKind::Change).validate().is_ok());
    }

    /// Chi-square statistic and degrees of freedom comparing the branch
    /// fraction at each depth with `α/(1+d)^β`.
    pub(crate) fn depth_chi_square(trees: &[SoftTree], priors: &Priors) -> (f64, usize) {
        let mut nodes = Vec::<usize>::new();
        let mut branches = Vec::<usize>::new();
        for tree in trees {
            for (node, d) in tree.nodes().iter().zip(tree.depths()) {
                if nodes.len() <= d {
                    nodes.resize(d + 1, 0);
                    branches.resize(d + 1, 0);
                }
                nodes[d] += 1;
                if matches!(node, Node::Branch { .. }) {
                    branches[d] += 1;
                }
            }
        }
        let mut stat = 0.0;
        let mut df = 0;
        for d in 0..nodes.len() {
            let p = priors.split_prob(d);
            let n = nodes[d] as f64;
            // Skip depths too sparse for the normal approximation.
            if n * p < 5.0 || n * (1.0 - p) < 5.0 {
                continue;
            }
            stat += (branches[d] as f64 - n * p).powi(2) / (n * p * (1.0 - p));
            df += 1;
        }
        (stat, df)
    }

    #[test]
    fn constant_likelihood_recovers_tree_prior() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let p = priors();
        let space = SplitSpace {
            probs: &[0.3, 0.7],
            splittable: &[true, true],
        };
        let mut rng = seeded_rng(11);
        let mut tree = SoftTree::leaf(0.0, 0.1);
        let mut kept = Vec::new();
        for it in 0..40_000 {
            if let Some((t, ())) = structure_step(
                &tree,
                0.0,
                space,
                &p,
                &MoveProbs::default(),
                |_| Some((0.0, ())),
                &mut rng,
            ) {
                tree = t;
            }
            if it % 20 == 19 {
                kept.push(tree.clone());
            }
        }
        let (stat, df) = depth_chi_square(&kept, &p);
        let pval = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
        assert!(df >= 2 && pval > 0.01, "chi2 {stat} on {df} df, p = {pval}");
    }
}
