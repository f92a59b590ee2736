//! CART classification trees grown on Gini impurity.
//!
//! Every feature keeps its rows presorted; a node owns the same contiguous
//! range in every feature's order, and a split stably partitions each range.
//! Split search at a node is therefore one linear sweep per candidate feature.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::metrics::{impurity_from_score, split_score};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Features examined per split; `None` means `ceil(sqrt(p))`.
    pub n_features_per_split: Option<usize>,
    /// Minimum (weighted) rows per leaf.
    pub min_leaf: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            n_features_per_split: None,
            min_leaf: 1,
            max_depth: None,
        }
    }
}

impl TreeConfig {
    pub fn features_per_split(&self, n_features: usize) -> usize {
        self.n_features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Weighted class counts of the training rows reaching the leaf.
    Leaf { counts: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_classes: usize,
}

/// The best split found for a set of rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestSplit {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted child Gini impurity, see [`split_impurity`](super::split_impurity).
    pub impurity: f64,
}

fn majority(counts: &[u32]) -> usize {
    // max_by_key keeps the last maximum; scan manually so ties go to the
    // smallest class.
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl DecisionTree {
    #[cfg(test)]
    pub(crate) fn from_nodes(nodes: Vec<Node>, n_classes: usize) -> Self {
        DecisionTree { nodes, n_classes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Leaf class counts for a feature row.
    pub fn leaf_counts(&self, row: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Majority class index of the leaf reached; ties go to the smallest index.
    pub fn predict_index(&self, row: &[f64]) -> usize {
        majority(self.leaf_counts(row))
    }
}

/// Rows of the training set sorted by each feature (ties by row index).
///
/// Each entry packs the row's dense value rank in the high 32 bits and the
/// row index in the low 32 bits, so a sweep compares neighbouring values
/// without reading the column.
#[derive(Debug, Clone)]
pub struct Presorted {
    order: Vec<Vec<u64>>,
}

#[inline]
fn entry_row(e: u64) -> usize {
    (e & u32::MAX as u64) as usize
}

#[inline]
fn entry_rank(e: u64) -> u32 {
    (e >> 32) as u32
}

impl Presorted {
    pub fn new(data: &Dataset) -> Presorted {
        let n = data.n_rows() as u32;
        let order = (0..data.n_features())
            .map(|f| {
                let col = data.column(f);
                let mut idx: Vec<u32> = (0..n).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                let mut rank = 0u64;
                let mut prev = idx.first().map(|&r| col[r as usize]);
                idx.iter()
                    .map(|&r| {
                        let v = col[r as usize];
                        if prev.is_some_and(|p| v > p) {
                            rank += 1;
                        }
                        prev = Some(v);
                        rank << 32 | r as u64
                    })
                    .collect()
            })
            .collect();
        Presorted { order }
    }
}

/// Class index and bootstrap weight of a row, read together in the sweep.
#[derive(Debug, Clone, Copy)]
struct RowInfo {
    class: u32,
    weight: u32,
}

struct Grower<'a, R: Rng> {
    data: &'a Dataset,
    rows: Vec<RowInfo>,
    mtry: usize,
    config: TreeConfig,
    rng: &'a mut R,
    /// Two copies of the per-feature row orders. A node at depth `d` reads
    /// its ranges from copy `d % 2` and partitions into the other, which
    /// only ever overwrites ranges of finished nodes. A feature that is
    /// constant on a node is no longer partitioned below it, so its ranges
    /// there are stale and must not be read.
    sorted: [Vec<Vec<u64>>; 2],
    /// Which copy the current node reads.
    parity: usize,
    go_left: Vec<bool>,
    sweep: Sweep,
    nodes: Vec<Node>,
}

/// A split candidate together with the class counts it sends left.
struct Candidate {
    split: BestSplit,
    left: Vec<u32>,
}

/// Count buffers reused across the features scanned at one node.
struct Sweep {
    left: Vec<u32>,
    right: Vec<u32>,
    best_left: Vec<u32>,
}

impl Sweep {
    fn new(n_classes: usize) -> Self {
        Sweep {
            left: vec![0; n_classes],
            right: vec![0; n_classes],
            best_left: vec![0; n_classes],
        }
    }
}

struct Pending {
    id: usize,
    lo: usize,
    hi: usize,
    depth: usize,
    counts: Vec<u32>,
    /// Features still varying somewhere in the node's parent.
    active: Vec<u32>,
}

impl<R: Rng> Grower<'_, R> {
    /// Sweeps one feature's sorted range for its best threshold, leaving
    /// the class counts it sends left in `sweep.best_left`.
    ///
    /// The sweep keeps `Σ_c L_c²` and `Σ_c R_c²` up to date in O(1) per row.
    /// Candidates are compared by their exact split score, and the float
    /// impurity, which is monotone in that score, is only computed for a
    /// candidate that beats the best so far.
    fn scan_feature(&self, f: usize, lo: usize, hi: usize, total: &[u32], sweep: &mut Sweep) -> Option<BestSplit> {
        let col = self.data.column(f);
        let order = &self.sorted[self.parity][f][lo..hi];
        let min_leaf = self.config.min_leaf as u64;
        let n_total: u64 = total.iter().map(|&c| c as u64).sum();
        let Sweep { left, right, best_left } = sweep;
        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(total);
        let mut sq_left = 0u64;
        let mut sq_right: u64 = total.iter().map(|&c| c as u64 * c as u64).sum();
        let mut n_left = 0u64;
        let mut best: Option<BestSplit> = None;
        let mut best_score = (0u128, 1u128);
        for pair in order.windows(2) {
            let (e, e_next) = (pair[0], pair[1]);
            let RowInfo { class, weight } = self.rows[entry_row(e)];
            let (c, w) = (class as usize, weight as u64);
            sq_left += (2 * left[c] as u64 + w) * w;
            sq_right -= (2 * right[c] as u64 - w) * w;
            left[c] += weight;
            right[c] -= weight;
            n_left += w;
            if entry_rank(e_next) == entry_rank(e) {
                continue;
            }
            let n_right = n_total - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let (num, den) = split_score(n_left, sq_left, n_right, sq_right);
            if best.is_some() && num * best_score.1 <= best_score.0 * den {
                continue;
            }
            let imp = impurity_from_score(num, den, n_total);
            if best.is_none_or(|b| imp < b.impurity) {
                best_score = (num, den);
                let here = col[entry_row(e)];
                let next = col[entry_row(e_next)];
                let mut threshold = here + (next - here) / 2.0;
                if threshold >= next {
                    threshold = here;
                }
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    impurity: imp,
                });
                best_left.copy_from_slice(left);
            }
        }
        best
    }

    fn is_constant(&self, f: usize, lo: usize, hi: usize) -> bool {
        let order = &self.sorted[self.parity][f];
        entry_rank(order[lo]) == entry_rank(order[hi - 1])
    }

    /// Best split over `mtry` features drawn at random from `varying`.
    fn find_split(&mut self, varying: &mut [u32], lo: usize, hi: usize, total: &[u32]) -> Option<Candidate> {
        let take = self.mtry.min(varying.len());
        let (chosen, _) = varying.partial_shuffle(self.rng, take);
        // Empty vectors do not allocate, so the swap is free.
        let mut sweep = std::mem::replace(&mut self.sweep, Sweep::new(0));
        let mut best: Option<Candidate> = None;
        for &f in chosen.iter() {
            if let Some(s) = self.scan_feature(f as usize, lo, hi, total, &mut sweep) {
                match &mut best {
                    Some(b) if s.impurity >= b.split.impurity => {}
                    Some(b) => {
                        b.split = s;
                        b.left.copy_from_slice(&sweep.best_left);
                    }
                    None => {
                        best = Some(Candidate {
                            split: s,
                            left: sweep.best_left.clone(),
                        })
                    }
                }
            }
        }
        self.sweep = sweep;
        best
    }

    /// Records which side of `split` every row of the node goes to and
    /// returns the number of entries sent left.
    fn mark(&mut self, lo: usize, hi: usize, split: &BestSplit) -> usize {
        let col = self.data.column(split.feature);
        let mut n_left = 0;
        for &e in &self.sorted[self.parity][split.feature][lo..hi] {
            let left = col[entry_row(e)] <= split.threshold;
            self.go_left[entry_row(e)] = left;
            n_left += left as usize;
        }
        n_left
    }

    /// Stable partition of the `varying` features' ranges into the other
    /// copy, following the sides recorded by [`Self::mark`].
    fn partition(&mut self, varying: &[u32], lo: usize, hi: usize, n_left: usize) {
        let [even, odd] = &mut self.sorted;
        let (src, dst) = if self.parity == 0 { (&*even, odd) } else { (&*odd, even) };
        for &f in varying {
            let from = &src[f as usize][lo..hi];
            let to = &mut dst[f as usize][lo..hi];
            let (mut l, mut r) = (0usize, n_left);
            for &e in from {
                let left = self.go_left[entry_row(e)];
                // A select rather than a branch: the side is unpredictable.
                to[if left { l } else { r }] = e;
                l += left as usize;
                r += !left as usize;
            }
        }
    }

    /// Whether a node with these counts, entries and depth becomes a leaf.
    fn is_terminal(&self, counts: &[u32], len: usize, depth: usize) -> bool {
        let n_weight: u32 = counts.iter().sum();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        let too_small = len < 2 || (n_weight as usize) < 2 * self.config.min_leaf;
        pure || depth_capped || too_small
    }

    fn grow(&mut self, counts: Vec<u32>) {
        let n = self.sorted[0].first().map_or(0, Vec::len);
        self.nodes.push(Node::Leaf { counts: vec![] });
        let active: Vec<u32> = (0..self.sorted[0].len() as u32).collect();
        if self.is_terminal(&counts, n, 0) {
            self.nodes[0] = Node::Leaf { counts };
            return;
        }
        // Only nodes that will attempt a split are stacked.
        let mut stack = vec![Pending {
            id: 0,
            lo: 0,
            hi: n,
            depth: 0,
            counts,
            active,
        }];
        while let Some(Pending {
            id,
            lo,
            hi,
            depth,
            counts,
            mut active,
        }) = stack.pop()
        {
            self.parity = depth % 2;
            active.retain(|&f| !self.is_constant(f as usize, lo, hi));
            // Sorting restores a canonical order before the draw, so the
            // candidates depend only on the set of varying features.
            active.sort_unstable();
            let Some(Candidate { split: s, left: left_counts }) = self.find_split(&mut active, lo, hi, &counts) else {
                self.nodes[id] = Node::Leaf { counts };
                continue;
            };
            let n_left = self.mark(lo, hi, &s);
            let right_counts: Vec<u32> = counts.iter().zip(&left_counts).map(|(t, l)| t - l).collect();
            let left_open = !self.is_terminal(&left_counts, n_left, depth + 1);
            let right_open = !self.is_terminal(&right_counts, hi - lo - n_left, depth + 1);
            if left_open || right_open {
                self.partition(&active, lo, hi, n_left);
            }
            let left = self.nodes.len();
            let right = left + 1;
            self.nodes[id] = Node::Split {
                feature: s.feature,
                threshold: s.threshold,
                left,
                right,
            };
            self.nodes.push(Node::Leaf { counts: vec![] });
            self.nodes.push(Node::Leaf { counts: vec![] });
            let children = [
                (right, lo + n_left, hi, right_counts, right_open),
                (left, lo, lo + n_left, left_counts, left_open),
            ];
            for (child, clo, chi, ccounts, open) in children {
                if open {
                    stack.push(Pending {
                        id: child,
                        lo: clo,
                        hi: chi,
                        depth: depth + 1,
                        counts: ccounts,
                        active: active.clone(),
                    });
                } else {
                    self.nodes[child] = Node::Leaf { counts: ccounts };
                }
            }
        }
    }
}

fn row_info(classes: &[u32], weights: &[u32]) -> Vec<RowInfo> {
    classes
        .iter()
        .zip(weights)
        .map(|(&class, &weight)| RowInfo { class, weight })
        .collect()
}

fn class_totals(rows: &[RowInfo], n_classes: usize) -> Vec<u32> {
    let mut c = vec![0u32; n_classes];
    for r in rows {
        c[r.class as usize] += r.weight;
    }
    c
}

/// Grows one tree on the rows with non-zero `weights`.
///
/// `classes[i]` is the class index (`< n_classes`) of row `i`; `weights` are
/// bootstrap multiplicities (all ones for a plain fit). `presorted` must come
/// from the same dataset.
pub fn train_tree_weighted<R: Rng>(
    data: &Dataset,
    presorted: &Presorted,
    classes: &[u32],
    n_classes: usize,
    weights: &[u32],
    config: &TreeConfig,
    rng: &mut R,
) -> DecisionTree {
    let p = data.n_features();
    let sorted: Vec<Vec<u64>> = presorted
        .order
        .iter()
        .map(|o| o.iter().copied().filter(|&e| weights[entry_row(e)] > 0).collect())
        .collect();
    let spare = sorted.clone();
    let rows = row_info(classes, weights);
    let counts = class_totals(&rows, n_classes);
    let mut grower = Grower {
        data,
        rows,
        mtry: config.features_per_split(p),
        config: *config,
        rng,
        sorted: [sorted, spare],
        parity: 0,
        go_left: vec![false; data.n_rows()],
        sweep: Sweep::new(n_classes),
        nodes: Vec::new(),
    };
    if grower.sorted[0].first().is_some_and(|s| !s.is_empty()) {
        grower.grow(counts);
    } else {
        grower.nodes.push(Node::Leaf {
            counts: vec![0; n_classes],
        });
    }
    DecisionTree {
        nodes: grower.nodes,
        n_classes,
    }
}

/// Grows one tree on all rows of `data` with unit weights. Class indices are
/// positions in `data.classes()`.
pub fn train_tree<R: Rng>(data: &Dataset, config: &TreeConfig, rng: &mut R) -> DecisionTree {
    let (classes, n_classes) = data.class_indices();
    let weights = vec![1u32; data.n_rows()];
    train_tree_weighted(data, &Presorted::new(data), &classes, n_classes, &weights, config, rng)
}

/// Exhaustive best split over the given features for unit-weight rows,
/// scanning midpoints of sorted distinct values.
pub fn best_split(data: &Dataset, features: &[usize], min_leaf: usize) -> Option<BestSplit> {
    let (classes, n_classes) = data.class_indices();
    let weights = vec![1u32; data.n_rows()];
    let presorted = Presorted::new(data);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let rows = row_info(&classes, &weights);
    let total = class_totals(&rows, n_classes);
    let grower = Grower {
        data,
        rows,
        mtry: features.len(),
        config: TreeConfig {
            n_features_per_split: None,
            min_leaf,
            max_depth: None,
        },
        rng: &mut rng,
        sorted: [presorted.order, Vec::new()],
        parity: 0,
        go_left: Vec::new(),
        sweep: Sweep::new(n_classes),
        nodes: Vec::new(),
    };
    let n = data.n_rows();
    let mut best: Option<BestSplit> = None;
    for &f in features {
        if n < 2 || grower.is_constant(f, 0, n) {
            continue;
        }
        if let Some(s) = grower.scan_feature(f, 0, n, &total, &mut Sweep::new(n_classes)) {
            if best.is_none_or(|b| s.impurity < b.impurity) {
                best = Some(s);
            }
        }
    }
    best
}
