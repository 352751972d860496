//! Leaf-wise histogram gradient boosting.
//!
//! Features are quantile-binned once per fit (at most `max_bins` bins per
//! feature, zero always in a bin of its own). Each feature's zero bin is its
//! "default" bin: only rows with a non-default bin are stored, and a leaf's
//! default-bin statistics are recovered as leaf totals minus the stored bins,
//! so histogram construction costs O(nnz) for sparse text blocks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, Task};
use crate::error::{Error, Result};
use crate::tabular::{Csr, FeatureMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtSpec {
    pub num_leaves: usize,
    pub min_child_samples: usize,
    pub min_child_weight: f64,
    pub colsample_bytree: f64,
    pub subsample: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub learning_rate: f64,
    pub n_rounds: usize,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for GbdtSpec {
    fn default() -> Self {
        GbdtSpec {
            num_leaves: 31,
            min_child_samples: 20,
            min_child_weight: 1e-3,
            colsample_bytree: 1.0,
            subsample: 1.0,
            reg_alpha: 0.0,
            reg_lambda: 0.0,
            learning_rate: 0.1,
            n_rounds: 100,
            max_bins: 255,
            seed: 0,
        }
    }
}

impl GbdtSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gbdt: {m}")));
        if self.num_leaves < 2 {
            return bad("num_leaves must be at least 2");
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad("colsample_bytree must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.reg_alpha >= 0.0 && self.reg_lambda >= 0.0 && self.min_child_weight >= 0.0) {
            return bad("regularization terms must be non-negative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(2..=65_535).contains(&self.max_bins) {
            return bad("max_bins must lie in [2, 65535]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `value <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_of(&self, mut goes_left: impl FnMut(usize, f64) -> bool) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if goes_left(*feature, *threshold) { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Weighted mean training loss before boosting and after each round.
    pub loss_history: Vec<f64>,
}

impl GbdtModel {
    pub fn predict_margin(&self, x: &Csr) -> Vec<f64> {
        (0..x.n_rows)
            .map(|i| {
                let a = x.indptr[i];
                let b = x.indptr[i + 1];
                let idx = &x.indices[a..b];
                let vals = &x.values[a..b];
                let value_of = |f: usize| idx.binary_search(&f).map_or(0.0, |k| vals[k]);
                self.base_score
                    + self
                        .trees
                        .iter()
                        .map(|t| t.leaf_of(|f, thr| value_of(f) <= thr))
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Upper bin edges for one feature; the last edge is +∞.
#[derive(Clone, Debug)]
struct BinEdges {
    upper: Vec<f64>,
    default_bin: usize,
}

impl BinEdges {
    fn bin(&self, v: f64) -> usize {
        self.upper.partition_point(|&u| u < v)
    }

    /// `nonzeros` must be sorted ascending; `zeros` is the count of zero rows.
    fn build(nonzeros: &[f64], zeros: usize, max_bins: usize) -> BinEdges {
        let mut distinct: Vec<(f64, usize)> = Vec::new();
        let push = |v: f64, c: usize, d: &mut Vec<(f64, usize)>| match d.last_mut() {
            Some(last) if last.0 == v => last.1 += c,
            _ => d.push((v, c)),
        };
        let mut zero_done = zeros == 0;
        for &v in nonzeros {
            if !zero_done && v > 0.0 {
                push(0.0, zeros, &mut distinct);
                zero_done = true;
            }
            push(v, 1, &mut distinct);
        }
        if !zero_done {
            push(0.0, zeros, &mut distinct);
        }

        let mut upper = Vec::new();
        if distinct.len() <= max_bins {
            for w in distinct.windows(2) {
                upper.push(midpoint(w[0].0, w[1].0));
            }
        } else {
            // Greedy quantile cuts; zero is always isolated, so reserve two bins.
            let total: usize = distinct.iter().map(|d| d.1).sum();
            let quantile_bins = max_bins.saturating_sub(2).max(1);
            let target = total as f64 / quantile_bins as f64;
            let mut acc = 0usize;
            let mut cuts = 1usize;
            for k in 0..distinct.len() - 1 {
                acc += distinct[k].1;
                let (v, next) = (distinct[k].0, distinct[k + 1].0);
                let force = v == 0.0 || next == 0.0;
                let quantile = acc as f64 >= target * cuts as f64;
                if force || (quantile && upper.len() + 3 < max_bins) {
                    upper.push(midpoint(v, next));
                    if quantile {
                        cuts += 1;
                    }
                }
            }
        }
        upper.push(f64::INFINITY);
        let mut edges = BinEdges {
            upper,
            default_bin: 0,
        };
        edges.default_bin = edges.bin(0.0);
        edges
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // Guard against rounding up onto `b` for adjacent floats.
    if m >= b {
        a
    } else {
        m
    }
}

/// Binned training data: per row, the (feature, bin) pairs whose bin is not
/// the feature's default bin, sorted by feature.
struct BinnedData {
    edges: Vec<BinEdges>,
    offsets: Vec<usize>,
    /// Feature owning each global bin index.
    bin_feature: Vec<u32>,
    total_bins: usize,
    row_ptr: Vec<usize>,
    feat: Vec<u32>,
    bin: Vec<u16>,
}

impl BinnedData {
    fn build(csr: &Csr, max_bins: usize) -> BinnedData {
        let csc = csr.to_csc();
        let n = csr.n_rows;
        let mut edges = Vec::with_capacity(csc.n_cols);
        let mut per_row: Vec<Vec<(u32, u16)>> = vec![Vec::new(); n];
        for j in 0..csc.n_cols {
            let mut nz: Vec<f64> = csc.col(j).map(|(_, v)| v).filter(|&v| v != 0.0).collect();
            let zeros = n - nz.len();
            nz.sort_by(f64::total_cmp);
            let e = BinEdges::build(&nz, zeros, max_bins);
            for (i, v) in csc.col(j) {
                let b = e.bin(v);
                if b != e.default_bin {
                    per_row[i].push((j as u32, b as u16));
                }
            }
            edges.push(e);
        }
        let mut offsets = Vec::with_capacity(edges.len() + 1);
        let mut bin_feature = Vec::new();
        let mut acc = 0;
        for (j, e) in edges.iter().enumerate() {
            offsets.push(acc);
            acc += e.upper.len();
            bin_feature.resize(acc, j as u32);
        }
        offsets.push(acc);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut feat = Vec::new();
        let mut bin = Vec::new();
        row_ptr.push(0);
        for r in per_row {
            for (f, b) in r {
                feat.push(f);
                bin.push(b);
            }
            row_ptr.push(feat.len());
        }
        BinnedData {
            edges,
            offsets,
            bin_feature,
            total_bins: acc,
            row_ptr,
            feat,
            bin,
        }
    }

    fn bin_of(&self, row: usize, feature: usize) -> usize {
        let a = self.row_ptr[row];
        let b = self.row_ptr[row + 1];
        match self.feat[a..b].binary_search(&(feature as u32)) {
            Ok(k) => self.bin[a + k] as usize,
            Err(_) => self.edges[feature].default_bin,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn plus(self, o: Stats) -> Stats {
        Stats {
            g: self.g + o.g,
            h: self.h + o.h,
            n: self.n + o.n,
        }
    }

    fn minus(self, o: Stats) -> Stats {
        Stats {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: usize,
    left: Stats,
}

struct Grower<'a> {
    data: &'a BinnedData,
    spec: &'a GbdtSpec,
    grad: &'a [f64],
    hess: &'a [f64],
    feature_on: Vec<bool>,
    scratch: &'a mut Scratch,
}

impl Grower<'_> {
    fn thresholded(&self, g: f64) -> f64 {
        let a = self.spec.reg_alpha;
        if g > a {
            g - a
        } else if g < -a {
            g + a
        } else {
            0.0
        }
    }

    fn score(&self, s: Stats) -> f64 {
        let t = self.thresholded(s.g);
        let denom = s.h + self.spec.reg_lambda;
        if denom <= 0.0 {
            0.0
        } else {
            t * t / denom
        }
    }

    fn leaf_value(&self, s: Stats) -> f64 {
        let denom = s.h + self.spec.reg_lambda;
        if denom <= 0.0 {
            0.0
        } else {
            -self.thresholded(s.g) / denom * self.spec.learning_rate
        }
    }

    fn totals(&self, rows: &[u32]) -> Stats {
        let mut s = Stats::default();
        for &r in rows {
            s.add(self.grad[r as usize], self.hess[r as usize]);
        }
        s
    }

    /// Whether a leaf over `rows` keeps a dense histogram: true when its
    /// rows carry enough stored entries to touch a large share of all bins.
    fn wants_dense(&self, rows: &[u32]) -> bool {
        let data = self.data;
        let nnz: usize = rows.iter().map(|&r| data.row_ptr[r as usize + 1] - data.row_ptr[r as usize]).sum();
        nnz * 8 > data.total_bins
    }

    /// Adds the active-feature entries of `rows` into `hist`, which must
    /// start zeroed.
    fn accumulate_dense(&self, rows: &[u32], hist: &mut [Stats]) {
        let data = self.data;
        for &r in rows {
            let r = r as usize;
            let (g, h) = (self.grad[r], self.hess[r]);
            for k in data.row_ptr[r]..data.row_ptr[r + 1] {
                let f = data.feat[k] as usize;
                if self.feature_on[f] {
                    hist[data.offsets[f] + data.bin[k] as usize].add(g, h);
                }
            }
        }
    }

    /// Adds the active-feature entries of `rows` into the shared scratch
    /// histogram, recording each bin touched for the first time.
    fn accumulate_sparse(&mut self, rows: &[u32]) {
        let data = self.data;
        self.scratch.touched.clear();
        for &r in rows {
            let r = r as usize;
            let (g, h) = (self.grad[r], self.hess[r]);
            for k in data.row_ptr[r]..data.row_ptr[r + 1] {
                let f = data.feat[k] as usize;
                if !self.feature_on[f] {
                    continue;
                }
                let idx = data.offsets[f] + data.bin[k] as usize;
                let s = &mut self.scratch.hist[idx];
                if s.n == 0 {
                    self.scratch.touched.push(idx as u32);
                }
                s.add(g, h);
            }
        }
    }

    /// Keeps a leaf's dense histogram only while the leaf can still split.
    fn retain(&mut self, split: Option<SplitCandidate>, hist: Vec<Stats>) -> Option<Vec<Stats>> {
        if split.is_some() {
            Some(hist)
        } else {
            self.scratch.pool.push(hist);
            None
        }
    }

    fn zeroed_buffer(&mut self) -> Vec<Stats> {
        match self.scratch.pool.pop() {
            Some(mut b) => {
                b.fill(Stats::default());
                b
            }
            None => vec![Stats::default(); self.data.total_bins],
        }
    }

    /// Offers the split `left | total - left` at `bin` of `feature` to `best`.
    fn consider(&self, best: &mut Option<SplitCandidate>, total: Stats, parent: f64, left: Stats, feature: usize, bin: usize) {
        let right = total.minus(left);
        if left.n < self.spec.min_child_samples || right.n < self.spec.min_child_samples {
            return;
        }
        if left.h < self.spec.min_child_weight || right.h < self.spec.min_child_weight {
            return;
        }
        let gain = self.score(left) + self.score(right) - parent;
        if gain > best.map_or(0.0, |c| c.gain) {
            *best = Some(SplitCandidate {
                gain,
                feature,
                bin,
                left,
            });
        }
    }

    /// Best split from a dense histogram of a leaf with totals `total`. The
    /// default (zero) bin of each feature is never stored; it is derived as
    /// the leaf total minus the stored bins. Empty bins are skipped.
    fn scan_dense(&self, hist: &[Stats], total: Stats) -> Option<SplitCandidate> {
        if total.n < 2 * self.spec.min_child_samples.max(1) {
            return None;
        }
        let data = self.data;
        let parent = self.score(total);
        let min_left = self.spec.min_child_samples;
        let max_left = total.n - self.spec.min_child_samples.max(1);
        let mut best = None;
        for f in 0..data.edges.len() {
            if !self.feature_on[f] {
                continue;
            }
            let (lo, hi) = (data.offsets[f], data.offsets[f + 1]);
            let bins = &hist[lo..hi];
            let default_bin = data.edges[f].default_bin;
            let stored = bins.iter().fold(Stats::default(), |a, &b| a.plus(b));
            let default = total.minus(stored);
            let mut left = Stats::default();
            for (b, &s) in bins.iter().enumerate() {
                let s = if b == default_bin { default } else { s };
                if s.n == 0 {
                    continue;
                }
                left = left.plus(s);
                if left.n < min_left {
                    continue;
                }
                if left.n > max_left {
                    break;
                }
                self.consider(&mut best, total, parent, left, f, b);
            }
        }
        best
    }

    /// Best split from the scratch histogram filled by `accumulate_sparse`.
    /// Visits the same bins in the same order as `scan_dense`, then clears
    /// the scratch histogram.
    fn scan_sparse(&mut self, total: Stats) -> Option<SplitCandidate> {
        let mut best = None;
        if total.n >= 2 * self.spec.min_child_samples.max(1) {
            let data = self.data;
            let parent = self.score(total);
            self.scratch.touched.sort_unstable();
            let touched = &self.scratch.touched;
            let hist = &self.scratch.hist;
            let mut k = 0;
            while k < touched.len() {
                let f = data.bin_feature[touched[k] as usize] as usize;
                let lo = data.offsets[f];
                let mut end = k;
                let mut stored = Stats::default();
                while end < touched.len() && data.bin_feature[touched[end] as usize] as usize == f {
                    stored = stored.plus(hist[touched[end] as usize]);
                    end += 1;
                }
                let default_idx = lo + data.edges[f].default_bin;
                let default = total.minus(stored);
                let mut pending_default = default.n > 0;
                let mut left = Stats::default();
                let mut j = k;
                loop {
                    let (idx, s) = if pending_default && (j == end || touched[j] as usize > default_idx) {
                        pending_default = false;
                        (default_idx, default)
                    } else if j < end {
                        j += 1;
                        (touched[j - 1] as usize, hist[touched[j - 1] as usize])
                    } else {
                        break;
                    };
                    left = left.plus(s);
                    if left.n == total.n {
                        break;
                    }
                    self.consider(&mut best, total, parent, left, f, idx - lo);
                }
                k = end;
            }
        }
        for &idx in &self.scratch.touched {
            self.scratch.hist[idx as usize] = Stats::default();
        }
        best
    }

    /// Evaluates a leaf with no parent histogram to reuse.
    fn evaluate(&mut self, rows: &[u32], total: Stats) -> (Option<SplitCandidate>, Option<Vec<Stats>>) {
        if self.wants_dense(rows) {
            let mut hist = self.zeroed_buffer();
            self.accumulate_dense(rows, &mut hist);
            let split = self.scan_dense(&hist, total);
            (split, self.retain(split, hist))
        } else {
            self.accumulate_sparse(rows);
            (self.scan_sparse(total), None)
        }
    }

    /// Evaluates both children of a split leaf. With a parent histogram only
    /// the child with fewer rows is accumulated; the other child's histogram
    /// is the parent's minus it.
    fn evaluate_children(
        &mut self,
        parent_hist: Option<Vec<Stats>>,
        left: (&[u32], Stats),
        right: (&[u32], Stats),
    ) -> [(Option<SplitCandidate>, Option<Vec<Stats>>); 2] {
        let Some(mut big_hist) = parent_hist else {
            return [self.evaluate(left.0, left.1), self.evaluate(right.0, right.1)];
        };
        let left_small = left.0.len() <= right.0.len();
        let (small, big) = if left_small { (left, right) } else { (right, left) };
        let small_eval = if self.wants_dense(small.0) {
            let mut hist = self.zeroed_buffer();
            self.accumulate_dense(small.0, &mut hist);
            for (b, s) in big_hist.iter_mut().zip(&hist) {
                if s.n > 0 {
                    *b = b.minus(*s);
                }
            }
            let split = self.scan_dense(&hist, small.1);
            (split, self.retain(split, hist))
        } else {
            self.accumulate_sparse(small.0);
            for &idx in &self.scratch.touched {
                let idx = idx as usize;
                big_hist[idx] = big_hist[idx].minus(self.scratch.hist[idx]);
            }
            (self.scan_sparse(small.1), None)
        };
        let big_eval = if self.wants_dense(big.0) {
            let split = self.scan_dense(&big_hist, big.1);
            (split, self.retain(split, big_hist))
        } else {
            self.scratch.pool.push(big_hist);
            self.evaluate(big.0, big.1)
        };
        if left_small {
            [small_eval, big_eval]
        } else {
            [big_eval, small_eval]
        }
    }
}

/// Reusable histogram storage shared by all trees of one fit.
struct Scratch {
    /// Zeroed between uses; only `touched` entries are ever nonzero.
    hist: Vec<Stats>,
    touched: Vec<u32>,
    /// Dense histograms released by finished leaves.
    pool: Vec<Vec<Stats>>,
}

impl Scratch {
    fn new(total_bins: usize) -> Scratch {
        Scratch {
            hist: vec![Stats::default(); total_bins],
            touched: Vec::new(),
            pool: Vec::new(),
        }
    }
}

struct OpenLeaf {
    node: usize,
    rows: Vec<u32>,
    stats: Stats,
    split: Option<SplitCandidate>,
    hist: Option<Vec<Stats>>,
}

fn grow_tree(grower: &mut Grower<'_>, rows: Vec<u32>) -> (Tree, Vec<(Vec<u32>, f64)>) {
    let total = grower.totals(&rows);
    let (split, hist) = grower.evaluate(&rows, total);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut leaves = vec![OpenLeaf {
        node: 0,
        rows,
        stats: total,
        split,
        hist,
    }];
    while leaves.len() < grower.spec.num_leaves {
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.split.map(|s| (k, s.gain)))
            .fold(None, |best: Option<(usize, f64)>, (k, g)| match best {
                Some((_, bg)) if bg >= g => best,
                _ => Some((k, g)),
            });
        let Some((k, _)) = pick else { break };
        let leaf = leaves.swap_remove(k);
        let split = leaf.split.expect("picked leaf has a split");
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf
            .rows
            .iter()
            .partition(|&&r| grower.data.bin_of(r as usize, split.feature) <= split.bin);
        let left_stats = split.left;
        let right_stats = leaf.stats.minus(split.left);
        let left_node = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: grower.data.edges[split.feature].upper[split.bin],
            left: left_node,
            right: left_node + 1,
        };
        let [(ls, lh), (rs, rh)] =
            grower.evaluate_children(leaf.hist, (&left_rows, left_stats), (&right_rows, right_stats));
        leaves.push(OpenLeaf {
            node: left_node,
            rows: left_rows,
            stats: left_stats,
            split: ls,
            hist: lh,
        });
        leaves.push(OpenLeaf {
            node: left_node + 1,
            rows: right_rows,
            stats: right_stats,
            split: rs,
            hist: rh,
        });
    }
    let mut assignments = Vec::with_capacity(leaves.len());
    for leaf in leaves {
        let value = grower.leaf_value(leaf.stats);
        nodes[leaf.node] = Node::Leaf { value };
        if let Some(h) = leaf.hist {
            grower.scratch.pool.push(h);
        }
        assignments.push((leaf.rows, value));
    }
    (Tree { nodes }, assignments)
}

fn loss(task: Task, y: &[f64], w: &[f64], margin: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let sum: f64 = match task {
        Task::Regression => (0..y.len())
            .map(|i| 0.5 * w[i] * (margin[i] - y[i]).powi(2))
            .sum(),
        Task::Classification => (0..y.len())
            .map(|i| w[i] * (softplus(margin[i]) - y[i] * margin[i]))
            .sum(),
    };
    sum / total
}

pub(crate) fn fit(
    x: &FeatureMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    spec: &GbdtSpec,
    task: Task,
) -> Result<GbdtModel> {
    let n = x.n_rows();
    if n < 2 * spec.min_child_samples {
        return Err(Error::TooFewRows(format!(
            "gbdt needs at least {} rows (2 × min_child_samples), got {n}",
            2 * spec.min_child_samples
        )));
    }
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    let total_w: f64 = w.iter().sum();
    let mean = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total_w;
    let base_score = match task {
        Task::Regression => mean,
        Task::Classification => (mean / (1.0 - mean)).ln(),
    };

    let csr = x.to_csr();
    let data = BinnedData::build(&csr, spec.max_bins);
    let p = x.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(spec.n_rounds);
    let mut loss_history = vec![loss(task, y, &w, &margin)];
    let n_cols = ((p as f64 * spec.colsample_bytree).round() as usize).clamp(1.min(p), p);
    let n_sub = ((n as f64 * spec.subsample).round() as usize).clamp(1, n);

    let mut scratch = Scratch::new(data.total_bins);
    for _ in 0..spec.n_rounds {
        for i in 0..n {
            match task {
                Task::Regression => {
                    grad[i] = w[i] * (margin[i] - y[i]);
                    hess[i] = w[i];
                }
                Task::Classification => {
                    let prob = sigmoid(margin[i]);
                    grad[i] = w[i] * (prob - y[i]);
                    hess[i] = w[i] * prob * (1.0 - prob);
                }
            }
        }
        let mut feature_on = vec![n_cols == p; p];
        if n_cols < p {
            for f in sample(&mut rng, p, n_cols) {
                feature_on[f] = true;
            }
        }
        let rows: Vec<u32> = if n_sub == n {
            (0..n as u32).collect()
        } else {
            let mut r: Vec<u32> = sample(&mut rng, n, n_sub).into_iter().map(|i| i as u32).collect();
            r.sort_unstable();
            r
        };
        let mut grower = Grower {
            data: &data,
            spec,
            grad: &grad,
            hess: &hess,
            feature_on,
            scratch: &mut scratch,
        };
        let (tree, assignments) = grow_tree(&mut grower, rows);
        if n_sub == n {
            for (rows, value) in assignments {
                for r in rows {
                    margin[r as usize] += value;
                }
            }
        } else {
            for (i, m) in margin.iter_mut().enumerate() {
                *m += tree.leaf_of(|f, thr| {
                    let b = data.bin_of(i, f);
                    data.edges[f].upper[b] <= thr
                });
            }
        }
        loss_history.push(loss(task, y, &w, &margin));
        trees.push(tree);
    }
    Ok(GbdtModel {
        base_score,
        trees,
        loss_history,
    })
}
