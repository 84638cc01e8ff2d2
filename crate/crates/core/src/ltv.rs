//! Analysis layer over the linear time-varying update chain.
//!
//! Every applied location update is one system matrix: identity except for
//! the updating agent's row, which holds the self-weight on the diagonal and
//! the scaled barycentric weights on the consumed agent columns; anchor
//! weights land in the input matrix. This module rebuilds those matrices
//! from update events, verifies the error recursion against simulated
//! traces, decomposes the chain into slices, and evaluates the slice-length
//! growth bound.

use crate::agent::{UpdateEvent, UpdateWeights};
use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense analysis matrices are capped at this dimension; the simulator
/// itself never forms matrices, so this is a desk-scale analysis choice.
pub const MAX_ANALYSIS_DIM: usize = 256;

/// A row sum counts as strictly below one only past this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Slack allowed when validating event weights against the configured
/// floors; floors are enforced exactly at event creation, so anything beyond
/// rounding dust is a malformed event.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtvError {
    #[error("malformed update event: {0}")]
    MalformedEvent(String),
    #[error("analysis dimension {n} exceeds the {max} limit")]
    DimensionTooLarge { n: usize, max: usize },
    #[error("invalid growth-bound parameters: {0}")]
    InvalidParams(String),
}

/// Dense row-major matrix, sized for desk-scale analysis only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.data[r * self.cols..(r + 1) * self.cols].iter().sum()
    }

    /// Infinity norm: maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn all_row_sums_below_one(&self) -> bool {
        (0..self.rows).all(|r| self.row_sum(r) < 1.0 - ROW_SUM_TOL)
    }

    /// Naive dense product `self * rhs`.
    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "dimension mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..rhs.cols {
                    out.data[r * rhs.cols + c] += a * rhs.get(k, c);
                }
            }
        }
        out
    }

    /// In-place left multiplication by an identity-except-one-row update:
    /// row `upd.row` becomes the weighted combination of the existing rows.
    pub fn left_apply(&mut self, upd: &RowUpdate) {
        let cols = self.cols;
        let mut new_row: Vec<f64> = self.data[upd.row * cols..(upd.row + 1) * cols]
            .iter()
            .map(|v| upd.self_weight * v)
            .collect();
        for &(q, w) in &upd.agent_terms {
            let src = &self.data[q * cols..(q + 1) * cols];
            for (dst, v) in new_row.iter_mut().zip(src) {
                *dst += w * v;
            }
        }
        self.data[upd.row * cols..(upd.row + 1) * cols].copy_from_slice(&new_row);
    }
}

/// Sparse description of a system matrix that differs from identity in one
/// row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowUpdate {
    pub row: usize,
    pub self_weight: f64,
    /// (agent column, weight) pairs; anchor weights do not appear in the
    /// system matrix.
    pub agent_terms: Vec<(usize, f64)>,
    /// Sum of the full row including anchor contributions complementing it.
    pub p_row_sum: f64,
}

/// The system matrix, input matrix and anchor input of one chain element.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMatrices {
    pub k: u64,
    /// N x N system matrix (identity except at most one row).
    pub p: Matrix,
    /// N x M input matrix.
    pub b: Matrix,
    /// M anchor positions fed through the input matrix; rows consumed by
    /// the event hold the exact virtual positions used.
    pub u: Vec<Vec2>,
    /// Sparse form of the deviation from identity, when any.
    pub update: Option<RowUpdate>,
}

impl StepMatrices {
    pub fn is_strictly_substochastic(&self) -> bool {
        match &self.update {
            Some(upd) => upd.p_row_sum < 1.0 - ROW_SUM_TOL,
            None => false,
        }
    }
}

/// Materialize the chain element for one step: identity matrices for a
/// no-op, otherwise the coefficient placement for the event.
///
/// The event's weights are validated against the floors it claims to have
/// cleared; a violation means the event stream is corrupt.
pub fn capture_step(
    k: u64,
    event: Option<&UpdateEvent>,
    n_agents: usize,
    n_anchors: usize,
    anchor_positions: &[Vec2],
    weights: &UpdateWeights,
    modifications_on: bool,
) -> Result<StepMatrices, LtvError> {
    if n_agents > MAX_ANALYSIS_DIM {
        return Err(LtvError::DimensionTooLarge {
            n: n_agents,
            max: MAX_ANALYSIS_DIM,
        });
    }
    let mut p = Matrix::identity(n_agents);
    let mut b = Matrix::zeros(n_agents, n_anchors);
    let mut u: Vec<Vec2> = anchor_positions.to_vec();
    u.resize(n_anchors, Vec2::ZERO);

    let Some(event) = event else {
        return Ok(StepMatrices {
            k,
            p,
            b,
            u,
            update: None,
        });
    };

    if event.agent >= n_agents {
        return Err(LtvError::MalformedEvent(format!(
            "updating agent {} out of range (N = {n_agents})",
            event.agent
        )));
    }
    if !(weights.self_floor - FLOOR_SLACK..1.0).contains(&event.self_weight) {
        return Err(LtvError::MalformedEvent(format!(
            "self-weight {} outside [{}, 1)",
            event.self_weight, weights.self_floor
        )));
    }

    let row = event.agent;
    p.set(row, row, event.self_weight);
    let mut agent_terms = Vec::with_capacity(3);
    for m in &event.members {
        if m.matrix_weight < 0.0 {
            return Err(LtvError::MalformedEvent(format!(
                "negative weight {} on node {}",
                m.matrix_weight, m.node_id
            )));
        }
        if m.is_anchor {
            if m.matrix_weight < weights.anchor_min - FLOOR_SLACK {
                return Err(LtvError::MalformedEvent(format!(
                    "anchor weight {} below the floor {}",
                    m.matrix_weight, weights.anchor_min
                )));
            }
            let col = m.node_id.checked_sub(n_agents).filter(|&c| c < n_anchors);
            let Some(col) = col else {
                return Err(LtvError::MalformedEvent(format!(
                    "anchor id {} out of range",
                    m.node_id
                )));
            };
            b.set(row, col, m.matrix_weight);
            u[col] = m.consumed_estimate;
        } else {
            if modifications_on && m.matrix_weight < weights.agent_min - FLOOR_SLACK {
                return Err(LtvError::MalformedEvent(format!(
                    "agent weight {} below the floor {}",
                    m.matrix_weight, weights.agent_min
                )));
            }
            if m.node_id >= n_agents || m.node_id == row {
                return Err(LtvError::MalformedEvent(format!(
                    "agent id {} invalid in an update by {}",
                    m.node_id, row
                )));
            }
            p.set(row, m.node_id, p.get(row, m.node_id) + m.matrix_weight);
            agent_terms.push((m.node_id, m.matrix_weight));
        }
    }

    let p_row_sum = p.row_sum(row);
    if p_row_sum > 1.0 + ROW_SUM_TOL {
        return Err(LtvError::MalformedEvent(format!(
            "row sum {p_row_sum} exceeds one"
        )));
    }
    if event.has_anchor() && p_row_sum > 1.0 - weights.anchor_min + FLOOR_SLACK {
        return Err(LtvError::MalformedEvent(format!(
            "anchored row sum {p_row_sum} exceeds 1 - anchor_min"
        )));
    }

    Ok(StepMatrices {
        k,
        p,
        b,
        u,
        update: Some(RowUpdate {
            row,
            self_weight: event.self_weight,
            agent_terms,
            p_row_sum,
        }),
    })
}

/// Check the realized error recursion on a noiseless trace.
///
/// The estimates consumed by an update are the ones received at contact
/// time, so the recursion propagates each consumed vertex's error as of its
/// contact step; between updates the error of every agent is invariant
/// under motion. Anchors contribute no error: their handed-over positions
/// are exact. Returns the maximum absolute deviation between the predicted
/// and the simulated estimate errors over the whole trace.
pub fn verify_error_dynamics(
    n_agents: usize,
    truths: &[Vec<Vec2>],
    estimates: &[Vec<Vec2>],
    events: &[UpdateEvent],
) -> f64 {
    assert_eq!(truths.len(), estimates.len(), "trace length mismatch");
    let steps = truths.len();
    if steps == 0 {
        return 0.0;
    }
    let err_at = |k: usize, i: usize| truths[k][i] - estimates[k][i];

    let mut max_dev: f64 = 0.0;
    let mut event_idx = 0;
    for k in 0..steps - 1 {
        // Predicted error at k+1: identity rows carry over, updated rows mix
        // the consumed contact-time errors.
        let mut predicted: Vec<Vec2> = (0..n_agents).map(|i| err_at(k, i)).collect();
        while event_idx < events.len() && events[event_idx].k == k as u64 {
            let ev = &events[event_idx];
            let mut e = ev.self_weight * err_at(k, ev.agent);
            for m in &ev.members {
                if !m.is_anchor {
                    e += m.matrix_weight * err_at(m.contact_time as usize, m.node_id);
                }
            }
            predicted[ev.agent] = e;
            event_idx += 1;
        }
        for (i, pred) in predicted.iter().enumerate() {
            let realized = err_at(k + 1, i);
            let dev = (realized.x - pred.x).abs().max((realized.y - pred.y).abs());
            max_dev = max_dev.max(dev);
        }
    }
    max_dev
}

/// One completed slice: the shortest run of consecutive chain elements,
/// starting at a strictly sub-stochastic one, whose product has every row
/// sum strictly below one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    /// Chain sequence index of the opening (strictly sub-stochastic) element.
    pub start_seq: u64,
    pub end_seq: u64,
    /// Step indices covered.
    pub start_k: u64,
    pub end_k: u64,
    /// Number of chain elements in the slice.
    pub len: u64,
    /// Infinity norm of the slice product.
    pub inf_norm: f64,
}

/// Slice decomposition of a processed chain prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SliceReport {
    pub slices: Vec<Slice>,
    /// Elements consumed so far.
    pub chain_len: u64,
    /// Length of the open (incomplete) tail slice, if one is accumulating.
    pub open_len: Option<u64>,
    /// Infinity norm of the running product of every system matrix seen.
    pub product_norm: f64,
}

#[derive(Debug, Clone)]
enum Segment {
    /// Product of consecutive elements between slices (identity and
    /// stochastic updates only).
    Gap(Matrix),
    Slice(Matrix),
}

/// Streaming slice decomposition. Feeds on chain elements in order; slices
/// open at a strictly sub-stochastic element (after the previous slice
/// closed) and close once every row sum of the accumulated slice product is
/// strictly below one. Elements between slices accumulate into gap segments
/// so that the full chain product is exactly recomposable from the ordered
/// segments.
#[derive(Debug, Clone)]
pub struct SliceDecomposer {
    n: usize,
    seq: u64,
    segments: Vec<Segment>,
    slices: Vec<Slice>,
    open: Option<OpenSlice>,
    gap: Option<Matrix>,
    product: Matrix,
    product_norm_min: f64,
    product_norm_max: f64,
}

#[derive(Debug, Clone)]
struct OpenSlice {
    start_seq: u64,
    start_k: u64,
    len: u64,
    product: Matrix,
}

impl SliceDecomposer {
    pub fn new(n_agents: usize) -> Self {
        SliceDecomposer {
            n: n_agents,
            seq: 0,
            segments: Vec::new(),
            slices: Vec::new(),
            open: None,
            gap: None,
            product: Matrix::identity(n_agents),
            product_norm_min: 1.0,
            product_norm_max: 1.0,
        }
    }

    pub fn push(&mut self, m: &StepMatrices) {
        assert_eq!(m.p.rows(), self.n, "chain dimension changed");
        let seq = self.seq;
        self.seq += 1;

        if let Some(upd) = &m.update {
            self.product.left_apply(upd);
            let norm = self.product.inf_norm();
            self.product_norm_min = self.product_norm_min.min(norm);
            self.product_norm_max = self.product_norm_max.max(norm);
        }

        if let Some(open) = self.open.as_mut() {
            if let Some(upd) = &m.update {
                open.product.left_apply(upd);
            }
            open.len += 1;
        } else if m.is_strictly_substochastic() {
            if let Some(gap) = self.gap.take() {
                self.segments.push(Segment::Gap(gap));
            }
            let mut product = Matrix::identity(self.n);
            if let Some(upd) = &m.update {
                product.left_apply(upd);
            }
            self.open = Some(OpenSlice {
                start_seq: seq,
                start_k: m.k,
                len: 1,
                product,
            });
        } else {
            if let Some(upd) = &m.update {
                self.gap
                    .get_or_insert_with(|| Matrix::identity(self.n))
                    .left_apply(upd);
            }
            return;
        }

        // Close once every row sum of the accumulated slice product is
        // strictly below one (a single element may already qualify).
        let closes = self
            .open
            .as_ref()
            .is_some_and(|o| o.product.all_row_sums_below_one());
        if closes {
            let open = self.open.take().expect("slice is open");
            self.slices.push(Slice {
                start_seq: open.start_seq,
                end_seq: seq,
                start_k: open.start_k,
                end_k: m.k,
                len: open.len,
                inf_norm: open.product.inf_norm(),
            });
            self.segments.push(Segment::Slice(open.product));
        }
    }

    pub fn report(&self) -> SliceReport {
        SliceReport {
            slices: self.slices.clone(),
            chain_len: self.seq,
            open_len: self.open.as_ref().map(|o| o.len),
            product_norm: self.product.inf_norm(),
        }
    }

    /// Running product of every system matrix consumed so far.
    pub fn product(&self) -> &Matrix {
        &self.product
    }

    pub fn product_norm(&self) -> f64 {
        self.product.inf_norm()
    }

    pub fn product_norm_range(&self) -> (f64, f64) {
        (self.product_norm_min, self.product_norm_max)
    }

    /// Recompose the full chain product from the ordered segments (gaps,
    /// completed slices and the open tail). Equals `product()` up to
    /// rounding; the decomposition loses nothing.
    pub fn recomposed_product(&self) -> Matrix {
        let mut acc = Matrix::identity(self.n);
        for segment in &self.segments {
            let m = match segment {
                Segment::Gap(m) | Segment::Slice(m) => m,
            };
            acc = m.mul(&acc);
        }
        if let Some(open) = &self.open {
            acc = open.product.mul(&acc);
        }
        if let Some(gap) = &self.gap {
            acc = gap.mul(&acc);
        }
        acc
    }
}

/// Convenience wrapper: decompose a finite stream of chain elements.
pub fn decompose_slices<'a>(stream: impl IntoIterator<Item = &'a StepMatrices>) -> SliceReport {
    let mut stream = stream.into_iter().peekable();
    let n = match stream.peek() {
        Some(m) => m.p.rows(),
        None => return SliceReport::default(),
    };
    let mut dec = SliceDecomposer::new(n);
    for m in stream {
        dec.push(m);
    }
    dec.report()
}

/// Running infinity norm of the product of system matrices.
#[derive(Debug, Clone)]
pub struct ProductTracker {
    product: Matrix,
}

impl ProductTracker {
    pub fn new(n_agents: usize) -> Self {
        ProductTracker {
            product: Matrix::identity(n_agents),
        }
    }

    pub fn push(&mut self, m: &StepMatrices) -> f64 {
        if let Some(upd) = &m.update {
            self.product.left_apply(upd);
        }
        self.norm()
    }

    pub fn norm(&self) -> f64 {
        self.product.inf_norm()
    }

    pub fn product(&self) -> &Matrix {
        &self.product
    }
}

/// Parameters of the slice-length growth bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBoundParams {
    /// Lower bound on self-weights of stochastic updating rows.
    pub beta1: f64,
    /// Upper bound on sub-stochastic row sums.
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl GrowthBoundParams {
    /// Identify the bound parameters with the configured update weights:
    /// beta1 with the self-weight floor and beta2 with 1 - anchor_min.
    pub fn from_weights(weights: &UpdateWeights, gamma1: f64, gamma2: f64) -> Self {
        GrowthBoundParams {
            beta1: weights.self_floor,
            beta2: 1.0 - weights.anchor_min,
            gamma1,
            gamma2,
        }
    }
}

/// The growth bound itself: the longest admissible length of the i-th slice
/// (1-based). Pure formula evaluation; parameter validity is checked by
/// [`check_growth_bound`].
pub fn growth_bound_value(p: &GrowthBoundParams, i: u64) -> f64 {
    let g = p.gamma2 * (i as f64).powf(-p.gamma1);
    ((1.0 - (-g).exp()) / (1.0 - p.beta2)).ln() / p.beta1.ln() + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthVerdict {
    /// 1-based slice index.
    pub index: u64,
    pub len: u64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub verdicts: Vec<GrowthVerdict>,
    pub fraction_satisfied: f64,
    /// For every prefix of the slice sequence, some already-seen slice fits
    /// under the bound evaluated at the prefix length.
    pub every_prefix_satisfied: bool,
}

/// Evaluate the growth bound against every completed slice.
pub fn check_growth_bound(
    report: &SliceReport,
    params: &GrowthBoundParams,
) -> Result<GrowthReport, LtvError> {
    if !(params.beta1 > 0.0 && params.beta1 < 1.0) {
        return Err(LtvError::InvalidParams(format!(
            "beta1 {} must lie in (0, 1)",
            params.beta1
        )));
    }
    if !(0.0..1.0).contains(&params.beta2) {
        return Err(LtvError::InvalidParams(format!(
            "beta2 {} must lie in [0, 1)",
            params.beta2
        )));
    }
    if !(0.0..=1.0).contains(&params.gamma1) {
        return Err(LtvError::InvalidParams(format!(
            "gamma1 {} must lie in [0, 1]",
            params.gamma1
        )));
    }
    if params.gamma2 <= 0.0 {
        return Err(LtvError::InvalidParams(format!(
            "gamma2 {} must be positive",
            params.gamma2
        )));
    }
    for i in 1..=report.slices.len() as u64 {
        let g = params.gamma2 * (i as f64).powf(-params.gamma1);
        if params.beta2 >= (-g).exp() {
            return Err(LtvError::InvalidParams(format!(
                "beta2 {} >= exp(-gamma2 * {i}^-gamma1); the bound is meaningless",
                params.beta2
            )));
        }
    }

    let mut verdicts = Vec::with_capacity(report.slices.len());
    let mut min_len_so_far = u64::MAX;
    let mut every_prefix = true;
    for (idx, slice) in report.slices.iter().enumerate() {
        let index = idx as u64 + 1;
        let bound = growth_bound_value(params, index);
        let satisfied = (slice.len as f64) <= bound;
        min_len_so_far = min_len_so_far.min(slice.len);
        if (min_len_so_far as f64) > bound {
            every_prefix = false;
        }
        verdicts.push(GrowthVerdict {
            index,
            len: slice.len,
            bound,
            satisfied,
        });
    }
    let satisfied_count = verdicts.iter().filter(|v| v.satisfied).count();
    let fraction = if verdicts.is_empty() {
        1.0
    } else {
        satisfied_count as f64 / verdicts.len() as f64
    };
    Ok(GrowthReport {
        verdicts,
        fraction_satisfied: fraction,
        every_prefix_satisfied: every_prefix,
    })
}
