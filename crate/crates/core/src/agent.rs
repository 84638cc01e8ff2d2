//! Per-agent protocol state.
//!
//! Each agent carries a visited set: one record per distinct node it has
//! contacted, holding the estimate received at contact time and a live
//! (range, bearing) track of the contact point in the agent's own
//! heading-relative frame. Every move advances all tracks through the
//! law-of-cosines chain; every scan rotation shifts all bearings. When three
//! records enclose the agent, the gated barycentric update fires and the
//! consumed records are dropped.

use crate::geometry::{barycentric_coords, bearing_separation, fold_angle, HullDistances};
use crate::motion::{MotionCommand, Pose};
use crate::vec2::Vec2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type NodeId = usize;

/// Minimum degeneracy margin demanded of every triangle in a candidate
/// hull. Slivers thinner than this amplify the rounding of distance-only
/// areas past what the error-recursion certificate tolerates, so the agent
/// waits for a better-conditioned configuration instead.
pub const MIN_TRIANGLE_MARGIN: f64 = 1e-3;

/// What an agent keeps per visited node: the tuple received at the most
/// recent contact plus the local-frame track of that contact point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitedRecord {
    pub node_id: NodeId,
    /// Step index of the most recent contact.
    pub contact_time: u64,
    /// Tracked distance from the agent's current position to the contact
    /// point; equals the measured range at contact time.
    pub tracked_distance: f64,
    /// The node's location estimate as handed over at contact time (an
    /// anchor hands over its exact position).
    pub received_estimate: Vec2,
    /// Bearing to the contact point in the agent's heading-relative frame,
    /// in [0, 2pi).
    pub bearing: f64,
    pub is_anchor: bool,
    /// Whether the node had already received anchor information (directly
    /// or through earlier updates) at contact time.
    pub anchor_touched: bool,
}

/// Update gating parameters: the self-weight kept on the agent's own
/// estimate and the floors demanded of the matrix entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateWeights {
    /// Self-weight used whenever an update fires (1 implicitly otherwise).
    pub self_weight: f64,
    /// Minimum matrix entry granted to an anchor vertex (always enforced).
    pub anchor_min: f64,
    /// Minimum matrix entry granted to an agent vertex (enforced when the
    /// noise modifications are on).
    pub agent_min: f64,
    /// Lower bound on the self-weight.
    pub self_floor: f64,
}

impl UpdateWeights {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.self_floor > 0.0 && self.self_floor <= self.self_weight && self.self_weight < 1.0)
        {
            return Err(format!(
                "self_weight {} must lie in [self_floor {}, 1)",
                self.self_weight, self.self_floor
            ));
        }
        if !(self.anchor_min > 0.0 && self.anchor_min < 1.0) {
            return Err(format!("anchor_min {} must lie in (0, 1)", self.anchor_min));
        }
        if !(0.0..1.0 / 3.0).contains(&self.agent_min) {
            return Err(format!("agent_min {} must lie in [0, 1/3)", self.agent_min));
        }
        Ok(())
    }
}

impl Default for UpdateWeights {
    fn default() -> Self {
        UpdateWeights {
            self_weight: 0.2,
            anchor_min: 0.1,
            agent_min: 0.05,
            self_floor: 0.2,
        }
    }
}

/// What one node hands over when contacted: its identity, the measured
/// range, and its current knowledge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub node_id: NodeId,
    pub measured_distance: f64,
    /// The node's location estimate (an anchor hands over its exact
    /// position).
    pub estimate: Vec2,
    pub is_anchor: bool,
    /// Whether the node had received anchor information by contact time.
    pub anchor_touched: bool,
}

/// One vertex of an accepted virtual hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulationMember {
    pub node_id: NodeId,
    pub is_anchor: bool,
    pub anchor_touched: bool,
    pub contact_time: u64,
    pub received_estimate: Vec2,
}

/// An accepted virtual convex hull: three visited records (oldest first),
/// the six pairwise distances, the barycentric weights and the inclusion
/// relative error that gated it.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationSet {
    pub members: [TriangulationMember; 3],
    pub hull: HullDistances,
    /// Vertex weights: the convexity-repaired barycentrics when the noise
    /// modifications are on, the raw area ratios otherwise.
    pub weights: [f64; 3],
    /// Which vertex received the unit-sum residual, when the convexity
    /// modification produced these weights.
    pub residual_index: Option<usize>,
    pub rel_error: f64,
}

/// One applied location update, in the form the analysis layer consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateEvent {
    /// Step index the update belongs to (it used step-k state).
    pub k: u64,
    /// Updating agent.
    pub agent: NodeId,
    /// Self-weight applied.
    pub self_weight: f64,
    /// Inclusion-test relative error of the accepted hull.
    pub rel_error: f64,
    pub members: [EventMember; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMember {
    pub node_id: NodeId,
    pub is_anchor: bool,
    pub contact_time: u64,
    /// Barycentric weight of this vertex.
    pub barycentric: f64,
    /// System/input matrix entry: (1 - self_weight) * barycentric.
    pub matrix_weight: f64,
    /// Estimate consumed by the update (exact position for anchors).
    pub consumed_estimate: Vec2,
    /// Whether this vertex received the residual weight.
    pub residual: bool,
}

impl UpdateEvent {
    /// Sum of the agent-to-agent row entries plus the self-weight.
    pub fn p_row_sum(&self) -> f64 {
        self.self_weight
            + self
                .members
                .iter()
                .filter(|m| !m.is_anchor)
                .map(|m| m.matrix_weight)
                .sum::<f64>()
    }

    pub fn has_anchor(&self) -> bool {
        self.members.iter().any(|m| m.is_anchor)
    }
}

/// Full per-agent state: ground-truth pose (owned by the step loop), the
/// estimate, the visited set and the agent's private RNG stream.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: NodeId,
    pub pose: Pose,
    pub estimate: Vec2,
    pub anchor_touched: bool,
    pub visited: BTreeMap<NodeId, VisitedRecord>,
    pub rng: ChaCha8Rng,
    pub update_count: u64,
}

impl AgentState {
    pub fn new(id: NodeId, pose: Pose, estimate: Vec2, rng: ChaCha8Rng) -> Self {
        AgentState {
            id,
            pose,
            estimate,
            anchor_touched: false,
            visited: BTreeMap::new(),
            rng,
            update_count: 0,
        }
    }

    /// Register a contact: the agent rotates by `scan_angle` to face the
    /// other node (shifting every stored bearing) and stores what the node
    /// handed over. A revisit replaces the old record, restarting its
    /// distance chain.
    pub fn on_contact(&mut self, contact: Contact, scan_angle: f64, k: u64) {
        if scan_angle != 0.0 {
            for rec in self.visited.values_mut() {
                rec.bearing = fold_angle(rec.bearing - scan_angle);
            }
        }
        self.visited.insert(
            contact.node_id,
            VisitedRecord {
                node_id: contact.node_id,
                contact_time: k,
                tracked_distance: contact.measured_distance,
                received_estimate: contact.estimate,
                bearing: 0.0,
                is_anchor: contact.is_anchor,
                anchor_touched: contact.anchor_touched,
            },
        );
    }

    /// Advance the agent through one executed motion: rotate by the turn
    /// angle, push every tracked contact point through the law-of-cosines
    /// chain with the measured step magnitude, and advance the estimate by
    /// the measured displacement.
    pub fn on_move(&mut self, cmd: &MotionCommand, measured_delta: Vec2) {
        let step = measured_delta.norm();
        for rec in self.visited.values_mut() {
            let bearing = fold_angle(rec.bearing - cmd.turn_angle);
            if step > 0.0 {
                let (d, b) =
                    crate::geometry::propagate_range_bearing(rec.tracked_distance, bearing, step);
                rec.tracked_distance = d;
                rec.bearing = b;
            } else {
                rec.bearing = bearing;
            }
        }
        self.estimate += measured_delta;
    }

    /// Distance between the contact points of two visited records, from the
    /// two tracked ranges and the angle between their bearings.
    pub fn pairwise_virtual_distance(&self, a: &VisitedRecord, b: &VisitedRecord) -> f64 {
        if a.node_id == b.node_id {
            return 0.0;
        }
        crate::geometry::indirect_distance(
            a.tracked_distance,
            b.tracked_distance,
            bearing_separation(a.bearing, b.bearing),
        )
    }

    /// Search the visited set for the first 3-subset that forms a virtual
    /// convex hull around the agent and survives every gate. The anchor
    /// floor always applies; with the noise modifications on the candidate
    /// additionally faces the inclusion relative-error bound, the agent
    /// floor, and the convexity-repaired weight construction.
    ///
    /// Candidates are enumerated oldest-contacts-first; the winning records
    /// stay in the visited set until `apply_update` consumes them.
    pub fn find_triangulation(
        &mut self,
        weights: &UpdateWeights,
        epsilon: f64,
        modifications_on: bool,
    ) -> Option<TriangulationSet> {
        if self.visited.len() < 3 {
            return None;
        }
        let mut order: Vec<NodeId> = self.visited.keys().copied().collect();
        order.sort_by_key(|id| (self.visited[id].contact_time, *id));

        let count = order.len();
        for x in 0..count {
            for y in (x + 1)..count {
                for z in (y + 1)..count {
                    if let Some(ts) = self.evaluate_candidate(
                        order[x],
                        order[y],
                        order[z],
                        weights,
                        epsilon,
                        modifications_on,
                    ) {
                        return Some(ts);
                    }
                }
            }
        }
        None
    }

    fn evaluate_candidate(
        &mut self,
        j: NodeId,
        l: NodeId,
        n: NodeId,
        weights: &UpdateWeights,
        epsilon: f64,
        modifications_on: bool,
    ) -> Option<TriangulationSet> {
        let (rec_j, rec_l, rec_n) = (&self.visited[&j], &self.visited[&l], &self.visited[&n]);
        let hull = HullDistances::new(
            rec_j.tracked_distance,
            rec_l.tracked_distance,
            rec_n.tracked_distance,
            self.pairwise_virtual_distance(rec_j, rec_l),
            self.pairwise_virtual_distance(rec_j, rec_n),
            self.pairwise_virtual_distance(rec_l, rec_n),
        )
        .ok()?;
        if hull.min_degeneracy_margin() < MIN_TRIANGLE_MARGIN {
            return None;
        }

        let mismatch = match crate::geometry::inclusion_mismatch(&hull) {
            Ok(mismatch) => mismatch,
            Err(_) => return None,
        };
        let rel_error = mismatch.abs();
        if modifications_on {
            // Inclusion verdict (exterior points overshoot the additivity
            // identity) plus the relative-error gate on the mismatch.
            if mismatch > crate::geometry::INCLUSION_SLACK || rel_error > epsilon {
                return None;
            }
        } else {
            // The baseline reads the identity as equality to within its
            // practical tolerance, blind to the sign of the mismatch.
            if rel_error > epsilon.max(crate::geometry::INCLUSION_SLACK) {
                return None;
            }
        }

        let members = [rec_j, rec_l, rec_n].map(|r| TriangulationMember {
            node_id: r.node_id,
            is_anchor: r.is_anchor,
            anchor_touched: r.anchor_touched,
            contact_time: r.contact_time,
            received_estimate: r.received_estimate,
        });

        let (w, residual_index) = if modifications_on {
            // Convexity-repaired weights: exact unit sum by construction.
            match barycentric_coords(&hull, &mut self.rng) {
                Ok(b) => (b.as_array(), Some(b.residual_index)),
                Err(_) => return None,
            }
        } else {
            // Baseline rule: the raw area ratios, whatever they sum to.
            match crate::geometry::barycentric_ratios(&hull) {
                Ok(r) => (r, None),
                Err(_) => return None,
            }
        };

        // The anchor floor on the input-matrix entries always applies; the
        // agent floor is a noise modification.
        let scale = 1.0 - weights.self_weight;
        for (member, a) in members.iter().zip(w) {
            let entry = scale * a;
            if member.is_anchor {
                if entry < weights.anchor_min {
                    return None;
                }
            } else if modifications_on && entry < weights.agent_min {
                return None;
            }
        }

        Some(TriangulationSet {
            members,
            hull,
            weights: w,
            residual_index,
            rel_error,
        })
    }

    /// Apply the gated barycentric update: mix the estimate with the stored
    /// vertex estimates, consume the three records, and inherit any anchor
    /// pedigree the vertices carried.
    pub fn apply_update(
        &mut self,
        ts: &TriangulationSet,
        weights: &UpdateWeights,
        k: u64,
    ) -> UpdateEvent {
        let alpha = weights.self_weight;
        let scale = 1.0 - alpha;
        let a = ts.weights;

        let mut mix = Vec2::ZERO;
        for (member, &aq) in ts.members.iter().zip(a.iter()) {
            mix += aq * member.received_estimate;
        }
        self.estimate = alpha * self.estimate + scale * mix;
        // Convexity-repaired updates keep estimates finite; the baseline
        // weight rule may legitimately diverge under noise.
        debug_assert!(
            ts.residual_index.is_none() || self.estimate.is_finite(),
            "convex update produced a non-finite estimate"
        );

        let mut members = [EventMember {
            node_id: 0,
            is_anchor: false,
            contact_time: 0,
            barycentric: 0.0,
            matrix_weight: 0.0,
            consumed_estimate: Vec2::ZERO,
            residual: false,
        }; 3];
        for (q, (member, &aq)) in ts.members.iter().zip(a.iter()).enumerate() {
            members[q] = EventMember {
                node_id: member.node_id,
                is_anchor: member.is_anchor,
                contact_time: member.contact_time,
                barycentric: aq,
                matrix_weight: scale * aq,
                consumed_estimate: member.received_estimate,
                residual: ts.residual_index == Some(q),
            };
            self.visited.remove(&member.node_id);
            if member.is_anchor || member.anchor_touched {
                self.anchor_touched = true;
            }
        }
        self.update_count += 1;

        UpdateEvent {
            k,
            agent: self.id,
            self_weight: alpha,
            rel_error: ts.rel_error,
            members,
        }
    }
}
