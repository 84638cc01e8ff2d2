//! Distance-only planar geometry kernel.
//!
//! Everything here works from pairwise distances alone: triangle areas come
//! from the Cayley-Menger determinant, the convex-hull inclusion test from
//! area additivity, and distance tracking from law-of-cosines chains. The
//! production path never touches coordinates; coordinate-based computations
//! exist only in test oracles.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Relative tolerance for triangle-inequality and determinant-sign checks.
pub const TRI_TOL: f64 = 1e-9;

/// Hulls flatter than this (squared region units) are rejected as
/// triangulation candidates; barycentric ratios over a vanishing area are
/// numerically meaningless.
pub const MIN_HULL_AREA: f64 = 1e-6;

/// One-sided slack of the area-additivity inclusion test. In exact
/// arithmetic an interior point has sub-areas summing exactly to the hull
/// area; the slack absorbs the rounding of distances obtained from long
/// law-of-cosines chains.
pub const INCLUSION_SLACK: f64 = 1e-9;

/// Guard for sub-ulp fixups when forcing barycentric weights to sum to one.
const RESIDUAL_DUST: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    /// A length was negative or non-finite.
    #[error("invalid length {value} for {name}")]
    InvalidLength { name: &'static str, value: f64 },
    /// Distances violate the triangle inequality beyond `TRI_TOL`, so no
    /// planar configuration realizes them.
    #[error(
        "inconsistent distances ({a}, {b}, {c}): triangle inequality violated beyond tolerance"
    )]
    DegenerateInput { a: f64, b: f64, c: f64 },
    /// The hull triangle is flatter than `MIN_HULL_AREA`.
    #[error("hull area {area} below minimum {min}")]
    DegenerateHull { area: f64, min: f64 },
    /// Barycentric weights were requested for a configuration that is not
    /// interior to the hull.
    #[error("point is not interior to the hull")]
    NotInterior,
}

/// The three side lengths of a triangle, in no particular orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceTriple {
    pub d_ab: f64,
    pub d_bc: f64,
    pub d_ca: f64,
}

impl DistanceTriple {
    pub fn new(d_ab: f64, d_bc: f64, d_ca: f64) -> Result<Self, GeometryError> {
        for (name, value) in [("d_ab", d_ab), ("d_bc", d_bc), ("d_ca", d_ca)] {
            if !value.is_finite() || value < 0.0 {
                return Err(GeometryError::InvalidLength { name, value });
            }
        }
        Ok(DistanceTriple { d_ab, d_bc, d_ca })
    }

    /// True if the sides violate the triangle inequality by more than
    /// `TRI_TOL` relative to the longest side.
    pub fn is_degenerate(&self) -> bool {
        triangle_area(self).is_err()
    }

    /// How far the triple is from collinear, as a fraction of the longest
    /// side: the smallest triangle-inequality margin over the longest side.
    /// Zero means collinear (or inconsistent); ~1 means well conditioned.
    ///
    /// An area computed from distances loses `eps / margin` relative digits
    /// to the cancellation in the near-zero determinant factor, so callers
    /// that feed areas into further ratios gate on this margin.
    pub fn degeneracy_margin(&self) -> f64 {
        let mut s = [self.d_ab, self.d_bc, self.d_ca];
        s.sort_by(|x, y| y.total_cmp(x));
        let [a, b, c] = s;
        if a <= 0.0 {
            return 0.0;
        }
        ((c - (a - b)) / a).max(0.0)
    }
}

/// The six pairwise distances among an agent `i` and the three vertices
/// `{j, l, n}` of a candidate virtual hull.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullDistances {
    pub d_ij: f64,
    pub d_il: f64,
    pub d_in: f64,
    pub d_jl: f64,
    pub d_jn: f64,
    pub d_ln: f64,
}

impl HullDistances {
    pub fn new(
        d_ij: f64,
        d_il: f64,
        d_in: f64,
        d_jl: f64,
        d_jn: f64,
        d_ln: f64,
    ) -> Result<Self, GeometryError> {
        for (name, value) in [
            ("d_ij", d_ij),
            ("d_il", d_il),
            ("d_in", d_in),
            ("d_jl", d_jl),
            ("d_jn", d_jn),
            ("d_ln", d_ln),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(GeometryError::InvalidLength { name, value });
            }
        }
        Ok(HullDistances {
            d_ij,
            d_il,
            d_in,
            d_jl,
            d_jn,
            d_ln,
        })
    }

    /// Sides of the hull triangle (j, l, n).
    fn hull_triple(&self) -> DistanceTriple {
        DistanceTriple {
            d_ab: self.d_jl,
            d_bc: self.d_ln,
            d_ca: self.d_jn,
        }
    }

    /// Smallest degeneracy margin over the hull triangle and the three
    /// agent-replaced sub-triangles.
    pub fn min_degeneracy_margin(&self) -> f64 {
        let mut margin = self.hull_triple().degeneracy_margin();
        for q in 0..3 {
            margin = margin.min(self.sub_triple(q).degeneracy_margin());
        }
        margin
    }

    /// Sides of the triangle with vertex `q` (0 = j, 1 = l, 2 = n) replaced
    /// by the agent.
    fn sub_triple(&self, q: usize) -> DistanceTriple {
        match q {
            // (i, l, n)
            0 => DistanceTriple {
                d_ab: self.d_il,
                d_bc: self.d_ln,
                d_ca: self.d_in,
            },
            // (j, i, n)
            1 => DistanceTriple {
                d_ab: self.d_ij,
                d_bc: self.d_in,
                d_ca: self.d_jn,
            },
            // (j, l, i)
            2 => DistanceTriple {
                d_ab: self.d_jl,
                d_bc: self.d_il,
                d_ca: self.d_ij,
            },
            _ => unreachable!("vertex index out of range"),
        }
    }
}

/// Verdict of the area-additivity inclusion test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inclusion {
    /// The sub-areas account for the hull area; carries the relative
    /// mismatch so callers can apply a stricter gate.
    Inside {
        rel_error: f64,
    },
    Outside,
}

/// Barycentric weights of the agent with respect to the hull vertices
/// (j, l, n). Two components are area ratios; the one at `residual_index`
/// closes the sum to exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barycentrics {
    pub a_j: f64,
    pub a_l: f64,
    pub a_n: f64,
    pub residual_index: usize,
}

impl Barycentrics {
    pub fn as_array(&self) -> [f64; 3] {
        [self.a_j, self.a_l, self.a_n]
    }
}

/// Triangle area from its three side lengths via the Cayley-Menger
/// determinant (evaluated in the numerically stable factored form, with the
/// sides sorted so the result is exactly permutation invariant).
///
/// Returns 0 for collinear triples; `DegenerateInput` when the determinant
/// is negative beyond `TRI_TOL`, meaning no planar triangle has these sides.
pub fn triangle_area(t: &DistanceTriple) -> Result<f64, GeometryError> {
    let mut s = [t.d_ab, t.d_bc, t.d_ca];
    s.sort_by(|x, y| y.total_cmp(x));
    let [a, b, c] = s;
    // 16 A^2 = (a+b+c)(-a+b+c)(a-b+c)(a+b-c); with a >= b >= c the only
    // factor that can go negative is (c - (a - b)).
    let gap = c - (a - b);
    if gap < 0.0 {
        if -gap <= TRI_TOL * a {
            return Ok(0.0);
        }
        return Err(GeometryError::DegenerateInput { a, b, c });
    }
    let det16 = (a + (b + c)) * gap * (c + (a - b)) * (a + (b - c));
    Ok(det16.max(0.0).sqrt() / 4.0)
}

/// Hull area plus the three sub-areas with the agent replacing one vertex.
fn hull_areas(h: &HullDistances) -> Result<(f64, [f64; 3]), GeometryError> {
    let total = triangle_area(&h.hull_triple())?;
    if total < MIN_HULL_AREA {
        return Err(GeometryError::DegenerateHull {
            area: total,
            min: MIN_HULL_AREA,
        });
    }
    let subs = [
        triangle_area(&h.sub_triple(0))?,
        triangle_area(&h.sub_triple(1))?,
        triangle_area(&h.sub_triple(2))?,
    ];
    Ok((total, subs))
}

/// Area-additivity inclusion test from the six pairwise distances.
///
/// The agent is inside the hull exactly when the three sub-areas sum to the
/// hull area; a sum exceeding it beyond `INCLUSION_SLACK` means outside.
/// The signed mismatch can only be positive for consistent distances, so the
/// test is one-sided; the returned relative error is the absolute mismatch
/// used by the noise-gating modification.
pub fn inclusion_test(h: &HullDistances) -> Result<Inclusion, GeometryError> {
    let rel = inclusion_mismatch(h)?;
    if rel > INCLUSION_SLACK {
        Ok(Inclusion::Outside)
    } else {
        Ok(Inclusion::Inside {
            rel_error: rel.abs(),
        })
    }
}

/// Signed relative mismatch of the area-additivity identity:
/// `(sum of sub-areas - hull area) / hull area`.
///
/// Zero for an interior point with consistent distances; strictly positive
/// for an exterior point; either sign when the six distances are mutually
/// inconsistent (measurement noise, long tracking chains). This is the raw
/// quantity behind both the inclusion verdict and the noise gate.
pub fn inclusion_mismatch(h: &HullDistances) -> Result<f64, GeometryError> {
    let (total, subs) = hull_areas(h)?;
    Ok(((subs[0] + subs[1] + subs[2]) - total) / total)
}

/// Raw barycentric area ratios `A_sub(q) / A_total`, with no normalization.
///
/// This is the weight rule of the baseline update: under measurement noise
/// the three ratios need not sum to one, which is exactly the defect the
/// convexity modification repairs. Callers wanting guaranteed-convex
/// weights use [`barycentric_coords`].
pub fn barycentric_ratios(h: &HullDistances) -> Result<[f64; 3], GeometryError> {
    let (total, subs) = hull_areas(h)?;
    Ok([subs[0] / total, subs[1] / total, subs[2] / total])
}

/// Barycentric weights of the agent with respect to the hull vertices.
///
/// Two weights are the area ratios `A_sub(q) / A_total`; the vertex drawn
/// uniformly from the three receives the residual `1 - (sum of the others)`
/// so that the weights sum to exactly one. Candidates whose residual falls
/// outside [0, 1] cannot stand as a convex combination and are rejected.
pub fn barycentric_coords<R: Rng>(
    h: &HullDistances,
    rng: &mut R,
) -> Result<Barycentrics, GeometryError> {
    let (total, subs) = hull_areas(h)?;
    let rel = ((subs[0] + subs[1] + subs[2]) - total) / total;
    if rel > INCLUSION_SLACK {
        return Err(GeometryError::NotInterior);
    }

    let residual_index = rng.random_range(0..3usize);
    let mut w = [0.0f64; 3];
    for q in 0..3 {
        if q != residual_index {
            w[q] = (subs[q] / total).clamp(0.0, 1.0);
        }
    }
    let others: f64 = (0..3).filter(|&q| q != residual_index).map(|q| w[q]).sum();
    let mut residual = 1.0 - others;
    if residual < 0.0 {
        if residual < -RESIDUAL_DUST {
            return Err(GeometryError::NotInterior);
        }
        residual = 0.0;
    }
    w[residual_index] = residual.clamp(0.0, 1.0);
    force_unit_sum(&mut w, residual_index);

    Ok(Barycentrics {
        a_j: w[0],
        a_l: w[1],
        a_n: w[2],
        residual_index,
    })
}

/// Nudge the weights until the left-to-right sum is exactly 1.0.
///
/// A blind nudge on a single slot can livelock between the two rounding
/// states straddling 1.0, so each round first trial-evaluates a one-shot
/// correction on every slot (preferring the residual slot) and otherwise
/// walks the smallest adjustable weight, whose ulp grid is fine enough that
/// the running sum cannot step over the window that rounds to exactly 1.0.
fn force_unit_sum(w: &mut [f64; 3], preferred: usize) {
    let ltr = |w: &[f64; 3]| (w[0] + w[1]) + w[2];
    for _ in 0..64 {
        let sum = ltr(w);
        if sum == 1.0 {
            return;
        }
        let defect = 1.0 - sum;
        let viable = |w: &[f64; 3], slot: usize| {
            let candidate = w[slot] + defect;
            (candidate != w[slot] && (0.0..=1.0).contains(&candidate)).then_some(candidate)
        };
        let mut one_shot = None;
        for slot in [preferred, 0, 1, 2] {
            if let Some(candidate) = viable(w, slot) {
                let mut trial = *w;
                trial[slot] = candidate;
                if ltr(&trial) == 1.0 {
                    one_shot = Some(trial);
                    break;
                }
            }
        }
        if let Some(fixed) = one_shot {
            *w = fixed;
            return;
        }
        let Some(slot) = (0..3)
            .filter(|&slot| viable(w, slot).is_some())
            .min_by(|&a, &b| w[a].total_cmp(&w[b]))
        else {
            break;
        };
        w[slot] += defect;
    }
    assert_eq!(
        ltr(w),
        1.0,
        "barycentric unit-sum normalization failed for {w:?}"
    );
}

/// Law of cosines: the side opposite `included_angle` in a triangle whose
/// other two sides are `a` and `b`. Evaluated as the hypotenuse of the
/// component decomposition, which avoids the cancellation the
/// difference-of-squares form suffers when the result is much shorter than
/// the inputs.
fn third_side(a: f64, b: f64, included_angle: f64) -> f64 {
    // A zero side leaves the other unchanged, exactly.
    if b == 0.0 {
        return a;
    }
    if a == 0.0 {
        return b;
    }
    let (sin, cos) = included_angle.sin_cos();
    (a * cos - b).hypot(a * sin)
}

/// Distance to a fixed point after moving `step` units, where `turn_angle`
/// is the angle between the travel direction and the ray to the point.
pub fn step_distance(d_prev: f64, step: f64, turn_angle: f64) -> f64 {
    third_side(d_prev, step, turn_angle)
}

/// Distance between two fixed points seen from the same observer at ranges
/// `d_a` and `d_b` with `angle_between` separating the two rays.
pub fn indirect_distance(d_a: f64, d_b: f64, angle_between: f64) -> f64 {
    third_side(d_a, d_b, angle_between)
}

/// Interior angle opposite side `c`, given all three sides, clamped to
/// [0, pi]. The cosine argument is clamped to [-1, 1] before the inverse
/// cosine because rounding can push it marginally outside.
pub fn interior_angle(a: f64, b: f64, c: f64) -> Result<f64, GeometryError> {
    let longest = a.max(b).max(c);
    let violation = (c - (a + b)).max(a - (b + c)).max(b - (a + c));
    if violation > TRI_TOL * longest {
        return Err(GeometryError::DegenerateInput { a, b, c });
    }
    let denom = 2.0 * a * b;
    if denom <= 0.0 {
        // A zero-length adjacent side leaves the angle undefined.
        return Err(GeometryError::DegenerateInput { a, b, c });
    }
    let ratio = ((a * a + b * b - c * c) / denom).clamp(-1.0, 1.0);
    Ok(ratio.acos())
}

/// Range and bearing to a fixed point after the observer travels `travel`
/// units along its heading. `bearing` is the angle from the heading to the
/// ray toward the point; the returned bearing is folded to [0, 2pi).
///
/// This is the law-of-cosines chain written in a form that stays stable
/// when the point lies (nearly) on the travel line, where the inverse
/// cosine of the angle chain is ill-conditioned.
pub fn propagate_range_bearing(range: f64, bearing: f64, travel: f64) -> (f64, f64) {
    let (sin_b, cos_b) = bearing.sin_cos();
    let new_range = third_side(range, travel, bearing);
    let new_bearing = (range * sin_b).atan2(range * cos_b - travel);
    (new_range, fold_angle(new_bearing))
}

/// Fold an angle into [0, 2pi).
pub fn fold_angle(angle: f64) -> f64 {
    let folded = angle.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs.
    if folded >= TAU {
        0.0
    } else {
        folded
    }
}

/// Unsigned separation between two bearings, folded to [0, pi].
pub fn bearing_separation(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}
