//! Angular user grouping: users whose AOA intervals are separated by at
//! least a guard gap may share one pilot sequence.

use crate::angle::{angular_distance, AngleEstimate};
use crate::error::{Error, Result};

/// Partition of user ids into pilot-sharing groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub groups: Vec<Vec<usize>>,
    pub guard: f64,
}

impl GroupAssignment {
    pub fn group_of(&self, user: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&user))
    }
}

/// Strict overlap or a gap below the guard makes two users conflict;
/// touching intervals do not.
fn conflicts(a: &AngleEstimate, b: &AngleEstimate, guard: f64) -> bool {
    if a.u_lo < b.u_hi && b.u_lo < a.u_hi {
        return true;
    }
    angular_distance(a, b) < guard
}

/// Greedy first-fit coloring of the conflict graph, users visited in order
/// of interval lower edge. For pure interval overlap (guard 0) this is the
/// optimal interval-graph coloring.
pub fn adma_group(estimates: &[AngleEstimate], guard: f64) -> Result<GroupAssignment> {
    if !(guard >= 0.0) {
        return Err(Error::contract("adma_group: guard must be >= 0"));
    }
    let mut order: Vec<usize> = (0..estimates.len()).collect();
    order.sort_by(|&a, &b| {
        estimates[a]
            .u_lo
            .partial_cmp(&estimates[b].u_lo)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &user in &order {
        let slot = groups.iter().position(|g| {
            g.iter()
                .all(|&other| !conflicts(&estimates[user], &estimates[other], guard))
        });
        match slot {
            Some(i) => groups[i].push(user),
            None => groups.push(vec![user]),
        }
    }
    Ok(GroupAssignment { groups, guard })
}

/// True when some same-group pair's cosine-space distance fell below the
/// threshold, so the grouping no longer separates them.
pub fn needs_reschedule(
    current: &GroupAssignment,
    estimates: &[AngleEstimate],
    threshold: f64,
) -> Result<bool> {
    if !(threshold >= 0.0) {
        return Err(Error::contract("needs_reschedule: threshold must be >= 0"));
    }
    for group in &current.groups {
        for (i, &a) in group.iter().enumerate() {
            for &b in &group[i + 1..] {
                if a >= estimates.len() || b >= estimates.len() {
                    return Err(Error::contract("needs_reschedule: user id out of range"));
                }
                if angular_distance(&estimates[a], &estimates[b]) < threshold {
                    return Ok(true);
                }
            }
        }
    }
    Ok(false)
}

/// Default re-scheduling threshold: one beamspace bin in cosine space.
pub fn default_threshold(m: usize, chi: f64) -> f64 {
    2.0 * std::f64::consts::PI / (m as f64 * chi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angle::AngleEstimate;
    use proptest::prelude::*;

    fn interval(u_lo: f64, u_hi: f64) -> AngleEstimate {
        AngleEstimate {
            psi: 0.0,
            q: vec![0],
            u_lo,
            u_hi,
            theta_lo: u_hi.acos(),
            theta_hi: u_lo.acos(),
            theta_mean: (u_hi.acos() + u_lo.acos()) / 2.0,
            delta: (u_lo.acos() - u_hi.acos()) / 2.0,
            captured: 1.0,
            contiguous: true,
        }
    }

    #[test]
    fn disjoint_users_share_one_group() {
        let ests = vec![
            interval(-0.8, -0.6),
            interval(-0.3, -0.1),
            interval(0.2, 0.4),
        ];
        let g = adma_group(&ests, 0.05).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0].len(), 3);
    }

    #[test]
    fn identical_intervals_split() {
        let ests = vec![interval(0.1, 0.3), interval(0.1, 0.3)];
        let g = adma_group(&ests, 0.0).unwrap();
        assert_eq!(g.groups.len(), 2);
    }

    #[test]
    fn touching_intervals_do_not_conflict() {
        let ests = vec![interval(-0.2, 0.0), interval(0.0, 0.2)];
        let g = adma_group(&ests, 0.0).unwrap();
        assert_eq!(g.groups.len(), 1);
    }

    #[test]
    fn overlap_chain_two_colors() {
        // Five users, consecutive intervals overlap, non-consecutive do not:
        // a path graph, chromatic number 2, split {0,2,4} / {1,3}.
        let ests: Vec<AngleEstimate> = (0..5)
            .map(|i| {
                let lo = -0.5 + 0.15 * i as f64;
                interval(lo, lo + 0.2)
            })
            .collect();
        let g = adma_group(&ests, 0.0).unwrap();
        assert_eq!(g.groups.len(), 2);
        let mut even = g.groups[0].clone();
        even.sort_unstable();
        assert_eq!(even, vec![0, 2, 4]);
        let mut odd = g.groups[1].clone();
        odd.sort_unstable();
        assert_eq!(odd, vec![1, 3]);
    }

    #[test]
    fn reschedule_trigger() {
        let ests = vec![interval(-0.5, -0.3), interval(0.1, 0.3)];
        let g = adma_group(&ests, 0.0).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert!(!needs_reschedule(&g, &ests, 0.0).unwrap());
        // Same-group users drifting into overlap trips the trigger.
        let moved = vec![interval(-0.1, 0.2), interval(0.1, 0.3)];
        assert!(needs_reschedule(&g, &moved, 0.05).unwrap());
        // Users in different groups approaching each other do not.
        let split = GroupAssignment {
            groups: vec![vec![0], vec![1]],
            guard: 0.0,
        };
        assert!(!needs_reschedule(&split, &moved, 0.05).unwrap());
    }

    #[test]
    fn deterministic_output() {
        let ests = vec![
            interval(0.0, 0.25),
            interval(0.1, 0.3),
            interval(-0.4, -0.2),
            interval(0.28, 0.5),
        ];
        let g1 = adma_group(&ests, 0.02).unwrap();
        let g2 = adma_group(&ests, 0.02).unwrap();
        assert_eq!(g1, g2);
    }

    proptest! {
        #[test]
        fn groups_partition_and_separate(
            raw in proptest::collection::vec((-1.0f64..0.9, 0.0f64..0.2), 1..12),
            guard in 0.0f64..0.1,
        ) {
            let ests: Vec<AngleEstimate> = raw
                .iter()
                .map(|&(lo, w)| interval(lo, (lo + w).min(1.0)))
                .collect();
            let g = adma_group(&ests, guard).unwrap();
            let mut seen: Vec<usize> = g.groups.concat();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..ests.len()).collect::<Vec<_>>());
            for group in &g.groups {
                for (i, &a) in group.iter().enumerate() {
                    for &b in &group[i + 1..] {
                        prop_assert!(!conflicts(&ests[a], &ests[b], guard));
                    }
                }
            }
        }
    }
}
