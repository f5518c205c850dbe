use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::map::{Cell, GridMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionParams {
    /// Jitter standard deviation, cells.
    pub sigma: f64,
    pub miss: f64,
    pub dilation: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            miss: 0.1,
            dilation: 0.2,
        }
    }
}

impl PerceptionParams {
    pub fn exact() -> Self {
        Self {
            sigma: 0.0,
            miss: 0.0,
            dilation: 0.0,
        }
    }
}

/// What happened to one true obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleOutcome {
    pub cells: Vec<Cell>,
    pub missed: bool,
    pub shift: (i64, i64),
    pub dilated: bool,
}

/// 8-connected components of occupied cells, ordered by first cell
/// (row-major).
pub fn components(map: &GridMap) -> Vec<Vec<Cell>> {
    let mut seen = vec![false; map.width * map.height];
    let mut out = Vec::new();
    for c in map.cells() {
        if !map.is_occupied(c) || seen[c.1 * map.width + c.0] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![c];
        seen[c.1 * map.width + c.0] = true;
        while let Some(cur) = stack.pop() {
            comp.push(cur);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (cur.0 as i64 + dx, cur.1 as i64 + dy);
                    if !map.in_bounds(nx, ny) {
                        continue;
                    }
                    let n = (nx as usize, ny as usize);
                    if map.is_occupied(n) && !seen[n.1 * map.width + n.0] {
                        seen[n.1 * map.width + n.0] = true;
                        stack.push(n);
                    }
                }
            }
        }
        comp.sort_by_key(|c| (c.1, c.0));
        out.push(comp);
    }
    out
}

/// Perceived map plus per-obstacle outcomes. Each obstacle consumes the same
/// four draws whatever the parameters, so outcomes are coupled across
/// parameter settings under one seed.
pub fn perceive_detailed(truth: &GridMap, params: &PerceptionParams, seed: u64) -> (GridMap, Vec<ObstacleOutcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GridMap::new(truth.width, truth.height, truth.resolution).expect("truth map is valid");
    out.origin = truth.origin;
    let mut outcomes = Vec::new();
    for comp in components(truth) {
        let u_miss: f64 = rng.random();
        let u_dil: f64 = rng.random();
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        let missed = u_miss < params.miss;
        let dilated = u_dil < params.dilation;
        let shift = ((params.sigma * zx).round() as i64, (params.sigma * zy).round() as i64);
        if !missed {
            let r = i64::from(dilated);
            for &(x, y) in &comp {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx != 0 && dy != 0 {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + shift.0 + dx, y as i64 + shift.1 + dy);
                        if out.in_bounds(nx, ny) {
                            out.set((nx as usize, ny as usize), true);
                        }
                    }
                }
            }
        }
        outcomes.push(ObstacleOutcome {
            cells: comp,
            missed,
            shift,
            dilated,
        });
    }
    (out, outcomes)
}

pub fn perceive_map(truth: &GridMap, params: &PerceptionParams, seed: u64) -> GridMap {
    perceive_detailed(truth, params, seed).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> GridMap {
        GridMap::from_ascii("..........\n.##....#..\n.##.......\n......###.\n..........\n", 1.0)
            .unwrap()
            .map
    }

    #[test]
    fn exact_perception_is_identity() {
        let t = truth();
        assert_eq!(perceive_map(&t, &PerceptionParams::exact(), 5), t);
    }

    #[test]
    fn certain_miss_empties_map() {
        let p = PerceptionParams {
            miss: 1.0,
            ..PerceptionParams::default()
        };
        assert_eq!(perceive_map(&truth(), &p, 5).occupied_count(), 0);
    }

    #[test]
    fn components_found() {
        assert_eq!(components(&truth()).len(), 3);
    }

    #[test]
    fn seeded_and_coupled() {
        let t = truth();
        let a = perceive_detailed(&t, &PerceptionParams::default(), 9);
        assert_eq!(a, perceive_detailed(&t, &PerceptionParams::default(), 9));
        let more = PerceptionParams {
            miss: 0.3,
            ..PerceptionParams::default()
        };
        let b = perceive_detailed(&t, &more, 9);
        for (x, y) in a.1.iter().zip(&b.1) {
            assert!(!x.missed || y.missed);
            assert_eq!(x.shift, y.shift);
        }
    }
}
