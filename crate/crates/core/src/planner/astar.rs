use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::map::{Cell, GridMap};
use super::PlanError;
use crate::sim::tether_feasible;

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub cells: Vec<Cell>,
    pub waypoints: Vec<[f64; 3]>,
    /// Metres.
    pub length: f64,
}

impl Path {
    pub fn from_cells(map: &GridMap, cells: Vec<Cell>, depth: f64) -> Self {
        let waypoints: Vec<[f64; 3]> = cells
            .iter()
            .map(|c| {
                let p = map.cell_center(*c);
                [p[0], p[1], depth]
            })
            .collect();
        let length = polyline_length(&waypoints);
        Self {
            cells,
            waypoints,
            length,
        }
    }

    /// Cost in cell units (1 per straight step, √2 per diagonal).
    pub fn cell_cost(&self) -> f64 {
        self.cells.windows(2).map(|w| step_cost(w[0], w[1])).sum()
    }
}

pub fn polyline_length(pts: &[[f64; 3]]) -> f64 {
    pts.windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2) + (w[1][2] - w[0][2]).powi(2)).sqrt())
        .sum()
}

fn step_cost(a: Cell, b: Cell) -> f64 {
    if a.0 != b.0 && a.1 != b.1 {
        SQRT2
    } else {
        1.0
    }
}

/// Every accepted AUV node must admit one of these surface points within
/// the tether margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetherConstraint {
    pub length: f64,
    pub companion: Vec<[f64; 3]>,
    pub depth: f64,
}

impl TetherConstraint {
    pub fn admits(&self, p: [f64; 3]) -> bool {
        self.companion
            .iter()
            .any(|c| tether_feasible(*c, p, self.length).unwrap_or(false))
    }
}

/// 8-connected moves; diagonals only when both side cells are free.
pub fn neighbors(map: &GridMap, c: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
    const D: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    D.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (c.0 as i64 + dx, c.1 as i64 + dy);
        if !map.in_bounds(nx, ny) {
            return None;
        }
        let n = (nx as usize, ny as usize);
        if map.is_occupied(n) {
            return None;
        }
        if dx != 0 && dy != 0 {
            let side_a = ((c.0 as i64 + dx) as usize, c.1);
            let side_b = (c.0, (c.1 as i64 + dy) as usize);
            if map.is_occupied(side_a) || map.is_occupied(side_b) {
                return None;
            }
        }
        Some((n, if dx != 0 && dy != 0 { SQRT2 } else { 1.0 }))
    })
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    cell: Cell,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then(self.g.total_cmp(&o.g))
            .then((o.cell.1, o.cell.0).cmp(&(self.cell.1, self.cell.0)))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Octile distance; admissible and consistent for this move set.
fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    dx.max(dy) + (SQRT2 - 1.0) * dx.min(dy)
}

/// Cost-optimal path over the map inflated by `clearance` cells.
pub fn astar(
    map: &GridMap,
    start: Cell,
    goal: Cell,
    clearance: usize,
    tether: Option<&TetherConstraint>,
) -> Result<Path, PlanError> {
    let mut grid = map.inflate(clearance);
    if let Some(t) = tether {
        for c in map.cells() {
            let p = map.cell_center(c);
            if !t.admits([p[0], p[1], t.depth]) {
                grid.set(c, true);
            }
        }
    }
    for (name, c) in [("start", start), ("goal", goal)] {
        if !grid.in_bounds(c.0 as i64, c.1 as i64) {
            return Err(PlanError::OutOfBounds(name));
        }
        if grid.is_occupied(c) {
            return Err(PlanError::Blocked(name));
        }
    }
    let depth = tether.map_or(0.0, |t| t.depth);
    let n = grid.width * grid.height;
    let idx = |c: Cell| c.1 * grid.width + c.0;
    let mut g = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[idx(start)] = 0.0;
    open.push(Open {
        f: octile(start, goal),
        g: 0.0,
        cell: start,
    });
    while let Some(Open { g: gc, cell, .. }) = open.pop() {
        if closed[idx(cell)] {
            continue;
        }
        closed[idx(cell)] = true;
        if cell == goal {
            let mut cells = vec![goal];
            let mut cur = goal;
            while let Some(p) = parent[idx(cur)] {
                cells.push(p);
                cur = p;
            }
            cells.reverse();
            let mut path = Path::from_cells(map, cells, depth);
            path.length = gc * map.resolution;
            return Ok(path);
        }
        for (nb, cost) in neighbors(&grid, cell) {
            let ng = gc + cost;
            if ng < g[idx(nb)] - 1e-12 {
                g[idx(nb)] = ng;
                parent[idx(nb)] = Some(cell);
                open.push(Open {
                    f: ng + octile(nb, goal),
                    g: ng,
                    cell: nb,
                });
            }
        }
    }
    Err(PlanError::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_diagonal() {
        let m = GridMap::new(5, 5, 1.0).unwrap();
        let p = astar(&m, (0, 0), (4, 4), 0, None).unwrap();
        assert!((p.cell_cost() - 4.0 * SQRT2).abs() < 1e-12);
        assert!((p.length - 4.0 * SQRT2).abs() < 1e-12);
        assert_eq!(p.cells.len(), 5);
    }

    #[test]
    fn bisecting_wall_is_infeasible() {
        let m = GridMap::from_ascii("..#..\n..#..\n..#..\n", 1.0).unwrap().map;
        assert_eq!(astar(&m, (0, 0), (4, 0), 0, None), Err(PlanError::Infeasible));
    }

    #[test]
    fn no_corner_cutting() {
        let m = GridMap::from_ascii(".#\n#.\n", 1.0).unwrap().map;
        assert_eq!(astar(&m, (0, 1), (1, 0), 0, None), Err(PlanError::Infeasible));
    }

    #[test]
    fn blocked_endpoints_reported() {
        let m = GridMap::from_ascii("#..\n...\n", 1.0).unwrap().map;
        assert_eq!(astar(&m, (0, 1), (2, 0), 0, None), Err(PlanError::Blocked("start")));
        assert_eq!(astar(&m, (2, 0), (1, 1), 1, None), Err(PlanError::Blocked("goal")));
    }

    #[test]
    fn tether_prunes_far_nodes() {
        let m = GridMap::new(30, 3, 1.0).unwrap();
        let t = TetherConstraint {
            length: 10.0,
            companion: vec![[0.5, 1.5, 0.0]],
            depth: 2.0,
        };
        assert_eq!(astar(&m, (0, 1), (29, 1), 0, Some(&t)), Err(PlanError::Blocked("goal")));
        let p = astar(&m, (0, 1), (8, 1), 0, Some(&t)).unwrap();
        assert!(p.waypoints.iter().all(|w| t.admits(*w)));
    }
}
