use serde::{Deserialize, Serialize};

use super::PlanError;

/// (column, row). Row index grows with world y.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    /// World coordinates of the corner of cell (0, 0).
    pub origin: [f64; 2],
    occupied: Vec<bool>,
}

/// A map plus any start/goal glyphs it carried.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMap {
    pub map: GridMap,
    pub start: Option<Cell>,
    pub goal: Option<Cell>,
}

impl GridMap {
    pub fn new(width: usize, height: usize, resolution: f64) -> Result<Self, PlanError> {
        if width == 0 || height == 0 {
            return Err(PlanError::Map("dimensions must be at least 1".into()));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(PlanError::Map(format!("resolution {resolution} must be positive")));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin: [0.0, 0.0],
            occupied: vec![false; width * height],
        })
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn is_occupied(&self, c: Cell) -> bool {
        self.occupied[c.1 * self.width + c.0]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.is_occupied(c)
    }

    pub fn set(&mut self, c: Cell, occ: bool) {
        self.occupied[c.1 * self.width + c.0] = occ;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    pub fn occupied_cells(&self) -> Vec<Cell> {
        self.cells().filter(|c| self.is_occupied(*c)).collect()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| (x, y)))
    }

    pub fn cell_center(&self, c: Cell) -> [f64; 2] {
        [
            self.origin[0] + (c.0 as f64 + 0.5) * self.resolution,
            self.origin[1] + (c.1 as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<Cell> {
        let x = ((p[0] - self.origin[0]) / self.resolution).floor();
        let y = ((p[1] - self.origin[1]) / self.resolution).floor();
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        let (x, y) = (x as i64, y as i64);
        self.in_bounds(x, y).then_some((x as usize, y as usize))
    }

    /// Nearest free cell to `p` (ties by row, then column).
    pub fn nearest_free(&self, p: [f64; 2]) -> Option<Cell> {
        self.cells().filter(|c| self.is_free(*c)).min_by(|a, b| {
            let da = dist2(self.cell_center(*a), p);
            let db = dist2(self.cell_center(*b), p);
            da.total_cmp(&db).then((a.1, a.0).cmp(&(b.1, b.0)))
        })
    }

    /// Marks every cell within Euclidean `clearance` cells of an obstacle.
    pub fn inflate(&self, clearance: usize) -> GridMap {
        if clearance == 0 {
            return self.clone();
        }
        let r = clearance as i64;
        let mut out = self.clone();
        for (x, y) in self.occupied_cells() {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if self.in_bounds(nx, ny) {
                        out.set((nx as usize, ny as usize), true);
                    }
                }
            }
        }
        out
    }

    /// ASCII glyphs, top row first ('#' occupied, '.' free).
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                s.push(if self.is_occupied((x, y)) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    /// Parses the ASCII format. The first text line is the top row.
    pub fn from_ascii(text: &str, resolution: f64) -> Result<LoadedMap, PlanError> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(PlanError::Map("empty map".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut map = GridMap::new(width, height, resolution)?;
        let (mut start, mut goal) = (None, None);
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(PlanError::Map(format!("ragged row {}", r + 1)));
            }
            let y = height - 1 - r;
            for (x, ch) in line.chars().enumerate() {
                match ch {
                    '#' | 'O' => map.set((x, y), true),
                    '.' => {}
                    'S' => start = Some((x, y)),
                    'G' => goal = Some((x, y)),
                    other => {
                        return Err(PlanError::Map(format!(
                            "unknown glyph `{other}` at row {}, column {}",
                            r + 1,
                            x + 1
                        )))
                    }
                }
            }
        }
        Ok(LoadedMap { map, start, goal })
    }

    /// Parses an 8-bit PGM (P2 or P5). Occupied iff value < 128. The first
    /// raster row is the top row.
    pub fn from_pgm(bytes: &[u8], resolution: f64) -> Result<GridMap, PlanError> {
        let bad = |m: &str| PlanError::Map(format!("pgm: {m}"));
        let mut pos = 0;
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let begin = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if begin == pos {
                return Err(bad("truncated header"));
            }
            tokens.push(std::str::from_utf8(&bytes[begin..pos]).map_err(|_| bad("header is not ascii"))?);
        }
        let magic = tokens[0];
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit maxval supported"));
        }
        let values: Vec<usize> = match magic {
            "P5" => {
                let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
                if data.len() < w * h {
                    return Err(bad("raster too short"));
                }
                data[..w * h].iter().map(|b| *b as usize).collect()
            }
            "P2" => {
                let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad("raster is not ascii"))?;
                let vals = text.split_whitespace().map(num).collect::<Result<Vec<_>, _>>()?;
                if vals.len() != w * h {
                    return Err(bad("raster length mismatch"));
                }
                vals
            }
            _ => return Err(bad("magic must be P2 or P5")),
        };
        let mut map = GridMap::new(w, h, resolution)?;
        for (i, v) in values.iter().enumerate() {
            let (x, r) = (i % w, i / w);
            map.set((x, h - 1 - r), *v < 128);
        }
        Ok(map)
    }
}

pub(crate) fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_basics() {
        let m = GridMap::from_ascii("...\n...\n...\n", 1.0).unwrap();
        assert_eq!(m.map.occupied_count(), 0);
        let m = GridMap::from_ascii("S..\n.#.\n..G\n", 1.0).unwrap();
        assert_eq!(m.map.occupied_cells(), vec![(1, 1)]);
        assert_eq!(m.start, Some((0, 2)));
        assert_eq!(m.goal, Some((2, 0)));
        assert!(GridMap::from_ascii("..\n...\n", 1.0).is_err());
        assert!(GridMap::from_ascii(".x.\n", 1.0).is_err());
    }

    #[test]
    fn ascii_round_trip() {
        let text = "#..\n.O.\n..#\n";
        let m = GridMap::from_ascii(text, 0.5).unwrap().map;
        assert_eq!(m.to_ascii(), "#..\n.#.\n..#\n");
    }

    #[test]
    fn pgm_threshold() {
        let p2 = b"P2\n# c\n2 1\n255\n127 128\n";
        let m = GridMap::from_pgm(p2, 1.0).unwrap();
        assert!(m.is_occupied((0, 0)) && m.is_free((1, 0)));
        let mut p5 = b"P5 2 1 255\n".to_vec();
        p5.extend([127u8, 128u8]);
        assert_eq!(GridMap::from_pgm(&p5, 1.0).unwrap(), m);
        assert!(GridMap::from_pgm(b"P3 1 1 255\n0", 1.0).is_err());
        assert!(GridMap::from_pgm(b"P2 2", 1.0).is_err());
    }

    #[test]
    fn inflation_is_euclidean() {
        let mut m = GridMap::new(5, 5, 1.0).unwrap();
        m.set((2, 2), true);
        let i = m.inflate(1);
        assert_eq!(i.occupied_count(), 5);
        assert_eq!(m.inflate(2).occupied_count(), 13);
    }

    #[test]
    fn world_cell_mapping() {
        let m = GridMap::new(4, 4, 0.5).unwrap();
        assert_eq!(m.cell_center((1, 2)), [0.75, 1.25]);
        assert_eq!(m.cell_of([0.75, 1.25]), Some((1, 2)));
        assert_eq!(m.cell_of([-0.1, 0.0]), None);
    }
}
