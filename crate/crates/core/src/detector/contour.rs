//! Outer-border following on binary images (Suzuki–Abe, 8-connected
//! foreground, outermost borders only) and filling of the traced borders.

use crate::frame::{Frame, Grid};

/// Neighbour offsets `(drow, dcol)`, index increasing clockwise on screen
/// starting east.
const DIRS: [(isize, isize); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];
const WEST: usize = 4;

/// Pixels of one filled outer contour, sorted row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub pixels: Vec<(usize, usize)>,
}

impl Region {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Sum of `values` over the region.
    pub fn sum(&self, values: &Frame<f64>) -> f64 {
        self.pixels.iter().map(|&(r, c)| values.get(r, c)).sum()
    }
}

fn neighbour(grid: Grid, p: (usize, usize), d: usize) -> Option<(usize, usize)> {
    let (dr, dc) = DIRS[d];
    let r = p.0.checked_add_signed(dr)?;
    let c = p.1.checked_add_signed(dc)?;
    (r < grid.height && c < grid.width).then_some((r, c))
}

fn direction(from: (usize, usize), to: (usize, usize)) -> usize {
    let d = (to.0 as isize - from.0 as isize, to.1 as isize - from.1 as isize);
    DIRS.iter().position(|&x| x == d).expect("pixels are 8-neighbours")
}

/// Follow the outer border that starts at `start`, whose west neighbour is
/// background. Returns the closed chain of border pixels.
fn trace_outer(image: &Frame<bool>, start: (usize, usize)) -> Vec<(usize, usize)> {
    let grid = image.grid;
    let fg = |p: Option<(usize, usize)>| p.is_some_and(|(r, c)| image.get(r, c));

    // clockwise search around the start, beginning after the west neighbour
    let first = (1..=8)
        .map(|i| (WEST + i) % 8)
        .find(|&d| fg(neighbour(grid, start, d)));
    let Some(d0) = first else {
        return vec![start];
    };
    let second = neighbour(grid, start, d0).expect("foreground neighbour exists");

    let mut chain = Vec::new();
    let mut prev = second;
    let mut cur = start;
    loop {
        // counterclockwise search around `cur`, beginning after `prev`
        let back = direction(cur, prev);
        let next = (1..=8)
            .map(|i| (back + 8 - i) % 8)
            .find_map(|d| neighbour(grid, cur, d).filter(|&(r, c)| image.get(r, c)))
            .expect("the previous pixel is foreground");
        chain.push(cur);
        if next == start && cur == second {
            break;
        }
        prev = cur;
        cur = next;
    }
    chain
}

/// Border pixels plus every pixel centre strictly inside the closed
/// polygon through the border pixel centres (even-odd rule).
fn fill_polygon(grid: Grid, chain: &[(usize, usize)], mask: &mut [bool]) {
    for &(r, c) in chain {
        mask[r * grid.width + c] = true;
    }
    if chain.len() < 3 {
        return;
    }
    let mut xs: Vec<f64> = Vec::new();
    let top = chain.iter().map(|p| p.0).min().expect("non-empty");
    let bottom = chain.iter().map(|p| p.0).max().expect("non-empty");
    for y in top..=bottom {
        xs.clear();
        let yf = y as f64;
        for i in 0..chain.len() {
            let (r0, c0) = chain[i];
            let (r1, c1) = chain[(i + 1) % chain.len()];
            let (y0, y1) = (r0 as f64, r1 as f64);
            // half-open rule so shared vertices are counted once
            if (y0 <= yf && yf < y1) || (y1 <= yf && yf < y0) {
                let t = (yf - y0) / (y1 - y0);
                xs.push(c0 as f64 + t * (c1 as f64 - c0 as f64));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        for pair in xs.chunks_exact(2) {
            let from = pair[0].ceil().max(0.0) as usize;
            let to = pair[1].floor() as isize;
            for c in from as isize..=to {
                mask[y * grid.width + c as usize] = true;
            }
        }
    }
}

/// Filled regions of the outermost borders of the 8-connected foreground.
/// Foreground inside the hole of another region belongs to that region.
pub fn contour_regions(image: &Frame<bool>) -> Vec<Region> {
    let grid = image.grid;
    let mut claimed = vec![false; grid.pixels()];
    let mut regions = Vec::new();
    for r in 0..grid.height {
        for c in 0..grid.width {
            if !image.get(r, c) || claimed[r * grid.width + c] {
                continue;
            }
            if c > 0 && image.get(r, c - 1) {
                continue;
            }
            let chain = trace_outer(image, (r, c));
            let mut mask = vec![false; grid.pixels()];
            fill_polygon(grid, &chain, &mut mask);
            let mut pixels = Vec::new();
            for (i, m) in mask.iter().enumerate() {
                if *m {
                    claimed[i] = true;
                    pixels.push((i / grid.width, i % grid.width));
                }
            }
            regions.push(Region { pixels });
        }
    }
    regions
}
