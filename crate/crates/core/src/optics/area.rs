use std::io::{Read, Write};
use std::path::Path;

use crate::error::{domain, Result};
use crate::io::{read_grid, write_grid};

const UM: f64 = 1e-6;

/// Response-weighted detector area sampled on a square grid in the aperture
/// plane. `origin` is the center of cell (0, 0); rows run along +y.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveAreaMap {
    cell_size: f64,
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    weights: Vec<f64>,
}

impl ActiveAreaMap {
    pub fn new(cell_size: f64, origin: [f64; 2], nx: usize, weights: Vec<f64>) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(domain(format!("cell size must be > 0, got {cell_size}")));
        }
        if nx == 0 || weights.is_empty() || weights.len() % nx != 0 {
            return Err(domain(format!(
                "{} weights do not form rows of {nx} cells",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(domain(format!("weights must lie in [0, 1], got {w}")));
        }
        let map = ActiveAreaMap {
            cell_size,
            origin,
            nx,
            ny: weights.len() / nx,
            weights,
        };
        if map.weight_sum() <= 0.0 {
            return Err(domain("active area map has zero effective area"));
        }
        Ok(map)
    }

    pub fn from_rows(cell_size: f64, origin: [f64; 2], rows: &[Vec<f64>]) -> Result<Self> {
        let nx = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nx) {
            return Err(domain("ragged weight grid"));
        }
        Self::new(cell_size, origin, nx, rows.concat())
    }

    /// Uniform disc, with edge cells weighted by their covered fraction.
    pub fn uniform_disc(center: [f64; 2], radius: f64, cell_size: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(domain(format!("disc radius must be > 0, got {radius}")));
        }
        let n = (2.0 * radius / cell_size).ceil() as usize + 1;
        let half = (n as f64 - 1.0) / 2.0;
        let origin = [center[0] - half * cell_size, center[1] - half * cell_size];
        const SUB: usize = 16;
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let cx = origin[0] + i as f64 * cell_size - center[0];
                let cy = origin[1] + j as f64 * cell_size - center[1];
                let mut inside = 0usize;
                for sj in 0..SUB {
                    for si in 0..SUB {
                        let x = cx + ((si as f64 + 0.5) / SUB as f64 - 0.5) * cell_size;
                        let y = cy + ((sj as f64 + 0.5) / SUB as f64 - 0.5) * cell_size;
                        if x * x + y * y <= radius * radius {
                            inside += 1;
                        }
                    }
                }
                weights.push(inside as f64 / (SUB * SUB) as f64);
            }
        }
        Self::new(cell_size, origin, n, weights)
    }

    /// Normalized spot response of a reconstructed quadrant sampled at `step`.
    pub fn quarter_disc(spad: &QuarterDiscSpad, step: f64) -> Result<Self> {
        let (origin, n) = spad.scan_window(step);
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let x = origin[0] + i as f64 * step;
                let y = origin[1] + j as f64 * step;
                weights.push(spad.spot_response(x, y));
            }
        }
        let max = weights.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(domain("reconstructed quadrant has no response"));
        }
        Self::new(step, origin, n, weights.into_iter().map(|w| w / max).collect())
    }

    /// The reconstructed quadrant at the 800 nm scan pitch.
    pub fn default_quarter_disc() -> Self {
        Self::quarter_disc(&QuarterDiscSpad::default(), 0.8 * UM)
            .expect("default quadrant reconstruction is valid")
    }

    /// A single cell of the given area centered at `center`.
    pub fn point(center: [f64; 2], area: f64, weight: f64) -> Result<Self> {
        Self::new(area.sqrt(), center, 1, vec![weight])
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// cell_size² · Σ weights, in m².
    pub fn effective_area(&self) -> f64 {
        self.cell_size * self.cell_size * self.weight_sum()
    }

    /// Response-weighted centroid in aperture-plane coordinates.
    pub fn centroid(&self) -> [f64; 2] {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (x, y, w) in self.cells() {
            sx += w * x;
            sy += w * y;
        }
        let total = self.weight_sum();
        [sx / total, sy / total]
    }

    /// `(x, y, weight)` for every cell with nonzero weight.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(move |(k, &w)| {
            let (i, j) = (k % self.nx, k / self.nx);
            (
                self.origin[0] + i as f64 * self.cell_size,
                self.origin[1] + j as f64 * self.cell_size,
                w,
            )
        })
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        ActiveAreaMap {
            origin: [self.origin[0] + dx, self.origin[1] + dy],
            ..self.clone()
        }
    }

    /// Reads the grid format: `cell_size_um,origin_x_um,origin_y_um`, a row
    /// of values, then row-major weights.
    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let grid = read_grid(rdr)?;
        let cell = grid.require("cell_size_um")? * UM;
        let origin = [
            grid.require("origin_x_um")? * UM,
            grid.require("origin_y_um")? * UM,
        ];
        Self::from_rows(cell, origin, &grid.rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_grid(
            w,
            &[
                ("cell_size_um", self.cell_size / UM),
                ("origin_x_um", self.origin[0] / UM),
                ("origin_y_um", self.origin[1] / UM),
            ],
            self.weights.chunks(self.nx).map(<[f64]>::to_vec),
        )
    }
}

/// One quadrant of the split circular aperture, reconstructed from the
/// aperture size, the ~2 µm guard-ring loss and a 60 µm² response-weighted
/// area. The quadrant occupies x, y > 0 with the aperture center at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarterDiscSpad {
    /// Half the gap between neighbouring quadrants.
    pub half_gap: f64,
    /// Outer radius of the implanted anode.
    pub drawn_radius: f64,
    /// Width lost to the guard ring on every edge.
    pub guard_inset: f64,
    /// FWHM of the focused probe spot.
    pub spot_fwhm: f64,
}

impl Default for QuarterDiscSpad {
    fn default() -> Self {
        QuarterDiscSpad {
            half_gap: 1.0 * UM,
            drawn_radius: 14.7 * UM,
            guard_inset: 2.0 * UM,
            spot_fwhm: 1.6 * UM,
        }
    }
}

impl QuarterDiscSpad {
    /// 1 inside the region that avalanches, 0 elsewhere.
    pub fn is_active(&self, x: f64, y: f64) -> bool {
        let edge = self.half_gap + self.guard_inset;
        let r = self.drawn_radius - self.guard_inset;
        x >= edge && y >= edge && x * x + y * y <= r * r
    }

    /// Response to a Gaussian spot centered at (x, y), in [0, 1].
    pub fn spot_response(&self, x: f64, y: f64) -> f64 {
        const N: i32 = 20;
        let sigma = self.spot_fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
        let h = 4.0 * sigma / N as f64;
        let (mut hit, mut total) = (0.0, 0.0);
        for j in -N..=N {
            for i in -N..=N {
                let (dx, dy) = (i as f64 * h, j as f64 * h);
                let g = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                total += g;
                if self.is_active(x + dx, y + dy) {
                    hit += g;
                }
            }
        }
        hit / total
    }

    /// Scan window covering the quadrant with a margin of a few spot widths.
    pub fn scan_window(&self, step: f64) -> ([f64; 2], usize) {
        let start = -2.0 * UM;
        let stop = self.drawn_radius + 3.0 * self.spot_fwhm;
        let n = ((stop - start) / step).ceil() as usize + 1;
        ([start, start], n)
    }
}
