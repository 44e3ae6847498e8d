//! The simulation window: tile geometry, building mask, per-tile path loss
//! and the discrete intensity measure built from them.
//!
//! Tiles are stored row-major with row 0 at the top (north) edge, the same
//! order as the rows of an `.asc` file. Tile `(col, row)` lives at index
//! `row * n_cols + col`.

use std::io::{BufRead, Write};

use log::warn;

use crate::ascii::{read_ascii_grid, write_ascii_grid, AsciiGrid, DEFAULT_NODATA};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::pathloss::{analytic_pathloss, db_to_linear, linear_to_db, DbValue, LinearPower};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry<T> {
    pub n_cols: usize,
    pub n_rows: usize,
    pub cell_width: T,
    pub cell_height: T,
    /// Lower-left corner of the window in meters.
    pub origin: (T, T),
}

impl<T: Real> GridGeometry<T> {
    pub fn new(n_cols: usize, n_rows: usize, cell_width: T, cell_height: T, origin: (T, T)) -> Result<Self> {
        if n_cols == 0 || n_rows == 0 {
            return Err(Error::domain(format!("grid must have at least one tile, got {n_cols}x{n_rows}")));
        }
        if !(cell_width > T::zero() && cell_width.is_finite() && cell_height > T::zero() && cell_height.is_finite()) {
            return Err(Error::domain(format!(
                "tile size must be positive, got {cell_width} x {cell_height}"
            )));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) {
            return Err(Error::domain("grid origin must be finite"));
        }
        Ok(Self {
            n_cols,
            n_rows,
            cell_width,
            cell_height,
            origin,
        })
    }

    pub fn n_tiles(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn width(&self) -> T {
        T::from_usize(self.n_cols).unwrap() * self.cell_width
    }

    pub fn height(&self) -> T {
        T::from_usize(self.n_rows).unwrap() * self.cell_height
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn tile_area(&self) -> T {
        self.cell_width * self.cell_height
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.n_cols, index / self.n_cols)
    }

    /// Lower-left corner of a tile.
    pub fn tile_corner(&self, index: usize) -> (T, T) {
        let (col, row) = self.col_row(index);
        let from_bottom = self.n_rows - 1 - row;
        (
            self.origin.0 + T::from_usize(col).unwrap() * self.cell_width,
            self.origin.1 + T::from_usize(from_bottom).unwrap() * self.cell_height,
        )
    }

    pub fn tile_center(&self, index: usize) -> (T, T) {
        let (x, y) = self.tile_corner(index);
        let half = T::lit(0.5);
        (x + half * self.cell_width, y + half * self.cell_height)
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (self.origin.0 + half * self.width(), self.origin.1 + half * self.height())
    }
}

/// Per-tile path loss in dB; `None` marks a building (NODATA) tile.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLossGrid<T> {
    pub geometry: GridGeometry<T>,
    pub values_db: Vec<Option<T>>,
}

impl<T: Real> PathLossGrid<T> {
    pub fn new(geometry: GridGeometry<T>, values_db: Vec<Option<T>>) -> Result<Self> {
        if values_db.len() != geometry.n_tiles() {
            return Err(Error::Geometry(format!(
                "{} path-loss values for {} tiles",
                values_db.len(),
                geometry.n_tiles()
            )));
        }
        let mut positive = 0usize;
        for (i, v) in values_db.iter().enumerate() {
            let Some(v) = *v else { continue };
            let (col, row) = geometry.col_row(i);
            let lin = db_to_linear(DbValue::new(v).map_err(|_| {
                Error::domain(format!("path loss at (col {col}, row {row}) is not finite"))
            })?)
            .value();
            if !(lin > T::zero() && lin.is_finite()) {
                return Err(Error::domain(format!(
                    "path loss {v} dB at (col {col}, row {row}) is not representable as a positive linear power"
                )));
            }
            if v > T::zero() {
                positive += 1;
            }
        }
        if positive > 0 {
            warn!("{positive} tiles carry positive path-loss values (dB); accepting them as relative gains");
        }
        Ok(Self { geometry, values_db })
    }

    pub fn to_ascii(&self) -> AsciiGrid<T> {
        let nodata = T::lit(DEFAULT_NODATA);
        AsciiGrid {
            geometry: self.geometry,
            nodata,
            values: self.values_db.iter().map(|v| v.unwrap_or(nodata)).collect(),
        }
    }
}

pub fn load_pathloss_grid<T: Real, R: BufRead>(stream: R) -> Result<PathLossGrid<T>> {
    let raw = read_ascii_grid::<T, _>(stream)?;
    let values = raw
        .values
        .iter()
        .map(|&v| if raw.is_nodata(v) { None } else { Some(v) })
        .collect();
    PathLossGrid::new(raw.geometry, values)
}

pub fn write_pathloss_grid<T: Real, W: Write>(grid: &PathLossGrid<T>, out: W) -> Result<()> {
    write_ascii_grid(&grid.to_ascii(), out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingMask<T> {
    pub geometry: GridGeometry<T>,
    /// `true` when the tile contains a building.
    pub blocked: Vec<bool>,
}

impl<T: Real> BuildingMask<T> {
    pub fn new(geometry: GridGeometry<T>, blocked: Vec<bool>) -> Result<Self> {
        if blocked.len() != geometry.n_tiles() {
            return Err(Error::Geometry(format!(
                "{} mask entries for {} tiles",
                blocked.len(),
                geometry.n_tiles()
            )));
        }
        Ok(Self { geometry, blocked })
    }

    pub fn from_pathloss(grid: &PathLossGrid<T>) -> Self {
        Self {
            geometry: grid.geometry,
            blocked: grid.values_db.iter().map(Option::is_none).collect(),
        }
    }

    pub fn to_ascii(&self) -> AsciiGrid<T> {
        AsciiGrid {
            geometry: self.geometry,
            nodata: T::lit(DEFAULT_NODATA),
            values: self
                .blocked
                .iter()
                .map(|&b| if b { T::one() } else { T::zero() })
                .collect(),
        }
    }
}

/// Reads a 0/1 mask grid; any nonzero or NODATA entry counts as blocked.
pub fn load_mask<T: Real, R: BufRead>(stream: R) -> Result<BuildingMask<T>> {
    let raw = read_ascii_grid::<T, _>(stream)?;
    let blocked = raw
        .values
        .iter()
        .map(|&v| raw.is_nodata(v) || v != T::zero())
        .collect();
    BuildingMask::new(raw.geometry, blocked)
}

pub fn write_mask<T: Real, W: Write>(mask: &BuildingMask<T>, out: W) -> Result<()> {
    write_ascii_grid(&mask.to_ascii(), out)
}

/// Discrete intensity measure: tile area on free tiles, zero under buildings.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMeasure<T> {
    pub geometry: GridGeometry<T>,
    pub mass_per_tile: Vec<T>,
    pub total_mass: T,
}

impl<T: Real> IntensityMeasure<T> {
    pub fn free_tiles(&self) -> usize {
        self.mass_per_tile.iter().filter(|m| **m > T::zero()).count()
    }
}

pub fn build_intensity<T: Real>(mask: &BuildingMask<T>) -> Result<IntensityMeasure<T>> {
    let tile = mask.geometry.tile_area();
    let mass_per_tile: Vec<T> = mask
        .blocked
        .iter()
        .map(|&b| if b { T::zero() } else { tile })
        .collect();
    let free = mask.blocked.iter().filter(|b| !**b).count();
    if free == 0 {
        return Err(Error::EmptyIntensity);
    }
    let total_mass = T::from_usize(free).unwrap() * tile;
    Ok(IntensityMeasure {
        geometry: mask.geometry,
        mass_per_tile,
        total_mass,
    })
}

/// `1 / mu_d(W)`, the threshold that makes roughly the below-average tiles
/// disconnect in the high-density limit.
pub fn calibrated_tau<T: Real>(intensity: &IntensityMeasure<T>) -> Result<LinearPower<T>> {
    if !(intensity.total_mass > T::zero()) {
        return Err(Error::EmptyIntensity);
    }
    LinearPower::new(T::one() / intensity.total_mass)
}

pub fn calibrated_tau_db<T: Real>(intensity: &IntensityMeasure<T>) -> Result<DbValue<T>> {
    linear_to_db(calibrated_tau(intensity)?)
}

/// Axis-aligned obstacle in window coordinates (meters from the lower-left
/// corner). A tile is blocked when its center lies inside the rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T> {
    pub x0: T,
    pub y0: T,
    pub x1: T,
    pub y1: T,
}

impl<T: Real> Rect<T> {
    fn contains(&self, x: T, y: T) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec<T> {
    pub n_cols: usize,
    pub n_rows: usize,
    pub cell_width: T,
    pub cell_height: T,
    pub alpha: T,
    pub obstacles: Vec<Rect<T>>,
}

impl<T: Real> SyntheticSpec<T> {
    pub fn open(n_cols: usize, n_rows: usize, cell: T, alpha: T) -> Self {
        Self {
            n_cols,
            n_rows,
            cell_width: cell,
            cell_height: cell,
            alpha,
            obstacles: Vec::new(),
        }
    }

    pub fn with_obstacle(mut self, rect: Rect<T>) -> Self {
        self.obstacles.push(rect);
        self
    }
}

/// A window with the base station at its center and `min{1, s^-alpha}` path
/// loss evaluated at each tile center.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec<T>) -> Result<Scenario<T>> {
    let geometry = GridGeometry::new(
        spec.n_cols,
        spec.n_rows,
        spec.cell_width,
        spec.cell_height,
        (T::zero(), T::zero()),
    )?;
    if !(spec.alpha > T::zero()) {
        return Err(Error::domain(format!("path-loss exponent must be positive, got {}", spec.alpha)));
    }
    let (w, h) = (geometry.width(), geometry.height());
    for r in &spec.obstacles {
        let inside = r.x0 >= T::zero() && r.y0 >= T::zero() && r.x1 <= w && r.y1 <= h;
        if !(r.x0 < r.x1 && r.y0 < r.y1) || !inside {
            return Err(Error::domain(format!(
                "obstacle ({}, {})-({}, {}) is empty or outside the {w} x {h} window",
                r.x0, r.y0, r.x1, r.y1
            )));
        }
    }
    let (cx, cy) = geometry.center();
    let mut values = Vec::with_capacity(geometry.n_tiles());
    for i in 0..geometry.n_tiles() {
        let (x, y) = geometry.tile_center(i);
        if spec.obstacles.iter().any(|r| r.contains(x, y)) {
            values.push(None);
            continue;
        }
        let s = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        let ell = analytic_pathloss(s, spec.alpha)?;
        values.push(Some(linear_to_db(ell)?.value()));
    }
    Scenario::new("synthetic", PathLossGrid::new(geometry, values)?, None)
}

/// Immutable bundle of everything a replicate needs. Linear path loss is
/// cached per tile (zero on blocked tiles).
#[derive(Debug, Clone)]
pub struct Scenario<T> {
    pub name: String,
    pub pathloss: PathLossGrid<T>,
    pub mask: BuildingMask<T>,
    pub intensity: IntensityMeasure<T>,
    linear: Vec<T>,
}

impl<T: Real> Scenario<T> {
    /// Builds a scenario; the mask defaults to the NODATA pattern of the
    /// path-loss grid and must agree with it when given explicitly.
    pub fn new(name: impl Into<String>, pathloss: PathLossGrid<T>, mask: Option<BuildingMask<T>>) -> Result<Self> {
        let derived = BuildingMask::from_pathloss(&pathloss);
        let mask = match mask {
            None => derived,
            Some(mask) => {
                if mask.geometry != pathloss.geometry {
                    return Err(Error::Geometry("mask and path-loss grids have different geometry".into()));
                }
                if let Some(i) = (0..mask.blocked.len()).find(|&i| mask.blocked[i] != derived.blocked[i]) {
                    let (col, row) = mask.geometry.col_row(i);
                    return Err(Error::MaskConflict { col, row });
                }
                mask
            }
        };
        let intensity = build_intensity(&mask)?;
        let linear = pathloss
            .values_db
            .iter()
            .map(|v| match v {
                Some(db) => T::lit(10.0).powf(*db / T::lit(10.0)),
                None => T::zero(),
            })
            .collect();
        Ok(Self {
            name: name.into(),
            pathloss,
            mask,
            intensity,
            linear,
        })
    }

    pub fn geometry(&self) -> &GridGeometry<T> {
        &self.pathloss.geometry
    }

    /// Linear path loss per tile, zero on blocked tiles.
    pub fn linear_pathloss(&self) -> &[T] {
        &self.linear
    }

    pub fn is_blocked(&self, index: usize) -> bool {
        self.mask.blocked[index]
    }
}
