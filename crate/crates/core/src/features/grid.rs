use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor3;
use crate::synth::{GridLayout, IMPLANT_COLS, IMPLANT_ROWS, N_IMPLANTS};

pub const GRID_ROWS: usize = IMPLANT_ROWS;
pub const GRID_COLS: usize = IMPLANT_COLS * N_IMPLANTS;

/// Dense `bands × rows × cols × bins` array, bins varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub bands: usize,
    pub rows: usize,
    pub cols: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(bands: usize, rows: usize, cols: usize, bins: usize) -> FeatureGrid {
        FeatureGrid { bands, rows, cols, bins, data: vec![0.0; bands * rows * cols * bins] }
    }

    #[inline]
    pub fn offset(&self, band: usize, row: usize, col: usize, bin: usize) -> usize {
        ((band * self.rows + row) * self.cols + col) * self.bins + bin
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize, bin: usize) -> f64 {
        self.data[self.offset(band, row, col, bin)]
    }

    #[inline]
    pub fn set(&mut self, band: usize, row: usize, col: usize, bin: usize, v: f64) {
        let o = self.offset(band, row, col, bin);
        self.data[o] = v;
    }

    /// Columns `implant·4 .. implant·4+4`: one implant's 8×4 array.
    pub fn implant_view(&self, implant: usize) -> FeatureGrid {
        let c0 = implant * IMPLANT_COLS;
        let mut out = FeatureGrid::zeros(self.bands, self.rows, IMPLANT_COLS, self.bins);
        for b in 0..self.bands {
            for r in 0..self.rows {
                for c in 0..IMPLANT_COLS {
                    for t in 0..self.bins {
                        out.set(b, r, c, t, self.get(b, r, c0 + c, t));
                    }
                }
            }
        }
        out
    }
}

/// Scatters `channels × bands × bins` onto the 8×8 electrode grid; cells
/// without a channel stay zero.
pub fn to_grid(values: &Tensor3, layout: &GridLayout) -> Result<FeatureGrid> {
    layout.validate()?;
    let (n_ch, bands, bins) = values.dims();
    if n_ch != layout.n_channels() {
        return Err(Error::contract(format!(
            "features have {n_ch} channels, layout has {}",
            layout.n_channels()
        )));
    }
    let mut g = FeatureGrid::zeros(bands, GRID_ROWS, GRID_COLS, bins);
    for (ch, p) in layout.positions.iter().enumerate() {
        for b in 0..bands {
            for t in 0..bins {
                g.set(b, p.row, p.grid_col(), t, values.get(ch, b, t));
            }
        }
    }
    Ok(g)
}

/// Gathers channel values back from a grid.
pub fn from_grid(grid: &FeatureGrid, layout: &GridLayout) -> Result<Tensor3> {
    layout.validate()?;
    let mut out = Tensor3::zeros((layout.n_channels(), grid.bands, grid.bins));
    for (ch, p) in layout.positions.iter().enumerate() {
        for b in 0..grid.bands {
            for t in 0..grid.bins {
                out.set(ch, b, t, grid.get(b, p.row, p.grid_col(), t));
            }
        }
    }
    Ok(out)
}
