//! Payload abstraction shared by the steppers and the fabric.
//!
//! A [`Block`] is either a real [`Matrix`] or a [`ShapeOnly`] placeholder that
//! carries dimensions but no data. Steppers are generic over `Block`, so the
//! same schedule drives both exact numerics on small models and pure timing
//! and memory simulation on models too large to materialize.

use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Scalar};
use super::muon::{self, MuonHyper};
use crate::error::{Error, Result};

/// Rectangle `[row, row + rows) x [col, col + cols)` of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub fn full(rows: usize, cols: usize) -> Self {
        Region {
            row: 0,
            col: 0,
            rows,
            cols,
        }
    }

    pub fn elems(&self) -> usize {
        self.rows * self.cols
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.row < other.row + other.rows
            && other.row < self.row + self.rows
            && self.col < other.col + other.cols
            && other.col < self.col + self.cols
    }
}

pub trait Block: Clone + Send + Sync + std::fmt::Debug + 'static {
    fn zeros(rows: usize, cols: usize) -> Self;
    fn shape(&self) -> (usize, usize);
    fn extract(&self, region: &Region) -> Result<Self>;
    /// Reassemble a `rows x cols` block from tiles.
    fn assemble<'a>(
        rows: usize,
        cols: usize,
        parts: impl IntoIterator<Item = (&'a Region, &'a Self)>,
    ) -> Result<Self>;
    fn momentum_update(m: &Self, g: &Self, hyper: &MuonHyper) -> Result<(Self, Self)>;
    fn orthogonalize(&self, hyper: &MuonHyper) -> Result<Self>;
    fn apply_update(
        p: &Self,
        u: &Self,
        hyper: &MuonHyper,
        full_rows: usize,
        full_cols: usize,
    ) -> Result<Self>;

    fn elems(&self) -> usize {
        let (r, c) = self.shape();
        r * c
    }
}

impl<T: Scalar> Block for Matrix<T> {
    fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::zeros(rows, cols)
    }

    fn shape(&self) -> (usize, usize) {
        Matrix::shape(self)
    }

    fn extract(&self, region: &Region) -> Result<Self> {
        self.submatrix(region.row, region.col, region.rows, region.cols)
    }

    fn assemble<'a>(
        rows: usize,
        cols: usize,
        parts: impl IntoIterator<Item = (&'a Region, &'a Self)>,
    ) -> Result<Self> {
        let mut out = Matrix::zeros(rows, cols);
        for (region, tile) in parts {
            if tile.shape() != (region.rows, region.cols) {
                return Err(Error::ShapeMismatch {
                    left: (region.rows, region.cols),
                    right: tile.shape(),
                });
            }
            out.paste(region.row, region.col, tile)?;
        }
        Ok(out)
    }

    fn momentum_update(m: &Self, g: &Self, hyper: &MuonHyper) -> Result<(Self, Self)> {
        muon::momentum_update(m, g, hyper)
    }

    fn orthogonalize(&self, hyper: &MuonHyper) -> Result<Self> {
        muon::newton_schulz(self, hyper)
    }

    fn apply_update(
        p: &Self,
        u: &Self,
        hyper: &MuonHyper,
        full_rows: usize,
        full_cols: usize,
    ) -> Result<Self> {
        muon::apply_update(p, u, hyper, full_rows, full_cols)
    }
}

/// Dimensions without data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeOnly {
    pub rows: usize,
    pub cols: usize,
}

impl ShapeOnly {
    fn same(a: &Self, b: &Self) -> Result<()> {
        if a != b {
            return Err(Error::ShapeMismatch {
                left: (a.rows, a.cols),
                right: (b.rows, b.cols),
            });
        }
        Ok(())
    }
}

impl Block for ShapeOnly {
    fn zeros(rows: usize, cols: usize) -> Self {
        ShapeOnly { rows, cols }
    }

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn extract(&self, region: &Region) -> Result<Self> {
        if region.row + region.rows > self.rows || region.col + region.cols > self.cols {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: (region.row + region.rows, region.col + region.cols),
            });
        }
        Ok(ShapeOnly {
            rows: region.rows,
            cols: region.cols,
        })
    }

    fn assemble<'a>(
        rows: usize,
        cols: usize,
        parts: impl IntoIterator<Item = (&'a Region, &'a Self)>,
    ) -> Result<Self> {
        for (region, tile) in parts {
            if tile.shape() != (region.rows, region.cols)
                || region.row + region.rows > rows
                || region.col + region.cols > cols
            {
                return Err(Error::ShapeMismatch {
                    left: (region.rows, region.cols),
                    right: tile.shape(),
                });
            }
        }
        Ok(ShapeOnly { rows, cols })
    }

    fn momentum_update(m: &Self, g: &Self, _hyper: &MuonHyper) -> Result<(Self, Self)> {
        Self::same(m, g)?;
        Ok((*m, *g))
    }

    fn orthogonalize(&self, _hyper: &MuonHyper) -> Result<Self> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::DegenerateShape {
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(*self)
    }

    fn apply_update(
        p: &Self,
        u: &Self,
        _hyper: &MuonHyper,
        _full_rows: usize,
        _full_cols: usize,
    ) -> Result<Self> {
        Self::same(p, u)?;
        Ok(*p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_overlap() {
        let a = Region { row: 0, col: 0, rows: 4, cols: 4 };
        let b = Region { row: 4, col: 0, rows: 4, cols: 4 };
        let c = Region { row: 3, col: 3, rows: 2, cols: 2 };
        assert!(!a.overlaps(&b));
        assert!(a.overlaps(&c));
        assert!(b.overlaps(&c));
    }

    #[test]
    fn shape_only_tracks_dimensions() {
        let s = ShapeOnly::zeros(8, 4);
        let part = s.extract(&Region { row: 4, col: 0, rows: 4, cols: 4 }).unwrap();
        assert_eq!(part.shape(), (4, 4));
        assert!(s.extract(&Region { row: 5, col: 0, rows: 4, cols: 4 }).is_err());
        assert_eq!(s.orthogonalize(&MuonHyper::default()).unwrap(), s);
    }
}
