use super::SeriesTable;
use crate::error::{contract, Error, Result};
use crate::numcore::Tensor;

/// One supervised example: lookback `x` (N×T) and target `y` (N×H).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub x: Tensor,
    pub y: Tensor,
    pub origin: usize,
}

/// All stride-1 windows of a table, materialised on demand.
///
/// Origins run over `0..=len - (lookback + horizon)`, i.e. there are
/// `len - (lookback + horizon) + 1` windows.
#[derive(Debug, Clone)]
pub struct WindowSet {
    table: SeriesTable,
    lookback: usize,
    horizon: usize,
}

impl WindowSet {
    pub fn new(table: SeriesTable, lookback: usize, horizon: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(contract("lookback and horizon must be positive"));
        }
        let required = lookback + horizon;
        if table.len() < required {
            return Err(Error::Window {
                len: table.len(),
                lookback,
                horizon,
                required,
            });
        }
        Ok(Self {
            table,
            lookback,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len() - (self.lookback + self.horizon) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_channels(&self) -> usize {
        self.table.n_channels()
    }

    pub fn table(&self) -> &SeriesTable {
        &self.table
    }

    pub fn pair(&self, origin: usize) -> WindowPair {
        let (x, y) = self.batch(&[origin]).expect("origin in range");
        let n = self.n_channels();
        WindowPair {
            x: x.reshape([n, self.lookback]).expect("same element count"),
            y: y.reshape([n, self.horizon]).expect("same element count"),
            origin,
        }
    }

    /// Channel-major batch: `x` is `[N, B, T]`, `y` is `[N, B, H]`.
    pub fn batch(&self, origins: &[usize]) -> Result<(Tensor, Tensor)> {
        if origins.is_empty() {
            return Err(contract("empty batch"));
        }
        if let Some(&bad) = origins.iter().find(|&&o| o >= self.len()) {
            return Err(contract(format!(
                "window origin {bad} out of range (have {})",
                self.len()
            )));
        }
        let n = self.n_channels();
        let b = origins.len();
        let (tl, hl) = (self.lookback, self.horizon);
        let mut x = vec![0.0; n * b * tl];
        let mut y = vec![0.0; n * b * hl];
        let vals = self.table.values();
        for (bi, &o) in origins.iter().enumerate() {
            for step in 0..tl {
                let row = &vals[(o + step) * n..(o + step + 1) * n];
                for (c, &v) in row.iter().enumerate() {
                    x[(c * b + bi) * tl + step] = v;
                }
            }
            for step in 0..hl {
                let row = &vals[(o + tl + step) * n..(o + tl + step + 1) * n];
                for (c, &v) in row.iter().enumerate() {
                    y[(c * b + bi) * hl + step] = v;
                }
            }
        }
        Ok((Tensor::new([n, b, tl], x)?, Tensor::new([n, b, hl], y)?))
    }
}

/// Every window of `table`, ordered by origin.
pub fn make_windows(
    table: &SeriesTable,
    lookback: usize,
    horizon: usize,
) -> Result<Vec<WindowPair>> {
    let set = WindowSet::new(table.clone(), lookback, horizon)?;
    Ok((0..set.len()).map(|i| set.pair(i)).collect())
}
