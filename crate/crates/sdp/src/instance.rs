//! Block-diagonal SDP instances in equality standard form.
//!
//! ```text
//! minimize   <C, X> + c_f . x_f
//! subject to <A_r, X> + B_r . x_f = b_r   for every row r
//!            X = diag(X_1, ..., X_k) PSD,  x_f free
//! ```
//!
//! Matrix coefficients are stored sparsely as upper-triangle entries. An entry
//! `(block, i, j, v)` with `i <= j` contributes `v * X_ij` to the row functional,
//! so an off-diagonal entry corresponds to the symmetric matrix with `v/2` at
//! both `(i, j)` and `(j, i)`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::SdpError;

/// One upper-triangle coefficient of a row functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Linear functional over the blocks and free variables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    /// Coefficients on free scalar variables.
    pub free: Vec<(usize, f64)>,
    /// Coefficients on PSD block entries, `i <= j`.
    pub entries: Vec<Entry>,
}

impl Functional {
    pub fn is_empty(&self) -> bool {
        self.free.is_empty() && self.entries.is_empty()
    }

    /// Value of the functional at `(x, free)`.
    pub fn eval(&self, x: &[DMatrix<f64>], free: &[f64]) -> f64 {
        let mut s = 0.0;
        for e in &self.entries {
            s += e.value * x[e.block][(e.i, e.j)];
        }
        for &(k, v) in &self.free {
            s += v * free[k];
        }
        s
    }

    /// Adds `scale * A` to the symmetric block matrices in `out`.
    pub fn add_matrix_to(&self, scale: f64, out: &mut [DMatrix<f64>]) {
        for e in &self.entries {
            if e.i == e.j {
                out[e.block][(e.i, e.i)] += scale * e.value;
            } else {
                let h = 0.5 * scale * e.value;
                out[e.block][(e.i, e.j)] += h;
                out[e.block][(e.j, e.i)] += h;
            }
        }
    }
}

/// Equality constraint `functional = rhs`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub lhs: Functional,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SdpInstance {
    /// Dimension of each PSD block; 1x1 blocks are nonnegative scalars.
    pub blocks: Vec<usize>,
    /// Number of free scalar variables.
    pub n_free: usize,
    pub rows: Vec<Row>,
    pub objective: Functional,
}

impl SdpInstance {
    pub fn new(blocks: Vec<usize>, n_free: usize) -> Self {
        Self { blocks, n_free, rows: Vec::new(), objective: Functional::default() }
    }

    pub fn add_row(&mut self, lhs: Functional, rhs: f64) -> usize {
        self.rows.push(Row { lhs, rhs });
        self.rows.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Sum of block dimensions (the barrier parameter of the cone).
    pub fn cone_order(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn zero_blocks(&self) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect()
    }

    /// Checks index ranges and finiteness of all data.
    pub fn validate(&self) -> Result<(), SdpError> {
        let check = |f: &Functional, what: &str| -> Result<(), SdpError> {
            for e in &f.entries {
                let n = *self
                    .blocks
                    .get(e.block)
                    .ok_or_else(|| SdpError::InvalidInstance(format!("{what}: block {} out of range", e.block)))?;
                if e.i > e.j || e.j >= n {
                    return Err(SdpError::InvalidInstance(format!(
                        "{what}: entry ({}, {}) invalid for block {} of size {n}",
                        e.i, e.j, e.block
                    )));
                }
                if !e.value.is_finite() {
                    return Err(SdpError::InvalidInstance(format!("{what}: non-finite coefficient")));
                }
            }
            for &(k, v) in &f.free {
                if k >= self.n_free || !v.is_finite() {
                    return Err(SdpError::InvalidInstance(format!("{what}: bad free coefficient on {k}")));
                }
            }
            Ok(())
        };
        if self.blocks.iter().any(|&n| n == 0) {
            return Err(SdpError::InvalidInstance("empty block".into()));
        }
        check(&self.objective, "objective")?;
        for (r, row) in self.rows.iter().enumerate() {
            check(&row.lhs, &format!("row {r}"))?;
            if !row.rhs.is_finite() {
                return Err(SdpError::InvalidInstance(format!("row {r}: non-finite rhs")));
            }
        }
        Ok(())
    }

    /// Sparse text form: one line per nonzero.
    ///
    /// ```text
    /// blocks <n1> <n2> ...
    /// free <count>
    /// rows <count>
    /// b <block> <i> <j> <row> <value>   row 0 is the objective, rows are 1-based
    /// f <var> <row> <value>
    /// r <row> <rhs>
    /// ```
    pub fn to_sparse_text(&self) -> String {
        let mut s = String::new();
        let dims: Vec<String> = self.blocks.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "blocks {}", dims.join(" "));
        let _ = writeln!(s, "free {}", self.n_free);
        let _ = writeln!(s, "rows {}", self.rows.len());
        let mut emit = |f: &Functional, row: usize| {
            for e in &f.entries {
                let _ = writeln!(s, "b {} {} {} {} {:?}", e.block, e.i, e.j, row, e.value);
            }
            for &(k, v) in &f.free {
                let _ = writeln!(s, "f {k} {row} {v:?}");
            }
        };
        emit(&self.objective, 0);
        for (r, row) in self.rows.iter().enumerate() {
            emit(&row.lhs, r + 1);
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.rhs != 0.0 {
                let _ = writeln!(s, "r {} {:?}", r + 1, row.rhs);
            }
        }
        s
    }

    pub fn from_sparse_text(text: &str) -> Result<Self, SdpError> {
        let mut inst = SdpInstance::default();
        let mut have_rows = false;
        for (ln, line) in text.lines().enumerate() {
            let line_no = ln + 1;
            let bad = |msg: &str| SdpError::Format { line: line_no, message: msg.to_string() };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let tag = it.next().unwrap_or_default();
            let rest: Vec<&str> = it.collect();
            let num = |k: usize| -> Result<usize, SdpError> {
                rest.get(k).and_then(|t| t.parse().ok()).ok_or_else(|| bad("expected an integer"))
            };
            let val = |k: usize| -> Result<f64, SdpError> {
                rest.get(k).and_then(|t| t.parse().ok()).ok_or_else(|| bad("expected a number"))
            };
            match tag {
                "blocks" => {
                    inst.blocks = (0..rest.len()).map(num).collect::<Result<_, _>>()?;
                }
                "free" => inst.n_free = num(0)?,
                "rows" => {
                    inst.rows = vec![Row::default(); num(0)?];
                    have_rows = true;
                }
                "b" | "f" | "r" if !have_rows => return Err(bad("data line before 'rows' header")),
                "b" => {
                    let e = Entry { block: num(0)?, i: num(1)?, j: num(2)?, value: val(4)? };
                    slot(&mut inst, num(3)?).ok_or_else(|| bad("row index out of range"))?.entries.push(e);
                }
                "f" => {
                    let (k, v) = (num(0)?, val(2)?);
                    slot(&mut inst, num(1)?).ok_or_else(|| bad("row index out of range"))?.free.push((k, v));
                }
                "r" => {
                    let row = num(0)?;
                    if row == 0 || row > inst.rows.len() {
                        return Err(bad("row index out of range"));
                    }
                    inst.rows[row - 1].rhs = val(1)?;
                }
                _ => return Err(bad("unknown line tag")),
            }
        }
        inst.validate()?;
        Ok(inst)
    }
}

fn slot(inst: &mut SdpInstance, row: usize) -> Option<&mut Functional> {
    if row == 0 {
        Some(&mut inst.objective)
    } else {
        inst.rows.get_mut(row - 1).map(|r| &mut r.lhs)
    }
}
