//! Transfer functions: push a layout through a shape-changing op without
//! moving any data.
//!
//! Shapes are log2 sizes per dimension. A layout corresponds to a shape when
//! its output dimensions are named `dim0..dimN` with matching bit counts; ops
//! canonicalize the output order (fastest dimension first) on entry, so the
//! result's raw matrix rows always equal the flattened index of the new
//! shape.

use std::fmt;

use thiserror::Error;

use crate::gf2::BitMatrix;
use crate::layout::{DimLabel, LayoutError, LinearLayout, REG};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeOpError {
    #[error("layout output dimensions do not form a shape: missing {name:?}")]
    MissingDim { name: String },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("reshape changes the element count: {from} to {to}")]
    ElementCount { from: Shape, to: Shape },
    #[error("permutation {perm:?} is invalid for rank {rank}")]
    BadPermutation { perm: Vec<usize>, rank: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("broadcast cannot grow dimension {dim} from {from} to {to} bits")]
    BadBroadcast { dim: usize, from: usize, to: usize },
    #[error("broadcast needs {needed} spare bits but the layout has {available} zero columns")]
    NotEnoughBroadcast { needed: usize, available: usize },
    #[error("layout is not splittable: {reason}")]
    NotSplittable { reason: String },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Tensor shape as log2 sizes, outermost dimension first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    #[must_use]
    pub fn rank(&self) -> usize {
        self.0.len()
    }

    #[must_use]
    pub fn total_bits(&self) -> usize {
        self.0.iter().sum()
    }

    /// Output dimension labels in canonical order, fastest (last) dim first.
    #[must_use]
    pub fn canonical_dims(&self) -> Vec<DimLabel> {
        (0..self.rank())
            .rev()
            .map(|d| DimLabel::new(crate::constructors::dim_name(d), self.0[d]))
            .collect()
    }

    /// Flattened-bit offset of dimension `d`'s bit 0 (row-major, last dim
    /// fastest).
    #[must_use]
    pub fn flat_offset(&self, d: usize) -> usize {
        self.0[d + 1..].iter().sum()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, bits) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", 1u64 << bits)?;
        }
        write!(f, "]")
    }
}

/// Read the shape a layout's output dimensions describe.
pub fn layout_shape(l: &LinearLayout) -> Result<Shape, ShapeOpError> {
    let rank = l.out_dims().len();
    let mut bits = Vec::with_capacity(rank);
    for d in 0..rank {
        let name = crate::constructors::dim_name(d);
        let dim = l.out_dim(&name).ok_or(ShapeOpError::MissingDim { name })?;
        bits.push(dim.bits());
    }
    Ok(Shape(bits))
}

/// Reorder a layout's output dimensions to the canonical fastest-first order.
pub fn canonicalize(l: &LinearLayout) -> Result<LinearLayout, ShapeOpError> {
    let shape = layout_shape(l)?;
    let names: Vec<String> =
        (0..shape.rank()).rev().map(crate::constructors::dim_name).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok(l.reorder_out(&refs)?)
}

/// A shape-changing operation on tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ShapeOp {
    /// Permute dimensions: output dim k is input dim perm[k].
    Trans { perm: Vec<usize> },
    /// Reinterpret the flattened elements under a new shape.
    Reshape { shape: Shape },
    /// Interleave two same-shaped tensors along a new size-2 innermost dim.
    Join,
    /// Drop a size-2 innermost dim, splitting into even and odd halves.
    Split,
    /// Insert a size-1 dim at `axis`.
    ExpandDims { axis: usize },
    /// Grow size-1 dims to the target shape by replication.
    Broadcast { shape: Shape },
}

impl ShapeOp {
    /// Number of tensor operands.
    #[must_use]
    pub fn arity(&self) -> usize {
        if matches!(self, ShapeOp::Join) {
            2
        } else {
            1
        }
    }

    /// Result shape for the given operand shape.
    pub fn out_shape(&self, in_shape: &Shape) -> Result<Shape, ShapeOpError> {
        match self {
            ShapeOp::Trans { perm } => {
                check_perm(perm, in_shape.rank())?;
                Ok(Shape(perm.iter().map(|&d| in_shape.0[d]).collect()))
            }
            ShapeOp::Reshape { shape } => {
                if shape.total_bits() != in_shape.total_bits() {
                    return Err(ShapeOpError::ElementCount {
                        from: in_shape.clone(),
                        to: shape.clone(),
                    });
                }
                Ok(shape.clone())
            }
            ShapeOp::Join => {
                let mut s = in_shape.0.clone();
                s.push(1);
                Ok(Shape(s))
            }
            ShapeOp::Split => {
                if in_shape.0.last() != Some(&1) {
                    return Err(ShapeOpError::NotSplittable {
                        reason: format!("innermost dimension of {in_shape} is not of size 2"),
                    });
                }
                Ok(Shape(in_shape.0[..in_shape.rank() - 1].to_vec()))
            }
            ShapeOp::ExpandDims { axis } => {
                if *axis > in_shape.rank() {
                    return Err(ShapeOpError::BadAxis { axis: *axis, rank: in_shape.rank() });
                }
                let mut s = in_shape.0.clone();
                s.insert(*axis, 0);
                Ok(Shape(s))
            }
            ShapeOp::Broadcast { shape } => {
                if shape.rank() != in_shape.rank() {
                    return Err(ShapeOpError::ShapeMismatch {
                        expected: in_shape.clone(),
                        got: shape.clone(),
                    });
                }
                for d in 0..shape.rank() {
                    if in_shape.0[d] != shape.0[d] && in_shape.0[d] != 0 {
                        return Err(ShapeOpError::BadBroadcast {
                            dim: d,
                            from: in_shape.0[d],
                            to: shape.0[d],
                        });
                    }
                }
                Ok(shape.clone())
            }
        }
    }

    /// Push a layout forward through the op.
    pub fn forward(&self, l: &LinearLayout) -> Result<LinearLayout, ShapeOpError> {
        let l = canonicalize(l)?;
        let in_shape = layout_shape(&l)?;
        let out_shape = self.out_shape(&in_shape)?;
        match self {
            ShapeOp::Trans { perm } => {
                // Old dim perm[k] becomes new dim k; rows move to the new
                // dim's flattened position.
                let mut row_map = vec![0usize; in_shape.total_bits().max(1)];
                for (k, &d) in perm.iter().enumerate() {
                    let old = in_shape.flat_offset(d);
                    let new = out_shape.flat_offset(k);
                    for b in 0..in_shape.0[d] {
                        row_map[old + b] = new + b;
                    }
                }
                let matrix = remap_rows(l.matrix(), &row_map, out_shape.total_bits());
                Ok(LinearLayout::new(l.in_dims().to_vec(), out_shape.canonical_dims(), matrix)?)
            }
            ShapeOp::Reshape { .. } => {
                // Same flattened bits, new dimension boundaries.
                Ok(LinearLayout::new(
                    l.in_dims().to_vec(),
                    out_shape.canonical_dims(),
                    l.matrix().clone(),
                )?)
            }
            ShapeOp::Join => {
                // New register bit 0 selects the operand and becomes the new
                // lowest flattened bit.
                let reg_col = l.in_offset(REG).unwrap_or(0);
                let mut in_dims = l.in_dims().to_vec();
                match in_dims.iter().position(|d| d.name() == REG) {
                    Some(i) => in_dims[i] = DimLabel::new(REG, in_dims[i].bits() + 1),
                    None => in_dims.insert(0, DimLabel::new(REG, 1)),
                }
                let mut matrix = BitMatrix::zeros(l.out_bits() + 1, l.in_bits() + 1);
                matrix.set_col(reg_col, 1);
                for c in 0..l.in_bits() {
                    let dst = if c < reg_col { c } else { c + 1 };
                    matrix.set_col(dst, l.matrix().col_value(c) << 1);
                }
                Ok(LinearLayout::new(in_dims, out_shape.canonical_dims(), matrix)?)
            }
            ShapeOp::Split => {
                if l.in_dim_bits(REG) == 0 {
                    return Err(ShapeOpError::NotSplittable {
                        reason: "the layout has no register bits to absorb the pair selector"
                            .into(),
                    });
                }
                let reg_col = l.in_offset(REG)?;
                if l.matrix().col_value(reg_col) != 1 {
                    return Err(ShapeOpError::NotSplittable {
                        reason: "register bit 0 is not the pair selector".into(),
                    });
                }
                for c in 0..l.in_bits() {
                    if c != reg_col && l.matrix().col_value(c) & 1 != 0 {
                        return Err(ShapeOpError::NotSplittable {
                            reason: format!("input bit {c} also reaches the pair selector"),
                        });
                    }
                }
                let mut in_dims = l.in_dims().to_vec();
                let i = in_dims.iter().position(|d| d.name() == REG).expect("reg exists");
                in_dims[i] = DimLabel::new(REG, in_dims[i].bits() - 1);
                let mut matrix = BitMatrix::zeros(l.out_bits() - 1, l.in_bits() - 1);
                for c in 0..l.in_bits() {
                    if c == reg_col {
                        continue;
                    }
                    let dst = if c < reg_col { c } else { c - 1 };
                    matrix.set_col(dst, l.matrix().col_value(c) >> 1);
                }
                Ok(LinearLayout::new(in_dims, out_shape.canonical_dims(), matrix)?)
            }
            ShapeOp::ExpandDims { .. } => {
                // Renames only; the inserted dim has no bits.
                Ok(LinearLayout::new(
                    l.in_dims().to_vec(),
                    out_shape.canonical_dims(),
                    l.matrix().clone(),
                )?)
            }
            ShapeOp::Broadcast { .. } => {
                let zero_cols: Vec<usize> =
                    (0..l.in_bits()).filter(|&c| l.matrix().col_value(c) == 0).collect();
                let needed: usize = (0..in_shape.rank())
                    .map(|d| out_shape.0[d] - in_shape.0[d])
                    .sum();
                if zero_cols.len() < needed {
                    return Err(ShapeOpError::NotEnoughBroadcast {
                        needed,
                        available: zero_cols.len(),
                    });
                }
                // Old rows keep their dims; grown dims add rows fed by spare
                // (zero) columns, consumed in ascending column order with the
                // fastest dimension served first.
                let mut row_map = vec![0usize; in_shape.total_bits().max(1)];
                for d in 0..in_shape.rank() {
                    let old = in_shape.flat_offset(d);
                    let new = out_shape.flat_offset(d);
                    for b in 0..in_shape.0[d] {
                        row_map[old + b] = new + b;
                    }
                }
                let mut matrix = remap_rows(l.matrix(), &row_map, out_shape.total_bits());
                let mut next_zero = zero_cols.into_iter();
                for d in (0..in_shape.rank()).rev() {
                    let new = out_shape.flat_offset(d);
                    for b in in_shape.0[d]..out_shape.0[d] {
                        let c = next_zero.next().expect("counted above");
                        matrix.set_col(c, 1 << (new + b));
                    }
                }
                Ok(LinearLayout::new(l.in_dims().to_vec(), out_shape.canonical_dims(), matrix)?)
            }
        }
    }

    /// Pull a result layout backward through the op to a layout for the
    /// operand shape.
    pub fn backward(
        &self,
        in_shape: &Shape,
        l_out: &LinearLayout,
    ) -> Result<LinearLayout, ShapeOpError> {
        let l_out = canonicalize(l_out)?;
        let got = layout_shape(&l_out)?;
        let expected = self.out_shape(in_shape)?;
        if got != expected {
            return Err(ShapeOpError::ShapeMismatch { expected, got });
        }
        match self {
            ShapeOp::Trans { perm } => {
                let mut inv = vec![0usize; perm.len()];
                for (k, &d) in perm.iter().enumerate() {
                    inv[d] = k;
                }
                ShapeOp::Trans { perm: inv }.forward(&l_out)
            }
            ShapeOp::Reshape { .. } => {
                ShapeOp::Reshape { shape: in_shape.clone() }.forward(&l_out)
            }
            ShapeOp::Join => ShapeOp::Split.forward(&l_out),
            ShapeOp::Split => ShapeOp::Join.forward(&l_out),
            ShapeOp::ExpandDims { .. } => {
                // Drop the inserted zero-bit dim and restore the old names;
                // no rows change.
                Ok(LinearLayout::new(
                    l_out.in_dims().to_vec(),
                    in_shape.canonical_dims(),
                    l_out.matrix().clone(),
                )?)
            }
            ShapeOp::Broadcast { .. } => {
                // Remove the grown rows; columns feeding them become zero
                // (broadcast) columns again.
                let out_shape = got;
                let mut keep = vec![false; out_shape.total_bits().max(1)];
                let mut row_map = vec![0usize; out_shape.total_bits().max(1)];
                for d in 0..in_shape.rank() {
                    let old = out_shape.flat_offset(d);
                    let new = in_shape.flat_offset(d);
                    for b in 0..in_shape.0[d] {
                        keep[old + b] = true;
                        row_map[old + b] = new + b;
                    }
                }
                let mut matrix = BitMatrix::zeros(in_shape.total_bits(), l_out.in_bits());
                for c in 0..l_out.in_bits() {
                    let v = l_out.matrix().col_value(c);
                    let mut dst = 0u64;
                    for (r, (&k, &m)) in keep.iter().zip(&row_map).enumerate() {
                        if k && (v >> r) & 1 == 1 {
                            dst |= 1 << m;
                        }
                    }
                    matrix.set_col(c, dst);
                }
                Ok(LinearLayout::new(
                    l_out.in_dims().to_vec(),
                    in_shape.canonical_dims(),
                    matrix,
                )?)
            }
        }
    }

    /// Which operand and input flat position feed output flat position
    /// `out_flat`. For `Split` the reported source belongs to the even half;
    /// the odd half's layout is identical.
    pub fn element_source(
        &self,
        in_shape: &Shape,
        out_flat: u64,
    ) -> Result<(usize, u64), ShapeOpError> {
        let out_shape = self.out_shape(in_shape)?;
        Ok(match self {
            ShapeOp::Trans { perm } => {
                let mut in_flat = 0u64;
                for (k, &d) in perm.iter().enumerate() {
                    let bits = out_shape.0[k];
                    if bits == 0 {
                        continue;
                    }
                    let coord = (out_flat >> out_shape.flat_offset(k)) & ((1 << bits) - 1);
                    in_flat |= coord << in_shape.flat_offset(d);
                }
                (0, in_flat)
            }
            ShapeOp::Reshape { .. } | ShapeOp::ExpandDims { .. } => (0, out_flat),
            ShapeOp::Join => ((out_flat & 1) as usize, out_flat >> 1),
            ShapeOp::Split => (0, out_flat << 1),
            ShapeOp::Broadcast { .. } => {
                let mut in_flat = 0u64;
                for d in 0..in_shape.rank() {
                    let bits = in_shape.0[d];
                    if bits == 0 {
                        continue;
                    }
                    let coord = (out_flat >> out_shape.flat_offset(d)) & ((1 << bits) - 1);
                    in_flat |= coord << in_shape.flat_offset(d);
                }
                (0, in_flat)
            }
        })
    }
}

fn check_perm(perm: &[usize], rank: usize) -> Result<(), ShapeOpError> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(ShapeOpError::BadPermutation { perm: perm.to_vec(), rank });
    }
    for &d in perm {
        if d >= rank || seen[d] {
            return Err(ShapeOpError::BadPermutation { perm: perm.to_vec(), rank });
        }
        seen[d] = true;
    }
    Ok(())
}

/// Rebuild a matrix with each old row `r` moved to `row_map[r]`.
fn remap_rows(matrix: &BitMatrix, row_map: &[usize], new_rows: usize) -> BitMatrix {
    let mut out = BitMatrix::zeros(new_rows, matrix.cols());
    for c in 0..matrix.cols() {
        let v = matrix.col_value(c);
        let mut dst = 0u64;
        for (r, &m) in row_map.iter().enumerate().take(matrix.rows()) {
            if (v >> r) & 1 == 1 {
                dst |= 1 << m;
            }
        }
        out.set_col(c, dst);
    }
    out
}
