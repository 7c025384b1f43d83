//! Labeled linear maps between hardware index spaces and tensor coordinates.
//!
//! A layout maps packed input bits (registers, threads, warps, or a shared
//! memory offset) to packed output bits (tensor dimensions). Dimensions on
//! either side are named blocks of bits; within a block bit 0 is the lowest,
//! and blocks pack in list order, the first-listed dimension occupying the
//! lowest bits. Output dimensions are listed fastest first, so the raw output
//! word of the matrix doubles as the flattened tensor index.
//!
//! The text form round-trips every layout bit-for-bit:
//!
//! ```text
//! layout A in(reg:2,thread:5,warp:1) out(dim1:4,dim0:4)
//! reg: (1,0) (0,1)
//! thread: (2,0) (4,0) (8,0) (0,2) (0,4)
//! warp: (0,8)
//! ```
//!
//! Each input dimension gets one line listing, LSB first, the image of each
//! of its basis bits as a tuple of output coordinates (in the `out(...)`
//! order), or `0` for a zero column (a broadcast bit).

use std::fmt;

use thiserror::Error;

use crate::gf2::{BitMatrix, Gf2Error, MAX_BITS};

/// Input dimension name for elements held by one thread.
pub const REG: &str = "reg";
/// Input dimension name for lanes within a warp.
pub const THREAD: &str = "thread";
/// Input dimension name for warps within a CTA.
pub const WARP: &str = "warp";
/// Input dimension name for a flat shared memory offset.
pub const OFFSET: &str = "offset";
/// Memory layout input dimension: bits that stay within one vectorized access.
pub const VECT: &str = "vect";
/// Memory layout input dimension: bits that select the bank.
pub const BANK: &str = "bank";
/// Memory layout input dimension: bits that select the row within a bank.
pub const IDX: &str = "idx";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("duplicate dimension name {name:?}")]
    DuplicateDim { name: String },
    #[error("unknown dimension {name:?}")]
    UnknownDim { name: String },
    #[error("total {side} bits {bits} exceed {MAX_BITS}")]
    TooManyBits { side: &'static str, bits: usize },
    #[error("matrix is {rows}x{cols} but dimensions declare {out_bits} output and {in_bits} input bits")]
    MatrixShapeMismatch { rows: usize, cols: usize, out_bits: usize, in_bits: usize },
    #[error("coordinate {value} out of range for dimension {dim:?} of {bits} bits")]
    CoordOutOfRange { dim: String, value: u64, bits: usize },
    #[error("point has {got} coordinates, layout has {expected} {side} dimensions")]
    PointArity { side: &'static str, expected: usize, got: usize },
    #[error("dimension mismatch composing layouts: inner output {inner:?} vs outer input {outer:?}")]
    ComposeMismatch { inner: String, outer: String },
    #[error("layout is not surjective after removing dimension {dim:?}")]
    NotSurjectiveAfterSlice { dim: String },
    #[error("layout is not surjective")]
    NotSurjective,
    #[error("reordered dimensions do not match the existing ones")]
    ReorderMismatch,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
}

/// A named block of bits on one side of a layout.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DimLabel {
    name: String,
    bits: usize,
}

impl DimLabel {
    #[must_use]
    pub fn new(name: impl Into<String>, bits: usize) -> Self {
        Self { name: name.into(), bits }
    }

    #[must_use]
    pub fn name(&self) -> &str {
        &self.name
    }

    /// log2 of the dimension size.
    #[must_use]
    pub fn bits(&self) -> usize {
        self.bits
    }

    /// The dimension size, 2^bits.
    #[must_use]
    pub fn size(&self) -> u64 {
        1 << self.bits
    }
}

/// A point in a layout's input space, one coordinate per input dimension in
/// declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HwPoint(pub Vec<u64>);

/// A point in a layout's output space, one coordinate per output dimension in
/// declaration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorPoint(pub Vec<u64>);

/// A linear map from labeled input bits to labeled output bits.
#[derive(Clone, PartialEq, Eq)]
pub struct LinearLayout {
    in_dims: Vec<DimLabel>,
    out_dims: Vec<DimLabel>,
    matrix: BitMatrix,
}

fn total_bits(dims: &[DimLabel]) -> usize {
    dims.iter().map(DimLabel::bits).sum()
}

fn check_dims(dims: &[DimLabel], side: &'static str) -> Result<(), LayoutError> {
    for (i, d) in dims.iter().enumerate() {
        if dims[..i].iter().any(|p| p.name == d.name) {
            return Err(LayoutError::DuplicateDim { name: d.name.clone() });
        }
    }
    let bits = total_bits(dims);
    if bits > MAX_BITS {
        return Err(LayoutError::TooManyBits { side, bits });
    }
    Ok(())
}

impl LinearLayout {
    pub fn new(
        in_dims: Vec<DimLabel>,
        out_dims: Vec<DimLabel>,
        matrix: BitMatrix,
    ) -> Result<Self, LayoutError> {
        check_dims(&in_dims, "input")?;
        check_dims(&out_dims, "output")?;
        let in_bits = total_bits(&in_dims);
        let out_bits = total_bits(&out_dims);
        if matrix.rows() != out_bits || matrix.cols() != in_bits {
            return Err(LayoutError::MatrixShapeMismatch {
                rows: matrix.rows(),
                cols: matrix.cols(),
                out_bits,
                in_bits,
            });
        }
        Ok(Self { in_dims, out_dims, matrix })
    }

    /// The identity map from one input dimension onto one output dimension.
    #[must_use]
    pub fn identity_tile(bits: usize, in_name: &str, out_name: &str) -> Self {
        Self::new(
            vec![DimLabel::new(in_name, bits)],
            vec![DimLabel::new(out_name, bits)],
            BitMatrix::identity(bits),
        )
        .expect("identity tile dimensions are valid")
    }

    #[must_use]
    pub fn in_dims(&self) -> &[DimLabel] {
        &self.in_dims
    }

    #[must_use]
    pub fn out_dims(&self) -> &[DimLabel] {
        &self.out_dims
    }

    #[must_use]
    pub fn matrix(&self) -> &BitMatrix {
        &self.matrix
    }

    #[must_use]
    pub fn in_bits(&self) -> usize {
        total_bits(&self.in_dims)
    }

    #[must_use]
    pub fn out_bits(&self) -> usize {
        total_bits(&self.out_dims)
    }

    #[must_use]
    pub fn in_dim(&self, name: &str) -> Option<&DimLabel> {
        self.in_dims.iter().find(|d| d.name == name)
    }

    #[must_use]
    pub fn out_dim(&self, name: &str) -> Option<&DimLabel> {
        self.out_dims.iter().find(|d| d.name == name)
    }

    /// Column offset of an input dimension's bit 0.
    pub fn in_offset(&self, name: &str) -> Result<usize, LayoutError> {
        let mut off = 0;
        for d in &self.in_dims {
            if d.name == name {
                return Ok(off);
            }
            off += d.bits;
        }
        Err(LayoutError::UnknownDim { name: name.into() })
    }

    /// Row offset of an output dimension's bit 0.
    pub fn out_offset(&self, name: &str) -> Result<usize, LayoutError> {
        let mut off = 0;
        for d in &self.out_dims {
            if d.name == name {
                return Ok(off);
            }
            off += d.bits;
        }
        Err(LayoutError::UnknownDim { name: name.into() })
    }

    /// Number of bits in the named input dimension, 0 if absent.
    #[must_use]
    pub fn in_dim_bits(&self, name: &str) -> usize {
        self.in_dim(name).map_or(0, DimLabel::bits)
    }

    /// Column values of the named input dimension's block in bit order,
    /// empty if the dimension is absent.
    #[must_use]
    pub fn in_block_cols(&self, name: &str) -> Vec<u64> {
        let Ok(off) = self.in_offset(name) else {
            return Vec::new();
        };
        (0..self.in_dim_bits(name)).map(|b| self.matrix.col_value(off + b)).collect()
    }

    /// Pack per-dimension input coordinates into the raw column index.
    pub fn pack_in(&self, point: &HwPoint) -> Result<u64, LayoutError> {
        if point.0.len() != self.in_dims.len() {
            return Err(LayoutError::PointArity {
                side: "input",
                expected: self.in_dims.len(),
                got: point.0.len(),
            });
        }
        let mut packed = 0u64;
        let mut off = 0;
        for (d, &c) in self.in_dims.iter().zip(&point.0) {
            if d.bits < MAX_BITS && c >= (1 << d.bits) {
                return Err(LayoutError::CoordOutOfRange {
                    dim: d.name.clone(),
                    value: c,
                    bits: d.bits,
                });
            }
            if d.bits > 0 {
                packed |= c << off;
                off += d.bits;
            }
        }
        Ok(packed)
    }

    /// Split a raw output word into per-dimension coordinates.
    #[must_use]
    pub fn unpack_out(&self, word: u64) -> TensorPoint {
        let mut coords = Vec::with_capacity(self.out_dims.len());
        let mut off = 0;
        for d in &self.out_dims {
            if d.bits == 0 {
                coords.push(0);
                continue;
            }
            let mask = if d.bits >= MAX_BITS { u64::MAX } else { (1 << d.bits) - 1 };
            coords.push((word >> off) & mask);
            off += d.bits;
        }
        TensorPoint(coords)
    }

    pub fn apply(&self, point: &HwPoint) -> Result<TensorPoint, LayoutError> {
        Ok(self.unpack_out(self.matrix.apply(self.pack_in(point)?)))
    }

    /// Apply on raw packed bits.
    #[must_use]
    pub fn apply_packed(&self, x: u64) -> u64 {
        self.matrix.apply(x)
    }

    /// Compose `self` after `inner`: inner's outputs must match self's inputs
    /// exactly (names, sizes, order).
    pub fn compose(&self, inner: &Self) -> Result<Self, LayoutError> {
        if self.in_dims != inner.out_dims {
            let fmt_dims = |dims: &[DimLabel]| {
                dims.iter()
                    .map(|d| format!("{}:{}", d.name, d.bits))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            return Err(LayoutError::ComposeMismatch {
                inner: fmt_dims(&inner.out_dims),
                outer: fmt_dims(&self.in_dims),
            });
        }
        Self::new(
            inner.in_dims.clone(),
            self.out_dims.clone(),
            self.matrix.mul(&inner.matrix)?,
        )
    }

    /// Label-wise block-diagonal product. Shared names concatenate their bits
    /// (self's bits in the low positions); new names append after self's, in
    /// other's order.
    pub fn product(&self, other: &Self) -> Result<Self, LayoutError> {
        let merge = |a: &[DimLabel], b: &[DimLabel]| -> Vec<DimLabel> {
            let mut merged: Vec<DimLabel> = a.to_vec();
            for d in b {
                if let Some(m) = merged.iter_mut().find(|m| m.name == d.name) {
                    m.bits += d.bits;
                } else {
                    merged.push(d.clone());
                }
            }
            merged
        };
        let in_dims = merge(&self.in_dims, &other.in_dims);
        let out_dims = merge(&self.out_dims, &other.out_dims);
        check_dims(&in_dims, "input")?;
        check_dims(&out_dims, "output")?;

        let offset_in = |dims: &[DimLabel], name: &str| -> usize {
            let mut off = 0;
            for d in dims {
                if d.name == name {
                    break;
                }
                off += d.bits;
            }
            off
        };
        // Where each operand's dimension block lands inside the merged dims.
        let place = |operand: &Self, skip_self: bool| -> (Vec<usize>, Vec<usize>) {
            let col_base: Vec<usize> = operand
                .in_dims
                .iter()
                .map(|d| {
                    offset_in(&in_dims, &d.name)
                        + if skip_self { self.in_dim_bits(&d.name) } else { 0 }
                })
                .collect();
            let row_base: Vec<usize> = operand
                .out_dims
                .iter()
                .map(|d| {
                    offset_in(&out_dims, &d.name)
                        + if skip_self {
                            self.out_dim(&d.name).map_or(0, DimLabel::bits)
                        } else {
                            0
                        }
                })
                .collect();
            (col_base, row_base)
        };

        let mut matrix = BitMatrix::zeros(total_bits(&out_dims), total_bits(&in_dims));
        for (operand, skip_self) in [(self, false), (other, true)] {
            let (col_base, row_base) = place(operand, skip_self);
            let mut col = 0;
            for (di, d) in operand.in_dims.iter().enumerate() {
                for b in 0..d.bits {
                    let src = operand.matrix.col_value(col);
                    let mut dst = 0u64;
                    let mut row = 0;
                    for (oi, od) in operand.out_dims.iter().enumerate() {
                        if od.bits == 0 {
                            continue;
                        }
                        let mask = if od.bits >= MAX_BITS { u64::MAX } else { (1 << od.bits) - 1 };
                        dst |= ((src >> row) & mask) << row_base[oi];
                        row += od.bits;
                    }
                    matrix.set_col(col_base[di] + b, dst);
                    col += 1;
                }
            }
        }
        Self::new(in_dims, out_dims, matrix)
    }

    /// A right inverse: input and output sides swap, and composing the result
    /// with `self` is the identity on the output space. Free input bits are
    /// zeroed, so broadcast inputs invert to their canonical representative.
    pub fn right_inverse(&self) -> Result<Self, LayoutError> {
        let inv = self.matrix.right_inverse().map_err(|e| match e {
            Gf2Error::NotSurjective { .. } => LayoutError::NotSurjective,
            other => LayoutError::Gf2(other),
        })?;
        Self::new(self.out_dims.clone(), self.in_dims.clone(), inv)
    }

    /// Remove one output dimension, keeping the rest of the map. The result
    /// must still be surjective onto the remaining dimensions.
    pub fn slice_out(&self, name: &str) -> Result<Self, LayoutError> {
        let off = self.out_offset(name)?;
        let bits = self.out_dim(name).map_or(0, DimLabel::bits);
        let out_dims: Vec<DimLabel> =
            self.out_dims.iter().filter(|d| d.name != name).cloned().collect();
        let low_mask = if off >= MAX_BITS { u64::MAX } else { (1u64 << off) - 1 };
        let mut matrix = BitMatrix::zeros(self.matrix.rows() - bits, self.matrix.cols());
        for c in 0..self.matrix.cols() {
            let v = self.matrix.col_value(c);
            let high = if off + bits >= MAX_BITS { 0 } else { (v >> (off + bits)) << off };
            matrix.set_col(c, (v & low_mask) | high);
        }
        let sliced = Self::new(self.in_dims.clone(), out_dims, matrix)?;
        if sliced.matrix.rank() != sliced.out_bits() {
            return Err(LayoutError::NotSurjectiveAfterSlice { dim: name.into() });
        }
        Ok(sliced)
    }

    /// Rename an input dimension.
    pub fn rename_in(&self, old: &str, new: &str) -> Result<Self, LayoutError> {
        let mut in_dims = self.in_dims.clone();
        let d = in_dims
            .iter_mut()
            .find(|d| d.name == old)
            .ok_or_else(|| LayoutError::UnknownDim { name: old.into() })?;
        d.name = new.into();
        Self::new(in_dims, self.out_dims.clone(), self.matrix.clone())
    }

    /// Rename an output dimension.
    pub fn rename_out(&self, old: &str, new: &str) -> Result<Self, LayoutError> {
        let mut out_dims = self.out_dims.clone();
        let d = out_dims
            .iter_mut()
            .find(|d| d.name == old)
            .ok_or_else(|| LayoutError::UnknownDim { name: old.into() })?;
        d.name = new.into();
        Self::new(self.in_dims.clone(), out_dims, self.matrix.clone())
    }

    /// Reorder output dimensions to the given name order (a permutation of
    /// the existing names); rows move with their dimensions.
    pub fn reorder_out(&self, names: &[&str]) -> Result<Self, LayoutError> {
        if names.len() != self.out_dims.len() {
            return Err(LayoutError::ReorderMismatch);
        }
        let mut out_dims = Vec::with_capacity(names.len());
        for &n in names {
            let d = self.out_dim(n).ok_or(LayoutError::ReorderMismatch)?;
            out_dims.push(d.clone());
        }
        if out_dims.iter().map(|d| &d.name).collect::<std::collections::BTreeSet<_>>().len()
            != out_dims.len()
        {
            return Err(LayoutError::ReorderMismatch);
        }
        let mut matrix = BitMatrix::zeros(self.matrix.rows(), self.matrix.cols());
        for c in 0..self.matrix.cols() {
            let v = self.matrix.col_value(c);
            let mut dst = 0u64;
            let mut new_off = 0;
            for d in &out_dims {
                if d.bits == 0 {
                    continue;
                }
                let old_off = self.out_offset(&d.name)?;
                let mask = if d.bits >= MAX_BITS { u64::MAX } else { (1 << d.bits) - 1 };
                dst |= ((v >> old_off) & mask) << new_off;
                new_off += d.bits;
            }
            matrix.set_col(c, dst);
        }
        Self::new(self.in_dims.clone(), out_dims, matrix)
    }

    /// Merge all input dimensions into one block named `name`, preserving bit
    /// order. Used to view a (vect, bank, idx) memory layout as offset-based.
    pub fn merge_in_dims(&self, name: &str) -> Result<Self, LayoutError> {
        Self::new(
            vec![DimLabel::new(name, self.in_bits())],
            self.out_dims.clone(),
            self.matrix.clone(),
        )
    }

    /// Split the single input dimension into named blocks (sizes must sum to
    /// the input width). Inverse of `merge_in_dims`.
    pub fn split_in_dims(&self, dims: Vec<DimLabel>) -> Result<Self, LayoutError> {
        Self::new(dims, self.out_dims.clone(), self.matrix.clone())
    }

    /// True iff the map is onto the whole output space.
    #[must_use]
    pub fn is_surjective(&self) -> bool {
        self.matrix.rank() == self.out_bits()
    }

    /// True iff the map is injective on its input space.
    #[must_use]
    pub fn is_injective(&self) -> bool {
        self.matrix.rank() == self.in_bits()
    }

    /// A distributed layout maps hardware indices (reg/thread/warp) onto a
    /// tensor: surjective, every column of weight at most 1, and all nonzero
    /// columns distinct. Zero columns are broadcast bits.
    #[must_use]
    pub fn is_distributed(&self) -> bool {
        if !self.in_dims.iter().all(|d| matches!(d.name.as_str(), REG | THREAD | WARP)) {
            return false;
        }
        if !self.is_surjective() {
            return false;
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in 0..self.matrix.cols() {
            let v = self.matrix.col_value(c);
            if v == 0 {
                continue;
            }
            if v.count_ones() > 1 || !seen.insert(v) {
                return false;
            }
        }
        true
    }

    /// A memory layout maps a flat offset (or its vect/bank/idx split) onto a
    /// tensor: invertible, with column weights 1 or 2.
    #[must_use]
    pub fn is_memory(&self) -> bool {
        let offset_like = self.in_dims.len() == 1 && self.in_dims[0].name == OFFSET;
        let split_like = self.in_dims.len() == 3
            && self.in_dims[0].name == VECT
            && self.in_dims[1].name == BANK
            && self.in_dims[2].name == IDX;
        if !(offset_like || split_like) {
            return false;
        }
        if self.in_bits() != self.out_bits() || !self.is_surjective() {
            return false;
        }
        (0..self.matrix.cols()).all(|c| matches!(self.matrix.col(c).weight(), 1 | 2))
    }

    /// Bit i is set iff bit i of the named input dimension is a zero column.
    pub fn broadcast_mask(&self, name: &str) -> Result<u64, LayoutError> {
        let off = self.in_offset(name)?;
        let bits = self.in_dim(name).map_or(0, DimLabel::bits);
        let mut mask = 0u64;
        for b in 0..bits {
            if self.matrix.col_value(off + b) == 0 {
                mask |= 1 << b;
            }
        }
        Ok(mask)
    }

    /// log2 of the number of elements a maximal contiguous vectorized access
    /// can cover: the largest k such that flattened bits 0..k map identically
    /// to register bits 0..k under the canonical right inverse.
    pub fn contiguous_log2(&self) -> Result<usize, LayoutError> {
        let inv = self.right_inverse()?;
        let Ok(reg_off) = self.in_offset(REG) else {
            return Ok(0);
        };
        let reg_bits = self.in_dim_bits(REG);
        let mut k = 0;
        while k < reg_bits && k < self.out_bits() {
            if inv.matrix.col_value(k) != 1 << (reg_off + k) {
                break;
            }
            k += 1;
        }
        Ok(k)
    }

    /// Render in the canonical text form under the given name.
    #[must_use]
    pub fn to_text(&self, name: &str) -> String {
        let dims = |ds: &[DimLabel]| {
            ds.iter().map(|d| format!("{}:{}", d.name, d.bits)).collect::<Vec<_>>().join(",")
        };
        let mut s = format!("layout {name} in({}) out({})\n", dims(&self.in_dims), dims(&self.out_dims));
        let mut col = 0;
        for d in &self.in_dims {
            if d.bits == 0 {
                continue;
            }
            let mut line = format!("{}:", d.name);
            for _ in 0..d.bits {
                let v = self.matrix.col_value(col);
                if v == 0 {
                    line.push_str(" 0");
                } else {
                    let point = self.unpack_out(v);
                    let coords =
                        point.0.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
                    line.push_str(&format!(" ({coords})"));
                }
                col += 1;
            }
            s.push_str(&line);
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for LinearLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_text("_"))
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_dim_list(s: &str, line: usize) -> Result<Vec<DimLabel>, LayoutError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let mut dims = Vec::new();
    for part in s.split(',') {
        let (name, bits) = part
            .split_once(':')
            .ok_or_else(|| LayoutError::Parse { line, msg: format!("expected name:bits, got {part:?}") })?;
        if !valid_name(name.trim()) {
            return Err(LayoutError::Parse { line, msg: format!("invalid dimension name {name:?}") });
        }
        let bits: usize = bits
            .trim()
            .parse()
            .map_err(|_| LayoutError::Parse { line, msg: format!("invalid bit count {bits:?}") })?;
        dims.push(DimLabel::new(name.trim(), bits));
    }
    Ok(dims)
}

/// Parse the canonical text form; returns the declared name and the layout.
pub fn parse_layout(text: &str) -> Result<(String, LinearLayout), LayoutError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (line_no, header) = lines
        .next()
        .ok_or(LayoutError::Parse { line: 0, msg: "empty layout text".into() })?;
    let rest = header
        .strip_prefix("layout")
        .ok_or_else(|| LayoutError::Parse { line: line_no, msg: "expected `layout` keyword".into() })?
        .trim();
    let (name, rest) = rest
        .split_once(char::is_whitespace)
        .ok_or_else(|| LayoutError::Parse { line: line_no, msg: "expected layout name".into() })?;
    if !valid_name(name) {
        return Err(LayoutError::Parse { line: line_no, msg: format!("invalid layout name {name:?}") });
    }
    let rest = rest.trim();
    let in_start = rest
        .strip_prefix("in(")
        .ok_or_else(|| LayoutError::Parse { line: line_no, msg: "expected in(...)".into() })?;
    let (in_part, rest) = in_start
        .split_once(')')
        .ok_or_else(|| LayoutError::Parse { line: line_no, msg: "unterminated in(...)".into() })?;
    let rest = rest.trim();
    let out_start = rest
        .strip_prefix("out(")
        .ok_or_else(|| LayoutError::Parse { line: line_no, msg: "expected out(...)".into() })?;
    let (out_part, tail) = out_start
        .split_once(')')
        .ok_or_else(|| LayoutError::Parse { line: line_no, msg: "unterminated out(...)".into() })?;
    if !tail.trim().is_empty() {
        return Err(LayoutError::Parse { line: line_no, msg: format!("trailing text {tail:?}") });
    }
    let in_dims = parse_dim_list(in_part, line_no)?;
    let out_dims = parse_dim_list(out_part, line_no)?;
    let out_bits = total_bits(&out_dims);
    if out_bits > MAX_BITS {
        return Err(LayoutError::TooManyBits { side: "output", bits: out_bits });
    }

    let mut matrix = BitMatrix::zeros(out_bits, total_bits(&in_dims));
    let mut col = 0;
    for d in &in_dims {
        if d.bits == 0 {
            continue;
        }
        let (line_no, line) = lines.next().ok_or_else(|| LayoutError::Parse {
            line: 0,
            msg: format!("missing column line for input dimension {:?}", d.name),
        })?;
        let body = line
            .strip_prefix(&format!("{}:", d.name))
            .ok_or_else(|| LayoutError::Parse {
                line: line_no,
                msg: format!("expected line for input dimension {:?}, got {line:?}", d.name),
            })?;
        let mut entries = Vec::new();
        let mut rest = body.trim();
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix('0') {
                entries.push(None);
                rest = r.trim_start();
            } else if let Some(r) = rest.strip_prefix('(') {
                let (tuple, r) = r.split_once(')').ok_or_else(|| LayoutError::Parse {
                    line: line_no,
                    msg: "unterminated coordinate tuple".into(),
                })?;
                let coords: Vec<u64> = tuple
                    .split(',')
                    .map(|c| c.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| LayoutError::Parse {
                        line: line_no,
                        msg: format!("invalid coordinate tuple ({tuple})"),
                    })?;
                entries.push(Some(coords));
                rest = r.trim_start();
            } else {
                return Err(LayoutError::Parse {
                    line: line_no,
                    msg: format!("unexpected token at {rest:?}"),
                });
            }
        }
        if entries.len() != d.bits {
            return Err(LayoutError::Parse {
                line: line_no,
                msg: format!("dimension {:?} has {} bits but {} entries", d.name, d.bits, entries.len()),
            });
        }
        for entry in entries {
            if let Some(coords) = entry {
                if coords.len() != out_dims.len() {
                    return Err(LayoutError::Parse {
                        line: line_no,
                        msg: format!(
                            "tuple has {} coordinates, layout has {} output dimensions",
                            coords.len(),
                            out_dims.len()
                        ),
                    });
                }
                let mut word = 0u64;
                let mut off = 0;
                for (od, &c) in out_dims.iter().zip(&coords) {
                    if od.bits < MAX_BITS && c >= (1 << od.bits) {
                        return Err(LayoutError::Parse {
                            line: line_no,
                            msg: format!("coordinate {c} out of range for {}:{}", od.name, od.bits),
                        });
                    }
                    word |= c << off;
                    off += od.bits;
                }
                matrix.set_col(col, word);
            }
            col += 1;
        }
    }
    if let Some((line_no, line)) = lines.next() {
        return Err(LayoutError::Parse { line: line_no, msg: format!("unexpected trailing line {line:?}") });
    }
    let layout = LinearLayout::new(in_dims, out_dims, matrix)?;
    Ok((name.to_string(), layout))
}
