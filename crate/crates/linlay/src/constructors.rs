//! Constructors for the standard layout families.
//!
//! All sizes here are log2: a `shape` of `[4, 4]` describes a 16x16 tensor.
//! Tensor dimensions are named `dim0`, `dim1`, ... in shape order, and every
//! constructor lists output dimensions fastest first, so the raw matrix rows
//! coincide with the flattened tensor index.

use thiserror::Error;

use crate::gf2::BitMatrix;
use crate::layout::{DimLabel, LayoutError, LinearLayout, OFFSET, REG, THREAD, WARP};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BuildError {
    #[error("per-dimension fields have different lengths")]
    MismatchedRank,
    #[error("order {order:?} is not a permutation of 0..{rank}")]
    InvalidOrder { order: Vec<usize>, rank: usize },
    #[error("dimension {dim}: registers + threads + warps cover {covered} bits, shape has {shape}")]
    DimCoverage { dim: usize, covered: usize, shape: usize },
    #[error("unsupported element bit width {bits} (expected 8, 16, or 32)")]
    UnsupportedBitwidth { bits: u32 },
    #[error("accumulator tiles are 32-bit; got bit width {bits}")]
    AccumulatorBitwidth { bits: u32 },
    #[error("swizzle parameter {name} = {value} invalid: {reason}")]
    InvalidSwizzle { name: &'static str, value: u64, reason: String },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Canonical tensor dimension name for shape position `i`.
#[must_use]
pub fn dim_name(i: usize) -> String {
    format!("dim{i}")
}

fn check_order(order: &[usize], rank: usize) -> Result<(), BuildError> {
    let mut seen = vec![false; rank];
    if order.len() != rank {
        return Err(BuildError::InvalidOrder { order: order.to_vec(), rank });
    }
    for &d in order {
        if d >= rank || seen[d] {
            return Err(BuildError::InvalidOrder { order: order.to_vec(), rank });
        }
        seen[d] = true;
    }
    Ok(())
}

/// A blocked (register/thread/warp tiled) layout specification.
///
/// Per dimension, the tensor bits split into `size_per_thread` register bits,
/// then `threads_per_warp` thread bits, then `warps_per_cta` warp bits, walked
/// in `order` (fastest dimension first) at each level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockedSpec {
    pub shape: Vec<usize>,
    pub size_per_thread: Vec<usize>,
    pub threads_per_warp: Vec<usize>,
    pub warps_per_cta: Vec<usize>,
    pub order: Vec<usize>,
}

impl BlockedSpec {
    fn validate(&self) -> Result<(), BuildError> {
        let rank = self.shape.len();
        if self.size_per_thread.len() != rank
            || self.threads_per_warp.len() != rank
            || self.warps_per_cta.len() != rank
        {
            return Err(BuildError::MismatchedRank);
        }
        check_order(&self.order, rank)?;
        for d in 0..rank {
            let covered = self.size_per_thread[d] + self.threads_per_warp[d] + self.warps_per_cta[d];
            if covered != self.shape[d] {
                return Err(BuildError::DimCoverage { dim: d, covered, shape: self.shape[d] });
            }
        }
        Ok(())
    }
}

/// Build the blocked layout: the product of identity tiles, registers first,
/// then threads, then warps, each level walking dimensions in `order`.
pub fn blocked(spec: &BlockedSpec) -> Result<LinearLayout, BuildError> {
    spec.validate()?;
    let mut layout = empty_hw_layout();
    for (label, per_dim) in [
        (REG, &spec.size_per_thread),
        (THREAD, &spec.threads_per_warp),
        (WARP, &spec.warps_per_cta),
    ] {
        for &d in &spec.order {
            let tile = LinearLayout::identity_tile(per_dim[d], label, &dim_name(d));
            layout = layout.product(&tile)?;
        }
    }
    Ok(layout)
}

/// The zero-bit hardware layout; products against it fix the canonical
/// reg/thread/warp input order.
fn empty_hw_layout() -> LinearLayout {
    LinearLayout::new(
        vec![DimLabel::new(REG, 0), DimLabel::new(THREAD, 0), DimLabel::new(WARP, 0)],
        vec![],
        BitMatrix::zeros(0, 0),
    )
    .expect("empty layout is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmaKind {
    Mma,
    Wgmma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmaOperand {
    Lhs,
    Rhs,
    Out,
}

/// A matrix-unit tile specification.
///
/// `bitwidth` is the element width of the operand (8, 16, or 32; accumulator
/// tiles require 32). `warps` gives log2 warp counts over the two output
/// dimensions of the multiply, walked in `order` (fastest first); input
/// operands broadcast across warp bits that advance the output dimension they
/// do not carry. For `Wgmma`, `warps` counts warp groups: the base tile
/// already spans the four warps of a group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MmaSpec {
    pub kind: MmaKind,
    pub operand: MmaOperand,
    pub bitwidth: u32,
    pub warps: Vec<usize>,
    pub order: Vec<usize>,
}

/// Build a matrix-unit fragment layout.
pub fn mma_tile(spec: &MmaSpec) -> Result<LinearLayout, BuildError> {
    if !matches!(spec.bitwidth, 8 | 16 | 32) {
        return Err(BuildError::UnsupportedBitwidth { bits: spec.bitwidth });
    }
    if spec.operand == MmaOperand::Out && spec.bitwidth != 32 {
        return Err(BuildError::AccumulatorBitwidth { bits: spec.bitwidth });
    }
    if spec.warps.len() != 2 {
        return Err(BuildError::MismatchedRank);
    }
    check_order(&spec.order, 2)?;
    let packing = (32 / spec.bitwidth).trailing_zeros() as usize;

    // Base tile as a product of identity tiles.
    let factors: Vec<(&str, usize, usize)> = match spec.operand {
        // (input label, output dim, bits)
        MmaOperand::Lhs | MmaOperand::Out => vec![
            (REG, 1, packing),
            (THREAD, 1, 2),
            (THREAD, 0, 3),
            (REG, 0, 1),
            (REG, 1, 1),
        ],
        MmaOperand::Rhs => vec![
            (REG, 0, packing),
            (THREAD, 0, 2),
            (THREAD, 1, 3),
            (REG, 1, 1),
        ],
    };
    let mut layout = empty_hw_layout();
    for (label, dim, bits) in factors {
        layout = layout.product(&LinearLayout::identity_tile(bits, label, &dim_name(dim)))?;
    }

    // A warp group spans four warps along dim0 of the lhs and out fragments;
    // rhs data is shared by the whole group.
    if spec.kind == MmaKind::Wgmma {
        match spec.operand {
            MmaOperand::Lhs | MmaOperand::Out => {
                layout = layout.product(&LinearLayout::identity_tile(2, WARP, &dim_name(0)))?;
            }
            MmaOperand::Rhs => layout = append_zero_in_bits(&layout, WARP, 2)?,
        }
    }

    // Which output dimension of the multiply this operand carries.
    let carried = |grid_dim: usize| match spec.operand {
        MmaOperand::Out => true,
        MmaOperand::Lhs => grid_dim == 0,
        MmaOperand::Rhs => grid_dim == 1,
    };
    for &d in &spec.order {
        if carried(d) {
            let tile = LinearLayout::identity_tile(spec.warps[d], WARP, &dim_name(d));
            layout = layout.product(&tile)?;
        } else {
            layout = append_zero_in_bits(&layout, WARP, spec.warps[d])?;
        }
    }

    // Canonical output order: dim1 (fastest) first.
    if layout.out_dims().first().map(DimLabel::name) == Some("dim0") {
        layout = layout.reorder_out(&["dim1", "dim0"])?;
    }
    Ok(layout)
}

/// Append `count` broadcast (zero-column) bits to the named input dimension.
fn append_zero_in_bits(
    layout: &LinearLayout,
    label: &str,
    count: usize,
) -> Result<LinearLayout, BuildError> {
    if count == 0 {
        return Ok(layout.clone());
    }
    let mut in_dims = layout.in_dims().to_vec();
    let block_end = match in_dims.iter().position(|d| d.name() == label) {
        Some(i) => {
            let end: usize = in_dims[..=i].iter().map(DimLabel::bits).sum();
            in_dims[i] = DimLabel::new(label, in_dims[i].bits() + count);
            end
        }
        None => {
            in_dims.push(DimLabel::new(label, count));
            layout.in_bits()
        }
    };
    let mut matrix = BitMatrix::zeros(layout.out_bits(), layout.in_bits() + count);
    for c in 0..layout.in_bits() {
        let dst = if c < block_end { c } else { c + count };
        matrix.set_col(dst, layout.matrix().col_value(c));
    }
    Ok(LinearLayout::new(in_dims, layout.out_dims().to_vec(), matrix)?)
}

/// The identity memory layout: offset bit k is flattened tensor bit k, the
/// first dimension in `order` being fastest.
pub fn unswizzled(shape: &[usize], order: &[usize]) -> Result<LinearLayout, BuildError> {
    check_order(order, shape.len())?;
    let total: usize = shape.iter().sum();
    let out_dims: Vec<DimLabel> =
        order.iter().map(|&d| DimLabel::new(dim_name(d), shape[d])).collect();
    Ok(LinearLayout::new(
        vec![DimLabel::new(OFFSET, total)],
        out_dims,
        BitMatrix::identity(total),
    )?)
}

/// A phased swizzle over a 2^m x 2^n tile.
///
/// Rows of `per_phase` consecutive lines share a phase; `max_phase` phases
/// cycle; a row with phase p stores its `vec`-element groups rotated by
/// `p XOR group`. All three parameters are powers of two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwizzleSpec {
    /// log2 of the number of rows.
    pub m: usize,
    /// log2 of the number of columns.
    pub n: usize,
    pub vec: u64,
    pub per_phase: u64,
    pub max_phase: u64,
}

impl SwizzleSpec {
    fn validate(&self) -> Result<(), BuildError> {
        let err = |name: &'static str, value: u64, reason: &str| {
            Err(BuildError::InvalidSwizzle { name, value, reason: reason.into() })
        };
        for (name, value) in [("vec", self.vec), ("per_phase", self.per_phase), ("max_phase", self.max_phase)] {
            if value == 0 || !value.is_power_of_two() {
                return err(name, value, "must be a power of two");
            }
        }
        if self.vec > (1 << self.n) {
            return err("vec", self.vec, "exceeds the number of columns");
        }
        if self.vec * self.max_phase > (1 << self.n) {
            return err("max_phase", self.max_phase, "vec * max_phase exceeds the number of columns");
        }
        if self.per_phase * self.max_phase > (1 << self.m) {
            return err("max_phase", self.max_phase, "per_phase * max_phase exceeds the number of rows");
        }
        Ok(())
    }
}

/// Build the swizzled memory layout for the tile: offset -> (dim1, dim0),
/// with offset = row * 2^n + swizzled column. The matrix is
/// [[I_n, C], [0, I_m]] where column i of C encodes
/// vec * ((2^i / per_phase) mod max_phase); the map is an involution.
pub fn mma_swizzle(spec: &SwizzleSpec) -> Result<LinearLayout, BuildError> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let mut matrix = BitMatrix::zeros(m + n, m + n);
    for j in 0..n {
        matrix.set_col(j, 1 << j);
    }
    for i in 0..m {
        let phase = ((1u64 << i) / spec.per_phase) % spec.max_phase;
        let c_col = if n >= 64 { spec.vec * phase } else { (spec.vec * phase) & ((1 << n) - 1) };
        matrix.set_col(n + i, (1 << (n + i)) | c_col);
    }
    Ok(LinearLayout::new(
        vec![DimLabel::new(OFFSET, m + n)],
        vec![DimLabel::new(dim_name(1), n), DimLabel::new(dim_name(0), m)],
        matrix,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::HwPoint;

    /// 16x16 tensor over 2 registers, 32 threads, 2 warps, dim1 fastest.
    pub(crate) fn example_blocked_spec() -> BlockedSpec {
        BlockedSpec {
            shape: vec![4, 4],
            size_per_thread: vec![1, 1],
            threads_per_warp: vec![2, 3],
            warps_per_cta: vec![1, 0],
            order: vec![1, 0],
        }
    }

    #[test]
    fn blocked_reproduces_running_example() {
        let a = blocked(&example_blocked_spec()).unwrap();
        assert_eq!(
            a.to_text("A"),
            "layout A in(reg:2,thread:5,warp:1) out(dim1:4,dim0:4)\n\
             reg: (1,0) (0,1)\n\
             thread: (2,0) (4,0) (8,0) (0,2) (0,4)\n\
             warp: (0,8)\n"
        );
        assert_eq!(
            a.matrix(),
            &BitMatrix::from_cols(8, &[0x01, 0x10, 0x02, 0x04, 0x08, 0x20, 0x40, 0x80])
        );
        assert!(a.is_distributed());
    }

    #[test]
    fn blocked_order_reversal_swaps_fastest_dim() {
        let mut spec = example_blocked_spec();
        spec.order = vec![0, 1];
        let l = blocked(&spec).unwrap();
        assert_eq!(l.out_dims()[0], DimLabel::new("dim0", 4));
        // Register bit 0 now advances dim0.
        assert_eq!(l.apply(&HwPoint(vec![1, 0, 0])).unwrap().0, vec![1, 0]);
    }

    #[test]
    fn blocked_rejects_uncovered_dims() {
        let mut spec = example_blocked_spec();
        spec.warps_per_cta = vec![0, 0];
        assert_eq!(
            blocked(&spec).unwrap_err(),
            BuildError::DimCoverage { dim: 0, covered: 3, shape: 4 }
        );
    }

    #[test]
    fn blocked_empty_spec_is_empty_map() {
        let spec = BlockedSpec {
            shape: vec![0, 0],
            size_per_thread: vec![0, 0],
            threads_per_warp: vec![0, 0],
            warps_per_cta: vec![0, 0],
            order: vec![1, 0],
        };
        let l = blocked(&spec).unwrap();
        assert_eq!(l.in_bits(), 0);
        assert_eq!(l.out_bits(), 0);
        assert!(l.is_distributed());
    }

    #[test]
    fn blocked_is_distributed_across_specs() {
        for (r, t, w) in [(0, 0, 2), (1, 1, 0), (2, 0, 0), (0, 3, 1)] {
            let spec = BlockedSpec {
                shape: vec![r + t + w, 2],
                size_per_thread: vec![r, 1],
                threads_per_warp: vec![t, 1],
                warps_per_cta: vec![w, 0],
                order: vec![0, 1],
            };
            let l = blocked(&spec).unwrap();
            assert!(l.is_distributed(), "spec {spec:?}");
            assert!(l.is_injective());
        }
    }

    #[test]
    fn mma_lhs_16_bit_fragment() {
        let spec = MmaSpec {
            kind: MmaKind::Mma,
            operand: MmaOperand::Lhs,
            bitwidth: 16,
            warps: vec![0, 0],
            order: vec![1, 0],
        };
        let l = mma_tile(&spec).unwrap();
        assert_eq!(
            l.to_text("lhs"),
            "layout lhs in(reg:3,thread:5,warp:0) out(dim1:4,dim0:4)\n\
             reg: (1,0) (0,8) (8,0)\n\
             thread: (2,0) (4,0) (0,1) (0,2) (0,4)\n"
        );
        assert!(l.is_distributed());
    }

    #[test]
    fn mma_rhs_16_bit_fragment() {
        let spec = MmaSpec {
            kind: MmaKind::Mma,
            operand: MmaOperand::Rhs,
            bitwidth: 16,
            warps: vec![0, 0],
            order: vec![1, 0],
        };
        let l = mma_tile(&spec).unwrap();
        assert_eq!(
            l.to_text("rhs"),
            "layout rhs in(reg:2,thread:5,warp:0) out(dim1:4,dim0:3)\n\
             reg: (0,1) (8,0)\n\
             thread: (0,2) (0,4) (1,0) (2,0) (4,0)\n"
        );
        assert!(l.is_distributed());
    }

    #[test]
    fn mma_out_tile_is_16_by_8_with_4_registers() {
        let spec = MmaSpec {
            kind: MmaKind::Mma,
            operand: MmaOperand::Out,
            bitwidth: 32,
            warps: vec![0, 0],
            order: vec![1, 0],
        };
        let l = mma_tile(&spec).unwrap();
        assert_eq!(l.out_dim("dim0").unwrap().bits(), 4);
        assert_eq!(l.out_dim("dim1").unwrap().bits(), 3);
        assert_eq!(l.in_dim_bits(REG), 2);
        // Register bits advance the row block (i3, row 3 of the dim0 block
        // above dim1's 3 rows) and the column pair (j2).
        let reg_off = l.in_offset(REG).unwrap();
        assert_eq!(l.matrix().col_value(reg_off), 1 << (3 + 3));
        assert_eq!(l.matrix().col_value(reg_off + 1), 1 << 2);
        assert_eq!(
            mma_tile(&MmaSpec { bitwidth: 16, ..spec }).unwrap_err(),
            BuildError::AccumulatorBitwidth { bits: 16 }
        );
    }

    #[test]
    fn mma_warp_extension_broadcasts_uncarried_dim() {
        let spec = MmaSpec {
            kind: MmaKind::Mma,
            operand: MmaOperand::Lhs,
            bitwidth: 16,
            warps: vec![1, 1],
            order: vec![1, 0],
        };
        let l = mma_tile(&spec).unwrap();
        assert_eq!(l.in_dim_bits(WARP), 2);
        // Warp bit 0 advances dim1 of the product, which the lhs does not
        // carry: broadcast. Warp bit 1 advances dim0 above the tile.
        assert_eq!(l.broadcast_mask(WARP).unwrap(), 0b01);
        let warp_off = l.in_offset(WARP).unwrap();
        assert_eq!(l.matrix().col_value(warp_off + 1), 1 << (4 + 4));
        assert_eq!(l.out_dim("dim0").unwrap().bits(), 5);
        assert!(l.is_distributed());

        let out = mma_tile(&MmaSpec { operand: MmaOperand::Out, bitwidth: 32, ..spec.clone() })
            .unwrap();
        assert_eq!(out.broadcast_mask(WARP).unwrap(), 0);

        let rhs = mma_tile(&MmaSpec { operand: MmaOperand::Rhs, ..spec }).unwrap();
        assert_eq!(rhs.broadcast_mask(WARP).unwrap(), 0b10);
    }

    #[test]
    fn wgmma_lhs_spans_the_warp_group() {
        let mma = mma_tile(&MmaSpec {
            kind: MmaKind::Mma,
            operand: MmaOperand::Lhs,
            bitwidth: 16,
            warps: vec![0, 0],
            order: vec![1, 0],
        })
        .unwrap();
        let wg = mma_tile(&MmaSpec {
            kind: MmaKind::Wgmma,
            operand: MmaOperand::Lhs,
            bitwidth: 16,
            warps: vec![0, 0],
            order: vec![1, 0],
        })
        .unwrap();
        assert_eq!(wg, mma.product(&LinearLayout::identity_tile(2, WARP, "dim0")).unwrap());
        assert_eq!(wg.out_dim("dim0").unwrap().bits(), 6);

        let rhs = mma_tile(&MmaSpec {
            kind: MmaKind::Wgmma,
            operand: MmaOperand::Rhs,
            bitwidth: 16,
            warps: vec![0, 0],
            order: vec![1, 0],
        })
        .unwrap();
        assert_eq!(rhs.in_dim_bits(WARP), 2);
        assert_eq!(rhs.broadcast_mask(WARP).unwrap(), 0b11);
    }

    #[test]
    fn unswizzled_is_identity_in_flattened_bits() {
        let l = unswizzled(&[2, 3], &[1, 0]).unwrap();
        assert!(l.matrix().is_identity());
        assert_eq!(l.out_dims()[0], DimLabel::new("dim1", 3));
        assert!(l.is_memory());

        let t = unswizzled(&[2, 3], &[0, 1]).unwrap();
        assert_eq!(t.out_dims()[0], DimLabel::new("dim0", 2));
        // Same offset, different tensor location once dim0 is fastest.
        // Coordinates follow each layout's listed order: offset 1 advances
        // dim1 under `l` but dim0 under `t`.
        assert_eq!(l.apply(&HwPoint(vec![1])).unwrap().0, vec![1, 0]);
        assert_eq!(t.apply(&HwPoint(vec![1])).unwrap().0, vec![1, 0]);
        assert_eq!(t.apply(&HwPoint(vec![4])).unwrap().0, vec![0, 1]);
    }

    #[test]
    fn swizzle_matches_phase_formula() {
        let spec = SwizzleSpec { m: 1, n: 2, vec: 2, per_phase: 1, max_phase: 2 };
        let l = mma_swizzle(&spec).unwrap();
        // Row 1 has phase 1: its two-element groups swap, so tensor location
        // (row 1, column 0) lives at offset 6.
        assert_eq!(l.apply(&HwPoint(vec![6])).unwrap(), crate::layout::TensorPoint(vec![0, 1]));
        for i in 0..2u64 {
            for j in 0..4u64 {
                let phase = (i / spec.per_phase) % spec.max_phase;
                let col = ((phase ^ (j / spec.vec)) * spec.vec) ^ (j % spec.vec);
                let offset = (i << spec.n) | col;
                assert_eq!(l.apply_packed(offset), (i << spec.n) | j);
            }
        }
        assert!(l.is_memory());
    }

    #[test]
    fn swizzle_is_an_involution() {
        let spec = SwizzleSpec { m: 3, n: 4, vec: 2, per_phase: 2, max_phase: 4 };
        let l = mma_swizzle(&spec).unwrap();
        let square = l.matrix().mul(l.matrix()).unwrap();
        assert!(square.is_identity());
    }

    #[test]
    fn swizzle_with_single_phase_is_unswizzled() {
        let spec = SwizzleSpec { m: 2, n: 2, vec: 4, per_phase: 4, max_phase: 1 };
        assert_eq!(mma_swizzle(&spec).unwrap(), unswizzled(&[2, 2], &[1, 0]).unwrap());
    }

    #[test]
    fn swizzle_rejects_out_of_range_parameters() {
        let base = SwizzleSpec { m: 2, n: 2, vec: 2, per_phase: 1, max_phase: 2 };
        assert!(mma_swizzle(&base).is_ok());
        for bad in [
            SwizzleSpec { vec: 3, ..base },
            SwizzleSpec { vec: 8, ..base },
            SwizzleSpec { max_phase: 4, ..base },
            SwizzleSpec { per_phase: 4, max_phase: 2, ..base },
            SwizzleSpec { per_phase: 0, ..base },
        ] {
            assert!(matches!(mma_swizzle(&bad), Err(BuildError::InvalidSwizzle { .. })), "{bad:?}");
        }
    }
}
