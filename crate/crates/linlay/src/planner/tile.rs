//! Matching layouts against SIMD instruction tiles.
//!
//! An instruction tile fixes how the lowest memory offsets must be fed from
//! register (and thread) slots. A layout supports the instruction when the
//! tile divides it on the left, possibly after renumbering registers; the
//! quotient describes how the instruction is repeated to cover the rest of
//! the data.

use crate::gf2::BitMatrix;
use crate::layout::{DimLabel, LinearLayout, OFFSET, REG, THREAD};

use super::{check_elem_bits, PlanError};

/// A SIMD instruction's data contract: an identity map from its operand
/// slots onto consecutive memory offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TilePattern {
    pub name: String,
    pub layout: LinearLayout,
}

/// A successful division of a layout by a tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileMatch {
    /// New register order: position `j` reads the layout's original register
    /// bit `reg_perm[j]`. Tile slots come first, leftovers keep their
    /// relative order.
    pub reg_perm: Vec<usize>,
    /// Whether the match needed a register renumbering at all.
    pub permuted: bool,
    /// Maps the inputs the tile did not consume to the offsets above it.
    pub quotient: LinearLayout,
}

/// Contiguous vectorized load/store of `vec_bytes` per instruction.
pub fn vector_tile(elem_bits: usize, vec_bytes: usize) -> Result<TilePattern, PlanError> {
    check_elem_bits(elem_bits)?;
    if !vec_bytes.is_power_of_two() || vec_bytes * 8 < elem_bits {
        return Err(PlanError::TileMismatch(format!(
            "vector width {vec_bytes} bytes cannot hold a {elem_bits}-bit element"
        )));
    }
    let k = (vec_bytes * 8 / elem_bits).trailing_zeros() as usize;
    Ok(TilePattern {
        name: format!("vector_{vec_bytes}b"),
        layout: LinearLayout::new(
            vec![DimLabel::new(REG, k)],
            vec![DimLabel::new(OFFSET, k)],
            BitMatrix::identity(k),
        )?,
    })
}

/// Matrix-unit load/store: every thread moves 4 contiguous bytes, and groups
/// of 4 consecutive threads cover consecutive 16-byte rows.
pub fn ldmatrix_tile(elem_bits: usize) -> Result<TilePattern, PlanError> {
    check_elem_bits(elem_bits)?;
    if elem_bits > 32 {
        return Err(PlanError::TileMismatch(format!(
            "matrix-unit accesses move 32 bits per thread, not {elem_bits}"
        )));
    }
    let k = (32 / elem_bits).trailing_zeros() as usize;
    Ok(TilePattern {
        name: "ldmatrix".to_string(),
        layout: LinearLayout::new(
            vec![DimLabel::new(REG, k), DimLabel::new(THREAD, 2)],
            vec![DimLabel::new(OFFSET, k + 2)],
            BitMatrix::identity(k + 2),
        )?,
    })
}

/// Divide `l` (hardware indices to a flat offset) by the tile on the left.
///
/// Register slots may be renumbered to meet the tile; thread slots are
/// matched positionally since lanes cannot be renumbered at runtime. Every
/// input the tile does not consume must address only offsets above the tile.
pub fn match_tile(l: &LinearLayout, tile: &TilePattern) -> Result<TileMatch, PlanError> {
    let t = &tile.layout;
    if l.out_dims().len() != 1 {
        return Err(PlanError::TileMismatch(format!(
            "layout must map to a single flat dimension, found {} output dims",
            l.out_dims().len()
        )));
    }
    let d = l.out_bits();
    let m = t.out_bits();
    if m > d {
        return Err(PlanError::TileMismatch(format!(
            "tile {} covers {m} offset bits, layout has only {d}",
            tile.name
        )));
    }
    let low_mask = if m >= 64 { u64::MAX } else { (1u64 << m) - 1 };

    let l_reg = l.in_block_cols(REG);
    let l_thread = l.in_block_cols(THREAD);
    let t_reg = t.in_block_cols(REG);
    let t_thread = t.in_block_cols(THREAD);

    if t_thread.len() > l_thread.len() {
        return Err(PlanError::TileMismatch(format!(
            "tile {} needs {} thread bits, layout has {}",
            tile.name,
            t_thread.len(),
            l_thread.len()
        )));
    }
    for (j, &target) in t_thread.iter().enumerate() {
        if l_thread[j] != target {
            return Err(PlanError::TileMismatch(format!(
                "thread bit {j} addresses offset pattern {:#x}, tile {} needs {target:#x}",
                l_thread[j], tile.name
            )));
        }
    }

    let mut used = vec![false; l_reg.len()];
    let mut reg_perm = Vec::with_capacity(l_reg.len());
    for &target in &t_reg {
        let p = (0..l_reg.len())
            .find(|&p| !used[p] && l_reg[p] == target)
            .ok_or_else(|| {
                PlanError::TileMismatch(format!(
                    "no register bit addresses offset pattern {target:#x} for tile {}",
                    tile.name
                ))
            })?;
        used[p] = true;
        reg_perm.push(p);
    }
    reg_perm.extend((0..l_reg.len()).filter(|&p| !used[p]));
    let permuted = reg_perm.iter().enumerate().any(|(i, &p)| i != p);

    let leftover = |name: &str, cols: &[u64]| -> Result<Vec<u64>, PlanError> {
        for &col in cols {
            if col & low_mask != 0 {
                return Err(PlanError::TileMismatch(format!(
                    "{name} bit addressing {col:#x} straddles tile {}",
                    tile.name
                )));
            }
        }
        Ok(cols.iter().map(|&c| if m >= 64 { 0 } else { c >> m }).collect())
    };
    let q_reg = leftover(REG, &reg_perm[t_reg.len()..].iter().map(|&p| l_reg[p]).collect::<Vec<_>>())?;
    let q_thread = leftover(THREAD, &l_thread[t_thread.len()..])?;

    let mut in_dims = Vec::new();
    let mut cols = Vec::new();
    for dim in l.in_dims() {
        match dim.name() {
            REG => {
                in_dims.push(DimLabel::new(REG, q_reg.len()));
                cols.extend(&q_reg);
            }
            THREAD => {
                in_dims.push(DimLabel::new(THREAD, q_thread.len()));
                cols.extend(&q_thread);
            }
            other => {
                let block = leftover(other, &l.in_block_cols(other))?;
                in_dims.push(DimLabel::new(other, block.len()));
                cols.extend(&block);
            }
        }
    }
    let quotient = LinearLayout::new(
        in_dims,
        vec![DimLabel::new(l.out_dims()[0].name(), d - m)],
        BitMatrix::from_cols(d - m, &cols),
    )?;
    Ok(TileMatch { reg_perm, permuted, quotient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructors::{mma_tile, unswizzled, MmaKind, MmaOperand, MmaSpec};
    use crate::layout::WARP;

    fn flat(l: &LinearLayout) -> LinearLayout {
        let shape: Vec<usize> = l.out_dims().iter().map(DimLabel::bits).collect();
        LinearLayout::new(
            l.in_dims().to_vec(),
            vec![DimLabel::new(OFFSET, shape.iter().sum())],
            l.matrix().clone(),
        )
        .unwrap()
    }

    fn mma_fragment(operand: MmaOperand, bitwidth: u32) -> LinearLayout {
        mma_tile(&MmaSpec {
            kind: MmaKind::Mma,
            operand,
            bitwidth,
            warps: vec![0, 0],
            order: vec![1, 0],
        })
        .unwrap()
    }

    #[test]
    fn ldmatrix_divides_the_mma_lhs_fragment() {
        let l = flat(&mma_fragment(MmaOperand::Lhs, 16));
        let m = match_tile(&l, &ldmatrix_tile(16).unwrap()).unwrap();
        assert!(!m.permuted);
        assert_eq!(m.reg_perm, vec![0, 1, 2]);
        assert_eq!(m.quotient.in_block_cols(REG), vec![0x10, 0x01]);
        assert_eq!(m.quotient.in_block_cols(THREAD), vec![0x02, 0x04, 0x08]);
        // The tile times the quotient rebuilds the fragment exactly.
        let rebuilt = ldmatrix_tile(16).unwrap().layout.product(&m.quotient).unwrap();
        assert_eq!(rebuilt, l);
    }

    #[test]
    fn ldmatrix_rejects_the_mma_rhs_fragment() {
        // The rhs stores columns per thread, so no register bit walks
        // adjacent offsets.
        let l = flat(&mma_fragment(MmaOperand::Rhs, 16));
        assert!(matches!(
            match_tile(&l, &ldmatrix_tile(16).unwrap()),
            Err(PlanError::TileMismatch(_))
        ));
    }

    #[test]
    fn vectorization_renumbers_registers_when_needed() {
        // Registers listed slowest first: the raw order cannot vectorize,
        // but reversing the register bits can.
        let l = LinearLayout::new(
            vec![DimLabel::new(REG, 3)],
            vec![DimLabel::new(OFFSET, 3)],
            BitMatrix::from_cols(3, &[4, 2, 1]),
        )
        .unwrap();
        let m = match_tile(&l, &vector_tile(8, 4).unwrap()).unwrap();
        assert!(m.permuted);
        assert_eq!(m.reg_perm, vec![2, 1, 0]);
        assert_eq!(m.quotient.in_block_cols(REG), vec![1]);

        // Applying the permutation first makes the match direct.
        let permuted = LinearLayout::new(
            vec![DimLabel::new(REG, 3)],
            vec![DimLabel::new(OFFSET, 3)],
            BitMatrix::from_cols(3, &[1, 2, 4]),
        )
        .unwrap();
        let direct = match_tile(&permuted, &vector_tile(8, 4).unwrap()).unwrap();
        assert!(!direct.permuted);
        let rebuilt = vector_tile(8, 4).unwrap().layout.product(&direct.quotient).unwrap();
        assert_eq!(rebuilt, permuted);
    }

    #[test]
    fn running_example_vectorizes_two_elements() {
        let a = crate::constructors::blocked(&crate::constructors::BlockedSpec {
            shape: vec![4, 4],
            size_per_thread: vec![1, 1],
            threads_per_warp: vec![2, 3],
            warps_per_cta: vec![1, 0],
            order: vec![1, 0],
        })
        .unwrap();
        let inv = unswizzled(&[4, 4], &[1, 0]).unwrap().right_inverse().unwrap();
        let l = inv.compose(&a).unwrap();
        // One register bit walks adjacent offsets; the next jumps a row.
        let m = match_tile(&l, &vector_tile(16, 4).unwrap()).unwrap();
        assert!(!m.permuted);
        assert_eq!(m.quotient.in_block_cols(REG), vec![0x08]);
        assert_eq!(m.quotient.in_block_cols(WARP), vec![0x40]);
        assert!(matches!(
            match_tile(&l, &vector_tile(16, 8).unwrap()),
            Err(PlanError::TileMismatch(_))
        ));
    }

    #[test]
    fn zero_bit_tile_matches_anything() {
        let l = LinearLayout::new(
            vec![DimLabel::new(REG, 2)],
            vec![DimLabel::new(OFFSET, 2)],
            BitMatrix::from_cols(2, &[2, 1]),
        )
        .unwrap();
        let m = match_tile(&l, &vector_tile(32, 4).unwrap()).unwrap();
        assert!(!m.permuted);
        assert_eq!(m.quotient, l);
    }

    #[test]
    fn tiles_validate_their_parameters() {
        assert!(matches!(vector_tile(64, 4), Err(PlanError::TileMismatch(_))));
        assert!(matches!(ldmatrix_tile(64), Err(PlanError::TileMismatch(_))));
        assert!(matches!(vector_tile(12, 4), Err(PlanError::BadElemBits(12))));
        assert_eq!(ldmatrix_tile(8).unwrap().layout.in_dim_bits(REG), 2);
        assert_eq!(ldmatrix_tile(32).unwrap().layout.in_dim_bits(REG), 0);
    }
}
