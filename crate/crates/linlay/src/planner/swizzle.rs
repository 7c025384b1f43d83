//! Shared-memory swizzle construction: pick an address mapping that keeps
//! both the store side and the load side vectorized and conflict-free.
//!
//! The address space factors as vect x bank x idx. Accesses that differ
//! only in vect bits stay inside one vectorized transaction; accesses that
//! differ in bank bits land on different banks; accesses that differ only
//! in idx bits collide. The construction therefore steers every thread
//! direction of both layouts into the bank component whenever possible.

use serde::{Deserialize, Serialize};

use super::{check_elem_bits, BankConfig, PlanError};
use crate::gf2::{rank_of, span_contains, BitMatrix};
use crate::layout::{DimLabel, LinearLayout, BANK, IDX, REG, THREAD, VECT, WARP};

/// How thread directions are weighed against bank width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwizzleVariant {
    /// Accesses wider than one bank occupy several consecutive banks, so the
    /// highest thread bits of each side cannot collide and are ignored when
    /// choosing the swizzle.
    BankAdjusted,
    /// Consider every thread bit, regardless of access width.
    FullThread,
}

/// A swizzled shared-memory address map plus the bases that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryPlan {
    /// Maps (vect, bank, idx) address coordinates to tensor elements.
    pub layout: LinearLayout,
    /// Element directions covered by one vectorized access.
    pub vect: Vec<u64>,
    /// Pairwise sums of the two sides' exclusive thread directions; safe idx
    /// choices inside the span the threads cover.
    pub h: Vec<u64>,
    /// Directions outside everything either side's threads cover.
    pub c: Vec<u64>,
    /// Chosen idx basis, in order.
    pub s_idx: Vec<u64>,
    /// Chosen bank basis, in order.
    pub s_bank: Vec<u64>,
    /// How many leading `s_idx` entries came from the conflict-free pool
    /// (`h` and `c`); the rest are forced conflicts.
    pub conflict_free_idx_dim: usize,
    pub variant: SwizzleVariant,
}

fn nonzero_sorted(cols: &[u64]) -> Vec<u64> {
    let mut v: Vec<u64> = cols.iter().copied().filter(|&c| c != 0).collect();
    v.sort_unstable();
    v
}

fn log2_of(x: usize) -> usize {
    debug_assert!(x.is_power_of_two());
    x.trailing_zeros() as usize
}

/// Build the swizzled memory layout for converting `a` to `b` (both
/// normalized distributed layouts over the same tensor).
pub fn plan_swizzle(
    a: &LinearLayout,
    b: &LinearLayout,
    elem_bits: usize,
    bank: &BankConfig,
    variant: SwizzleVariant,
) -> Result<MemoryPlan, PlanError> {
    check_elem_bits(elem_bits)?;
    let d = a.out_bits();
    let w = elem_bits / 8;
    let wavefront = bank.wavefront_bytes();

    let a_reg = nonzero_sorted(&a.in_block_cols(REG));
    let b_reg = nonzero_sorted(&b.in_block_cols(REG));
    let v_cap_bytes = bank.max_vector_bytes.min(wavefront);
    let v_cap = if v_cap_bytes <= w { 0 } else { log2_of(v_cap_bytes / w) };
    let vect: Vec<u64> =
        a_reg.iter().copied().filter(|x| b_reg.contains(x)).take(v_cap.min(d)).collect();
    let v = vect.len();

    let payload = (1usize << v) * w;
    let b_bits = if payload >= wavefront { 0 } else { log2_of(wavefront / payload).min(d - v) };
    let s = d - v - b_bits;

    let drop_last = match variant {
        SwizzleVariant::BankAdjusted => {
            if payload <= bank.bank_bytes {
                0
            } else {
                log2_of(payload / bank.bank_bytes)
            }
        }
        SwizzleVariant::FullThread => 0,
    };
    let bank_side = |l: &LinearLayout| {
        let mut cols = l.in_block_cols(THREAD);
        cols.truncate(cols.len().saturating_sub(drop_last));
        nonzero_sorted(&cols)
    };
    let a_bank = bank_side(a);
    let b_bank = bank_side(b);

    let mut e: Vec<u64> = a_bank.iter().copied().filter(|x| !b_bank.contains(x)).collect();
    let mut f: Vec<u64> = b_bank.iter().copied().filter(|x| !a_bank.contains(x)).collect();
    if e.len() > f.len() {
        std::mem::swap(&mut e, &mut f);
    }
    let h: Vec<u64> = e.iter().zip(&f).map(|(&x, &y)| x ^ y).collect();

    let mut everything: Vec<u64> = vect.clone();
    everything.extend(&a_bank);
    everything.extend(&b_bank);
    let mut c = Vec::new();
    for bit in 0..d {
        let cand = 1u64 << bit;
        if !span_contains(&everything, cand) {
            c.push(cand);
            everything.push(cand);
        }
    }

    // Greedily fill the idx basis: conflict-free directions first, then
    // forced conflicts along the store side's threads, then anything that
    // keeps the map invertible.
    let mut chosen = vect.clone();
    let mut s_idx = Vec::with_capacity(s);
    let push_independent = |s_idx: &mut Vec<u64>, chosen: &mut Vec<u64>, cand: u64| {
        if s_idx.len() < s && !span_contains(chosen, cand) {
            s_idx.push(cand);
            chosen.push(cand);
            true
        } else {
            false
        }
    };
    for &cand in h.iter().chain(&c) {
        push_independent(&mut s_idx, &mut chosen, cand);
    }
    let conflict_free_idx_dim = s_idx.len();
    for &cand in &a_bank {
        push_independent(&mut s_idx, &mut chosen, cand);
    }
    for bit in 0..d {
        push_independent(&mut s_idx, &mut chosen, 1 << bit);
    }
    debug_assert_eq!(s_idx.len(), s);

    let mut s_bank = Vec::with_capacity(b_bits);
    for bit in 0..d {
        let cand = 1u64 << bit;
        if s_bank.len() < b_bits && !span_contains(&chosen, cand) {
            s_bank.push(cand);
            chosen.push(cand);
        }
    }
    debug_assert_eq!(s_bank.len(), b_bits);

    let mut cols = vect.clone();
    cols.extend(&s_bank);
    cols.extend(&s_idx);
    let layout = LinearLayout::new(
        vec![DimLabel::new(VECT, v), DimLabel::new(BANK, b_bits), DimLabel::new(IDX, s)],
        a.out_dims().to_vec(),
        BitMatrix::from_cols(d, &cols),
    )?;
    debug_assert!(layout.is_memory() || d == 0);

    Ok(MemoryPlan { layout, vect, h, c, s_idx, s_bank, conflict_free_idx_dim, variant })
}

/// Wavefronts one vectorized warp access needs under this address map:
/// the passes the payload width forces, times the collision factor from
/// thread directions that carry no bank component.
#[must_use]
pub fn predicted_access_wavefronts(
    mem: &MemoryPlan,
    dist: &LinearLayout,
    elem_bits: usize,
    bank: &BankConfig,
) -> u64 {
    let payload = (1usize << mem.vect.len()) * (elem_bits / 8);
    let passes = payload.div_ceil(bank.bank_bytes).max(1) as u64;
    let mut non_bank: Vec<u64> = mem.vect.clone();
    non_bank.extend(&mem.s_idx);
    let threads = nonzero_sorted(&dist.in_block_cols(THREAD));
    let mut union = non_bank.clone();
    union.extend(&threads);
    let collide = rank_of(&non_bank) + rank_of(&threads) - rank_of(&union);
    passes << collide
}

/// Wavefronts for one whole side of the round trip: every warp stores (or
/// loads) each of its register groups with one vectorized access.
#[must_use]
pub fn predicted_side_wavefronts(
    mem: &MemoryPlan,
    dist: &LinearLayout,
    elem_bits: usize,
    bank: &BankConfig,
) -> u64 {
    let groups = dist.in_dim_bits(WARP) + dist.in_dim_bits(REG) - mem.vect.len();
    predicted_access_wavefronts(mem, dist, elem_bits, bank) << groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{DimLabel, LinearLayout, REG, THREAD, WARP};

    fn dist(reg: &[u64], thread: &[u64], warp: &[u64], d: usize) -> LinearLayout {
        let mut cols = reg.to_vec();
        cols.extend(thread);
        cols.extend(warp);
        LinearLayout::new(
            vec![
                DimLabel::new(REG, reg.len()),
                DimLabel::new(THREAD, thread.len()),
                DimLabel::new(WARP, warp.len()),
            ],
            vec![DimLabel::new("dim1", 2), DimLabel::new("dim0", d - 2)],
            BitMatrix::from_cols(d, &cols),
        )
        .unwrap()
    }

    fn toy_bank() -> BankConfig {
        BankConfig { banks: 4, bank_bytes: 4, max_vector_bytes: 4 }
    }

    /// 4x4 tensor, 4 threads, 2 registers per thread, 2 warps; the store
    /// side walks rows, the load side walks columns.
    fn toy_pair() -> (LinearLayout, LinearLayout) {
        (dist(&[1], &[2, 4], &[8], 4), dist(&[4], &[1, 2], &[8], 4))
    }

    #[test]
    fn toy_transpose_swizzle_is_conflict_free() {
        let (a, b) = toy_pair();
        let plan = plan_swizzle(&a, &b, 32, &toy_bank(), SwizzleVariant::BankAdjusted).unwrap();
        assert_eq!(plan.vect, Vec::<u64>::new());
        assert_eq!(plan.h, vec![5]);
        assert_eq!(plan.c, vec![8]);
        assert_eq!(plan.s_idx, vec![5, 8]);
        assert_eq!(plan.s_bank, vec![1, 2]);
        assert_eq!(plan.conflict_free_idx_dim, 2);
        assert_eq!(plan.layout.matrix(), &BitMatrix::from_cols(4, &[1, 2, 5, 8]));
        assert!(plan.layout.is_memory());

        let bank = toy_bank();
        assert_eq!(predicted_access_wavefronts(&plan, &a, 32, &bank), 1);
        assert_eq!(predicted_access_wavefronts(&plan, &b, 32, &bank), 1);
        // 2 warps x 2 registers = 4 transactions per side, all conflict-free.
        assert_eq!(predicted_side_wavefronts(&plan, &a, 32, &bank), 4);
        assert_eq!(predicted_side_wavefronts(&plan, &b, 32, &bank), 4);
    }

    #[test]
    fn naive_addressing_conflicts_where_the_swizzle_does_not() {
        let (a, b) = toy_pair();
        let naive = MemoryPlan {
            layout: LinearLayout::new(
                vec![DimLabel::new(VECT, 0), DimLabel::new(BANK, 2), DimLabel::new(IDX, 2)],
                a.out_dims().to_vec(),
                BitMatrix::identity(4),
            )
            .unwrap(),
            vect: vec![],
            h: vec![],
            c: vec![],
            s_idx: vec![4, 8],
            s_bank: vec![1, 2],
            conflict_free_idx_dim: 0,
            variant: SwizzleVariant::FullThread,
        };
        let bank = toy_bank();
        // The store side's second thread bit lands in the idx span: every
        // transaction serializes two ways, 8 wavefronts instead of 4.
        assert_eq!(predicted_access_wavefronts(&naive, &a, 32, &bank), 2);
        assert_eq!(predicted_side_wavefronts(&naive, &a, 32, &bank), 8);
        // The load side's threads stay inside the bank span: no conflicts.
        assert_eq!(predicted_access_wavefronts(&naive, &b, 32, &bank), 1);
        assert_eq!(predicted_side_wavefronts(&naive, &b, 32, &bank), 4);
    }

    #[test]
    fn wide_payload_discounts_thread_bits_per_variant() {
        let a = dist(&[1, 2], &[4, 8], &[], 6);
        let b = dist(&[2, 1], &[8, 4], &[], 6);
        let cfg = BankConfig { banks: 4, bank_bytes: 4, max_vector_bytes: 16 };
        // Payload 16 bytes = the whole toy wavefront: no bank bits remain,
        // and the bank-adjusted variant discounts both thread bits, so the
        // entire complement counts as conflict-free.
        let plan = plan_swizzle(&a, &b, 32, &cfg, SwizzleVariant::BankAdjusted).unwrap();
        assert_eq!(plan.vect, vec![1, 2]);
        assert_eq!(plan.h, Vec::<u64>::new());
        assert_eq!(plan.s_bank, Vec::<u64>::new());
        assert_eq!(plan.c, vec![4, 8, 16, 32]);
        assert_eq!(plan.s_idx, vec![4, 8, 16, 32]);
        assert_eq!(plan.conflict_free_idx_dim, 4);
        assert!(plan.layout.is_memory());

        // Counting every thread bit, both sides' (equal) thread sets stay in
        // play: only the true complement is conflict-free, and the thread
        // directions are forced-conflict padding.
        let full = plan_swizzle(&a, &b, 32, &cfg, SwizzleVariant::FullThread).unwrap();
        assert_eq!(full.h, Vec::<u64>::new());
        assert_eq!(full.c, vec![16, 32]);
        assert_eq!(full.s_idx, vec![16, 32, 4, 8]);
        assert_eq!(full.conflict_free_idx_dim, 2);
    }

    #[test]
    fn vectorization_is_capped_by_the_access_width() {
        let a = dist(&[1, 2, 4], &[8, 16], &[], 5);
        let b = dist(&[2, 4, 1], &[16, 8], &[], 5);
        let cfg = BankConfig { banks: 32, bank_bytes: 4, max_vector_bytes: 8 };
        let plan = plan_swizzle(&a, &b, 32, &cfg, SwizzleVariant::BankAdjusted).unwrap();
        // 8-byte accesses over 4-byte elements: one vect bit only.
        assert_eq!(plan.vect, vec![1]);
        let elem64 = plan_swizzle(&a, &b, 64, &cfg, SwizzleVariant::BankAdjusted).unwrap();
        assert_eq!(elem64.vect, Vec::<u64>::new());
    }

    #[test]
    fn swizzle_layout_is_always_invertible() {
        let pairs = [
            (dist(&[1], &[2, 4], &[8], 4), dist(&[4], &[1, 2], &[8], 4)),
            (dist(&[1, 0], &[2, 4, 8], &[], 5), dist(&[8, 2], &[1, 0, 4], &[], 5)),
            (dist(&[], &[1, 2, 4], &[], 3), dist(&[1, 2, 4], &[], &[], 3)),
        ];
        for (a, b) in pairs {
            for variant in [SwizzleVariant::BankAdjusted, SwizzleVariant::FullThread] {
                let plan =
                    plan_swizzle(&a, &b, 16, &BankConfig::default(), variant).unwrap();
                assert_eq!(plan.layout.matrix().rank(), a.out_bits(), "{plan:?}");
                assert_eq!(plan.vect.len() + plan.s_bank.len() + plan.s_idx.len(), a.out_bits());
            }
        }
    }
}
