//! Warp-shuffle schedules: move registers between lanes without touching
//! memory.
//!
//! The construction partitions the elements a warp holds into affine slices
//! such that within one slice every lane owns exactly one (vectorized)
//! element under the source layout and needs exactly one under the
//! destination layout. Each slice becomes one shuffle round with a
//! per-lane send register, source lane, and receive register.

use std::collections::HashSet;

use thiserror::Error;

use crate::gf2::{Basis, BitMatrix, BitVector};
use crate::layout::{LinearLayout, REG, THREAD, WARP};

/// Why a pair of layouts cannot be converted with warp shuffles alone.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShuffleUnsupported {
    #[error("warp assignments differ")]
    WarpMismatch,
    #[error("thread bit counts differ")]
    ThreadWidthMismatch,
    #[error("thread broadcast positions differ")]
    BroadcastMismatch,
    #[error("layout structure is degenerate: {0}")]
    Degenerate(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaneRule {
    /// Register presented to the shuffle (vectorized bits cleared).
    pub send_reg: u64,
    /// Lane whose presented value this lane consumes.
    pub src_lane: u64,
    /// Destination register for the consumed value (vectorized and
    /// broadcast bits cleared).
    pub recv_reg: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundPlan {
    /// Representative of this round's element slice.
    pub rep: u64,
    /// One rule per lane, indexed by thread id.
    pub lanes: Vec<LaneRule>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShufflePlan {
    pub payload_bits: usize,
    /// Vectorization basis: element directions moved together in one payload.
    pub v: Vec<u64>,
    /// Thread directions both layouts assign identically.
    pub i: Vec<u64>,
    /// Thread directions only the source assigns to threads.
    pub e: Vec<u64>,
    /// Thread directions only the destination assigns to threads.
    pub f: Vec<u64>,
    /// Pairwise sums e[k] ⊕ f[k]: the exchange directions.
    pub g: Vec<u64>,
    /// Enumeration basis: one round per combination of these directions.
    pub r: Vec<u64>,
    /// Source register bit positions carrying each vector of `v`.
    pub v_send_regs: Vec<usize>,
    /// Destination register bit positions carrying each vector of `v`.
    pub v_recv_regs: Vec<usize>,
    /// Destination register bits that replicate (broadcast) after the rounds.
    pub recv_dup_reg_bits: Vec<usize>,
    pub rounds: Vec<RoundPlan>,
}

fn nonzero_set(cols: &[u64]) -> Vec<u64> {
    let mut v: Vec<u64> = cols.iter().copied().filter(|&c| c != 0).collect();
    v.sort_unstable();
    v
}

fn zero_positions(cols: &[u64]) -> Vec<usize> {
    cols.iter().enumerate().filter(|(_, &c)| c == 0).map(|(p, _)| p).collect()
}

fn set_minus(xs: &[u64], ys: &[u64]) -> Vec<u64> {
    xs.iter().copied().filter(|x| !ys.contains(x)).collect()
}

fn set_and(xs: &[u64], ys: &[u64]) -> Vec<u64> {
    xs.iter().copied().filter(|x| ys.contains(x)).collect()
}

/// Plan the register exchange turning layout `a`'s placement into `b`'s.
/// Both layouts must be normalized (canonical tensor order, reg/thread/warp
/// input order) and distributed over the same tensor.
pub fn plan_shuffle(
    a: &LinearLayout,
    b: &LinearLayout,
    elem_bits: usize,
    payload_bits: usize,
) -> Result<ShufflePlan, ShuffleUnsupported> {
    let d = a.out_bits();
    let a_thread = a.in_block_cols(THREAD);
    let b_thread = b.in_block_cols(THREAD);
    if a.in_block_cols(WARP) != b.in_block_cols(WARP) {
        return Err(ShuffleUnsupported::WarpMismatch);
    }
    if a_thread.len() != b_thread.len() {
        return Err(ShuffleUnsupported::ThreadWidthMismatch);
    }
    if zero_positions(&a_thread) != zero_positions(&b_thread) {
        return Err(ShuffleUnsupported::BroadcastMismatch);
    }

    let a_reg_set = nonzero_set(&a.in_block_cols(REG));
    let b_reg_set = nonzero_set(&b.in_block_cols(REG));
    let a_thr_set = nonzero_set(&a_thread);
    let b_thr_set = nonzero_set(&b_thread);

    let v_cap = if elem_bits > payload_bits {
        0
    } else {
        (payload_bits / elem_bits).ilog2() as usize
    };
    let v: Vec<u64> = set_and(&a_reg_set, &b_reg_set).into_iter().take(v_cap).collect();
    let i = set_and(&a_thr_set, &b_thr_set);
    let e = set_minus(&a_thr_set, &b_thr_set);
    let f = set_minus(&b_thr_set, &a_thr_set);
    debug_assert_eq!(e.len(), f.len());
    let g: Vec<u64> = e.iter().zip(&f).map(|(&x, &y)| x ^ y).collect();

    let warp_units = nonzero_set(&a.in_block_cols(WARP));
    let mut seed: Vec<BitVector> = Vec::new();
    for &x in v.iter().chain(&i).chain(&g).chain(&warp_units) {
        seed.push(BitVector::new(d, x));
    }
    let seed = Basis::new(d, seed)
        .map_err(|e| ShuffleUnsupported::Degenerate(format!("dependent directions: {e}")))?;
    let r: Vec<u64> = seed.completion().iter().map(BitVector::value).collect();

    // All element offsets reachable by combining the invariant directions:
    // the slice each round exchanges, shifted by the round representative.
    let mut span = HashSet::new();
    let gens: Vec<u64> = v.iter().chain(&i).chain(&g).copied().collect();
    for combo in 0u64..1 << gens.len() {
        let mut x = 0;
        for (j, &gen) in gens.iter().enumerate() {
            if (combo >> j) & 1 == 1 {
                x ^= gen;
            }
        }
        span.insert(x);
    }

    let tb = a.in_dim_bits(THREAD);
    let ra = a.in_dim_bits(REG);
    let rb = b.in_dim_bits(REG);
    let a_reg_cols = a.in_block_cols(REG);
    let b_reg_cols = b.in_block_cols(REG);
    let pos_of = |cols: &[u64], x: u64| cols.iter().position(|&c| c == x).expect("member");
    let v_send_regs: Vec<usize> = v.iter().map(|&x| pos_of(&a_reg_cols, x)).collect();
    let v_recv_regs: Vec<usize> = v.iter().map(|&x| pos_of(&b_reg_cols, x)).collect();
    let recv_dup_reg_bits = zero_positions(&b_reg_cols);

    let mask_of = |bits: &[usize]| bits.iter().fold(0u64, |m, &p| m | (1 << p));
    let send_skip = mask_of(&v_send_regs) | mask_of(&zero_positions(&a_reg_cols));
    let recv_skip = mask_of(&v_recv_regs) | mask_of(&recv_dup_reg_bits);
    let thr_dup_mask = mask_of(&zero_positions(&a_thread));

    // Canonical element owner under a, restricted to registers and threads.
    let mut rt_cols = a_reg_cols.clone();
    rt_cols.extend(&a_thread);
    let a_rt = BitMatrix::from_cols(d, &rt_cols);

    let a_elem = |r: u64, t: u64| {
        let mut x = 0u64;
        for (p, &c) in a_reg_cols.iter().enumerate() {
            if (r >> p) & 1 == 1 {
                x ^= c;
            }
        }
        for (p, &c) in a_thread.iter().enumerate() {
            if (t >> p) & 1 == 1 {
                x ^= c;
            }
        }
        x
    };
    let b_elem = |r: u64, t: u64| {
        let mut x = 0u64;
        for (p, &c) in b_reg_cols.iter().enumerate() {
            if (r >> p) & 1 == 1 {
                x ^= c;
            }
        }
        for (p, &c) in b_thread.iter().enumerate() {
            if (t >> p) & 1 == 1 {
                x ^= c;
            }
        }
        x
    };

    let mut rounds = Vec::with_capacity(1 << r.len());
    for round in 0u64..1 << r.len() {
        let mut rep = 0u64;
        for (j, &dir) in r.iter().enumerate() {
            if (round >> j) & 1 == 1 {
                rep ^= dir;
            }
        }
        let mut lanes = Vec::with_capacity(1 << tb);
        let mut sources = HashSet::with_capacity(1 << tb);
        for t in 0u64..1 << tb {
            let send_reg = unique_slot(ra, send_skip, |reg| span.contains(&(a_elem(reg, t) ^ rep)))
                .ok_or_else(|| {
                    ShuffleUnsupported::Degenerate(format!(
                        "lane {t} does not own exactly one element of round {round}"
                    ))
                })?;
            let recv_reg = unique_slot(rb, recv_skip, |reg| span.contains(&(b_elem(reg, t) ^ rep)))
                .ok_or_else(|| {
                    ShuffleUnsupported::Degenerate(format!(
                        "lane {t} does not need exactly one element of round {round}"
                    ))
                })?;
            let wanted = b_elem(recv_reg, t);
            let owner = a_rt
                .solve_min_weight(&BitMatrix::from_cols(d, &[wanted]))
                .map_err(|e| ShuffleUnsupported::Degenerate(format!("unowned element: {e}")))?
                .col_value(0);
            let owner_thread = owner >> a_reg_cols.len();
            let src_lane = owner_thread | (t & thr_dup_mask);
            sources.insert(src_lane);
            lanes.push(LaneRule { send_reg, src_lane, recv_reg });
        }
        if sources.len() != 1 << tb {
            return Err(ShuffleUnsupported::Degenerate(format!(
                "round {round} does not draw from every lane exactly once"
            )));
        }
        rounds.push(RoundPlan { rep, lanes });
    }

    Ok(ShufflePlan {
        payload_bits,
        v,
        i,
        e,
        f,
        g,
        r,
        v_send_regs,
        v_recv_regs,
        recv_dup_reg_bits,
        rounds,
    })
}

/// The unique register with all `skip`-mask bits clear satisfying `pred`,
/// or None if there is not exactly one.
fn unique_slot(bits: usize, skip: u64, pred: impl Fn(u64) -> bool) -> Option<u64> {
    let mut found = None;
    for reg in 0u64..1 << bits {
        if reg & skip != 0 || !pred(reg) {
            continue;
        }
        if found.is_some() {
            return None;
        }
        found = Some(reg);
    }
    found
}
