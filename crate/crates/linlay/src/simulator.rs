//! A small software model of a warp-based machine that executes conversion
//! plans literally: lanes hold register files, shuffles move one payload per
//! lane per round, and shared memory is an array of word-addressed banks.
//! Running a plan against the model and comparing the result with the
//! destination layout verifies the plan end to end, and the bank model counts
//! the wavefronts each side of a shared-memory round trip really needs.

use std::collections::HashSet;

use thiserror::Error;

use crate::constructors::dim_name;
use crate::gf2::BitMatrix;
use crate::layout::{DimLabel, LinearLayout, REG, THREAD, WARP};
use crate::planner::{
    normalize_distributed, BankConfig, ConversionPlan, GatherPlan, MemoryPlan, PlanBody,
    PlanError,
};

/// Ways a simulation can fail before producing a verdict. A plan that runs
/// but produces wrong values is not an error; it yields a report with
/// mismatches instead.
#[derive(Debug, Error)]
pub enum SimError {
    /// The plan references lanes, registers, or memory cells that do not
    /// exist in the layouts it carries.
    #[error("plan is malformed: {0}")]
    BadPlan(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// The register files of every lane in a CTA under one distributed layout:
/// slot `((w << tb) | t) << rb | r` holds the flattened tensor element that
/// warp `w`, thread `t` keeps in register `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneState {
    pub reg_bits: usize,
    pub thread_bits: usize,
    pub warp_bits: usize,
    pub slots: Vec<u64>,
}

impl LaneState {
    /// Fills every slot by applying the layout to its packed hardware index.
    /// The layout's input dimensions must be (a subsequence of) reg, thread,
    /// warp in that order, so the packed index is the slot index itself.
    pub fn from_layout(l: &LinearLayout) -> Result<Self, SimError> {
        let mut expect = [REG, THREAD, WARP].iter();
        for dim in l.in_dims() {
            if !expect.any(|n| *n == dim.name()) {
                return Err(SimError::BadPlan(format!(
                    "lane state needs reg/thread/warp inputs in order, got {:?}",
                    l.in_dims().iter().map(DimLabel::name).collect::<Vec<_>>()
                )));
            }
        }
        let reg_bits = l.in_dim_bits(REG);
        let thread_bits = l.in_dim_bits(THREAD);
        let warp_bits = l.in_dim_bits(WARP);
        let total = reg_bits + thread_bits + warp_bits;
        let slots = (0..1u64 << total).map(|x| l.matrix().apply(x)).collect();
        Ok(Self { reg_bits, thread_bits, warp_bits, slots })
    }

    fn blank(reg_bits: usize, thread_bits: usize, warp_bits: usize) -> Self {
        let total = reg_bits + thread_bits + warp_bits;
        Self { reg_bits, thread_bits, warp_bits, slots: vec![u64::MAX; 1 << total] }
    }

    fn slot(&self, warp: u64, thread: u64, reg: u64) -> usize {
        ((((warp << self.thread_bits) | thread) << self.reg_bits) | reg) as usize
    }
}

/// One register slot whose final value disagrees with the destination layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mismatch {
    pub warp: u64,
    pub thread: u64,
    pub reg: u64,
    pub expected: u64,
    pub got: u64,
}

/// Outcome of executing a conversion plan on the machine model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    /// True when every destination slot ended up holding the element the
    /// destination layout assigns to it.
    pub correct: bool,
    /// Shuffle instructions the plan issued per lane.
    pub shuffle_rounds: u64,
    /// Wavefronts the loads from shared memory consumed, totalled over every
    /// warp and register group.
    pub read_wavefronts: u64,
    /// Same for the stores into shared memory.
    pub write_wavefronts: u64,
    /// Scratch space the round trip required, in bytes.
    pub smem_bytes: u64,
    pub mismatches: Vec<Mismatch>,
}

/// Outcome of executing a gather: whether every lane fetched the element the
/// index function asked for, and how many exchange rounds that took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatherReport {
    pub correct: bool,
    pub rounds: u64,
    pub mismatches: Vec<Mismatch>,
}

fn scatter(bits: u64, positions: &[usize]) -> u64 {
    positions
        .iter()
        .enumerate()
        .fold(0, |acc, (k, &p)| acc | (((bits >> k) & 1) << p))
}

fn mask_of(positions: &[usize]) -> u64 {
    positions.iter().fold(0, |acc, &p| acc | (1 << p))
}

/// Executes `plan` on the machine model, starting from the source layout's
/// register files, and checks the result against the destination layout.
pub fn sim_convert(plan: &ConversionPlan) -> Result<SimReport, SimError> {
    if plan.a.out_bits() != plan.b.out_bits() {
        return Err(SimError::BadPlan("source and destination tensors differ".into()));
    }
    let src = LaneState::from_layout(&plan.a)?;
    let expected = LaneState::from_layout(&plan.b)?;
    let mut got =
        LaneState::blank(expected.reg_bits, expected.thread_bits, expected.warp_bits);

    let mut shuffle_rounds = 0u64;
    let mut read_wavefronts = 0u64;
    let mut write_wavefronts = 0u64;
    let mut smem_bytes = 0u64;

    match &plan.body {
        PlanBody::Noop => got.slots.copy_from_slice(&src.slots),
        PlanBody::RegPermute { dst_to_src } => {
            if dst_to_src.len() != 1 << got.reg_bits {
                return Err(SimError::BadPlan(format!(
                    "permutation covers {} registers, destination has {}",
                    dst_to_src.len(),
                    1u64 << got.reg_bits
                )));
            }
            if src.thread_bits != got.thread_bits || src.warp_bits != got.warp_bits {
                return Err(SimError::BadPlan(
                    "register permutation across different lane grids".into(),
                ));
            }
            let lanes = 1u64 << (got.thread_bits + got.warp_bits);
            for lane in 0..lanes {
                for (dst, &src_reg) in dst_to_src.iter().enumerate() {
                    if src_reg >= 1 << src.reg_bits {
                        return Err(SimError::BadPlan(format!(
                            "permutation reads missing register {src_reg}"
                        )));
                    }
                    got.slots[((lane << got.reg_bits) + dst as u64) as usize] =
                        src.slots[((lane << src.reg_bits) | src_reg) as usize];
                }
            }
        }
        PlanBody::WarpShuffle(sp) => {
            if src.thread_bits != got.thread_bits || src.warp_bits != got.warp_bits {
                return Err(SimError::BadPlan("shuffle across different lane grids".into()));
            }
            let n_threads = 1u64 << src.thread_bits;
            let lanes_per_payload = 1usize << sp.v.len();
            for round in &sp.rounds {
                if round.lanes.len() != n_threads as usize {
                    return Err(SimError::BadPlan(format!(
                        "round describes {} threads, warp has {n_threads}",
                        round.lanes.len()
                    )));
                }
                shuffle_rounds += 1;
                for warp in 0..1u64 << src.warp_bits {
                    // Every lane presents its payload, then every lane reads
                    // one peer's payload, as a hardware shuffle does.
                    let mut presented =
                        vec![vec![0u64; lanes_per_payload]; n_threads as usize];
                    for (t, rule) in round.lanes.iter().enumerate() {
                        for (j, out) in presented[t].iter_mut().enumerate() {
                            let reg = rule.send_reg | scatter(j as u64, &sp.v_send_regs);
                            if reg >= 1 << src.reg_bits {
                                return Err(SimError::BadPlan(format!(
                                    "send register {reg} does not exist"
                                )));
                            }
                            *out = src.slots[src.slot(warp, t as u64, reg)];
                        }
                    }
                    for (t, rule) in round.lanes.iter().enumerate() {
                        if rule.src_lane >= n_threads {
                            return Err(SimError::BadPlan(format!(
                                "source lane {} outside the warp",
                                rule.src_lane
                            )));
                        }
                        let data = &presented[rule.src_lane as usize];
                        for (j, value) in data.iter().enumerate() {
                            let reg = rule.recv_reg | scatter(j as u64, &sp.v_recv_regs);
                            if reg >= 1 << got.reg_bits {
                                return Err(SimError::BadPlan(format!(
                                    "receive register {reg} does not exist"
                                )));
                            }
                            let dst = got.slot(warp, t as u64, reg);
                            got.slots[dst] = *value;
                        }
                    }
                }
            }
            // Registers the destination duplicates are filled locally after
            // the exchange instead of being sent again.
            let dup = mask_of(&sp.recv_dup_reg_bits);
            if dup != 0 {
                let lanes = 1u64 << (got.thread_bits + got.warp_bits);
                for lane in 0..lanes {
                    for reg in 0..1u64 << got.reg_bits {
                        if reg & dup != 0 {
                            got.slots[((lane << got.reg_bits) | reg) as usize] =
                                got.slots[((lane << got.reg_bits) | (reg & !dup)) as usize];
                        }
                    }
                }
            }
        }
        PlanBody::SharedMemory(sm) => {
            let d = plan.a.out_bits();
            let mut smem = vec![u64::MAX; 1usize << d];
            smem_bytes = (1u64 << d) * (plan.elem_bits as u64 / 8);
            write_wavefronts =
                warp_accesses(&plan.a, &sm.memory, &sm.bank, plan.elem_bits, |slot, cell| {
                    smem[cell] = src.slots[slot];
                })?;
            read_wavefronts =
                warp_accesses(&plan.b, &sm.memory, &sm.bank, plan.elem_bits, |slot, cell| {
                    got.slots[slot] = smem[cell];
                })?;
        }
    }

    let mut mismatches = Vec::new();
    for warp in 0..1u64 << expected.warp_bits {
        for thread in 0..1u64 << expected.thread_bits {
            for reg in 0..1u64 << expected.reg_bits {
                let i = expected.slot(warp, thread, reg);
                if got.slots[i] != expected.slots[i] {
                    mismatches.push(Mismatch {
                        warp,
                        thread,
                        reg,
                        expected: expected.slots[i],
                        got: got.slots[i],
                    });
                }
            }
        }
    }

    Ok(SimReport {
        correct: mismatches.is_empty(),
        shuffle_rounds,
        read_wavefronts,
        write_wavefronts,
        smem_bytes,
        mismatches,
    })
}

/// Counts the wavefronts one side of a shared-memory round trip consumes when
/// `side` accesses memory addressed by `mem`: every warp issues one vectorized
/// access per register group, and each access is billed per machine word, with
/// requests for the same word merged and requests for different words on the
/// same bank serialized.
pub fn sim_bank_count(
    side: &LinearLayout,
    mem: &MemoryPlan,
    bank: &BankConfig,
    elem_bits: usize,
) -> Result<u64, SimError> {
    warp_accesses(side, mem, bank, elem_bits, |_, _| {})
}

fn warp_accesses(
    side: &LinearLayout,
    mem: &MemoryPlan,
    bank: &BankConfig,
    elem_bits: usize,
    mut visit: impl FnMut(usize, usize),
) -> Result<u64, SimError> {
    if bank.banks == 0 || bank.bank_bytes == 0 {
        return Err(SimError::BadPlan("bank geometry must be nonzero".into()));
    }
    if elem_bits < 8 || !elem_bits.is_multiple_of(8) {
        return Err(SimError::BadPlan(format!(
            "cannot address {elem_bits}-bit elements in byte memory"
        )));
    }
    let state_shape = LaneState::from_layout(side)?;
    let (rb, tb, wb) =
        (state_shape.reg_bits, state_shape.thread_bits, state_shape.warp_bits);
    let inv = mem
        .layout
        .matrix()
        .right_inverse()
        .map_err(|_| SimError::BadPlan("memory layout is not invertible".into()))?;
    let word_bytes = bank.bank_bytes as u64;

    // A side only vectorizes over directions it actually keeps in registers.
    let reg_cols = side.in_block_cols(REG);
    let mut v_pos = Vec::with_capacity(mem.vect.len());
    for dir in &mem.vect {
        match reg_cols.iter().position(|c| c == dir) {
            Some(p) => v_pos.push(p),
            None => {
                v_pos.clear();
                break;
            }
        }
    }
    let vmask = mask_of(&v_pos);
    let payload_bytes = (1u64 << v_pos.len()) * (elem_bits as u64 / 8);
    let n_words = (payload_bytes / word_bytes).max(1);

    let mut wavefronts = 0u64;
    let mut base_words = Vec::with_capacity(1 << tb);
    for warp in 0..1u64 << wb {
        for base in 0..1u64 << rb {
            if base & vmask != 0 {
                continue;
            }
            base_words.clear();
            for thread in 0..1u64 << tb {
                for j in 0..1u64 << v_pos.len() {
                    let reg = base | scatter(j, &v_pos);
                    let slot = state_shape.slot(warp, thread, reg);
                    let cell = inv.apply(side.matrix().apply(slot as u64));
                    visit(slot, cell as usize);
                    if j == 0 {
                        base_words.push(cell * (elem_bits as u64 / 8) / word_bytes);
                    }
                }
            }
            for pass in 0..n_words {
                let mut per_bank = vec![HashSet::new(); bank.banks];
                for &w0 in &base_words {
                    let word = w0 + pass;
                    per_bank[(word % bank.banks as u64) as usize].insert(word);
                }
                wavefronts += per_bank.iter().map(HashSet::len).max().unwrap_or(0) as u64;
            }
        }
    }
    Ok(wavefronts)
}

/// Executes a gather along the plan's axis: every lane asks `index_of` where
/// each of its elements should come from, locates the owner by inverting the
/// axis portion of the layout, and fetches the element from that slot. The
/// report's round count is what a lane-exchange loop would need: one round
/// per assignment of the thread bits that address the axis.
pub fn sim_gather(
    l: &LinearLayout,
    plan: &GatherPlan,
    mut index_of: impl FnMut(u64) -> u64,
) -> Result<GatherReport, SimError> {
    let norm = normalize_distributed(l, "gather layout")?;
    let name = dim_name(plan.axis);
    let bits = norm
        .out_dim(&name)
        .ok_or_else(|| SimError::BadPlan(format!("layout has no axis {}", plan.axis)))?
        .bits();
    let off = norm.out_offset(&name).map_err(PlanError::from)?;
    let axis_mask = if bits >= 64 { u64::MAX } else { ((1u64 << bits) - 1) << off };

    let state = LaneState::from_layout(&norm)?;
    let (rb, tb) = (state.reg_bits, state.thread_bits);
    let mut positions: Vec<usize> = plan.reg_axis_bits.clone();
    positions.extend(plan.thread_axis_bits.iter().map(|p| rb + p));
    positions.extend(plan.warp_axis_bits.iter().map(|p| rb + tb + p));
    if positions.len() != bits {
        return Err(SimError::BadPlan(format!(
            "plan addresses the axis with {} bits, layout needs {bits}",
            positions.len()
        )));
    }
    let cols: Vec<u64> =
        positions.iter().map(|&p| (norm.matrix().col_value(p) & axis_mask) >> off).collect();
    let to_axis = BitMatrix::from_cols(bits, &cols);
    let from_axis = to_axis
        .right_inverse()
        .map_err(|_| SimError::BadPlan("axis bits do not cover the axis".into()))?;

    let pos_mask = mask_of(&positions);
    let mut mismatches = Vec::new();
    for slot in 0..state.slots.len() as u64 {
        let element = state.slots[slot as usize];
        let target = if bits >= 64 { index_of(element) } else { index_of(element) & ((1u64 << bits) - 1) };
        let owner_bits = from_axis.apply(target);
        let src_slot = (slot & !pos_mask) | scatter(owner_bits, &positions);
        let got = state.slots[src_slot as usize];
        let expected = (element & !axis_mask) | (target << off);
        if got != expected {
            let reg = slot & ((1 << rb) - 1);
            let thread = (slot >> rb) & ((1 << tb) - 1);
            mismatches.push(Mismatch { warp: slot >> (rb + tb), thread, reg, expected, got });
        }
    }

    Ok(GatherReport {
        correct: mismatches.is_empty(),
        rounds: 1u64 << plan.thread_axis_bits.len(),
        mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructors::{blocked, BlockedSpec};
    use crate::planner::{
        plan_convert, plan_gather, plan_swizzle, predicted_side_wavefronts, SwizzleVariant,
    };

    fn dist(d: usize, reg: &[u64], thread: &[u64], warp: &[u64]) -> LinearLayout {
        let mut cols = reg.to_vec();
        cols.extend(thread);
        cols.extend(warp);
        LinearLayout::new(
            vec![
                DimLabel::new(REG, reg.len()),
                DimLabel::new(THREAD, thread.len()),
                DimLabel::new(WARP, warp.len()),
            ],
            vec![DimLabel::new("dim0", d)],
            BitMatrix::from_cols(d, &cols),
        )
        .unwrap()
    }

    fn running_example() -> LinearLayout {
        blocked(&BlockedSpec {
            shape: vec![4, 4],
            size_per_thread: vec![1, 1],
            threads_per_warp: vec![2, 3],
            warps_per_cta: vec![1, 0],
            order: vec![1, 0],
        })
        .unwrap()
    }

    #[test]
    fn lane_states_pack_warp_thread_register() {
        let l = dist(4, &[1], &[2, 4], &[8]);
        let s = LaneState::from_layout(&l).unwrap();
        assert_eq!((s.reg_bits, s.thread_bits, s.warp_bits), (1, 2, 1));
        assert_eq!(s.slots.len(), 16);
        assert_eq!(s.slots[s.slot(0, 0, 1)], 1);
        assert_eq!(s.slots[s.slot(0, 3, 0)], 6);
        assert_eq!(s.slots[s.slot(1, 2, 1)], 13);
    }

    #[test]
    fn lane_free_plans_replay_exactly() {
        let a = dist(4, &[1, 8], &[2, 4], &[]);
        let noop = plan_convert(&a, &a, 16).unwrap();
        let report = sim_convert(&noop).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);
        assert_eq!(report.shuffle_rounds, 0);
        assert_eq!(report.read_wavefronts + report.write_wavefronts, 0);

        let b = dist(4, &[8, 1], &[2, 4], &[]);
        let report = sim_convert(&plan_convert(&a, &b, 16).unwrap()).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);

        let wide = dist(4, &[1, 8, 0], &[2, 4], &[]);
        let report = sim_convert(&plan_convert(&a, &wide, 16).unwrap()).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);
    }

    #[test]
    fn shuffles_reconstruct_the_destination_register_files() {
        // The two-round exchange between a register-major and a thread-major
        // split of eight elements.
        let a = dist(3, &[4], &[1, 2], &[]);
        let b = dist(3, &[1], &[4, 2], &[]);
        let plan = plan_convert(&a, &b, 32).unwrap();
        let report = sim_convert(&plan).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);
        assert_eq!(report.shuffle_rounds, 2);

        // Same exchange with a duplicated register on both sides.
        let a = dist(3, &[4, 0], &[1, 2], &[]);
        let b = dist(3, &[1, 0], &[4, 2], &[]);
        let report = sim_convert(&plan_convert(&a, &b, 32).unwrap()).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);

        // A vectorized payload moves two elements per round.
        let a = dist(4, &[1, 8], &[2, 4], &[]);
        let b = dist(4, &[1, 2], &[8, 4], &[]);
        let plan = plan_convert(&a, &b, 16).unwrap();
        let report = sim_convert(&plan).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);
        assert_eq!(report.shuffle_rounds, 2);
    }

    #[test]
    fn memory_round_trips_verify_and_count_wavefronts() {
        let a = dist(4, &[1], &[2, 4], &[8]);
        let b = dist(4, &[8], &[2, 4], &[1]);
        let plan = plan_convert(&a, &b, 32).unwrap();
        assert!(matches!(plan.body, PlanBody::SharedMemory(_)));
        let report = sim_convert(&plan).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);
        assert_eq!(report.smem_bytes, plan.stats.smem_bytes);
        assert_eq!(report.write_wavefronts, plan.stats.write_wavefronts);
        assert_eq!(report.read_wavefronts, plan.stats.read_wavefronts);
    }

    #[test]
    fn bank_counts_agree_with_the_address_map_prediction() {
        let a = dist(4, &[1], &[2, 4], &[8]);
        let b = dist(4, &[4], &[1, 2], &[8]);
        let cfg = BankConfig { banks: 4, bank_bytes: 4, max_vector_bytes: 4 };
        let mem = plan_swizzle(&a, &b, 32, &cfg, SwizzleVariant::BankAdjusted).unwrap();
        for side in [&a, &b] {
            let counted = sim_bank_count(side, &mem, &cfg, 32).unwrap();
            assert_eq!(counted, predicted_side_wavefronts(&mem, side, 32, &cfg));
            assert_eq!(counted, 4);
        }

        // Addressing the cells in tensor order instead leaves the store side
        // fighting over half the banks.
        let mut naive = mem.clone();
        naive.layout = LinearLayout::new(
            naive.layout.in_dims().to_vec(),
            naive.layout.out_dims().to_vec(),
            BitMatrix::from_cols(4, &[1, 2, 4, 8]),
        )
        .unwrap();
        naive.s_idx = vec![4, 8];
        assert_eq!(sim_bank_count(&a, &naive, &cfg, 32).unwrap(), 8);
        assert_eq!(sim_bank_count(&b, &naive, &cfg, 32).unwrap(), 4);
    }

    #[test]
    fn gathers_fetch_whatever_the_index_function_asks_for() {
        let l = running_example();
        let plan = plan_gather(&l, 1).unwrap();
        assert!(plan.feasible);
        let report =
            sim_gather(&l, &plan, |element| ((element & 0xF) * 7 + 3) % 16).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);
        assert_eq!(report.rounds, 8);

        // Along the slow axis the sources live in other warps; the lookup is
        // still exact even though a warp-local exchange cannot realize it.
        let plan = plan_gather(&l, 0).unwrap();
        assert!(!plan.feasible);
        let report =
            sim_gather(&l, &plan, |element| ((element >> 4) * 5 + 1) % 16).unwrap();
        assert!(report.correct, "{:?}", report.mismatches);
        assert_eq!(report.rounds, 4);
    }

    #[test]
    fn corrupted_plans_fail_verification_loudly() {
        let a = dist(3, &[1, 2], &[4], &[]);
        let b = dist(3, &[2, 1], &[4], &[]);
        let mut plan = plan_convert(&a, &b, 16).unwrap();
        if let PlanBody::RegPermute { dst_to_src } = &mut plan.body {
            dst_to_src.swap(0, 1);
        } else {
            panic!("expected a register permutation");
        }
        let report = sim_convert(&plan).unwrap();
        assert!(!report.correct);
        assert!(!report.mismatches.is_empty());

        let a = dist(3, &[4], &[1, 2], &[]);
        let b = dist(3, &[1], &[4, 2], &[]);
        let mut plan = plan_convert(&a, &b, 32).unwrap();
        if let PlanBody::WarpShuffle(sp) = &mut plan.body {
            sp.rounds[0].lanes[0].src_lane = 99;
        } else {
            panic!("expected a shuffle");
        }
        assert!(matches!(sim_convert(&plan), Err(SimError::BadPlan(_))));
    }
}
