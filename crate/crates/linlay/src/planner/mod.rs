//! Conversion planning between distributed layouts.
//!
//! Given source and destination layouts over the same tensor, the planner
//! classifies the cheapest mechanism that realizes the conversion: doing
//! nothing, permuting registers within each lane, exchanging registers
//! between lanes with warp shuffles, or bouncing through shared memory with
//! a swizzled address mapping. Plans are values the simulator can execute
//! and verify, and they serialize to a versioned JSON document.

mod gather;
mod shuffle;
mod swizzle;
mod tile;

pub use gather::{plan_gather, GatherPlan};
pub use shuffle::{plan_shuffle, LaneRule, RoundPlan, ShufflePlan, ShuffleUnsupported};
pub use swizzle::{
    plan_swizzle, predicted_access_wavefronts, predicted_side_wavefronts, MemoryPlan,
    SwizzleVariant,
};
pub use tile::{ldmatrix_tile, match_tile, vector_tile, TileMatch, TilePattern};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::{BitMatrix, Gf2Error};
use crate::layout::{DimLabel, LayoutError, LinearLayout, REG, THREAD, WARP};
use crate::shapeops::{canonicalize, layout_shape, ShapeOpError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("layouts cover different tensors: {a} vs {b}")]
    ShapeMismatch { a: String, b: String },
    #[error("the {which} layout is not distributed")]
    NotDistributed { which: &'static str },
    #[error("element width must be a power of two between 8 and 1024 bits, got {0}")]
    BadElemBits(usize),
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("tile does not divide the layout: {0}")]
    TileMismatch(String),
    #[error("malformed plan document: {0}")]
    Doc(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error(transparent)]
    Shape(#[from] ShapeOpError),
}

/// Shared-memory geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankConfig {
    pub banks: usize,
    pub bank_bytes: usize,
    /// Widest vectorized access a single instruction may issue.
    pub max_vector_bytes: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self { banks: 32, bank_bytes: 4, max_vector_bytes: 16 }
    }
}

impl BankConfig {
    #[must_use]
    pub fn wavefront_bytes(&self) -> usize {
        self.banks * self.bank_bytes
    }
}

/// Planner knobs with hardware-shaped defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlanConfig {
    /// Bits a single shuffle moves per lane.
    pub payload_bits: usize,
    pub bank: BankConfig,
    pub variant: SwizzleVariant,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            payload_bits: 32,
            bank: BankConfig::default(),
            variant: SwizzleVariant::BankAdjusted,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStats {
    pub shuffle_rounds: u64,
    pub read_wavefronts: u64,
    pub write_wavefronts: u64,
    pub smem_bytes: u64,
}

/// Shared-memory round trip: store with the source layout, load with the
/// destination layout, both through the swizzled address map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedMemoryPlan {
    pub memory: MemoryPlan,
    pub bank: BankConfig,
    pub store_vec_bits: usize,
    pub load_vec_bits: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanBody {
    Noop,
    /// `dst_to_src[r]` is the source register whose value ends up in
    /// destination register `r`, per lane.
    RegPermute { dst_to_src: Vec<u64> },
    WarpShuffle(ShufflePlan),
    SharedMemory(SharedMemoryPlan),
}

impl PlanBody {
    #[must_use]
    pub fn kind(&self) -> &'static str {
        match self {
            PlanBody::Noop => "noop",
            PlanBody::RegPermute { .. } => "reg_permute",
            PlanBody::WarpShuffle(_) => "warp_shuffle",
            PlanBody::SharedMemory(_) => "shared_memory",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConversionPlan {
    pub a: LinearLayout,
    pub b: LinearLayout,
    pub elem_bits: usize,
    /// Solution Q of B·Q = A with minimal column weights: where each source
    /// hardware index's data must sit in destination coordinates.
    pub quotient: LinearLayout,
    pub body: PlanBody,
    pub stats: PlanStats,
}

pub fn plan_convert(
    a: &LinearLayout,
    b: &LinearLayout,
    elem_bits: usize,
) -> Result<ConversionPlan, PlanError> {
    plan_convert_with(a, b, elem_bits, &PlanConfig::default())
}

pub fn plan_convert_with(
    a: &LinearLayout,
    b: &LinearLayout,
    elem_bits: usize,
    cfg: &PlanConfig,
) -> Result<ConversionPlan, PlanError> {
    check_elem_bits(elem_bits)?;
    let a = normalize_distributed(a, "source")?;
    let b = normalize_distributed(b, "destination")?;
    if layout_shape(&a)? != layout_shape(&b)? {
        return Err(PlanError::ShapeMismatch {
            a: format!("{}", layout_shape(&a)?),
            b: format!("{}", layout_shape(&b)?),
        });
    }
    let quotient = quotient_layout(&a, &b)?;
    let body = if a == b {
        PlanBody::Noop
    } else if let Some(dst_to_src) = try_reg_permute(&a, &b) {
        PlanBody::RegPermute { dst_to_src }
    } else {
        match plan_shuffle(&a, &b, elem_bits, cfg.payload_bits) {
            Ok(plan) => PlanBody::WarpShuffle(plan),
            Err(_) => {
                let memory = plan_swizzle(&a, &b, elem_bits, &cfg.bank, cfg.variant)?;
                let vec_bits = (1 << memory.vect.len()) * elem_bits;
                PlanBody::SharedMemory(SharedMemoryPlan {
                    memory,
                    bank: cfg.bank,
                    store_vec_bits: vec_bits,
                    load_vec_bits: vec_bits,
                })
            }
        }
    };
    let stats = predict_stats(&a, &b, elem_bits, &body);
    Ok(ConversionPlan { a, b, elem_bits, quotient, body, stats })
}

fn predict_stats(a: &LinearLayout, b: &LinearLayout, elem_bits: usize, body: &PlanBody) -> PlanStats {
    match body {
        PlanBody::Noop | PlanBody::RegPermute { .. } => PlanStats::default(),
        PlanBody::WarpShuffle(plan) => PlanStats {
            shuffle_rounds: plan.rounds.len() as u64,
            ..PlanStats::default()
        },
        PlanBody::SharedMemory(plan) => PlanStats {
            shuffle_rounds: 0,
            write_wavefronts: predicted_side_wavefronts(&plan.memory, a, elem_bits, &plan.bank),
            read_wavefronts: predicted_side_wavefronts(&plan.memory, b, elem_bits, &plan.bank),
            smem_bytes: (1u64 << a.out_bits()) * (elem_bits as u64 / 8),
        },
    }
}

pub(crate) fn check_elem_bits(elem_bits: usize) -> Result<(), PlanError> {
    if !elem_bits.is_power_of_two() || !(8..=1024).contains(&elem_bits) {
        return Err(PlanError::BadElemBits(elem_bits));
    }
    Ok(())
}

/// Canonicalize the tensor side and fix the hardware side to the listed
/// order reg, thread, warp, adding any missing dimension with zero bits.
pub(crate) fn normalize_distributed(
    l: &LinearLayout,
    which: &'static str,
) -> Result<LinearLayout, PlanError> {
    if !l.is_distributed() {
        return Err(PlanError::NotDistributed { which });
    }
    let l = canonicalize(l)?;
    let mut cols = Vec::with_capacity(l.in_bits());
    let mut in_dims = Vec::with_capacity(3);
    for name in [REG, THREAD, WARP] {
        let block = l.in_block_cols(name);
        in_dims.push(DimLabel::new(name, block.len()));
        cols.extend(block);
    }
    let matrix = BitMatrix::from_cols(l.out_bits(), &cols);
    Ok(LinearLayout::new(in_dims, l.out_dims().to_vec(), matrix)?)
}

fn quotient_layout(a: &LinearLayout, b: &LinearLayout) -> Result<LinearLayout, PlanError> {
    let q = b.matrix().solve_min_weight(a.matrix())?;
    Ok(LinearLayout::new(a.in_dims().to_vec(), b.in_dims().to_vec(), q)?)
}

/// The conversion is a per-lane register shuffle when both layouts assign
/// threads and warps identically (including broadcast positions); the
/// register blocks then necessarily span the same element set per lane.
fn try_reg_permute(a: &LinearLayout, b: &LinearLayout) -> Option<Vec<u64>> {
    if a.in_block_cols(THREAD) != b.in_block_cols(THREAD)
        || a.in_block_cols(WARP) != b.in_block_cols(WARP)
    {
        return None;
    }
    let d = a.out_bits();
    let a_reg = BitMatrix::from_cols(d, &a.in_block_cols(REG));
    let b_reg = BitMatrix::from_cols(d, &b.in_block_cols(REG));
    // Destination register r holds element b_reg·r (relative to the lane
    // base); find which source register holds it.
    let map = a_reg.solve_min_weight(&b_reg).ok()?;
    Some((0..1u64 << b_reg.cols()).map(|r| map.apply(r)).collect())
}

// ---------------------------------------------------------------------------
// Plan document (JSON) rendering.
// ---------------------------------------------------------------------------

/// Bits rendered least significant first: 5 over 3 bits is "101".
#[must_use]
pub fn bits_to_string(value: u64, width: usize) -> String {
    (0..width).map(|i| if (value >> i) & 1 == 1 { '1' } else { '0' }).collect()
}

pub fn string_to_bits(s: &str) -> Result<u64, PlanError> {
    if s.len() > 64 {
        return Err(PlanError::Doc(format!("bit string too long: {s:?}")));
    }
    let mut value = 0u64;
    for (i, ch) in s.chars().enumerate() {
        match ch {
            '1' => value |= 1 << i,
            '0' => {}
            _ => return Err(PlanError::Doc(format!("bad bit string {s:?}"))),
        }
    }
    Ok(value)
}

#[derive(Serialize, Deserialize)]
pub struct PlanDoc {
    pub version: u32,
    pub elem_bits: usize,
    pub a: String,
    pub b: String,
    pub kind: String,
    pub quotient: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg_permute: Option<RegPermuteDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shuffle: Option<ShuffleDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemoryDoc>,
    pub stats: PlanStats,
}

#[derive(Serialize, Deserialize)]
pub struct RegPermuteDoc {
    pub dst_to_src: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
pub struct ShuffleDoc {
    pub payload_bits: usize,
    pub v: Vec<String>,
    pub i: Vec<String>,
    pub e: Vec<String>,
    pub f: Vec<String>,
    pub g: Vec<String>,
    pub r: Vec<String>,
    pub v_send_regs: Vec<usize>,
    pub v_recv_regs: Vec<usize>,
    pub recv_dup_reg_bits: Vec<usize>,
    pub rounds: Vec<RoundDoc>,
}

#[derive(Serialize, Deserialize)]
pub struct RoundDoc {
    pub rep: String,
    /// Per lane: [send_reg, src_lane, recv_reg].
    pub lanes: Vec<[u64; 3]>,
}

#[derive(Serialize, Deserialize)]
pub struct MemoryDoc {
    pub layout: String,
    pub vect: Vec<String>,
    pub h: Vec<String>,
    pub c: Vec<String>,
    pub s_idx: Vec<String>,
    pub s_bank: Vec<String>,
    pub conflict_free_idx_dim: usize,
    pub variant: SwizzleVariant,
    pub banks: usize,
    pub bank_bytes: usize,
    pub max_vector_bytes: usize,
    pub store_vec_bits: usize,
    pub load_vec_bits: usize,
}

impl ConversionPlan {
    #[must_use]
    pub fn to_doc(&self) -> PlanDoc {
        let d = self.a.out_bits();
        let strs = |xs: &[u64]| xs.iter().map(|&x| bits_to_string(x, d)).collect();
        let mut doc = PlanDoc {
            version: 1,
            elem_bits: self.elem_bits,
            a: self.a.to_text("A"),
            b: self.b.to_text("B"),
            kind: self.body.kind().to_string(),
            quotient: self.quotient.to_text("Q"),
            reg_permute: None,
            shuffle: None,
            memory: None,
            stats: self.stats,
        };
        match &self.body {
            PlanBody::Noop => {}
            PlanBody::RegPermute { dst_to_src } => {
                doc.reg_permute = Some(RegPermuteDoc { dst_to_src: dst_to_src.clone() });
            }
            PlanBody::WarpShuffle(plan) => {
                doc.shuffle = Some(ShuffleDoc {
                    payload_bits: plan.payload_bits,
                    v: strs(&plan.v),
                    i: strs(&plan.i),
                    e: strs(&plan.e),
                    f: strs(&plan.f),
                    g: strs(&plan.g),
                    r: strs(&plan.r),
                    v_send_regs: plan.v_send_regs.clone(),
                    v_recv_regs: plan.v_recv_regs.clone(),
                    recv_dup_reg_bits: plan.recv_dup_reg_bits.clone(),
                    rounds: plan
                        .rounds
                        .iter()
                        .map(|r| RoundDoc {
                            rep: bits_to_string(r.rep, d),
                            lanes: r
                                .lanes
                                .iter()
                                .map(|l| [l.send_reg, l.src_lane, l.recv_reg])
                                .collect(),
                        })
                        .collect(),
                });
            }
            PlanBody::SharedMemory(plan) => {
                doc.memory = Some(MemoryDoc {
                    layout: plan.memory.layout.to_text("S"),
                    vect: strs(&plan.memory.vect),
                    h: strs(&plan.memory.h),
                    c: strs(&plan.memory.c),
                    s_idx: strs(&plan.memory.s_idx),
                    s_bank: strs(&plan.memory.s_bank),
                    conflict_free_idx_dim: plan.memory.conflict_free_idx_dim,
                    variant: plan.memory.variant,
                    banks: plan.bank.banks,
                    bank_bytes: plan.bank.bank_bytes,
                    max_vector_bytes: plan.bank.max_vector_bytes,
                    store_vec_bits: plan.store_vec_bits,
                    load_vec_bits: plan.load_vec_bits,
                });
            }
        }
        doc
    }

    pub fn from_doc(doc: &PlanDoc) -> Result<Self, PlanError> {
        if doc.version != 1 {
            return Err(PlanError::Doc(format!("unsupported version {}", doc.version)));
        }
        let a = crate::layout::parse_layout(&doc.a)?.1;
        let b = crate::layout::parse_layout(&doc.b)?.1;
        let quotient = crate::layout::parse_layout(&doc.quotient)?.1;
        let vals = |xs: &[String]| -> Result<Vec<u64>, PlanError> {
            xs.iter().map(|s| string_to_bits(s)).collect()
        };
        let body = match doc.kind.as_str() {
            "noop" => PlanBody::Noop,
            "reg_permute" => {
                let rp = doc
                    .reg_permute
                    .as_ref()
                    .ok_or_else(|| PlanError::Doc("missing reg_permute section".into()))?;
                PlanBody::RegPermute { dst_to_src: rp.dst_to_src.clone() }
            }
            "warp_shuffle" => {
                let s = doc
                    .shuffle
                    .as_ref()
                    .ok_or_else(|| PlanError::Doc("missing shuffle section".into()))?;
                PlanBody::WarpShuffle(ShufflePlan {
                    payload_bits: s.payload_bits,
                    v: vals(&s.v)?,
                    i: vals(&s.i)?,
                    e: vals(&s.e)?,
                    f: vals(&s.f)?,
                    g: vals(&s.g)?,
                    r: vals(&s.r)?,
                    v_send_regs: s.v_send_regs.clone(),
                    v_recv_regs: s.v_recv_regs.clone(),
                    recv_dup_reg_bits: s.recv_dup_reg_bits.clone(),
                    rounds: s
                        .rounds
                        .iter()
                        .map(|r| {
                            Ok(RoundPlan {
                                rep: string_to_bits(&r.rep)?,
                                lanes: r
                                    .lanes
                                    .iter()
                                    .map(|&[send_reg, src_lane, recv_reg]| LaneRule {
                                        send_reg,
                                        src_lane,
                                        recv_reg,
                                    })
                                    .collect(),
                            })
                        })
                        .collect::<Result<Vec<_>, PlanError>>()?,
                })
            }
            "shared_memory" => {
                let m = doc
                    .memory
                    .as_ref()
                    .ok_or_else(|| PlanError::Doc("missing memory section".into()))?;
                PlanBody::SharedMemory(SharedMemoryPlan {
                    memory: MemoryPlan {
                        layout: crate::layout::parse_layout(&m.layout)?.1,
                        vect: vals(&m.vect)?,
                        h: vals(&m.h)?,
                        c: vals(&m.c)?,
                        s_idx: vals(&m.s_idx)?,
                        s_bank: vals(&m.s_bank)?,
                        conflict_free_idx_dim: m.conflict_free_idx_dim,
                        variant: m.variant,
                    },
                    bank: BankConfig {
                        banks: m.banks,
                        bank_bytes: m.bank_bytes,
                        max_vector_bytes: m.max_vector_bytes,
                    },
                    store_vec_bits: m.store_vec_bits,
                    load_vec_bits: m.load_vec_bits,
                })
            }
            other => return Err(PlanError::Doc(format!("unknown plan kind {other:?}"))),
        };
        Ok(ConversionPlan { a, b, elem_bits: doc.elem_bits, quotient, body, stats: doc.stats })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("plan docs always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let doc: PlanDoc =
            serde_json::from_str(text).map_err(|e| PlanError::Doc(e.to_string()))?;
        Self::from_doc(&doc)
    }
}
