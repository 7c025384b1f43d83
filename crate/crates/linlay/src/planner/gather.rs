//! Planning gather operations along one tensor dimension.
//!
//! A gather reads, for every output position, an element of the source
//! tensor at a runtime index along one axis. When no warp bit advances that
//! axis, all candidate elements live within each warp and the exchange can
//! run as warp shuffles, one round per thread pattern along the axis.

use crate::layout::{LinearLayout, REG, THREAD, WARP};

use super::{normalize_distributed, PlanError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GatherPlan {
    pub axis: usize,
    /// True when the whole axis stays within one warp, so shuffles suffice.
    pub feasible: bool,
    /// Shuffle rounds a feasible plan needs.
    pub rounds: u64,
    /// Register bit positions whose direction lies along the axis.
    pub reg_axis_bits: Vec<usize>,
    /// Thread bit positions whose direction lies along the axis.
    pub thread_axis_bits: Vec<usize>,
    /// Warp bit positions whose direction lies along the axis; nonempty
    /// means the gather must fall back to shared memory.
    pub warp_axis_bits: Vec<usize>,
}

/// Classify how the layout distributes the gathered axis across hardware.
pub fn plan_gather(l: &LinearLayout, axis: usize) -> Result<GatherPlan, PlanError> {
    let l = normalize_distributed(l, "source")?;
    let rank = l.out_dims().len();
    if axis >= rank {
        return Err(PlanError::BadAxis { axis, rank });
    }
    let name = crate::constructors::dim_name(axis);
    let off = l.out_offset(&name)?;
    let bits = l.out_dim(&name).map_or(0, crate::layout::DimLabel::bits);
    let mask = if bits >= 64 { u64::MAX << off } else { ((1u64 << bits) - 1) << off };

    let in_range = |cols: &[u64]| -> Vec<usize> {
        cols.iter().enumerate().filter(|(_, &c)| c & mask != 0).map(|(p, _)| p).collect()
    };
    let reg_axis_bits = in_range(&l.in_block_cols(REG));
    let thread_axis_bits = in_range(&l.in_block_cols(THREAD));
    let warp_axis_bits = in_range(&l.in_block_cols(WARP));
    Ok(GatherPlan {
        axis,
        feasible: warp_axis_bits.is_empty(),
        rounds: 1 << thread_axis_bits.len(),
        reg_axis_bits,
        thread_axis_bits,
        warp_axis_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructors::{blocked, BlockedSpec};

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
    fn axis_within_a_warp_is_feasible() {
        let plan = plan_gather(&running_example(), 1).unwrap();
        assert!(plan.feasible);
        assert_eq!(plan.rounds, 8);
        assert_eq!(plan.reg_axis_bits, vec![0]);
        assert_eq!(plan.thread_axis_bits, vec![0, 1, 2]);
        assert_eq!(plan.warp_axis_bits, Vec::<usize>::new());
    }

    #[test]
    fn axis_crossing_warps_is_not() {
        let plan = plan_gather(&running_example(), 0).unwrap();
        assert!(!plan.feasible);
        assert_eq!(plan.reg_axis_bits, vec![1]);
        assert_eq!(plan.thread_axis_bits, vec![3, 4]);
        assert_eq!(plan.warp_axis_bits, vec![0]);
    }

    #[test]
    fn axis_must_exist() {
        assert!(matches!(
            plan_gather(&running_example(), 2),
            Err(PlanError::BadAxis { axis: 2, rank: 2 })
        ));
    }
}
