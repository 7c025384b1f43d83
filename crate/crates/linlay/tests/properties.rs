//! Randomized invariants over the public API, plus two pinned artifacts:
//! the canonical plan document and the transposed-tile witness.

use linlay::constructors::{mma_tile, MmaKind, MmaOperand, MmaSpec};
use linlay::gf2::{rank_of, span_contains, span_intersection_dim, Basis, BitMatrix, BitVector};
use linlay::layout::{parse_layout, DimLabel, LinearLayout, REG, THREAD, WARP};
use linlay::planner::{plan_convert, ConversionPlan};
use linlay::shapeops::{canonicalize, layout_shape, Shape, ShapeOp};
use linlay::simulator::sim_convert;
use proptest::prelude::*;

/// Distributed layout over one `d`-bit dimension from a shuffled direction
/// list: the first `rb` directions go to registers (optionally preceded by a
/// broadcast column), then `tb` to threads, the rest to warps.
fn arb_dist_with(d: usize) -> impl Strategy<Value = LinearLayout> {
    let dirs: Vec<u64> = (0..d).map(|p| 1u64 << p).collect();
    (Just(dirs).prop_shuffle(), 0usize..=5, 0usize..=2, 0usize..=1).prop_map(
        move |(dirs, tb_raw, wb_raw, zr)| {
            let tb = tb_raw.min(d);
            let wb = wb_raw.min(d - tb);
            let rb = d - tb - wb;
            let mut reg: Vec<u64> = Vec::with_capacity(rb + zr);
            reg.extend(std::iter::repeat_n(0u64, zr));
            reg.extend(&dirs[..rb]);
            let mut cols = reg.clone();
            cols.extend(&dirs[rb..]);
            LinearLayout::new(
                vec![
                    DimLabel::new(REG, reg.len()),
                    DimLabel::new(THREAD, tb),
                    DimLabel::new(WARP, wb),
                ],
                vec![DimLabel::new("dim0", d)],
                BitMatrix::from_cols(d, &cols),
            )
            .unwrap()
        },
    )
}

fn arb_dist() -> impl Strategy<Value = LinearLayout> {
    (2usize..=9).prop_flat_map(arb_dist_with)
}

fn arb_pair() -> impl Strategy<Value = (LinearLayout, LinearLayout)> {
    (2usize..=8).prop_flat_map(|d| (arb_dist_with(d), arb_dist_with(d)))
}

proptest! {
    /// The text form is a faithful serialization: parsing it back yields the
    /// same name and the same layout.
    #[test]
    fn layout_text_round_trips(l in arb_dist()) {
        let (name, parsed) = parse_layout(&l.to_text("L")).unwrap();
        prop_assert_eq!(name, "L");
        prop_assert_eq!(parsed, l);
    }

    /// A surjective map composed with its right inverse is the identity on
    /// the whole output space.
    #[test]
    fn right_inverse_is_a_section(l in arb_dist()) {
        let m = l.matrix();
        let inv = m.right_inverse().unwrap();
        for y in 0..1u64 << l.out_bits() {
            prop_assert_eq!(m.apply(inv.apply(y)), y);
        }
    }

    /// Conversion plans survive the JSON round trip intact, and the decoded
    /// plan still replays correctly.
    #[test]
    fn plan_documents_round_trip((a, b) in arb_pair()) {
        let plan = plan_convert(&a, &b, 32).unwrap();
        let restored = ConversionPlan::from_json(&plan.to_json()).unwrap();
        prop_assert_eq!(&restored, &plan);
        prop_assert!(sim_convert(&restored).unwrap().correct);
    }

    /// Rank bookkeeping: bounds, membership, and the dimension formula for
    /// the intersection of two spans.
    #[test]
    fn rank_and_span_laws(
        d in 1usize..=10,
        raw in prop::collection::vec(any::<u64>(), 1..12),
        probe in any::<u64>(),
    ) {
        let mask = (1u64 << d) - 1;
        let xs: Vec<u64> = raw.iter().map(|&x| x & mask).collect();
        let r = rank_of(&xs);
        prop_assert!(r <= d && r <= xs.len());

        // Adding a vector changes the rank exactly when it leaves the span.
        let p = probe & mask;
        let mut extended = xs.clone();
        extended.push(p);
        let grows = !span_contains(&xs, p);
        prop_assert_eq!(rank_of(&extended), r + usize::from(grows));

        // dim(A meet B) = dim A + dim B - dim(A join B), on independent
        // subsets drawn from the front and back halves of the pool.
        let split = xs.len() / 2;
        let ind = |vals: &[u64]| {
            let mut acc: Vec<u64> = Vec::new();
            for &x in vals {
                if x != 0 && !span_contains(&acc, x) {
                    acc.push(x);
                }
            }
            acc
        };
        let (fa, fb) = (ind(&xs[..split]), ind(&xs[split..]));
        let to_basis = |vals: &[u64]| {
            Basis::new(d, vals.iter().map(|&x| BitVector::new(d, x)).collect()).unwrap()
        };
        let mut union = fa.clone();
        union.extend(&fb);
        let meet = span_intersection_dim(&to_basis(&fa), &to_basis(&fb)).unwrap();
        prop_assert_eq!(meet + rank_of(&union), fa.len() + fb.len());
    }

    /// Transposing twice is the identity on canonical layouts.
    #[test]
    fn double_transpose_is_identity(l in arb_dist()) {
        let up = ShapeOp::ExpandDims { axis: 0 }.forward(&l).unwrap();
        let t = ShapeOp::Trans { perm: vec![1, 0] };
        let twice = t.forward(&t.forward(&up).unwrap()).unwrap();
        prop_assert_eq!(twice, canonicalize(&up).unwrap());
    }
}

/// The transpose of a matrix-unit fragment is still a well-formed distributed
/// layout, yet no tile the constructor can produce for the same shape equals
/// it: the layout algebra reaches strictly beyond the named families.
#[test]
fn transposed_tile_lies_outside_the_tile_family() {
    let base = mma_tile(&MmaSpec {
        kind: MmaKind::Mma,
        operand: MmaOperand::Lhs,
        bitwidth: 16,
        warps: vec![0, 0],
        order: vec![1, 0],
    })
    .unwrap();
    let t = ShapeOp::Trans { perm: vec![1, 0] }.forward(&base).unwrap();
    assert!(t.is_distributed());
    let shape = layout_shape(&t).unwrap();
    assert_eq!(shape, Shape(vec![4, 4]));

    let mut family = 0u32;
    for kind in [MmaKind::Mma, MmaKind::Wgmma] {
        for operand in [MmaOperand::Lhs, MmaOperand::Rhs, MmaOperand::Out] {
            for bitwidth in [8u32, 16, 32] {
                for w0 in 0..=2usize {
                    for w1 in 0..=2usize {
                        for order in [vec![0, 1], vec![1, 0]] {
                            let spec = MmaSpec {
                                kind,
                                operand,
                                bitwidth,
                                warps: vec![w0, w1],
                                order,
                            };
                            let Ok(l) = mma_tile(&spec) else { continue };
                            if layout_shape(&l).ok().as_ref() != Some(&shape) {
                                continue;
                            }
                            family += 1;
                            assert_ne!(l, t, "{spec:?} reproduces the transposed tile");
                        }
                    }
                }
            }
        }
    }
    assert!(family >= 2, "the comparison family covered only {family} tiles");
}

/// The canonical two-round shuffle conversion, pinned as a JSON document.
fn golden_plan() -> ConversionPlan {
    let build = |reg: &[u64], thread: &[u64]| {
        let mut cols = reg.to_vec();
        cols.extend(thread);
        LinearLayout::new(
            vec![
                DimLabel::new(REG, reg.len()),
                DimLabel::new(THREAD, thread.len()),
                DimLabel::new(WARP, 0),
            ],
            vec![DimLabel::new("dim0", 3)],
            BitMatrix::from_cols(3, &cols),
        )
        .unwrap()
    };
    plan_convert(&build(&[4], &[1, 2]), &build(&[1], &[4, 2]), 32).unwrap()
}

const GOLDEN_PLAN_JSON: &str = include_str!("data/warp_shuffle_plan.json");

#[test]
fn plan_document_matches_the_golden_file() {
    let plan = golden_plan();
    assert_eq!(plan.to_json().trim(), GOLDEN_PLAN_JSON.trim(), "schema drifted");
    let restored = ConversionPlan::from_json(GOLDEN_PLAN_JSON).unwrap();
    assert_eq!(restored, plan);
    let report = sim_convert(&restored).unwrap();
    assert!(report.correct);
    assert_eq!(report.shuffle_rounds, 2);
}

#[test]
#[ignore = "writes tests/data/warp_shuffle_plan.json from the current planner output"]
fn regenerate_golden_plan_document() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/warp_shuffle_plan.json");
    std::fs::write(path, golden_plan().to_json() + "\n").unwrap();
}
