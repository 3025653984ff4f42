//! Property tests for the structural invariants: decomposition algebra,
//! ratio bounds, generator row sums, partition geometry, and the small
//! numeric helpers.

use nonsym_core::builders::{gauss_legendre, CellPartition};
use nonsym_core::chain::{pairwise_sum, AliasTable};
use nonsym_core::conductance::decompose;
use nonsym_core::lattice::{LatticePoint, Topology, Window};
use nonsym_core::operator::{assemble, Mode};
use nonsym_core::snnp::{snnp_edge_ratio, DirectedEdge};
use nonsym_core::Kernel;
use num_traits::ToPrimitive;
use proptest::prelude::*;

/// Dyadic weights keep every decomposition step exact in binary floating
/// point.
fn dyadic() -> impl Strategy<Value = f64> {
    (1u32..1_048_576u32).prop_map(|k| k as f64 / 1_048_576.0)
}

fn small_coord() -> impl Strategy<Value = i64> {
    -3i64..=3
}

proptest! {
    #[test]
    fn decompose_reconstructs_exactly(
        weights in proptest::collection::vec((small_coord(), small_coord(), dyadic()), 1..40)
    ) {
        let mut c = Kernel::new_edges(4, 2.0, 1);
        for (x, y, w) in &weights {
            if x != y {
                c.insert_edge(&[*x], &[*y], *w);
            }
        }
        let dc = decompose(&c);
        for (x, _, _) in &weights {
            for (y, w) in c.row(&[*x]) {
                // bit-exact reconstruction and the symmetry laws
                prop_assert_eq!(dc.sym.weight(&[*x], &y) + dc.asym.weight(&[*x], &y), w);
                prop_assert_eq!(dc.sym.weight(&[*x], &y), dc.sym.weight(&y, &[*x]));
                prop_assert_eq!(dc.asym.weight(&[*x], &y), -dc.asym.weight(&y, &[*x]));
            }
        }
    }

    #[test]
    fn edge_ratios_stay_in_unit_interval(
        xa in 0i64..3, xb in 0i64..3,
        ha in 1i64..4, hb in 1i64..4,
        ea in 0i64..4, eb in 0i64..4,
        axis in 0usize..2, up in proptest::bool::ANY,
    ) {
        let n = 4u32;
        let x = LatticePoint::new(vec![xa, xb], n);
        let y = LatticePoint::new(vec![xa + ha, xb + hb], n);
        let mut from = vec![xa + (ea % ha), xb + (eb % hb)];
        let mut to = from.clone();
        if up {
            to[axis] += 1;
        } else {
            from[axis] += 1;
        }
        let edge = DirectedEdge::new(
            LatticePoint::new(from, n),
            LatticePoint::new(to, n),
        );
        let r = snnp_edge_ratio(&x, &y, &edge);
        let v = r.to_f64().unwrap();
        prop_assert!((0.0..=1.0).contains(&v), "ratio {v}");
    }

    #[test]
    fn torus_rows_sum_to_zero_exactly(
        weights in proptest::collection::vec(dyadic(), 8)
    ) {
        let n = 4u32;
        let w = Window::centered(n, 1, 3, Topology::Torus);
        let mut c = Kernel::new_edges(n, 2.0, 1);
        let pts: Vec<LatticePoint> = w.points().collect();
        for (k, p) in pts.iter().enumerate() {
            let q = w.resolve(&p.step(0, 1)).unwrap();
            c.insert_edge(&p.coords, &q.coords, weights[k % weights.len()]);
            c.insert_edge(&q.coords, &p.coords, weights[(k + 3) % weights.len()]);
        }
        let dc = decompose(&c);
        let gen = assemble(&dc, &w, Mode::Full).unwrap();
        for i in 0..w.point_count() {
            prop_assert_eq!(gen.row_sum(i), 0.0);
        }
    }

    #[test]
    fn partition_tiles_without_overlap(
        n in 4u32..64, beta_idx in 0usize..3, c in -200i64..200
    ) {
        let beta = [0.25, 0.5, 0.75][beta_idx];
        let part = CellPartition::new(n, beta);
        let a = part.anchor(&[c]);
        // the anchor's cube contains the point
        prop_assert!(a[0] * part.cube_steps <= c);
        prop_assert!(c < (a[0] + 1) * part.cube_steps);
        prop_assert!(part.same_cube(&[c], &[c]));
    }

    #[test]
    fn window_index_roundtrip(
        n in 1u32..16, extent in 1i64..8, k in 0usize..1000
    ) {
        let w = Window::centered(n, 2, extent, Topology::Absorbing);
        let k = k % w.point_count();
        let p = w.point_at(k);
        prop_assert_eq!(w.index_of(&p), Some(k));
    }

    #[test]
    fn pairwise_sum_matches_naive(
        v in proptest::collection::vec(-1e6f64..1e6, 0..200)
    ) {
        let naive: f64 = v.iter().sum();
        prop_assert!((pairwise_sum(&v) - naive).abs() <= 1e-6 * (1.0 + naive.abs()));
    }

    #[test]
    fn alias_table_samples_in_range(
        weights in proptest::collection::vec(0.0f64..10.0, 1..20), seed in any::<u64>()
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 0.0);
        let table = AliasTable::new(&weights);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let i = table.sample(&mut rng);
            prop_assert!(i < weights.len());
        }
    }

    #[test]
    fn gauss_legendre_integrates_low_polynomials(order in 2usize..12) {
        let (nodes, weights) = gauss_legendre(order);
        let total: f64 = weights.iter().sum();
        prop_assert!((total - 2.0).abs() < 1e-12);
        // exact for x^2 whenever order >= 2
        let quad: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x * x).sum();
        prop_assert!((quad - 2.0 / 3.0).abs() < 1e-12);
        let odd: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x * x * x).sum();
        prop_assert!(odd.abs() < 1e-12);
    }
}
