use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use qaenet::quantum::{
    finite_difference_oracle, run_circuit, shift_rule_gradients, Axis, EncodingAngles,
    Entanglement, StateVector, VqcParams,
};

fn state(n: usize) -> impl Strategy<Value = StateVector> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1 << n).prop_filter_map(
        "zero vector",
        |v| {
            let amps: Vec<Complex64> = v
                .into_iter()
                .map(|(re, im)| Complex64::new(re, im))
                .collect();
            let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            (norm > 1e-3).then(|| {
                StateVector::from_amplitudes(amps.into_iter().map(|a| a / norm).collect()).unwrap()
            })
        },
    )
}

#[derive(Debug, Clone)]
enum Op {
    Rot(usize, f64, usize),
    H(usize),
    Cnot(usize, usize),
}

fn ops(n: usize) -> impl Strategy<Value = Vec<Op>> {
    let rot = (0usize..3, -2.0 * PI..2.0 * PI, 1..=n).prop_map(|(a, t, q)| Op::Rot(a, t, q));
    let h = (1..=n).prop_map(Op::H);
    let op = if n > 1 {
        let cnot = (1..=n, 1..n).prop_map(move |(c, d)| Op::Cnot(c, (c - 1 + d) % n + 1));
        prop_oneof![rot, h, cnot].boxed()
    } else {
        prop_oneof![rot, h].boxed()
    };
    prop::collection::vec(op, 0..30)
}

fn apply(s: &mut StateVector, ops: &[Op]) {
    let axes = [Axis::X, Axis::Y, Axis::Z];
    for op in ops {
        match *op {
            Op::Rot(a, t, q) => s.apply_rotation(axes[a], q, t).unwrap(),
            Op::H(q) => s.apply_hadamard(q).unwrap(),
            Op::Cnot(c, t) => s.apply_cnot(c, t).unwrap(),
        }
    }
}

fn diff(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn circuit_inputs() -> impl Strategy<Value = (usize, usize, bool, Vec<f64>, Vec<f64>)> {
    (1usize..=4, 1usize..=3, any::<bool>()).prop_flat_map(|(n, l, ring)| {
        (
            Just(n),
            Just(l),
            Just(ring),
            prop::collection::vec(-PI..PI, 3 * n),
            prop::collection::vec(-PI..PI, 3 * n * l),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gates_preserve_inner_products((a, b, ops) in (1usize..=5).prop_flat_map(|n| (state(n), state(n), ops(n)))) {
        let before = a.inner(&b);
        let (mut a2, mut b2) = (a.clone(), b.clone());
        apply(&mut a2, &ops);
        apply(&mut b2, &ops);
        prop_assert!((a2.norm_sqr() - 1.0).abs() < 1e-10);
        prop_assert!((a2.inner(&b2) - before).norm() < 1e-10);
    }

    #[test]
    fn involutions_and_inverses((s, q, c, angle, axis) in (2usize..=5).prop_flat_map(|n| {
        (state(n), 1..=n, 1..=n, -PI..PI, 0usize..3)
    })) {
        let axis = [Axis::X, Axis::Y, Axis::Z][axis];
        let mut h = s.clone();
        h.apply_hadamard(q).unwrap();
        h.apply_hadamard(q).unwrap();
        prop_assert!(diff(&h, &s) <= 1e-12);
        let mut r = s.clone();
        r.apply_rotation(axis, q, angle).unwrap();
        r.apply_rotation(axis, q, -angle).unwrap();
        prop_assert!(diff(&r, &s) <= 1e-12);
        if c != q {
            let mut x = s.clone();
            x.apply_cnot(c, q).unwrap();
            x.apply_cnot(c, q).unwrap();
            prop_assert_eq!(x.amplitudes(), s.amplitudes());
        }
    }

    #[test]
    fn readout_is_bounded((n, l, ring, x, t) in circuit_inputs()) {
        let ent = if ring { Entanglement::Ring } else { Entanglement::Chain };
        let out = run_circuit(&EncodingAngles::new(x).unwrap(), &VqcParams::new(l, n, t).unwrap(), ent).unwrap();
        prop_assert!((out.norm_sqr() - 1.0).abs() < 1e-10);
        for q in out.measure_z_all() {
            prop_assert!((-1.0..=1.0).contains(&q));
        }
    }

    #[test]
    fn shift_rule_matches_finite_differences(
        (n, l, ring, x, t) in circuit_inputs(),
        cot in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let ent = if ring { Entanglement::Ring } else { Entanglement::Chain };
        let x = EncodingAngles::new(x).unwrap();
        let p = VqcParams::new(l, n, t).unwrap();
        let shift = shift_rule_gradients(&x, &p, &cot[..n], ent).unwrap();
        let fd = finite_difference_oracle(&x, &p, &cot[..n], 1e-4, ent).unwrap();
        prop_assert!(shift.max_abs_diff(&fd) < 1e-6, "max diff {}", shift.max_abs_diff(&fd));
    }

    #[test]
    fn readout_is_periodic_in_4pi((n, l, ring, x, t) in circuit_inputs(), k in 0usize..64) {
        let ent = if ring { Entanglement::Ring } else { Entanglement::Chain };
        let xa = EncodingAngles::new(x).unwrap();
        let base = run_circuit(&xa, &VqcParams::new(l, n, t.clone()).unwrap(), ent).unwrap().measure_z_all();
        let mut shifted = t;
        let k = k % shifted.len();
        shifted[k] += 4.0 * PI;
        let moved = run_circuit(&xa, &VqcParams::new(l, n, shifted).unwrap(), ent).unwrap().measure_z_all();
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
